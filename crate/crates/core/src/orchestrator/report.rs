//! Report bundle layout under `<out_dir>/report`:
//!
//! ```text
//! records.jsonl      one line per (method, target, seed)
//! results.json       seed-averaged results per method
//! table.csv          method × target table in percent, one decimal
//! table.txt          the same as a fixed-width grid
//! stages.json        computed/reused log with stage digests
//! audit.json         provenance checks made before synthesis and distillation
//! traces/*.csv       loss traces of every trained or synthesized artifact
//! embeddings/<name>/ penultimate features of distilled students
//! manifest.json      config digest and file list
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::pipeline::{AuditEntry, Pipeline, StageEvent};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_table, export_embeddings, records_to_jsonl, run_protocol, ExperimentResult,
    ResultTable, RunRecord,
};
use crate::io;

#[derive(Clone, Debug)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub results: Vec<ExperimentResult>,
    pub records: Vec<RunRecord>,
    pub table: ResultTable,
    pub stage_log: Vec<StageEvent>,
    pub audit: Vec<AuditEntry>,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    config_digest: String,
    seeds: Vec<u64>,
    files: Vec<String>,
}

/// Runs the protocol for every configured method on a prepared pipeline
/// and writes the report bundle.
pub fn evaluate(pipeline: &mut Pipeline) -> Result<ReportBundle> {
    let bench = pipeline.benchmark()?;
    let methods = pipeline.config().methods.clone();
    let seeds = pipeline.config().seeds.clone();
    let mut results = Vec::new();
    let mut records = Vec::new();
    for method in methods {
        let (r, mut recs) = run_protocol(&bench, method, &seeds, pipeline)?;
        results.push(r);
        records.append(&mut recs);
    }
    if pipeline.audit_log().iter().any(|a| !a.passed) {
        return Err(Error::input("data-freeness audit failed").at_stage("evaluate"));
    }
    let table = aggregate_table(&results).map_err(|e| e.at_stage("evaluate"))?;
    write_bundle(pipeline, results, records, table).map_err(|e| e.at_stage("report"))
}

fn write_bundle(
    pipeline: &mut Pipeline,
    results: Vec<ExperimentResult>,
    records: Vec<RunRecord>,
    table: ResultTable,
) -> Result<ReportBundle> {
    let dir = pipeline.out_dir().join("report");
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        io::write_atomic(&dir.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    };
    put("records.jsonl", records_to_jsonl(&records)?.as_bytes())?;
    put("results.json", &to_json(&results)?)?;
    put("table.csv", table.to_csv().as_bytes())?;
    put("table.txt", table.render().as_bytes())?;
    put("stages.json", &to_json(pipeline.stage_log())?)?;
    put("audit.json", &to_json(pipeline.audit_log())?)?;
    for (name, csv) in pipeline.traces() {
        put(&format!("traces/{name}"), csv.as_bytes())?;
    }

    // embeddings of each distilled student on its held-out target, first seed
    let bench = pipeline.benchmark()?;
    let first_seed = pipeline.config().seeds[0];
    let mut students: Vec<_> = pipeline
        .trained_students()
        .iter()
        .filter(|((_, s, _), _)| *s == first_seed)
        .map(|((m, _, t), net)| (*m, *t, net.clone()))
        .collect();
    students.sort_by_key(|(m, t, _)| (*m, *t));
    for (method, target, net) in students {
        let dom = bench.domain(target)?;
        let name = format!("embeddings/{method}_target_{target}");
        let tags = vec![dom.name.clone(); dom.test.len()];
        export_embeddings(
            &net,
            &dom.test.images,
            &dom.test.labels,
            &tags,
            &dir.join(&name),
        )?;
        files.push(name);
    }

    io::write_json(
        &dir.join("manifest.json"),
        &BundleManifest {
            config_digest: pipeline.config_digest().to_string(),
            seeds: pipeline.config().seeds.clone(),
            files,
        },
    )?;
    Ok(ReportBundle {
        dir,
        results,
        records,
        table,
        stage_log: pipeline.stage_log().to_vec(),
        audit: pipeline.audit_log().to_vec(),
    })
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(v).map_err(|e| Error::input(e.to_string()))
}

/// Benchmark → teachers → Stage 1 → Stage 2 → Stage 3 → evaluation →
/// report. With `resume`, artifacts whose stage digest matches are reused.
pub fn run_all(cfg: ExperimentConfig, resume: bool) -> Result<ReportBundle> {
    let mut p = Pipeline::new(cfg, resume)?;
    p.benchmark()?;
    p.train_all_teachers()?;
    let methods = p.config().methods.clone();
    use crate::evaluation::Method;
    if methods
        .iter()
        .any(|m| matches!(m, Method::Dekan | Method::MultiDi))
    {
        p.invert_all()?;
    }
    if methods.contains(&Method::Dekan) {
        p.fuse_all()?;
    }
    p.distill_all()?;
    evaluate(&mut p)
}

/// Re-renders `table.csv` and `table.txt` from a bundle's `results.json`.
pub fn rerender_report(out_dir: &Path) -> Result<ResultTable> {
    let dir = out_dir.join("report");
    let results: Vec<ExperimentResult> = io::read_json(&dir.join("results.json"))?;
    let table = aggregate_table(&results)?;
    io::write_atomic(&dir.join("table.csv"), table.to_csv().as_bytes())?;
    io::write_atomic(&dir.join("table.txt"), table.render().as_bytes())?;
    Ok(table)
}
