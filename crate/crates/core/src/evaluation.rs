//! Leave-one-domain-out evaluation, result tables and embedding export.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::domain_bench::{LabeledImages, MultiDomainBenchmark};
use crate::error::{Error, Result};
use crate::io;
use crate::models::{Classifier, Model, TeacherModel};
use crate::tensor::{argmax, Matrix, Tensor4};

/// Anything that maps images to class-probability rows.
pub trait Predictor {
    fn predict_proba(&self, images: &Tensor4) -> Result<Matrix>;
}

impl Predictor for Classifier {
    fn predict_proba(&self, images: &Tensor4) -> Result<Matrix> {
        Ok(self.predict_logits(images)?.softmax(1.0))
    }
}

impl Predictor for TeacherModel {
    fn predict_proba(&self, images: &Tensor4) -> Result<Matrix> {
        self.network().predict_proba(images)
    }
}

/// Top-1 accuracy; argmax ties go to the lowest class index.
pub fn accuracy<P: Predictor + ?Sized>(predictor: &P, data: &LabeledImages) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::input("accuracy of an empty dataset"));
    }
    let probs = predictor.predict_proba(&data.images)?;
    let correct = probs
        .iter_rows()
        .zip(&data.labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Methods the protocol knows how to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dekan,
    MultiDi,
    AvgPred,
    HighestConf,
    BestTeacher,
    Erm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dekan,
        Method::MultiDi,
        Method::AvgPred,
        Method::HighestConf,
        Method::BestTeacher,
        Method::Erm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dekan => "dekan",
            Method::MultiDi => "multi_di",
            Method::AvgPred => "avg_pred",
            Method::HighestConf => "highest_conf",
            Method::BestTeacher => "best_teacher",
            Method::Erm => "erm",
        }
    }

    pub fn flags(self) -> ResultFlags {
        ResultFlags {
            oracle: self == Method::BestTeacher,
            not_data_free: self == Method::Erm,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultFlags {
    /// Uses target-domain labels for model selection.
    pub oracle: bool,
    /// Trains on original source images.
    pub not_data_free: bool,
}

/// One (method, target, seed) measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub target: String,
    pub target_id: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub flags: ResultFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: Method,
    /// Seed-averaged accuracy per target domain, in benchmark order.
    pub per_target: Vec<(String, f64)>,
    pub average: f64,
    pub seeds: Vec<u64>,
    /// `per_seed[s][t]`: accuracy for `seeds[s]` on target `t`.
    pub per_seed: Vec<Vec<f64>>,
    pub flags: ResultFlags,
}

impl ExperimentResult {
    /// Builds a result from a complete `seeds × targets` accuracy grid.
    pub fn from_grid(
        method: Method,
        targets: Vec<String>,
        seeds: Vec<u64>,
        per_seed: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if targets.is_empty() || seeds.is_empty() || per_seed.len() != seeds.len() {
            return Err(Error::input(
                "result grid needs at least one seed and one target",
            ));
        }
        if per_seed.iter().any(|row| row.len() != targets.len()) {
            return Err(Error::input("every seed needs one accuracy per target"));
        }
        let per_target: Vec<(String, f64)> = targets
            .into_iter()
            .enumerate()
            .map(|(t, name)| {
                let mean = per_seed.iter().map(|row| row[t]).sum::<f64>() / seeds.len() as f64;
                (name, mean)
            })
            .collect();
        let average = per_target.iter().map(|(_, a)| a).sum::<f64>() / per_target.len() as f64;
        Ok(Self {
            method,
            per_target,
            average,
            seeds,
            per_seed,
            flags: method.flags(),
        })
    }
}

/// Produces a trained predictor for `method` with `target` held out.
pub trait MethodRunner {
    fn predictor(&mut self, method: Method, seed: u64, target: usize)
        -> Result<Box<dyn Predictor>>;
}

/// Runs the leave-one-domain-out protocol: for each seed and each target
/// domain, obtains a predictor from `runner` (which sees only the sources)
/// and scores it on the target's test split.
pub fn run_protocol(
    bench: &MultiDomainBenchmark,
    method: Method,
    seeds: &[u64],
    runner: &mut dyn MethodRunner,
) -> Result<(ExperimentResult, Vec<RunRecord>)> {
    let mut records = Vec::new();
    let mut grid = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut row = Vec::with_capacity(bench.domains.len());
        for target in &bench.domains {
            let predictor = runner.predictor(method, seed, target.id)?;
            let acc = accuracy(predictor.as_ref(), &target.test)?;
            tracing::info!(%method, target = %target.name, seed, accuracy = acc, "evaluated");
            records.push(RunRecord {
                method,
                target: target.name.clone(),
                target_id: target.id,
                seed,
                accuracy: acc,
                flags: method.flags(),
            });
            row.push(acc);
        }
        grid.push(row);
    }
    let names = bench.domains.iter().map(|d| d.name.clone()).collect();
    let result = ExperimentResult::from_grid(method, names, seeds.to_vec(), grid)?;
    Ok((result, records))
}

/// Method × target table in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub domains: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    /// Full-precision percentages, one per domain.
    pub values: Vec<f64>,
    /// Mean of `values` at full precision.
    pub average: f64,
    pub flags: ResultFlags,
}

impl TableRow {
    fn label(&self) -> String {
        let mut s = self.method.clone();
        if self.flags.oracle {
            s.push_str(" (oracle)");
        }
        if self.flags.not_data_free {
            s.push_str(" (not data-free)");
        }
        s
    }
}

pub fn aggregate_table(results: &[ExperimentResult]) -> Result<ResultTable> {
    let first = results
        .first()
        .ok_or_else(|| Error::input("no results to aggregate"))?;
    let domains: Vec<String> = first.per_target.iter().map(|(d, _)| d.clone()).collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let names: Vec<&String> = r.per_target.iter().map(|(d, _)| d).collect();
        if names.len() != domains.len() || names.iter().zip(&domains).any(|(a, b)| *a != b) {
            return Err(Error::input(format!(
                "result for {} covers different domains",
                r.method
            )));
        }
        let values: Vec<f64> = r.per_target.iter().map(|(_, a)| 100.0 * a).collect();
        let average = values.iter().sum::<f64>() / values.len() as f64;
        rows.push(TableRow {
            method: r.method.name().to_string(),
            values,
            average,
            flags: r.flags,
        });
    }
    Ok(ResultTable { domains, rows })
}

impl ResultTable {
    /// Comma-separated, one decimal.
    pub fn to_csv(&self) -> String {
        let mut s = format!("method,{},avg\n", self.domains.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.values.iter().map(|v| format!("{v:.1}")).collect();
            let _ = writeln!(s, "{},{},{:.1}", r.label(), cells.join(","), r.average);
        }
        s
    }

    /// Fixed-width grid for terminals.
    pub fn render(&self) -> String {
        let labels: Vec<String> = self.rows.iter().map(TableRow::label).collect();
        let first = labels.iter().map(String::len).chain([9]).max().unwrap_or(9);
        let col = self
            .domains
            .iter()
            .map(String::len)
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut s = format!("{:<first$}", "Algorithm");
        for d in &self.domains {
            let _ = write!(s, " | {d:>col$}");
        }
        let _ = writeln!(s, " | {:>col$}", "Avg");
        let width = s.trim_end().len();
        let _ = writeln!(s, "{}", "-".repeat(width));
        for (r, label) in self.rows.iter().zip(&labels) {
            let _ = write!(s, "{label:<first$}");
            for v in &r.values {
                let _ = write!(s, " | {v:>col$.1}");
            }
            let _ = writeln!(s, " | {:>col$.1}", r.average);
        }
        s
    }
}

/// Renders a record list as JSON lines.
pub fn records_to_jsonl(records: &[RunRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::input(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub count: usize,
    pub dim: usize,
    pub features: String,
    pub labels: String,
    pub projection: String,
    pub tags: Vec<String>,
    /// Variance captured by each projection axis.
    pub explained_variance: [f64; 2],
}

/// Penultimate features with a two-axis principal-component projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub features: Matrix,
    pub projection: Matrix,
    pub explained_variance: [f64; 2],
}

/// Projects rows of `x` onto their top two principal axes. Each axis is
/// signed so that its largest-magnitude coordinate is positive.
pub fn principal_projection(x: &Matrix) -> Result<(Matrix, [f64; 2])> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(Error::input("projection of an empty matrix"));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut out = Matrix::zeros(n, 2);
    let mut explained = [0.0; 2];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, c| if c.abs() > acc.abs() { c } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
        explained[axis] = eig.eigenvalues[k].max(0.0);
        for i in 0..n {
            out.row_mut(i)[axis] = centered.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
    }
    Ok((out, explained))
}

/// Writes `features.f32` (N×d), `labels.u32`, `projection.f32` (N×2) and
/// `manifest.json` into `dir`.
pub fn export_embeddings(
    model: &impl Model,
    images: &Tensor4,
    labels: &[usize],
    tags: &[String],
    dir: &Path,
) -> Result<Embeddings> {
    if labels.len() != images.n() || tags.len() != images.n() {
        return Err(Error::input("one label and one tag per image are required"));
    }
    let features = model.network().embed(images)?;
    let (projection, explained_variance) = principal_projection(&features)?;
    io::write_f32(&dir.join("features.f32"), features.data())?;
    io::write_u32(&dir.join("labels.u32"), labels)?;
    io::write_f32(&dir.join("projection.f32"), projection.data())?;
    io::write_json(
        &dir.join("manifest.json"),
        &EmbeddingManifest {
            count: features.rows(),
            dim: features.cols(),
            features: "features.f32".into(),
            labels: "labels.u32".into(),
            projection: "projection.f32".into(),
            tags: tags.to_vec(),
            explained_variance,
        },
    )?;
    Ok(Embeddings {
        features,
        projection,
        explained_variance,
    })
}
