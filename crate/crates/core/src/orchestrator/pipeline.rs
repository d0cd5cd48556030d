use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::baselines::{
    best_teacher_oracle, inversion_config_for, train_erm, EnsembleKind, EnsembleMethod,
};
use crate::digest::{combine, digest_of};
use crate::distillation::{train_student, DistillConfig};
use crate::domain_bench::{
    build_from_config, load_benchmark, save_benchmark, stored_digest, LabeledImages,
    MultiDomainBenchmark,
};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, Method, MethodRunner, Predictor};
use crate::fusion::{synthesize_cross_domain_dataset, FusionConfig};
use crate::inversion::{
    load_synthetic, require_synthetic, save_synthetic, synthesize_domain_dataset, InversionConfig,
    SyntheticDataset,
};
use crate::io;
use crate::models::training::train_supervised;
use crate::models::{
    load_checkpoint, save_checkpoint, CheckpointMeta, Classifier, ClassifierSpec, TeacherModel,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageAction {
    Computed,
    Reused,
}

/// One artifact produced or reused by the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: String,
    pub key: String,
    pub action: StageAction,
    pub digest: String,
    /// Stage-specific diagnostic, e.g. a teacher's accuracy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<(String, f64)>,
}

/// Provenance check performed before data enters a synthesis or
/// distillation step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: String,
    pub key: String,
    /// Provenance tag of every dataset that was passed in.
    pub inputs: Vec<String>,
    /// Domains that must not appear in any input (the held-out target).
    pub excluded: Vec<usize>,
    pub passed: bool,
}

#[derive(Clone)]
struct TeacherEntry {
    model: TeacherModel,
    digest: String,
}

#[derive(Clone)]
struct DataEntry {
    data: Arc<SyntheticDataset>,
    digest: String,
}

/// Stateful runner for every stage. Artifacts are cached in memory and
/// written under `out_dir`; with `resume` set, an on-disk artifact whose
/// recorded stage digest matches the expected one is loaded instead of
/// being recomputed.
pub struct Pipeline {
    cfg: ExperimentConfig,
    spec: ClassifierSpec,
    config_digest: String,
    resume: bool,
    bench: Option<(Arc<MultiDomainBenchmark>, String)>,
    teachers: HashMap<(u64, usize), TeacherEntry>,
    stage1: HashMap<(u64, usize), DataEntry>,
    stage2: HashMap<(u64, usize, usize), DataEntry>,
    students: HashMap<(Method, u64, usize), Classifier>,
    log: Vec<StageEvent>,
    audit: Vec<AuditEntry>,
    traces: BTreeMap<String, String>,
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, resume: bool) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            spec: cfg.classifier_spec(),
            config_digest: cfg.digest(),
            cfg,
            resume,
            bench: None,
            teachers: HashMap::new(),
            stage1: HashMap::new(),
            stage2: HashMap::new(),
            students: HashMap::new(),
            log: Vec::new(),
            audit: Vec::new(),
            traces: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn out_dir(&self) -> &Path {
        &self.cfg.out_dir
    }

    pub fn stage_log(&self) -> &[StageEvent] {
        &self.log
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit
    }

    /// Loss traces collected so far, keyed by a file-friendly name.
    pub fn traces(&self) -> &BTreeMap<String, String> {
        &self.traces
    }

    fn record(&mut self, stage: &str, key: String, action: StageAction, digest: &str) {
        tracing::info!(stage, key = %key, ?action, "stage artifact");
        self.log.push(StageEvent {
            stage: stage.into(),
            key,
            action,
            digest: digest.into(),
            metric: None,
        });
    }

    fn record_metric(&mut self, name: &str, value: f64) {
        if let Some(e) = self.log.last_mut() {
            e.metric = Some((name.into(), value));
        }
    }

    pub fn benchmark(&mut self) -> Result<Arc<MultiDomainBenchmark>> {
        self.benchmark_entry()
            .map(|(b, _)| b)
            .map_err(|e| e.at_stage("build-bench"))
    }

    fn benchmark_entry(&mut self) -> Result<(Arc<MultiDomainBenchmark>, String)> {
        self.benchmark_compute()
            .map_err(|e| e.at_stage("build-bench"))
    }

    fn benchmark_compute(&mut self) -> Result<(Arc<MultiDomainBenchmark>, String)> {
        if let Some((b, d)) = &self.bench {
            return Ok((b.clone(), d.clone()));
        }
        let digest = digest_of(&self.cfg.benchmark);
        let dir = self.cfg.out_dir.join("bench");
        let (bench, action) = if self.resume && stored_digest(&dir).as_deref() == Some(&digest) {
            (load_benchmark(&dir)?, StageAction::Reused)
        } else {
            let b = build_from_config(&self.cfg.benchmark)?;
            save_benchmark(&b, &dir, Some(&digest))?;
            (b, StageAction::Computed)
        };
        if bench.image_shape() != self.spec.input_shape {
            return Err(Error::config(
                "stored benchmark does not match the model input shape",
            ));
        }
        self.record("build-bench", "bench".into(), action, &digest);
        let bench = Arc::new(bench);
        self.bench = Some((bench.clone(), digest.clone()));
        Ok((bench, digest))
    }

    pub fn teacher(&mut self, seed: u64, domain: usize) -> Result<TeacherModel> {
        self.teacher_entry(seed, domain)
            .map(|t| t.model)
            .map_err(|e| e.at_stage("train-teachers"))
    }

    fn teacher_entry(&mut self, seed: u64, domain: usize) -> Result<TeacherEntry> {
        self.teacher_compute(seed, domain)
            .map_err(|e| e.at_stage("train-teachers"))
    }

    fn teacher_compute(&mut self, seed: u64, domain: usize) -> Result<TeacherEntry> {
        if let Some(t) = self.teachers.get(&(seed, domain)) {
            return Ok(t.clone());
        }
        let (bench, bench_digest) = self.benchmark_entry()?;
        let dom = bench.domain(domain)?;
        let stream = format!("teacher.{domain}");
        let digest = combine(&[
            "teacher",
            &bench_digest,
            &digest_of(&self.cfg.teacher),
            &seed.to_string(),
            &domain.to_string(),
        ]);
        let dir = seed_dir(&self.cfg.out_dir, seed)
            .join("teachers")
            .join(format!("domain_{domain}"));
        let key = format!("seed {seed} domain {domain}");
        let trace_name = format!("teacher_seed{seed}_domain{domain}.csv");

        let reused = if self.resume {
            match load_checkpoint(&dir) {
                Ok((net, m)) if m.stage_digest.as_deref() == Some(&digest) => {
                    Some(TeacherModel::new(net, domain, m.training_seed))
                }
                _ => None,
            }
        } else {
            None
        };
        let (model, action) = match reused {
            Some(m) => {
                if let Ok(csv) = std::fs::read_to_string(dir.join("loss.csv")) {
                    self.traces.insert(trace_name, csv);
                }
                (m, StageAction::Reused)
            }
            None => {
                let training_seed = rng::derive_seed(seed, &stream);
                let mut r = rng::from_seed(training_seed);
                let (net, trace) = train_supervised(
                    &self.spec,
                    &dom.train.images,
                    &dom.train.labels,
                    &self.cfg.teacher.train,
                    &mut r,
                )?;
                save_checkpoint(
                    &net,
                    &CheckpointMeta {
                        role: "teacher".into(),
                        domain_id: Some(domain),
                        training_seed,
                        stage_digest: Some(digest.clone()),
                        config_digest: Some(self.config_digest.clone()),
                    },
                    &dir,
                )?;
                let csv = trace.to_csv();
                io::write_atomic(&dir.join("loss.csv"), csv.as_bytes())?;
                self.traces.insert(trace_name, csv);
                (
                    TeacherModel::new(net, domain, training_seed),
                    StageAction::Computed,
                )
            }
        };
        let val = accuracy(&model, &dom.val)?;
        self.record("train-teachers", key, action, &digest);
        self.record_metric("val_accuracy", val);
        let entry = TeacherEntry { model, digest };
        self.teachers.insert((seed, domain), entry.clone());
        Ok(entry)
    }

    /// Stage-1 config used for `domain` under protocol seed `seed`.
    pub fn inversion_config(&self, seed: u64, domain: usize) -> InversionConfig {
        inversion_config_for(
            &InversionConfig {
                seed,
                ..self.cfg.inversion.clone()
            },
            domain,
        )
    }

    /// Stage-2 config used for the ordered pair `(a, b)` under `seed`.
    pub fn fusion_config(&self, seed: u64, a: usize, b: usize) -> FusionConfig {
        FusionConfig {
            seed: rng::derive_seed(seed, &format!("fuse.{a}.{b}")),
            ..self.cfg.fusion.clone()
        }
    }

    /// Stage-3 config for the student that holds out `target`.
    pub fn distill_config(&self, seed: u64, target: usize) -> DistillConfig {
        DistillConfig {
            seed: rng::derive_seed(seed, &format!("distill.{target}")),
            ..self.cfg.distill.clone()
        }
    }

    fn load_if_current(&self, dir: &Path, digest: &str) -> Option<SyntheticDataset> {
        if !self.resume {
            return None;
        }
        match load_synthetic(dir) {
            Ok((ds, Some(d))) if d == digest => Some(ds),
            _ => None,
        }
    }

    pub fn stage1(&mut self, seed: u64, domain: usize) -> Result<Arc<SyntheticDataset>> {
        self.stage1_entry(seed, domain)
            .map(|e| e.data)
            .map_err(|e| e.at_stage("invert"))
    }

    fn stage1_entry(&mut self, seed: u64, domain: usize) -> Result<DataEntry> {
        self.stage1_compute(seed, domain)
            .map_err(|e| e.at_stage("invert"))
    }

    fn stage1_compute(&mut self, seed: u64, domain: usize) -> Result<DataEntry> {
        if let Some(e) = self.stage1.get(&(seed, domain)) {
            return Ok(e.clone());
        }
        let teacher = self.teacher_entry(seed, domain)?;
        let cfg = self.inversion_config(seed, domain);
        let digest = combine(&["invert", &teacher.digest, &digest_of(&cfg)]);
        let dir = seed_dir(&self.cfg.out_dir, seed)
            .join("stage1")
            .join(format!("domain_{domain}"));
        let key = format!("seed {seed} domain {domain}");
        let trace_name = format!("stage1_seed{seed}_domain{domain}.csv");
        let (ds, action) = match self.load_if_current(&dir, &digest) {
            Some(ds) => {
                if let Ok(csv) = std::fs::read_to_string(dir.join("trace.csv")) {
                    self.traces.insert(trace_name, csv);
                }
                (ds, StageAction::Reused)
            }
            None => {
                let (ds, trace) = synthesize_domain_dataset(&teacher.model, &cfg)?;
                let audit = serde_json::json!({ "experiment_config": self.config_digest });
                save_synthetic(&ds, Some(&trace), &dir, Some(&digest), Some(audit))?;
                self.traces.insert(trace_name, trace.to_csv());
                (ds, StageAction::Computed)
            }
        };
        let acc = synthetic_accuracy(&teacher.model, &ds)?;
        self.record("invert", key, action, &digest);
        self.record_metric("teacher_accuracy", acc);
        let entry = DataEntry {
            data: Arc::new(ds),
            digest,
        };
        self.stage1.insert((seed, domain), entry.clone());
        Ok(entry)
    }

    pub fn stage2(&mut self, seed: u64, a: usize, b: usize) -> Result<Arc<SyntheticDataset>> {
        self.stage2_entry(seed, a, b)
            .map(|e| e.data)
            .map_err(|e| e.at_stage("fuse"))
    }

    fn stage2_entry(&mut self, seed: u64, a: usize, b: usize) -> Result<DataEntry> {
        self.stage2_compute(seed, a, b)
            .map_err(|e| e.at_stage("fuse"))
    }

    fn stage2_compute(&mut self, seed: u64, a: usize, b: usize) -> Result<DataEntry> {
        if let Some(e) = self.stage2.get(&(seed, a, b)) {
            return Ok(e.clone());
        }
        if a == b {
            return Err(Error::input(
                "cross-domain synthesis needs two distinct domains",
            ));
        }
        let ta = self.teacher_entry(seed, a)?;
        let tb = self.teacher_entry(seed, b)?;
        let data_b = self.stage1_entry(seed, b)?;
        let cfg = self.fusion_config(seed, a, b);
        let digest = combine(&[
            "fuse",
            &ta.digest,
            &tb.digest,
            &data_b.digest,
            &digest_of(&cfg),
        ]);
        let dir = seed_dir(&self.cfg.out_dir, seed)
            .join("stage2")
            .join(format!("pair_{a}_{b}"));
        let key = format!("seed {seed} pair ({a}, {b})");
        let trace_name = format!("stage2_seed{seed}_pair{a}_{b}.csv");
        self.check_inputs("fuse", &key, &[&data_b.data], &[a])?;
        let (ds, action) = match self.load_if_current(&dir, &digest) {
            Some(ds) => {
                if let Ok(csv) = std::fs::read_to_string(dir.join("trace.csv")) {
                    self.traces.insert(trace_name, csv);
                }
                (ds, StageAction::Reused)
            }
            None => {
                let (ds, trace, cdt) =
                    synthesize_cross_domain_dataset(&ta.model, &tb.model, &data_b.data, &cfg)?;
                let audit = serde_json::json!({
                    "experiment_config": self.config_digest,
                    "cross_domain_targets": cdt,
                });
                save_synthetic(&ds, Some(&trace), &dir, Some(&digest), Some(audit))?;
                self.traces.insert(trace_name, trace.to_csv());
                (ds, StageAction::Computed)
            }
        };
        let acc_a = synthetic_accuracy(&ta.model, &ds)?;
        let acc_b = synthetic_accuracy(&tb.model, &ds)?;
        self.record("fuse", key, action, &digest);
        self.record_metric("min_teacher_accuracy", acc_a.min(acc_b));
        let entry = DataEntry {
            data: Arc::new(ds),
            digest,
        };
        self.stage2.insert((seed, a, b), entry.clone());
        Ok(entry)
    }

    /// Asserts every dataset is synthetic and none involves an excluded
    /// domain, and records the check.
    fn check_inputs(
        &mut self,
        stage: &str,
        key: &str,
        inputs: &[&SyntheticDataset],
        excluded: &[usize],
    ) -> Result<()> {
        let mut verdict = Ok(());
        for d in inputs {
            if let Err(e) = require_synthetic(&d.provenance, stage) {
                verdict = Err(e);
                break;
            }
            if let Some(x) = d
                .provenance
                .teachers()
                .iter()
                .find(|t| excluded.contains(t))
            {
                verdict = Err(Error::input(format!(
                    "data-freeness violation: {} uses held-out domain {x}",
                    d.provenance.tag()
                )));
                break;
            }
        }
        self.audit.push(AuditEntry {
            stage: stage.into(),
            key: key.into(),
            inputs: inputs.iter().map(|d| d.provenance.tag()).collect(),
            excluded: excluded.to_vec(),
            passed: verdict.is_ok(),
        });
        verdict
    }

    fn sources(&mut self, target: usize) -> Result<Vec<usize>> {
        let (bench, _) = self.benchmark_entry()?;
        bench.domain(target)?;
        Ok(bench
            .domain_ids()
            .into_iter()
            .filter(|&d| d != target)
            .collect())
    }

    /// Distilled student for `method` (DEKAN or Multi-DI) with `target`
    /// held out.
    pub fn student(&mut self, method: Method, seed: u64, target: usize) -> Result<Classifier> {
        self.student_inner(method, seed, target)
            .map_err(|e| e.at_stage("distill"))
    }

    fn student_inner(&mut self, method: Method, seed: u64, target: usize) -> Result<Classifier> {
        if !matches!(method, Method::Dekan | Method::MultiDi) {
            return Err(Error::input(format!("{method} does not train a student")));
        }
        if let Some(s) = self.students.get(&(method, seed, target)) {
            return Ok(s.clone());
        }
        let sources = self.sources(target)?;
        let mut teachers = Vec::new();
        let mut parts = Vec::new();
        for &d in &sources {
            teachers.push(self.teacher_entry(seed, d)?);
            parts.push(self.stage1_entry(seed, d)?);
        }
        if method == Method::Dekan {
            for &a in &sources {
                for &b in &sources {
                    if a != b {
                        parts.push(self.stage2_entry(seed, a, b)?);
                    }
                }
            }
        }
        let key = format!("{method} seed {seed} target {target}");
        let refs: Vec<&SyntheticDataset> = parts.iter().map(|p| p.data.as_ref()).collect();
        self.check_inputs("distill", &key, &refs, &[target])?;

        let cfg = self.distill_config(seed, target);
        let mut digest_parts: Vec<&str> = vec!["distill", method.name()];
        digest_parts.extend(teachers.iter().map(|t| t.digest.as_str()));
        digest_parts.extend(parts.iter().map(|p| p.digest.as_str()));
        let cfg_digest = digest_of(&cfg);
        digest_parts.push(&cfg_digest);
        let digest = combine(&digest_parts);

        let dir = seed_dir(&self.cfg.out_dir, seed)
            .join("students")
            .join(format!("{method}_target_{target}"));
        let trace_name = format!("student_{method}_seed{seed}_target{target}.csv");
        let reused = if self.resume {
            match load_checkpoint(&dir) {
                Ok((net, m)) if m.stage_digest.as_deref() == Some(&digest) => Some(net),
                _ => None,
            }
        } else {
            None
        };
        let (student, action) = match reused {
            Some(net) => {
                if let Ok(csv) = std::fs::read_to_string(dir.join("loss.csv")) {
                    self.traces.insert(trace_name, csv);
                }
                (net, StageAction::Reused)
            }
            None => {
                let models: Vec<TeacherModel> = teachers.into_iter().map(|t| t.model).collect();
                let datasets: Vec<SyntheticDataset> =
                    parts.iter().map(|p| p.data.as_ref().clone()).collect();
                let (net, trace) = train_student(&models, &datasets, &cfg)?;
                if models.iter().any(|t| t.param_hash() != t.frozen_hash()) {
                    return Err(Error::Training(
                        "a teacher changed during distillation".into(),
                    ));
                }
                save_checkpoint(
                    &net,
                    &CheckpointMeta {
                        role: format!("student:{method}"),
                        domain_id: None,
                        training_seed: cfg.seed,
                        stage_digest: Some(digest.clone()),
                        config_digest: Some(self.config_digest.clone()),
                    },
                    &dir,
                )?;
                let csv = trace.to_csv();
                io::write_atomic(&dir.join("loss.csv"), csv.as_bytes())?;
                self.traces.insert(trace_name, csv);
                (net, StageAction::Computed)
            }
        };
        self.record("distill", key, action, &digest);
        self.students
            .insert((method, seed, target), student.clone());
        Ok(student)
    }

    /// Pooled-source ERM model (uses original source images).
    pub fn erm(&mut self, seed: u64, target: usize) -> Result<Classifier> {
        self.erm_inner(seed, target).map_err(|e| e.at_stage("erm"))
    }

    fn erm_inner(&mut self, seed: u64, target: usize) -> Result<Classifier> {
        if let Some(s) = self.students.get(&(Method::Erm, seed, target)) {
            return Ok(s.clone());
        }
        let sources = self.sources(target)?;
        let (bench, bench_digest) = self.benchmark_entry()?;
        let train_seed = rng::derive_seed(seed, &format!("erm.{target}"));
        let digest = combine(&[
            "erm",
            &bench_digest,
            &digest_of(&self.cfg.teacher),
            &train_seed.to_string(),
            &target.to_string(),
        ]);
        let dir = seed_dir(&self.cfg.out_dir, seed)
            .join("erm")
            .join(format!("target_{target}"));
        let reused = if self.resume {
            match load_checkpoint(&dir) {
                Ok((net, m)) if m.stage_digest.as_deref() == Some(&digest) => Some(net),
                _ => None,
            }
        } else {
            None
        };
        let (net, action) = match reused {
            Some(net) => (net, StageAction::Reused),
            None => {
                let splits: Vec<&LabeledImages> = sources
                    .iter()
                    .map(|&d| bench.domain(d).map(|x| &x.train))
                    .collect::<Result<_>>()?;
                let (net, trace) =
                    train_erm(&splits, &self.spec, &self.cfg.teacher.train, train_seed)?;
                save_checkpoint(
                    &net,
                    &CheckpointMeta {
                        role: "erm".into(),
                        domain_id: None,
                        training_seed: train_seed,
                        stage_digest: Some(digest.clone()),
                        config_digest: Some(self.config_digest.clone()),
                    },
                    &dir,
                )?;
                let csv = trace.to_csv();
                io::write_atomic(&dir.join("loss.csv"), csv.as_bytes())?;
                self.traces
                    .insert(format!("erm_seed{seed}_target{target}.csv"), csv);
                (net, StageAction::Computed)
            }
        };
        self.record(
            "erm",
            format!("seed {seed} target {target}"),
            action,
            &digest,
        );
        self.students
            .insert((Method::Erm, seed, target), net.clone());
        Ok(net)
    }

    fn source_teachers(&mut self, seed: u64, target: usize) -> Result<Vec<TeacherModel>> {
        let sources = self.sources(target)?;
        sources
            .into_iter()
            .map(|d| self.teacher_entry(seed, d).map(|t| t.model))
            .collect()
    }

    /// Trains (or loads) every per-domain teacher for every seed.
    pub fn train_all_teachers(&mut self) -> Result<()> {
        let ids = self.benchmark()?.domain_ids();
        for seed in self.cfg.seeds.clone() {
            for &d in &ids {
                self.teacher(seed, d)?;
            }
        }
        Ok(())
    }

    /// Stage 1 for every domain and seed.
    pub fn invert_all(&mut self) -> Result<()> {
        let ids = self.benchmark()?.domain_ids();
        for seed in self.cfg.seeds.clone() {
            for &d in &ids {
                self.stage1(seed, d)?;
            }
        }
        Ok(())
    }

    /// Stage 2 for every ordered domain pair and seed.
    pub fn fuse_all(&mut self) -> Result<()> {
        let ids = self.benchmark()?.domain_ids();
        for seed in self.cfg.seeds.clone() {
            for &a in &ids {
                for &b in &ids {
                    if a != b {
                        self.stage2(seed, a, b)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Stage 3 students for every target, seed and student-based method.
    pub fn distill_all(&mut self) -> Result<()> {
        let ids = self.benchmark()?.domain_ids();
        let methods: Vec<Method> = self
            .cfg
            .methods
            .iter()
            .copied()
            .filter(|m| matches!(m, Method::Dekan | Method::MultiDi))
            .collect();
        for seed in self.cfg.seeds.clone() {
            for &t in &ids {
                for &m in &methods {
                    self.student(m, seed, t)?;
                }
            }
        }
        Ok(())
    }

    /// Students trained so far, keyed by (method, seed, target).
    pub(crate) fn trained_students(&self) -> &HashMap<(Method, u64, usize), Classifier> {
        &self.students
    }
}

fn synthetic_accuracy(teacher: &TeacherModel, ds: &SyntheticDataset) -> Result<f64> {
    let labeled = LabeledImages {
        images: ds.images.clone(),
        labels: ds.labels.clone(),
        ids: (0..ds.len() as u64).collect(),
    };
    accuracy(teacher, &labeled)
}

impl MethodRunner for Pipeline {
    fn predictor(
        &mut self,
        method: Method,
        seed: u64,
        target: usize,
    ) -> Result<Box<dyn Predictor>> {
        Ok(match method {
            Method::Dekan | Method::MultiDi => Box::new(self.student(method, seed, target)?),
            Method::AvgPred => Box::new(EnsembleMethod::new(
                EnsembleKind::AvgPred,
                self.source_teachers(seed, target)?,
            )?),
            Method::HighestConf => Box::new(EnsembleMethod::new(
                EnsembleKind::HighestConf,
                self.source_teachers(seed, target)?,
            )?),
            Method::BestTeacher => {
                let teachers = self.source_teachers(seed, target)?;
                let (bench, _) = self.benchmark_entry()?;
                let (best, accs) = best_teacher_oracle(&teachers, &bench.domain(target)?.val)?;
                tracing::info!(target, best, ?accs, "oracle teacher selection");
                Box::new(teachers[best].clone())
            }
            Method::Erm => Box::new(self.erm(seed, target)?),
        })
    }
}
