use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::distillation::DistillConfig;
use crate::domain_bench::{BenchmarkConfig, DIGIT_CLASSES};
use crate::error::{Error, Result};
use crate::evaluation::Method;
use crate::fusion::FusionConfig;
use crate::inversion::InversionConfig;
use crate::models::training::TrainConfig;
use crate::models::ClassifierSpec;

/// Environment variable that overrides `out_dir`.
pub const OUT_DIR_ENV: &str = "DFDG_OUT_DIR";

/// Architecture and training schedule shared by every teacher (and by the
/// student and the ERM model, which use the same architecture).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for TeacherSection {
    fn default() -> Self {
        let spec = ClassifierSpec::desk_default(DIGIT_CLASSES);
        Self {
            channels: spec.channels,
            strides: spec.strides,
            train: TrainConfig::default(),
        }
    }
}

/// Everything a run needs, read from one TOML file.
///
/// The `seed` fields inside the stage sections are ignored by the
/// pipeline: every stage seed is derived from the entries of `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub teacher: TeacherSection,
    pub inversion: InversionConfig,
    pub fusion: FusionConfig,
    pub distill: DistillConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            teacher: TeacherSection::default(),
            inversion: InversionConfig::default(),
            fusion: FusionConfig::default(),
            distill: DistillConfig::default(),
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, then applies the output-directory override from the
    /// environment if it is set.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::persistence(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            cfg.out_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.benchmark.transforms.len() < 3 {
            return Err(Error::config("the benchmark needs at least 3 domains"));
        }
        for t in &self.benchmark.transforms {
            t.validate()?;
        }
        if self.benchmark.image_side < 4 {
            return Err(Error::config("image_side must be at least 4"));
        }
        self.classifier_spec().validate()?;
        self.teacher.train.validate()?;
        self.inversion.validate()?;
        self.fusion.validate()?;
        self.distill.validate()?;
        let side = self.benchmark.image_side;
        self.inversion.augment.validate(side, side)?;
        self.fusion.augment.validate(side, side)?;
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("no seeds given"));
        }
        Ok(())
    }

    /// Architecture of every model in the run.
    pub fn classifier_spec(&self) -> ClassifierSpec {
        let side = self.benchmark.image_side;
        ClassifierSpec {
            input_shape: [3, side, side],
            channels: self.teacher.channels.clone(),
            strides: self.teacher.strides.clone(),
            ..ClassifierSpec::desk_default(DIGIT_CLASSES)
        }
    }

    /// Content hash of everything that affects results (the output
    /// directory and method list do not).
    pub fn digest(&self) -> String {
        digest_of(&(
            &self.benchmark,
            &self.teacher,
            &self.inversion,
            &self.fusion,
            &self.distill,
            &self.seeds,
        ))
    }
}
