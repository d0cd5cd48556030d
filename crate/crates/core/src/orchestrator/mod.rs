//! Configuration, artifact plumbing and the end-to-end experiment runner.
//!
//! Every stage seed is derived from one root seed per protocol repetition
//! via named sub-streams (`teacher.i`, `invert.i`, `fuse.i.j`,
//! `distill.t`), so any artifact can be recomputed in isolation.

mod config;
mod pipeline;
mod report;

pub use config::{ExperimentConfig, TeacherSection, OUT_DIR_ENV};
pub use pipeline::{AuditEntry, Pipeline, StageAction, StageEvent};
pub use report::{evaluate, rerender_report, run_all, ReportBundle};
