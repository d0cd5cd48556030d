//! Data-free merging of frozen, domain-specific classifiers into a single
//! domain-robust student.
//!
//! The pipeline has three stages. Each teacher is inverted into a labeled
//! synthetic dataset with hinged BN moment matching ([`inversion`]). Every
//! ordered teacher pair produces cross-domain images whose features, seen
//! through the first teacher, match that teacher's statistics on the
//! second teacher's synthetic data ([`fusion`]). A student is then
//! distilled on the union of all synthetic data ([`distillation`]).
//! [`baselines`], [`evaluation`] and [`orchestrator`] provide the
//! comparison methods, the leave-one-domain-out protocol and the
//! config-driven runner.

pub mod baselines;
pub mod digest;
pub mod distillation;
pub mod domain_bench;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod inversion;
mod io;
mod linalg;
pub mod loss;
pub mod models;
pub mod optim;
pub mod orchestrator;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
