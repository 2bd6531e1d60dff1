//! Experiment harness: synthetic cohorts, preprocessing, cross-validated
//! training of the learned fitters, the two-point and four-point classical
//! fits, and CSV/text reports.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod runner;

pub use config::{Combo, ExperimentConfig, I0Source, ModelKind, Profile};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment1, run_experiment2, run_experiment3, ExperimentReport};
pub use pipeline::{prepare_cohort, Cohort, PreparedSubject};
pub use runner::Runner;

// Training allocates and frees large per-layer buffers every step; glibc's
// main-thread arena returns them to the OS each time.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;
