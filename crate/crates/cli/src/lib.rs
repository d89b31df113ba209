//! Training harness, sweep runner and verification suite around `warmkit`.
//!
//! The harness trains in `f64` only so that reruns are bitwise comparable.

pub mod config;
pub mod error;
pub mod experiments;
pub mod plotdata;
pub mod sweep;
pub mod train;
pub mod verify;

pub use config::{RunConfig, OUT_DIR_ENV};
pub use error::{HarnessError, Result};
pub use sweep::{run_sweep, SweepRow, SweepSpec};
pub use train::{run_training, TrainSummary, Trainer};
pub use verify::{verify, Suite, VerifyReport};
