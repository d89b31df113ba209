//! Optimizers, update-size metrics and Monte Carlo oracles for studying why
//! learning-rate warmup helps.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations. The Monte Carlo oracles in [`sim`]
//! work in `f64` only.

pub mod diagnostics;
pub mod error;
pub mod gradstats;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod schedules;
pub mod sim;
pub mod toymodel;

pub use diagnostics::{AngularSummary, StepMetrics};
pub use error::{Error, Result};
pub use gradstats::{MicroBatchGrads, RrcCorrectionState, SnrEstimate};
pub use linalg::Matrix;
pub use optim::{Algorithm, Optimizer, OptimizerConfig, ParamGroup, ParamKind};
pub use rng::SeededRng;
pub use scalar::Scalar;
pub use schedules::{ScheduleKind, ScheduleSpec};
pub use sim::{GradientModel, McEstimate};
pub use toymodel::{Activation, Batch, Dataset, LossKind, Mlp, ModelConfig, TaskKind, TaskSpec};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Optimizer64 = Optimizer<f64>;
pub type Optimizer32 = Optimizer<f32>;
pub type ParamGroup64 = ParamGroup<f64>;
pub type ParamGroup32 = ParamGroup<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Mlp32 = Mlp<f32>;
pub type Batch64 = Batch<f64>;
pub type Batch32 = Batch<f32>;
