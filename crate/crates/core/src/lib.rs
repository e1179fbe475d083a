//! Deep-unfolded ISTA and IHT with learned per-iteration step sizes.
//!
//! The crate generates synthetic compressed-sensing instances, runs the
//! proximal gradient iterations with a per-iteration step schedule,
//! differentiates the unrolled iterations with respect to that schedule,
//! trains it incrementally with Adam under a supervised (MSE) or
//! unsupervised (objective) loss, and evaluates schedules over an ensemble.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the usual double-precision instantiation.

pub mod algorithms;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod unfold;

pub use algorithms::{
    gradient_step, hard_threshold, objective_value, run_solver, soft_threshold, RecordFlags, Regularizer,
    RegularizerKind, StepSchedule, Trajectory,
};
pub use error::{Error, Result};
pub use evaluation::{baseline_variants, evaluate, mse_db, EvalConfig, EvalReport, Variant, VariantReport};
pub use problem::{
    average_lipschitz, generate_problem, snr_to_noise_variance, LipschitzEstimate, ProblemConfig, SensingMatrix,
    SparseProblem,
};
pub use rng::{stream, StreamRng};
pub use scalar::Scalar;
pub use training::{adam_update, incremental_train, project_nonnegative, AdamState, TrainConfig, TrainLog};
pub use unfold::{backward_step_sizes, forward_unrolled, loss_value, Execution, LossKind, Tape};

pub type SparseProblem64 = SparseProblem<f64>;
pub type SparseProblem32 = SparseProblem<f32>;
pub type StepSchedule64 = StepSchedule<f64>;
pub type StepSchedule32 = StepSchedule<f32>;
pub type Regularizer64 = Regularizer<f64>;
pub type Trajectory64 = Trajectory<f64>;
pub type Tape64 = Tape<f64>;
pub type TrainConfig64 = TrainConfig<f64>;
pub type TrainLog64 = TrainLog<f64>;
pub type EvalConfig64 = EvalConfig<f64>;
pub type EvalReport64 = EvalReport<f64>;
pub type LipschitzEstimate64 = LipschitzEstimate<f64>;
