//! Tri-stage token pruning for dual-stream (2D image + 3D point cloud)
//! vision-language-action inference.
//!
//! Given per-step, per-patch feature and attention vectors, the engine
//! decides which 2D and which 3D tokens to keep:
//!
//! * [`stage1`] compares feature-norm shares of both modalities against two
//!   thresholds;
//! * [`stage2`] clusters patches into object / robot / background by
//!   attention response and applies region-specific rules built on the part
//!   of the 3D attention orthogonal to the 2D attention;
//! * [`temporal`] smooths every indicator across steps;
//! * [`fusion`] combines the stages into retention masks.
//!
//! [`simulator`] produces synthetic traces with planted ground truth and a
//! cost model for predicted speedups. The math is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix it to `f64`.

pub mod candidate;
pub mod cli;
pub mod config;
pub mod fusion;
pub mod mask_io;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod simulator;
pub mod stage1;
pub mod stage2;
pub mod temporal;
pub mod trace;

pub use candidate::CandidateSet;
pub use config::{ConfigError, PrunerConfig};
pub use fusion::{
    apply_budget, fuse, mask_flip_rate, mask_flips, prune_episode, prune_step, FusionError, Pruner,
    RetentionMask, StepOutcome, StepStats,
};
pub use report::{PatchSalience, SalienceReport};
pub use scalar::Scalar;
pub use stage1::{stage1_candidates, stage1_salience, Stage1Salience, Stage1Thresholds};
pub use stage2::{
    cluster_semantics, compute_baselines, decompose_attention, stage2_candidates, stage2_salience,
    SemanticBaselines, SemanticLabel, Stage2Salience,
};
pub use temporal::{
    ema_update, smooth_step, EmaConfig, Indicator, IndicatorTrack, PrunerState, Smoothing,
};
pub use trace::{
    load_trace, save_trace, EpisodeTrace, PatchObservation, StepObservation, TraceError,
};

pub type Patch = PatchObservation<f64>;
pub type Step = StepObservation<f64>;
pub type Trace = EpisodeTrace<f64>;
pub type Engine = Pruner<f64>;
pub type State = PrunerState<f64>;
pub type Report = SalienceReport<f64>;

pub type Patch32 = PatchObservation<f32>;
pub type Trace32 = EpisodeTrace<f32>;
pub type Engine32 = Pruner<f32>;
