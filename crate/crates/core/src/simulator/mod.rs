//! Synthetic episodes with planted ground truth, and a token-count cost
//! model for predicted speedups.

pub mod cost;
pub mod generator;

pub use cost::{predict_speedup, CostModel};
pub use generator::{
    generate_episode, Drift, DriftKind, GroundTruth, Planted, RegionProfile, Regions, ScenarioSpec,
    SpecError,
};
