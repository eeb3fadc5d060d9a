use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage1::Stage1Thresholds;
use crate::temporal::Smoothing;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid thresholds: need 0 < tau2d < tau3d < 1, got tau2d={tau2d}, tau3d={tau3d}")]
    InvalidThresholds { tau2d: f64, tau3d: f64 },
    #[error("invalid momentum beta={0}: must lie strictly inside (0, 1)")]
    InvalidMomentum(f64),
    #[error("invalid window k={0}: must be at least 2")]
    InvalidWindow(u64),
    #[error("invalid {name}={value}: must lie in {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("pruning rate r={0} out of range [0, 1)")]
    RateOutOfRange(f64),
}

/// Every knob of the per-step pruning pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunerConfig {
    pub thresholds: Stage1Thresholds,
    pub smoothing: Smoothing,
    /// Object patches fall back to 2D-only when the smoothed 2D attention
    /// share exceeds this...
    pub theta_2d_extreme: f64,
    /// ...and the smoothed orthogonal 3D share is below this.
    pub eps_3d: f64,
    /// Probability that a background patch survives the random cut.
    pub bg_keep_prob: f64,
    /// Optional global pruning-rate target over the 2P tokens of a step.
    pub budget: Option<f64>,
    /// Master seed for background draws.
    pub seed: u64,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            thresholds: Stage1Thresholds::default(),
            smoothing: Smoothing::default(),
            theta_2d_extreme: 0.95,
            eps_3d: 0.02,
            bg_keep_prob: 0.1,
            budget: None,
            seed: 0,
        }
    }
}

fn check(name: &'static str, value: f64, ok: bool, range: &'static str) -> Result<(), ConfigError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange { name, value, range })
    }
}

pub(crate) fn check_rate(r: f64) -> Result<(), ConfigError> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(ConfigError::RateOutOfRange(r))
    }
}

impl PrunerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        // thresholds and smoothing are validated on construction; re-check in
        // case a caller built them field by field
        Stage1Thresholds::new(self.thresholds.tau2d(), self.thresholds.tau3d())?;
        self.smoothing.validate()?;
        let t = self.theta_2d_extreme;
        check("theta_2d_extreme", t, (0.0..=1.0).contains(&t), "[0, 1]")?;
        let e = self.eps_3d;
        check("eps_3d", e, (0.0..=1.0).contains(&e), "[0, 1]")?;
        let b = self.bg_keep_prob;
        check("bg_keep_prob", b, (0.0..=1.0).contains(&b), "[0, 1]")?;
        if let Some(r) = self.budget {
            check_rate(r)?;
        }
        Ok(())
    }
}
