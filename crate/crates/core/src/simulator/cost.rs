use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::fusion::RetentionMask;

/// Per-step compute cost as a function of the retained visual token count:
/// `c_fix + c_lin * n + c_attn * n^2`, plus `c_method` for running the
/// pruning logic itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub c_fix: f64,
    pub c_lin: f64,
    pub c_attn: f64,
    pub c_method: f64,
}

impl Default for CostModel {
    /// About 2.5 time units for a full 512-token step, 0.061 units of
    /// pruning overhead.
    fn default() -> Self {
        Self {
            c_fix: 0.1,
            c_lin: 5e-4,
            c_attn: 8.18e-6,
            c_method: 0.061,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("c_fix", self.c_fix),
            ("c_lin", self.c_lin),
            ("c_attn", self.c_attn),
            ("c_method", self.c_method),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::OutOfRange {
                    name,
                    value: v,
                    range: "[0, inf)",
                });
            }
        }
        Ok(())
    }

    pub fn cost(&self, tokens: usize) -> f64 {
        let n = tokens as f64;
        self.c_fix + self.c_lin * n + self.c_attn * n * n
    }
}

/// Ratio of unpruned cost to pruned cost (including method overhead) summed
/// over all steps. Returns 1 for an empty mask list or a zero-cost model.
pub fn predict_speedup(masks: &[RetentionMask], model: &CostModel, baseline_tokens: usize) -> f64 {
    let full: f64 = masks.iter().map(|_| model.cost(baseline_tokens)).sum();
    let pruned: f64 = masks
        .iter()
        .map(|m| model.cost(m.retained()) + model.c_method)
        .sum();
    if pruned > 0.0 {
        full / pruned
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_kept(p: usize) -> RetentionMask {
        let mut m = RetentionMask::all_ones(2, p);
        m.mask3d.iter_mut().for_each(|b| *b = false);
        m
    }

    #[test]
    fn full_masks_without_overhead_give_unit_speedup() {
        let model = CostModel {
            c_method: 0.0,
            ..Default::default()
        };
        let masks = vec![RetentionMask::all_ones(1, 8); 5];
        assert!((predict_speedup(&masks, &model, 16) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pure_quadratic_half_retention_is_four() {
        let model = CostModel {
            c_fix: 0.0,
            c_lin: 0.0,
            c_attn: 1e-3,
            c_method: 0.0,
        };
        let masks = vec![half_kept(16); 3];
        assert!((predict_speedup(&masks, &model, 32) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fewer_tokens_never_slower() {
        let model = CostModel::default();
        let mut last = 0.0;
        for kept in (0..=16).rev() {
            let mut m = RetentionMask::all_ones(2, 16);
            for i in kept..16 {
                m.mask2d[i] = false;
            }
            let s = predict_speedup(&[m], &model, 32);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn default_full_step_is_about_two_and_a_half_units() {
        let c = CostModel::default().cost(512);
        assert!((c - 2.5).abs() < 0.01, "{c}");
    }

    #[test]
    fn negative_coefficient_rejected() {
        let m = CostModel {
            c_lin: -1.0,
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }
}
