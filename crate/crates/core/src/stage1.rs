//! Stage 1: feature-norm modality salience and dual-threshold candidates.

use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::config::ConfigError;
use crate::scalar::{l1, Scalar};
use crate::trace::PatchObservation;

/// Share of a patch's L1 feature mass carried by each modality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Salience<T> {
    pub m2d: T,
    pub m3d: T,
    /// Both feature vectors were all-zero; the shares are the 0.5/0.5 convention.
    pub degenerate: bool,
}

pub fn stage1_salience<T: Scalar>(patch: &PatchObservation<T>) -> Stage1Salience<T> {
    let n2 = l1(&patch.f2d);
    let n3 = l1(&patch.f3d);
    let denom = n2 + n3;
    if denom > T::zero() {
        let m2d = n2 / denom;
        Stage1Salience {
            m2d,
            m3d: T::one() - m2d,
            degenerate: false,
        }
    } else {
        let half = T::of(0.5);
        Stage1Salience {
            m2d: half,
            m3d: half,
            degenerate: true,
        }
    }
}

/// Episode-level reporting statistic: mean of the per-patch shares over
/// every patch of every step. Returns `None` for an empty input.
pub fn average_salience<'a, T: Scalar>(
    patches: impl IntoIterator<Item = &'a PatchObservation<T>>,
) -> Option<(T, T)> {
    let mut n = 0usize;
    let (mut s2, mut s3) = (T::zero(), T::zero());
    for p in patches {
        let s = stage1_salience(p);
        s2 += s.m2d;
        s3 += s.m3d;
        n += 1;
    }
    (n > 0).then(|| {
        let n = T::from_usize(n).unwrap();
        (s2 / n, s3 / n)
    })
}

/// Lower (`tau2d`) and upper (`tau3d`) bounds on the 3D share.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds", into = "RawThresholds")]
pub struct Stage1Thresholds {
    tau2d: f64,
    tau3d: f64,
}

#[derive(Serialize, Deserialize)]
struct RawThresholds {
    tau2d: f64,
    tau3d: f64,
}

impl TryFrom<RawThresholds> for Stage1Thresholds {
    type Error = ConfigError;
    fn try_from(raw: RawThresholds) -> Result<Self, ConfigError> {
        Self::new(raw.tau2d, raw.tau3d)
    }
}

impl From<Stage1Thresholds> for RawThresholds {
    fn from(t: Stage1Thresholds) -> Self {
        RawThresholds {
            tau2d: t.tau2d,
            tau3d: t.tau3d,
        }
    }
}

impl Default for Stage1Thresholds {
    fn default() -> Self {
        Self {
            tau2d: 0.08,
            tau3d: 0.20,
        }
    }
}

impl Stage1Thresholds {
    pub fn new(tau2d: f64, tau3d: f64) -> Result<Self, ConfigError> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(tau2d) || !in_unit(tau3d) || tau2d >= tau3d {
            return Err(ConfigError::InvalidThresholds { tau2d, tau3d });
        }
        Ok(Self { tau2d, tau3d })
    }

    pub fn tau2d(&self) -> f64 {
        self.tau2d
    }

    pub fn tau3d(&self) -> f64 {
        self.tau3d
    }
}

/// Maps the (smoothed) 3D share to a candidate set. Values equal to either
/// bound fall into the dual-retention band.
pub fn stage1_candidates<T: Scalar>(m3d_hat: T, thresholds: &Stage1Thresholds) -> CandidateSet {
    if m3d_hat < T::of(thresholds.tau2d) {
        CandidateSet::ONLY_2D
    } else if m3d_hat > T::of(thresholds.tau3d) {
        CandidateSet::ONLY_3D
    } else {
        CandidateSet::BOTH
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch(f2d: Vec<f64>, f3d: Vec<f64>) -> PatchObservation<f64> {
        PatchObservation::new(0, f2d, f3d, vec![1.0], vec![1.0])
    }

    #[test]
    fn equal_l1_norms_split_evenly() {
        let s = stage1_salience(&patch(vec![1.0, -1.0], vec![1.0, 1.0]));
        assert_eq!((s.m2d, s.m3d, s.degenerate), (0.5, 0.5, false));
    }

    #[test]
    fn l1_ratio() {
        let s = stage1_salience(&patch(vec![3.0, 0.0], vec![1.0, 0.0]));
        assert_eq!((s.m2d, s.m3d), (0.75, 0.25));
    }

    #[test]
    fn zero_features_are_degenerate() {
        let s = stage1_salience(&patch(vec![0.0, 0.0], vec![0.0, 0.0]));
        assert_eq!((s.m2d, s.m3d, s.degenerate), (0.5, 0.5, true));
    }

    #[test]
    fn works_in_f32() {
        let p =
            PatchObservation::<f32>::new(0, vec![3.0, 0.0], vec![1.0, 0.0], vec![1.0], vec![1.0]);
        let s = stage1_salience(&p);
        assert_eq!((s.m2d, s.m3d), (0.75f32, 0.25f32));
    }

    #[test]
    fn candidate_branches_at_defaults() {
        let th = Stage1Thresholds::default();
        assert_eq!(stage1_candidates(0.05, &th), CandidateSet::ONLY_2D);
        assert_eq!(stage1_candidates(0.08, &th), CandidateSet::BOTH);
        assert_eq!(stage1_candidates(0.20, &th), CandidateSet::BOTH);
        assert_eq!(stage1_candidates(0.5, &th), CandidateSet::ONLY_3D);
    }

    #[test]
    fn inverted_thresholds_rejected() {
        assert!(matches!(
            Stage1Thresholds::new(0.3, 0.2),
            Err(ConfigError::InvalidThresholds { .. })
        ));
        assert!(Stage1Thresholds::new(0.2, 0.2).is_err());
        assert!(serde_json::from_str::<Stage1Thresholds>(r#"{"tau2d":0.5,"tau3d":0.1}"#).is_err());
    }

    #[test]
    fn average_over_patches() {
        let ps = [patch(vec![3.0], vec![1.0]), patch(vec![1.0], vec![1.0])];
        assert_eq!(average_salience(&ps), Some((0.625, 0.375)));
        assert_eq!(average_salience::<f64>(&[]), None);
    }

    proptest! {
        #[test]
        fn shares_sum_to_one_and_are_scale_invariant(
            f2d in prop::collection::vec(-100.0f64..100.0, 1..16),
            f3d_seed in prop::collection::vec(-100.0f64..100.0, 16),
            scale in 1e-3f64..1e3,
        ) {
            let f3d: Vec<f64> = f3d_seed[..f2d.len()].to_vec();
            let s = stage1_salience(&patch(f2d.clone(), f3d.clone()));
            prop_assert!((0.0..=1.0).contains(&s.m2d) && (0.0..=1.0).contains(&s.m3d));
            if !s.degenerate {
                prop_assert!((s.m2d + s.m3d - 1.0).abs() <= 1e-12);
            }
            let scaled = stage1_salience(&patch(
                f2d.iter().map(|v| v * scale).collect(),
                f3d.iter().map(|v| v * scale).collect(),
            ));
            prop_assert!((scaled.m2d - s.m2d).abs() <= 1e-12);
            prop_assert!((scaled.m3d - s.m3d).abs() <= 1e-12);
        }

        #[test]
        fn candidates_partition_and_are_monotone(a in 0.01f64..0.98, gap in 0.002f64..0.5) {
            let b = (a + gap).min(0.99);
            prop_assume!(a < b);
            let th = Stage1Thresholds::new(a, b).unwrap();
            let mut seq = Vec::new();
            for i in 0..=1000 {
                let c = stage1_candidates(i as f64 / 1000.0, &th);
                prop_assert!(!c.is_empty());
                if seq.last() != Some(&c) {
                    seq.push(c);
                }
            }
            let expected = [CandidateSet::ONLY_2D, CandidateSet::BOTH, CandidateSet::ONLY_3D];
            prop_assert_eq!(&seq[..], &expected[..]);
        }
    }
}
