//! Synthetic episode generator.
//!
//! Every patch belongs to one planted region. Per step, the generator picks
//! a comprehensive attention score around the region's level, a 3D feature
//! share and an orthogonal 3D attention fraction, then builds vectors that
//! realize those values exactly:
//!
//! * features: random-sign vectors with L1 norms `(1 - q) * n` and `q * n`;
//! * attention: `a2d` lives on half of the dimensions, the orthogonal part
//!   `w` on the other half, and `a3d = lambda * a2d + w`. All entries stay
//!   nonnegative and `w` is orthogonal to `a2d` by construction.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage2::SemanticLabel;
use crate::trace::{EpisodeTrace, PatchObservation, StepObservation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
}

/// One value per semantic region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regions<V> {
    pub obj: V,
    pub rob: V,
    pub bg: V,
}

impl<V: Copy> Regions<V> {
    pub fn get(&self, label: SemanticLabel) -> V {
        match label {
            SemanticLabel::Obj => self.obj,
            SemanticLabel::Rob => self.rob,
            SemanticLabel::Bg => self.bg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    /// Planted stage-1 3D feature share.
    pub m_s1_3d: f64,
    /// Fraction of the comprehensive attention carried by the 3D vector.
    pub attn_3d_share: f64,
    /// Fraction of the 3D attention orthogonal to the 2D attention.
    pub ortho_frac: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    None,
    /// Ramps from 0 at the first step to `amplitude` at the last.
    Linear,
    /// `amplitude * sin(2 pi (t - 1) / period + phase)`.
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Drift {
    pub kind: DriftKind,
    pub amplitude: f64,
    pub period: f64,
}

impl Default for Drift {
    fn default() -> Self {
        Self {
            kind: DriftKind::None,
            amplitude: 0.0,
            period: 12.0,
        }
    }
}

impl Drift {
    /// Relative modulation at step `t` (1-based) of an episode of `steps` steps.
    pub fn factor(&self, t: usize, steps: usize, phase: f64) -> f64 {
        match self.kind {
            DriftKind::None => 0.0,
            DriftKind::Linear => {
                let span = steps.saturating_sub(1).max(1) as f64;
                self.amplitude * (t - 1) as f64 / span
            }
            DriftKind::Sinusoidal => {
                self.amplitude * (2.0 * PI * (t - 1) as f64 / self.period + phase).sin()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub episode_id: String,
    pub num_patches: usize,
    pub steps: usize,
    pub feat_dim: usize,
    pub attn_dim: usize,
    pub fractions: Regions<f64>,
    /// Mean comprehensive attention score per region; obj > rob > bg > 0.
    pub levels: Regions<f64>,
    pub profiles: Regions<RegionProfile>,
    pub drift: Drift,
    /// Gaussian noise on the comprehensive attention score.
    pub noise_sigma: f64,
    /// Gaussian noise on the planted shares (feature share, orthogonal fraction).
    pub indicator_noise: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            episode_id: "synthetic".into(),
            num_patches: 256,
            steps: 20,
            feat_dim: 32,
            attn_dim: 16,
            fractions: Regions {
                obj: 0.15,
                rob: 0.25,
                bg: 0.60,
            },
            levels: Regions {
                obj: 10.0,
                rob: 2.0,
                bg: 0.2,
            },
            profiles: Regions {
                obj: RegionProfile {
                    m_s1_3d: 0.15,
                    attn_3d_share: 0.4,
                    ortho_frac: 0.5,
                },
                rob: RegionProfile {
                    m_s1_3d: 0.15,
                    attn_3d_share: 0.15,
                    ortho_frac: 0.3,
                },
                bg: RegionProfile {
                    m_s1_3d: 0.1,
                    attn_3d_share: 0.2,
                    ortho_frac: 0.1,
                },
            },
            drift: Drift::default(),
            noise_sigma: 0.0,
            indicator_noise: 0.0,
            seed: 0,
        }
    }
}

const PHASES: Regions<f64> = Regions {
    obj: 0.0,
    rob: 2.0 * PI / 3.0,
    bg: 4.0 * PI / 3.0,
};

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: String| Err(SpecError::InvalidSpec(m));
        if self.num_patches == 0 || self.feat_dim == 0 {
            return bad("num_patches and feat_dim must be positive".into());
        }
        if self.attn_dim < 2 {
            return bad("attn_dim must be at least 2".into());
        }
        let f = self.fractions;
        if [f.obj, f.rob, f.bg]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("region fractions must be finite and nonnegative".into());
        }
        if ((f.obj + f.rob + f.bg) - 1.0).abs() > 1e-9 {
            return bad(format!(
                "region fractions sum to {}, expected 1",
                f.obj + f.rob + f.bg
            ));
        }
        let l = self.levels;
        if !(l.obj > l.rob && l.rob > l.bg && l.bg > 0.0 && l.obj.is_finite()) {
            return bad("attention levels must satisfy obj > rob > bg > 0".into());
        }
        for p in [self.profiles.obj, self.profiles.rob, self.profiles.bg] {
            if !(0.0..=1.0).contains(&p.m_s1_3d) || !(0.0..=1.0).contains(&p.ortho_frac) {
                return bad("m_s1_3d and ortho_frac must lie in [0, 1]".into());
            }
            if !(p.attn_3d_share > 0.0 && p.attn_3d_share < 1.0) {
                return bad("attn_3d_share must lie in (0, 1)".into());
            }
        }
        let d = self.drift;
        if !(d.amplitude.is_finite() && (0.0..1.0).contains(&d.amplitude)) {
            return bad("drift amplitude must lie in [0, 1)".into());
        }
        if !(d.period.is_finite() && d.period > 0.0) {
            return bad("drift period must be positive".into());
        }
        for (name, s) in [
            ("noise_sigma", self.noise_sigma),
            ("indicator_noise", self.indicator_noise),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Planted patch counts per region.
    pub fn region_counts(&self) -> Regions<usize> {
        let p = self.num_patches;
        let obj = ((self.fractions.obj * p as f64).round() as usize).min(p);
        let rob = ((self.fractions.rob * p as f64).round() as usize).min(p - obj);
        Regions {
            obj,
            rob,
            bg: p - obj - rob,
        }
    }
}

/// Planted per-step, per-patch values (outer index: step, inner: patch).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub m_s1_3d: Vec<Vec<f64>>,
    pub ortho_frac: Vec<Vec<f64>>,
    pub m_s2_2d: Vec<Vec<f64>>,
    pub m_s2_3d: Vec<Vec<f64>>,
    pub score: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub labels: Vec<SemanticLabel>,
    pub planted: Planted,
}

/// Nonzero-magnitude random vector with the given L1 norm.
fn vector_with_l1(rng: &mut ChaCha8Rng, len: usize, norm: f64, signed: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..len)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if signed && rng.random_bool(0.5) {
                -m
            } else {
                m
            }
        })
        .collect();
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    v.iter_mut().for_each(|x| *x *= norm / total);
    v
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma)
            .expect("sigma validated")
            .sample(rng)
    }
}

pub fn generate_episode(
    spec: &ScenarioSpec,
) -> Result<(EpisodeTrace<f64>, GroundTruth), SpecError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let counts = spec.region_counts();
    let mut labels: Vec<SemanticLabel> = std::iter::repeat_n(SemanticLabel::Obj, counts.obj)
        .chain(std::iter::repeat_n(SemanticLabel::Rob, counts.rob))
        .chain(std::iter::repeat_n(SemanticLabel::Bg, counts.bg))
        .collect();
    labels.shuffle(&mut rng);

    let p = spec.num_patches;
    let da = spec.attn_dim;
    let mut trace = EpisodeTrace::new(spec.episode_id.clone(), p, spec.feat_dim, da);
    let mut planted = Planted::default();
    for t in 1..=spec.steps {
        let level_scale = 1.0 + spec.drift.factor(t, spec.steps, 0.0);
        let mut patches = Vec::with_capacity(p);
        let mut rows = [vec![], vec![], vec![], vec![], vec![]];
        for (id, &label) in labels.iter().enumerate() {
            let profile = spec.profiles.get(label);
            let phase = PHASES.get(label);
            let score = (spec.levels.get(label) * level_scale
                + gaussian(&mut rng, spec.noise_sigma))
            .max(1e-9 * spec.levels.bg);
            let q = (profile.m_s1_3d * (1.0 + spec.drift.factor(t, spec.steps, phase))
                + gaussian(&mut rng, spec.indicator_noise))
            .clamp(0.0, 1.0);
            let rho = (profile.ortho_frac
                * (1.0 + spec.drift.factor(t, spec.steps, phase + PI / 2.0))
                + gaussian(&mut rng, spec.indicator_noise))
            .clamp(0.0, 1.0);
            let g = profile.attn_3d_share;

            let feat_norm = rng.random_range(1.0..5.0);
            let f2d = vector_with_l1(&mut rng, spec.feat_dim, (1.0 - q) * feat_norm, true);
            let f3d = vector_with_l1(&mut rng, spec.feat_dim, q * feat_norm, true);

            let mut dims: Vec<usize> = (0..da).collect();
            dims.shuffle(&mut rng);
            let (shared, unique) = dims.split_at(da.div_ceil(2));
            let base = vector_with_l1(&mut rng, shared.len(), (1.0 - g) * score, false);
            let resid = vector_with_l1(&mut rng, unique.len(), rho * g * score, false);
            let lambda = (1.0 - rho) * g / (1.0 - g);
            let mut a2d = vec![0.0; da];
            let mut a3d = vec![0.0; da];
            for (&d, &v) in shared.iter().zip(&base) {
                a2d[d] = v;
                a3d[d] = lambda * v;
            }
            for (&d, &v) in unique.iter().zip(&resid) {
                a3d[d] = v;
            }
            patches.push(PatchObservation::new(id, f2d, f3d, a2d, a3d));
            for (row, v) in rows.iter_mut().zip([q, rho, 1.0 - g, rho * g, score]) {
                row.push(v);
            }
        }
        trace.steps.push(StepObservation::new(t as u64, patches));
        let [m1, o, m2, m3, s] = rows;
        planted.m_s1_3d.push(m1);
        planted.ortho_frac.push(o);
        planted.m_s2_2d.push(m2);
        planted.m_s2_3d.push(m3);
        planted.score.push(s);
    }
    Ok((trace, GroundTruth { labels, planted }))
}
