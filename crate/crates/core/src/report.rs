use crate::scalar::Scalar;
use crate::stage1::stage1_salience;
use crate::stage2::stage2_salience;
use crate::trace::StepObservation;

/// The four per-patch indicators driving the pruning rules.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PatchSalience<T> {
    /// Stage-1 feature share of the 2D token.
    pub s1_2d: T,
    /// Stage-1 feature share of the 3D token.
    pub s1_3d: T,
    /// Stage-2 attention share of the 2D token.
    pub s2_2d: T,
    /// Stage-2 orthogonal (3D-unique) attention share.
    pub s2_3d: T,
    pub s1_degenerate: bool,
    pub s2_degenerate: bool,
}

impl<T: Scalar> PatchSalience<T> {
    pub fn get(&self, indicator: crate::temporal::Indicator) -> T {
        use crate::temporal::Indicator::*;
        match indicator {
            FeatureShare2d => self.s1_2d,
            FeatureShare3d => self.s1_3d,
            AttentionShare2d => self.s2_2d,
            OrthogonalShare3d => self.s2_3d,
        }
    }

    pub fn set(&mut self, indicator: crate::temporal::Indicator, v: T) {
        use crate::temporal::Indicator::*;
        match indicator {
            FeatureShare2d => self.s1_2d = v,
            FeatureShare3d => self.s1_3d = v,
            AttentionShare2d => self.s2_2d = v,
            OrthogonalShare3d => self.s2_3d = v,
        }
    }
}

/// Indicator values for every patch at one step, raw or smoothed.
#[derive(Clone, Debug, PartialEq)]
pub struct SalienceReport<T> {
    pub t: u64,
    pub patches: Vec<PatchSalience<T>>,
}

impl<T: Scalar> SalienceReport<T> {
    /// Raw stage-1 and stage-2 indicators of an observation.
    pub fn from_observation(obs: &StepObservation<T>) -> Self {
        let patches = obs
            .patches
            .iter()
            .map(|p| {
                let s1 = stage1_salience(p);
                let s2 = stage2_salience(p);
                PatchSalience {
                    s1_2d: s1.m2d,
                    s1_3d: s1.m3d,
                    s2_2d: s2.m2d,
                    s2_3d: s2.m3d,
                    s1_degenerate: s1.degenerate,
                    s2_degenerate: s2.degenerate,
                }
            })
            .collect();
        Self { t: obs.t, patches }
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }
}
