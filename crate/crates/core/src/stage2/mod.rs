//! Stage 2: attention-based semantic synthesis.
//!
//! Patches are clustered on their comprehensive attention score into target
//! object, robot body and background. The 3D attention vector is split into
//! a part parallel to the 2D attention and an orthogonal, 3D-unique part;
//! their L1 shares drive the per-region retention rules.

pub mod decompose;
pub mod kmeans;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate::CandidateSet;
use crate::scalar::{l1, Scalar};
use crate::trace::PatchObservation;

pub use decompose::decompose_attention;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Stage2Error {
    #[error("semantic clustering needs at least 3 patches, got {0}")]
    TooFewPatches(usize),
    #[error("every patch has zero attention; baselines are undefined")]
    AllDegenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemanticLabel {
    #[serde(rename = "OBJ")]
    Obj,
    #[serde(rename = "ROB")]
    Rob,
    #[serde(rename = "BG")]
    Bg,
}

impl SemanticLabel {
    /// Labels in descending order of attention response.
    pub const BY_RESPONSE: [SemanticLabel; 3] =
        [SemanticLabel::Obj, SemanticLabel::Rob, SemanticLabel::Bg];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Salience<T> {
    /// ‖a2d‖₁ / (‖a2d‖₁ + ‖a3d‖₁)
    pub m2d: T,
    /// ‖ortho‖₁ / (‖a2d‖₁ + ‖a3d‖₁)
    pub m3d: T,
    /// L1 norm of the 3D attention component parallel to the 2D attention.
    pub para_norm: T,
    /// L1 norm of the orthogonal component.
    pub ortho_norm: T,
    /// Zero total attention; shares are reported as 0.
    pub degenerate: bool,
}

pub fn stage2_salience<T: Scalar>(patch: &PatchObservation<T>) -> Stage2Salience<T> {
    let (para, ortho) = decompose_attention(&patch.a3d, &patch.a2d);
    let n2 = l1(&patch.a2d);
    let n3 = l1(&patch.a3d);
    let denom = n2 + n3;
    let para_norm = l1(&para);
    let ortho_norm = l1(&ortho);
    if denom > T::zero() {
        Stage2Salience {
            m2d: n2 / denom,
            m3d: ortho_norm / denom,
            para_norm,
            ortho_norm,
            degenerate: false,
        }
    } else {
        Stage2Salience {
            m2d: T::zero(),
            m3d: T::zero(),
            para_norm,
            ortho_norm,
            degenerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering<T> {
    pub labels: Vec<SemanticLabel>,
    /// Centroid per label, indexed by [`SemanticLabel::index`].
    pub centroids: [T; 3],
    pub sse: T,
    /// Fewer than three distinct score levels.
    pub degenerate: bool,
    /// Lloyd iterations converged to a local optimum and the exact
    /// partition replaced it.
    pub refined: bool,
}

impl<T: Scalar> Clustering<T> {
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for l in &self.labels {
            h[l.index()] += 1;
        }
        h
    }
}

/// 1D K-means (K = 3) over per-patch comprehensive attention scores, labels
/// assigned by descending centroid: object, robot, background.
///
/// Lloyd iterations start from the 1/6, 1/2 and 5/6 quantiles. The result is
/// checked against the exact optimal partition and replaced if Lloyd stopped
/// at a worse local optimum. With fewer than three distinct scores the step
/// is degenerate: every patch gets [`SemanticLabel::Obj`].
pub fn cluster_semantics<T: Scalar>(scores: &[T]) -> Result<Clustering<T>, Stage2Error> {
    if scores.len() < 3 {
        return Err(Stage2Error::TooFewPatches(scores.len()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    if sorted.len() < 3 {
        let n = T::from_usize(scores.len()).unwrap();
        let mean = scores.iter().copied().sum::<T>() / n;
        return Ok(Clustering {
            labels: vec![SemanticLabel::Obj; scores.len()],
            centroids: [mean; 3],
            sse: scores.iter().map(|&s| (s - mean).powi(2)).sum(),
            degenerate: true,
            refined: false,
        });
    }
    let mut result = kmeans::lloyd(scores, kmeans::quantile_init(scores, 3));
    let mut refined = false;
    if let Some(opt) = kmeans::optimal_partition(scores, 3) {
        if opt.sse < result.sse - T::of(1e-12) * (T::one() + result.sse) {
            result = opt;
            refined = true;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        result.centroids[b]
            .partial_cmp(&result.centroids[a])
            .unwrap()
    });
    let mut label_of = [SemanticLabel::Obj; 3];
    let mut centroids = [T::zero(); 3];
    for (rank, &c) in order.iter().enumerate() {
        label_of[c] = SemanticLabel::BY_RESPONSE[rank];
        centroids[rank] = result.centroids[c];
    }
    let labels: Vec<SemanticLabel> = result.assignment.iter().map(|&c| label_of[c]).collect();
    let mut counts = [0usize; 3];
    for &c in &result.assignment {
        counts[c] += 1;
    }
    Ok(Clustering {
        labels,
        centroids,
        sse: result.sse,
        degenerate: counts.contains(&0),
        refined,
    })
}

/// Separate per-modality clustering used in analysis: three centers for the
/// 2D attention mass, two for the 3D attention mass. Returns the cluster
/// rank of each patch (0 = highest centroid) for both modalities.
pub fn cluster_by_modality<T: Scalar>(
    patches: &[PatchObservation<T>],
) -> Result<(Vec<usize>, Vec<usize>), Stage2Error> {
    if patches.len() < 3 {
        return Err(Stage2Error::TooFewPatches(patches.len()));
    }
    let ranked = |values: Vec<T>, k: usize| -> Vec<usize> {
        let r = kmeans::lloyd(&values, kmeans::quantile_init(&values, k));
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| r.centroids[b].partial_cmp(&r.centroids[a]).unwrap());
        let mut rank = vec![0; k];
        for (i, &c) in order.iter().enumerate() {
            rank[c] = i;
        }
        r.assignment.iter().map(|&c| rank[c]).collect()
    };
    let s2: Vec<T> = patches.iter().map(|p| l1(&p.a2d)).collect();
    let s3: Vec<T> = patches.iter().map(|p| l1(&p.a3d)).collect();
    Ok((ranked(s2, 3), ranked(s3, 2)))
}

/// Global reference levels for the 2D share and the orthogonal 3D share.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemanticBaselines<T> {
    pub mu2d: T,
    pub mu3d: T,
}

/// Means of `(m2d, m3d)` over the non-degenerate samples.
pub fn compute_baselines<T: Scalar>(
    samples: impl IntoIterator<Item = (T, T, bool)>,
) -> Result<SemanticBaselines<T>, Stage2Error> {
    let mut n = 0usize;
    let (mut s2, mut s3) = (T::zero(), T::zero());
    for (m2d, m3d, degenerate) in samples {
        if !degenerate {
            s2 += m2d;
            s3 += m3d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Stage2Error::AllDegenerate);
    }
    let n = T::from_usize(n).unwrap();
    Ok(SemanticBaselines {
        mu2d: s2 / n,
        mu3d: s3 / n,
    })
}

/// Thresholds for demoting an object patch to 2D-only retention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectRule {
    /// Minimum smoothed 2D share counted as extreme 2D reliance.
    pub theta_2d_extreme: f64,
    /// Maximum smoothed orthogonal 3D share counted as near zero.
    pub eps_3d: f64,
}

impl Default for ObjectRule {
    fn default() -> Self {
        Self {
            theta_2d_extreme: 0.95,
            eps_3d: 0.02,
        }
    }
}

/// Semantic retention rule for one patch. `keep_bg` is the outcome of the
/// patch's background draw for this step.
pub fn stage2_candidates<T: Scalar>(
    label: SemanticLabel,
    m2d_hat: T,
    m3d_hat: T,
    baselines: &SemanticBaselines<T>,
    keep_bg: bool,
    rule: &ObjectRule,
) -> CandidateSet {
    match label {
        SemanticLabel::Bg => {
            if keep_bg {
                CandidateSet::BOTH
            } else {
                CandidateSet::EMPTY
            }
        }
        SemanticLabel::Rob => {
            if m3d_hat > baselines.mu3d {
                CandidateSet::BOTH
            } else if m2d_hat > baselines.mu2d {
                CandidateSet::ONLY_2D
            } else {
                CandidateSet::EMPTY
            }
        }
        SemanticLabel::Obj => {
            if m2d_hat > T::of(rule.theta_2d_extreme) && m3d_hat < T::of(rule.eps_3d) {
                CandidateSet::ONLY_2D
            } else {
                CandidateSet::BOTH
            }
        }
    }
}
