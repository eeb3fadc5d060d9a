//! Per-step orchestration of the three stages into retention masks.
//!
//! Order of operations for step `t`:
//!
//! 1. raw indicators are computed and fed through the temporal smoother;
//! 2. at `t == 1` every token is kept (cold start);
//! 3. stage-1 candidates come from the smoothed 3D feature share;
//! 4. patches are clustered on raw comprehensive attention, baselines are
//!    the means of the smoothed stage-2 shares, and the semantic rule of each
//!    patch's region yields the stage-2 candidates;
//! 5. patches with an empty stage-2 set are dropped, the rest keep the
//!    intersection of both sets, falling back to the stage-2 set when the
//!    intersection is empty;
//! 6. the optional budget pass drops further low-salience tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidate::CandidateSet;
use crate::config::{check_rate, ConfigError, PrunerConfig};
use crate::report::SalienceReport;
use crate::rng;
use crate::scalar::Scalar;
use crate::stage1::stage1_candidates;
use crate::stage2::{
    cluster_semantics, compute_baselines, stage2_candidates, ObjectRule, SemanticLabel, Stage2Error,
};
use crate::temporal::{smooth_step, PrunerState, TemporalError};
use crate::trace::{EpisodeTrace, StepObservation, TraceError};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("state mismatch: expected step {expected}, got {got}")]
    StateMismatch { expected: u64, got: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Stage2(#[from] Stage2Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Keep (true) / drop (false) flag per patch for each token stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionMask {
    pub t: u64,
    pub mask2d: Vec<bool>,
    pub mask3d: Vec<bool>,
}

impl RetentionMask {
    pub fn all_ones(t: u64, num_patches: usize) -> Self {
        Self {
            t,
            mask2d: vec![true; num_patches],
            mask3d: vec![true; num_patches],
        }
    }

    pub fn from_candidates(t: u64, finals: &[CandidateSet]) -> Self {
        Self {
            t,
            mask2d: finals.iter().map(|c| c.has2d).collect(),
            mask3d: finals.iter().map(|c| c.has3d).collect(),
        }
    }

    pub fn num_patches(&self) -> usize {
        self.mask2d.len()
    }

    pub fn retained2d(&self) -> usize {
        self.mask2d.iter().filter(|&&b| b).count()
    }

    pub fn retained3d(&self) -> usize {
        self.mask3d.iter().filter(|&&b| b).count()
    }

    pub fn retained(&self) -> usize {
        self.retained2d() + self.retained3d()
    }

    pub fn pruned(&self) -> usize {
        2 * self.num_patches() - self.retained()
    }

    pub fn pr2d(&self) -> f64 {
        rate(self.retained2d(), self.num_patches())
    }

    pub fn pr3d(&self) -> f64 {
        rate(self.retained3d(), self.num_patches())
    }

    /// Pruned fraction of all 2P tokens.
    pub fn pr_overall(&self) -> f64 {
        rate(self.retained(), 2 * self.num_patches())
    }

    pub fn candidate(&self, patch: usize) -> CandidateSet {
        CandidateSet::new(self.mask2d[patch], self.mask3d[patch])
    }
}

fn rate(kept: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        1.0 - kept as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub t: u64,
    pub pr2d: f64,
    pub pr3d: f64,
    pub retained_total: usize,
    pub conflicts_resolved: usize,
    /// Patch counts per label, in `[OBJ, ROB, BG]` order. All zero at cold start.
    pub semantic_histogram: [usize; 3],
    /// Background patches that survived the random cut.
    pub bg_kept: usize,
    pub cluster_degenerate: bool,
}

impl StepStats {
    pub fn from_mask(mask: &RetentionMask) -> Self {
        Self {
            t: mask.t,
            pr2d: mask.pr2d(),
            pr3d: mask.pr3d(),
            retained_total: mask.retained(),
            conflicts_resolved: 0,
            semantic_histogram: [0; 3],
            bg_kept: 0,
            cluster_degenerate: false,
        }
    }
}

/// Intermediate decisions for one patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchDecision {
    pub label: SemanticLabel,
    pub stage1: CandidateSet,
    pub stage2: CandidateSet,
    pub fused: CandidateSet,
    pub conflict: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub mask: RetentionMask,
    pub stats: StepStats,
    pub raw: SalienceReport<T>,
    pub smoothed: SalienceReport<T>,
    /// Empty at cold start.
    pub decisions: Vec<PatchDecision>,
}

/// Stage-1/stage-2 fusion for one patch. Returns the final set and whether
/// the conflict fallback fired.
pub fn fuse(stage1: CandidateSet, stage2: CandidateSet) -> (CandidateSet, bool) {
    if stage2.is_empty() {
        return (CandidateSet::EMPTY, false);
    }
    let both = stage2.intersect(stage1);
    if both.is_empty() {
        (stage2, true)
    } else {
        (both, false)
    }
}

/// Runs one step of the pipeline and advances `state`. On error the state is
/// left as it was.
pub fn prune_step<T: Scalar>(
    state: &mut PrunerState<T>,
    obs: &StepObservation<T>,
    config: &PrunerConfig,
) -> Result<StepOutcome<T>, FusionError> {
    let p = obs.num_patches();
    if obs.t != state.t + 1 {
        return Err(FusionError::StateMismatch {
            expected: state.t + 1,
            got: obs.t,
        });
    }
    if let Some(first) = obs.patches.first() {
        obs.validate(p, first.f2d.len(), first.a2d.len())?;
    }
    let raw = SalienceReport::from_observation(obs);
    let mut next = state.clone();
    let smoothed = smooth_step(&mut next, &raw, &config.smoothing)?;

    if obs.t == 1 {
        let mask = RetentionMask::all_ones(1, p);
        let stats = StepStats::from_mask(&mask);
        *state = next;
        return Ok(StepOutcome {
            mask,
            stats,
            raw,
            smoothed,
            decisions: Vec::new(),
        });
    }

    let scores: Vec<T> = obs
        .patches
        .iter()
        .map(|q| q.comprehensive_score())
        .collect();
    let clustering = cluster_semantics(&scores)?;
    let baselines = compute_baselines(
        smoothed
            .patches
            .iter()
            .zip(&raw.patches)
            .map(|(s, r)| (s.s2_2d, s.s2_3d, r.s2_degenerate)),
    )?;
    let rule = ObjectRule {
        theta_2d_extreme: config.theta_2d_extreme,
        eps_3d: config.eps_3d,
    };

    let mut decisions = Vec::with_capacity(p);
    let mut conflicts = 0;
    let mut bg_kept = 0;
    for (i, (s, &label)) in smoothed.patches.iter().zip(&clustering.labels).enumerate() {
        let c1 = stage1_candidates(s.s1_3d, &config.thresholds);
        let keep_bg = label == SemanticLabel::Bg
            && rng::keep_background(state.seed, obs.t, i, config.bg_keep_prob);
        bg_kept += keep_bg as usize;
        let c2 = stage2_candidates(label, s.s2_2d, s.s2_3d, &baselines, keep_bg, &rule);
        let (fused, conflict) = fuse(c1, c2);
        conflicts += conflict as usize;
        decisions.push(PatchDecision {
            label,
            stage1: c1,
            stage2: c2,
            fused,
            conflict,
        });
    }
    let finals: Vec<CandidateSet> = decisions.iter().map(|d| d.fused).collect();
    let mut mask = RetentionMask::from_candidates(obs.t, &finals);
    if let Some(r) = config.budget {
        let s2d: Vec<T> = smoothed.patches.iter().map(|s| s.s1_2d).collect();
        let s3d: Vec<T> = smoothed.patches.iter().map(|s| s.s1_3d).collect();
        mask = apply_budget(&mask, &s2d, &s3d, r)?;
    }
    let mut stats = StepStats::from_mask(&mask);
    stats.conflicts_resolved = conflicts;
    stats.semantic_histogram = clustering.histogram();
    stats.bg_kept = bg_kept;
    stats.cluster_degenerate = clustering.degenerate;
    *state = next;
    Ok(StepOutcome {
        mask,
        stats,
        raw,
        smoothed,
        decisions,
    })
}

/// Number of tokens to prune out of `total` for rate `r`, rounding up but
/// ignoring floating noise (0.7 * 20 is 14, not 15).
pub fn budget_target(r: f64, total: usize) -> usize {
    let x = r * total as f64;
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// Drops retained tokens in ascending order of their own-modality salience
/// score until `ceil(r * 2P)` tokens are pruned. Never re-adds a token; a
/// mask already at or past the target is returned unchanged. Ties are broken
/// by patch index, 2D before 3D.
pub fn apply_budget<T: Scalar>(
    mask: &RetentionMask,
    scores2d: &[T],
    scores3d: &[T],
    r: f64,
) -> Result<RetentionMask, ConfigError> {
    check_rate(r)?;
    let p = mask.num_patches();
    assert_eq!(scores2d.len(), p, "one 2D score per patch");
    assert_eq!(scores3d.len(), p, "one 3D score per patch");
    let target = budget_target(r, 2 * p);
    let pruned = mask.pruned();
    if pruned >= target {
        return Ok(mask.clone());
    }
    let mut retained: Vec<(T, usize, usize)> = Vec::with_capacity(mask.retained());
    for i in 0..p {
        if mask.mask2d[i] {
            retained.push((scores2d[i], i, 0));
        }
        if mask.mask3d[i] {
            retained.push((scores3d[i], i, 1));
        }
    }
    retained.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut out = mask.clone();
    for &(_, i, modality) in retained.iter().take(target - pruned) {
        if modality == 0 {
            out.mask2d[i] = false;
        } else {
            out.mask3d[i] = false;
        }
    }
    Ok(out)
}

/// Stateful wrapper that owns a config and the episode state.
#[derive(Clone, Debug)]
pub struct Pruner<T> {
    config: PrunerConfig,
    state: PrunerState<T>,
}

impl<T: Scalar> Pruner<T> {
    pub fn new(config: PrunerConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let state = PrunerState::new(config.seed);
        Ok(Self { config, state })
    }

    /// Resumes from a checkpointed state.
    pub fn resume(config: PrunerConfig, state: PrunerState<T>) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &PrunerConfig {
        &self.config
    }

    pub fn state(&self) -> &PrunerState<T> {
        &self.state
    }

    pub fn step(&mut self, obs: &StepObservation<T>) -> Result<StepOutcome<T>, FusionError> {
        prune_step(&mut self.state, obs, &self.config)
    }
}

/// Runs every step of a trace through a fresh pruner.
pub fn prune_episode<T: Scalar>(
    trace: &EpisodeTrace<T>,
    config: &PrunerConfig,
) -> Result<Vec<(RetentionMask, StepStats)>, FusionError> {
    let mut pruner = Pruner::new(config.clone())?;
    trace
        .steps
        .iter()
        .map(|s| pruner.step(s).map(|o| (o.mask, o.stats)))
        .collect()
}

/// Number of keep/drop changes between consecutive steps, over every token.
pub fn mask_flips(masks: &[RetentionMask]) -> usize {
    masks
        .windows(2)
        .map(|w| {
            let d2 = w[0]
                .mask2d
                .iter()
                .zip(&w[1].mask2d)
                .filter(|(a, b)| a != b)
                .count();
            let d3 = w[0]
                .mask3d
                .iter()
                .zip(&w[1].mask3d)
                .filter(|(a, b)| a != b)
                .count();
            d2 + d3
        })
        .sum()
}

/// Flips per token per step transition; 0 for fewer than two steps.
pub fn mask_flip_rate(masks: &[RetentionMask]) -> f64 {
    if masks.len() < 2 || masks[0].num_patches() == 0 {
        return 0.0;
    }
    let slots = (masks.len() - 1) * 2 * masks[0].num_patches();
    mask_flips(masks) as f64 / slots as f64
}
