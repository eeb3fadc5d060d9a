//! Stage 3: per-patch, per-indicator temporal smoothing.
//!
//! Step 1 takes the observation as is, steps `1 < t < k` keep a running mean
//! and steps `t >= k` switch to an exponential moving average with momentum
//! `beta`. Both recurrences need only the previous estimate, so no window of
//! past values is stored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ConfigError;
use crate::report::SalienceReport;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemporalError {
    #[error("out-of-order update: expected step {expected}, got {got}")]
    OutOfOrderUpdate { expected: u64, got: u64 },
    #[error("patch count changed from {expected} to {got}")]
    PatchCountChanged { expected: usize, got: usize },
    #[error("non-finite observation at step {step}")]
    NonFinite { step: u64 },
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Indicator {
    #[serde(rename = "m_s1_2d")]
    FeatureShare2d,
    #[serde(rename = "m_s1_3d")]
    FeatureShare3d,
    #[serde(rename = "m_s2_2d")]
    AttentionShare2d,
    #[serde(rename = "m_s2_3d")]
    OrthogonalShare3d,
}

impl Indicator {
    pub const ALL: [Indicator; 4] = [
        Indicator::FeatureShare2d,
        Indicator::FeatureShare3d,
        Indicator::AttentionShare2d,
        Indicator::OrthogonalShare3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::FeatureShare2d => "m_s1_2d",
            Indicator::FeatureShare3d => "m_s1_3d",
            Indicator::AttentionShare2d => "m_s2_2d",
            Indicator::OrthogonalShare3d => "m_s2_3d",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEma", into = "RawEma")]
pub struct EmaConfig {
    beta: f64,
    window: u64,
}

#[derive(Serialize, Deserialize)]
struct RawEma {
    beta: f64,
    k: u64,
}

impl TryFrom<RawEma> for EmaConfig {
    type Error = ConfigError;
    fn try_from(r: RawEma) -> Result<Self, ConfigError> {
        EmaConfig::new(r.beta, r.k)
    }
}

impl From<EmaConfig> for RawEma {
    fn from(c: EmaConfig) -> Self {
        RawEma {
            beta: c.beta,
            k: c.window,
        }
    }
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            beta: 0.85,
            window: 7,
        }
    }
}

impl EmaConfig {
    pub fn new(beta: f64, window: u64) -> Result<Self, ConfigError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(ConfigError::InvalidMomentum(beta));
        }
        if window < 2 {
            return Err(ConfigError::InvalidWindow(window));
        }
        Ok(Self { beta, window })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn window(&self) -> u64 {
        self.window
    }
}

/// How raw indicators become the values the rules compare.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Smoothing {
    Ema(EmaConfig),
    /// No temporal smoothing; every step uses its raw observation.
    Passthrough,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::Ema(EmaConfig::default())
    }
}

impl Smoothing {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Smoothing::Ema(c) => EmaConfig::new(c.beta, c.window).map(|_| ()),
            Smoothing::Passthrough => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IndicatorTrack<T> {
    pub x_hat: T,
    pub t_seen: u64,
}

/// One smoothing step. `step` must be `track.t_seen + 1`.
pub fn ema_update<T: Scalar>(
    track: IndicatorTrack<T>,
    step: u64,
    x_t: T,
    config: &EmaConfig,
) -> Result<IndicatorTrack<T>, TemporalError> {
    let mut next = track;
    next.update(step, x_t, &Smoothing::Ema(*config))?;
    Ok(next)
}

impl<T: Scalar> IndicatorTrack<T> {
    pub fn update(&mut self, step: u64, x_t: T, smoothing: &Smoothing) -> Result<T, TemporalError> {
        let t = self.t_seen + 1;
        if step != t {
            return Err(TemporalError::OutOfOrderUpdate {
                expected: t,
                got: step,
            });
        }
        if !x_t.is_finite() {
            return Err(TemporalError::NonFinite { step });
        }
        // weight of the new observation; the update is written as a step
        // from x_hat towards x_t so a constant input stays exactly constant
        let w = match smoothing {
            Smoothing::Passthrough => T::one(),
            _ if t == 1 => T::one(),
            Smoothing::Ema(cfg) if t < cfg.window => T::one() / T::from_u64(t).unwrap(),
            Smoothing::Ema(cfg) => T::one() - T::of(cfg.beta),
        };
        self.x_hat = if w == T::one() {
            x_t
        } else {
            let next = self.x_hat + w * (x_t - self.x_hat);
            next.max(self.x_hat.min(x_t)).min(self.x_hat.max(x_t))
        };
        self.t_seen = t;
        Ok(self.x_hat)
    }
}

/// Smoothing history of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunerState<T> {
    /// Last step consumed (0 before the first step).
    pub t: u64,
    /// Master seed for the background random cut.
    pub seed: u64,
    tracks: Vec<[IndicatorTrack<T>; 4]>,
}

impl<T: Scalar> PrunerState<T> {
    pub fn new(seed: u64) -> Self {
        Self {
            t: 0,
            seed,
            tracks: Vec::new(),
        }
    }

    /// Patch count fixed by the first step, 0 before it.
    pub fn num_patches(&self) -> usize {
        self.tracks.len()
    }

    pub fn track(&self, patch: usize, indicator: Indicator) -> Option<IndicatorTrack<T>> {
        let idx = Indicator::ALL.iter().position(|&i| i == indicator)?;
        self.tracks.get(patch).map(|t| t[idx])
    }

    /// Checks that `t` is the next step and `num_patches` matches the
    /// patch count seen so far.
    pub fn check_next(&self, t: u64, num_patches: usize) -> Result<(), TemporalError> {
        if t != self.t + 1 {
            return Err(TemporalError::OutOfOrderUpdate {
                expected: self.t + 1,
                got: t,
            });
        }
        if self.t > 0 && num_patches != self.tracks.len() {
            return Err(TemporalError::PatchCountChanged {
                expected: self.tracks.len(),
                got: num_patches,
            });
        }
        Ok(())
    }
}

/// Feeds one step of raw indicators through the per-track recurrences and
/// returns the smoothed report. Degenerate flags are carried over unchanged.
pub fn smooth_step<T: Scalar>(
    state: &mut PrunerState<T>,
    raw: &SalienceReport<T>,
    smoothing: &Smoothing,
) -> Result<SalienceReport<T>, TemporalError> {
    state.check_next(raw.t, raw.num_patches())?;
    if state.t == 0 {
        state.tracks = vec![[IndicatorTrack::default(); 4]; raw.num_patches()];
    }
    // stage the update so a failure leaves the state untouched
    let mut tracks = state.tracks.clone();
    let mut smoothed = raw.clone();
    for ((patch, tr), out) in raw
        .patches
        .iter()
        .zip(tracks.iter_mut())
        .zip(smoothed.patches.iter_mut())
    {
        for (track, ind) in tr.iter_mut().zip(Indicator::ALL) {
            let v = track.update(raw.t, patch.get(ind), smoothing)?;
            out.set(ind, v);
        }
    }
    state.tracks = tracks;
    state.t = raw.t;
    Ok(smoothed)
}

#[derive(Serialize, Deserialize)]
struct TrackRecord<T> {
    id: String,
    x_hat: T,
    t_seen: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Checkpoint<T> {
    t: u64,
    seed: u64,
    num_patches: usize,
    tracks: Vec<TrackRecord<T>>,
}

impl<T: Scalar> PrunerState<T> {
    /// Serializes the state as JSON: `{t, seed, num_patches, tracks: [{id, x_hat, t_seen}]}`
    /// with track ids of the form `p<patch>/<indicator>`.
    pub fn to_json(&self) -> String {
        let tracks = self
            .tracks
            .iter()
            .enumerate()
            .flat_map(|(p, tr)| {
                tr.iter()
                    .zip(Indicator::ALL)
                    .map(move |(track, ind)| TrackRecord {
                        id: format!("p{p}/{}", ind.name()),
                        x_hat: track.x_hat,
                        t_seen: track.t_seen,
                    })
            })
            .collect();
        let cp = Checkpoint {
            t: self.t,
            seed: self.seed,
            num_patches: self.tracks.len(),
            tracks,
        };
        serde_json::to_string(&cp).expect("state serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, TemporalError> {
        let bad = |m: String| TemporalError::BadCheckpoint(m);
        let cp: Checkpoint<T> = serde_json::from_str(s).map_err(|e| bad(e.to_string()))?;
        let mut tracks = vec![[IndicatorTrack::default(); 4]; cp.num_patches];
        let mut seen = vec![[false; 4]; cp.num_patches];
        for rec in cp.tracks {
            let (p, ind) = rec
                .id
                .strip_prefix('p')
                .and_then(|s| s.split_once('/'))
                .and_then(|(p, i)| Some((p.parse::<usize>().ok()?, Indicator::from_name(i)?)))
                .ok_or_else(|| bad(format!("bad track id {:?}", rec.id)))?;
            let idx = Indicator::ALL.iter().position(|&i| i == ind).unwrap();
            if p >= cp.num_patches || seen[p][idx] {
                return Err(bad(format!("unexpected track {:?}", rec.id)));
            }
            if rec.t_seen != cp.t || !rec.x_hat.is_finite() {
                return Err(bad(format!("inconsistent track {:?}", rec.id)));
            }
            seen[p][idx] = true;
            tracks[p][idx] = IndicatorTrack {
                x_hat: rec.x_hat,
                t_seen: rec.t_seen,
            };
        }
        if seen.iter().flatten().any(|s| !s) {
            return Err(bad("missing tracks".into()));
        }
        Ok(Self {
            t: cp.t,
            seed: cp.seed,
            tracks,
        })
    }
}
