//! Episode trace domain types and the JSON Lines trace format.
//!
//! A trace file is a header line followed by one line per step:
//!
//! ```text
//! {"format":"trimask-trace/1","episode_id":"ep0","num_patches":4,"feat_dim":2,"attn_dim":2}
//! {"t":1,"patches":[{"id":0,"f2d":[..],"f3d":[..],"a2d":[..],"a3d":[..]}, ...]}
//! ```
//!
//! Floats are written as the shortest decimal that parses back to the same
//! value, so `load(save(t)) == t` bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const TRACE_FORMAT: &str = "trimask-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace at {location}: {message}")]
    Malformed { location: String, message: String },
    #[error("dimension mismatch at step {step}: {detail}")]
    DimensionMismatch { step: u64, detail: String },
    #[error("non-finite value at step {step}, patch {patch}, field {field}")]
    NonFiniteValue {
        step: u64,
        patch: usize,
        field: &'static str,
    },
    #[error("negative attention score at step {step}, patch {patch}, field {field}")]
    NegativeAttention {
        step: u64,
        patch: usize,
        field: &'static str,
    },
    #[error("non-consecutive steps: expected t={expected}, found t={found}")]
    NonConsecutiveSteps { expected: u64, found: u64 },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// One patch at one timestep: feature and attention vectors of both modalities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchObservation<T> {
    pub id: usize,
    pub f2d: Vec<T>,
    pub f3d: Vec<T>,
    pub a2d: Vec<T>,
    pub a3d: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepObservation<T> {
    pub t: u64,
    pub patches: Vec<PatchObservation<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace<T> {
    pub episode_id: String,
    pub num_patches: usize,
    pub feat_dim: usize,
    pub attn_dim: usize,
    pub steps: Vec<StepObservation<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceHeader {
    format: String,
    episode_id: String,
    num_patches: usize,
    feat_dim: usize,
    attn_dim: usize,
}

impl<T: Scalar> PatchObservation<T> {
    pub fn new(id: usize, f2d: Vec<T>, f3d: Vec<T>, a2d: Vec<T>, a3d: Vec<T>) -> Self {
        Self {
            id,
            f2d,
            f3d,
            a2d,
            a3d,
        }
    }

    /// Comprehensive attention score used for semantic clustering: ‖a2d‖₁ + ‖a3d‖₁.
    pub fn comprehensive_score(&self) -> T {
        crate::scalar::l1(&self.a2d) + crate::scalar::l1(&self.a3d)
    }

    fn validate(&self, step: u64, feat_dim: usize, attn_dim: usize) -> Result<(), TraceError> {
        let dims = [
            ("f2d", self.f2d.len(), feat_dim),
            ("f3d", self.f3d.len(), feat_dim),
            ("a2d", self.a2d.len(), attn_dim),
            ("a3d", self.a3d.len(), attn_dim),
        ];
        for (field, got, want) in dims {
            if got != want {
                return Err(TraceError::DimensionMismatch {
                    step,
                    detail: format!(
                        "patch {} {field} has length {got}, expected {want}",
                        self.id
                    ),
                });
            }
        }
        let fields: [(&'static str, &[T]); 4] = [
            ("f2d", &self.f2d),
            ("f3d", &self.f3d),
            ("a2d", &self.a2d),
            ("a3d", &self.a3d),
        ];
        for (field, values) in fields {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(TraceError::NonFiniteValue {
                    step,
                    patch: self.id,
                    field,
                });
            }
        }
        for (field, values) in [("a2d", &self.a2d), ("a3d", &self.a3d)] {
            if values.iter().any(|v| *v < T::zero()) {
                return Err(TraceError::NegativeAttention {
                    step,
                    patch: self.id,
                    field,
                });
            }
        }
        Ok(())
    }
}

impl<T: Scalar> StepObservation<T> {
    pub fn new(t: u64, patches: Vec<PatchObservation<T>>) -> Self {
        Self { t, patches }
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    /// Checks patch count, patch ids (`patches[i].id == i`), vector shapes,
    /// finiteness and attention sign.
    pub fn validate(
        &self,
        num_patches: usize,
        feat_dim: usize,
        attn_dim: usize,
    ) -> Result<(), TraceError> {
        if self.patches.len() != num_patches {
            return Err(TraceError::DimensionMismatch {
                step: self.t,
                detail: format!("{} patches, expected {num_patches}", self.patches.len()),
            });
        }
        for (i, patch) in self.patches.iter().enumerate() {
            if patch.id != i {
                return Err(TraceError::Malformed {
                    location: format!("step {}", self.t),
                    message: format!(
                        "patch ids must be 0..{num_patches} in order, found id {} at position {i}",
                        patch.id
                    ),
                });
            }
            patch.validate(self.t, feat_dim, attn_dim)?;
        }
        Ok(())
    }
}

impl<T: Scalar> EpisodeTrace<T> {
    pub fn new(
        episode_id: impl Into<String>,
        num_patches: usize,
        feat_dim: usize,
        attn_dim: usize,
    ) -> Self {
        Self {
            episode_id: episode_id.into(),
            num_patches,
            feat_dim,
            attn_dim,
            steps: Vec::new(),
        }
    }

    fn validate_header(&self) -> Result<(), TraceError> {
        for (name, v) in [
            ("num_patches", self.num_patches),
            ("feat_dim", self.feat_dim),
            ("attn_dim", self.attn_dim),
        ] {
            if v == 0 {
                return Err(TraceError::Malformed {
                    location: "header".into(),
                    message: format!("{name} must be positive"),
                });
            }
        }
        Ok(())
    }

    fn validate_step(&self, step: &StepObservation<T>, expected_t: u64) -> Result<(), TraceError> {
        if step.t != expected_t {
            return Err(TraceError::NonConsecutiveSteps {
                expected: expected_t,
                found: step.t,
            });
        }
        step.validate(self.num_patches, self.feat_dim, self.attn_dim)
    }

    /// Checks every invariant of the trace.
    pub fn validate(&self) -> Result<(), TraceError> {
        self.validate_header()?;
        for (i, step) in self.steps.iter().enumerate() {
            self.validate_step(step, i as u64 + 1)?;
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }
}

/// Reads and validates a trace from any buffered reader.
pub fn read_trace<T: Scalar, R: BufRead>(reader: R) -> Result<EpisodeTrace<T>, TraceError> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => {
                return Err(TraceError::Malformed {
                    location: "line 1".into(),
                    message: "missing header".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let header: TraceHeader =
                    serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                        location: format!("line {}", i + 1),
                        message: format!("bad header: {e}"),
                    })?;
                if header.format != TRACE_FORMAT {
                    return Err(TraceError::Malformed {
                        location: format!("line {}", i + 1),
                        message: format!("unsupported format {:?}", header.format),
                    });
                }
                break header;
            }
        }
    };
    let mut trace = EpisodeTrace::new(
        header.episode_id,
        header.num_patches,
        header.feat_dim,
        header.attn_dim,
    );
    trace.validate_header()?;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let step: StepObservation<T> =
            serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
                location: format!("line {}", i + 1),
                message: e.to_string(),
            })?;
        let expected = trace.steps.len() as u64 + 1;
        trace.validate_step(&step, expected)?;
        trace.steps.push(step);
    }
    Ok(trace)
}

/// Validates and writes a trace to any writer.
pub fn write_trace<T: Scalar, W: Write>(
    trace: &EpisodeTrace<T>,
    writer: W,
) -> Result<(), TraceError> {
    trace.validate()?;
    let mut w = BufWriter::new(writer);
    let header = TraceHeader {
        format: TRACE_FORMAT.into(),
        episode_id: trace.episode_id.clone(),
        num_patches: trace.num_patches,
        feat_dim: trace.feat_dim,
        attn_dim: trace.attn_dim,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for step in &trace.steps {
        serde_json::to_writer(&mut w, step).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_trace<T: Scalar>(path: impl AsRef<Path>) -> Result<EpisodeTrace<T>, TraceError> {
    let file = File::open(path)?;
    read_trace(BufReader::new(file))
}

/// Writes `trace` to `path`. Nothing is written if the trace is invalid.
pub fn save_trace<T: Scalar>(
    trace: &EpisodeTrace<T>,
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    trace.validate()?;
    let file = File::create(path)?;
    write_trace(trace, file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(id: usize, v: f64) -> PatchObservation<f64> {
        PatchObservation::new(
            id,
            vec![v, 1.0],
            vec![0.5, -v],
            vec![v.abs(), 0.0],
            vec![0.25, 0.1],
        )
    }

    fn trace(steps: u64, p: usize) -> EpisodeTrace<f64> {
        let mut t = EpisodeTrace::new("ep", p, 2, 2);
        for s in 1..=steps {
            t.steps.push(StepObservation::new(
                s,
                (0..p)
                    .map(|i| patch(i, 0.1 * i as f64 + s as f64 / 3.0))
                    .collect(),
            ));
        }
        t
    }

    fn to_text(t: &EpisodeTrace<f64>) -> String {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn loads_minimal_valid_trace() {
        let text = to_text(&trace(2, 4));
        let back: EpisodeTrace<f64> = read_trace(text.as_bytes()).unwrap();
        assert_eq!(back.num_patches, 4);
        assert_eq!(back.steps.len(), 2);
        assert_eq!(back, trace(2, 4));
    }

    #[test]
    fn ragged_patch_count_is_dimension_mismatch() {
        let mut t = trace(2, 4);
        t.steps[1].patches.pop();
        let text = {
            // bypass validation on write to produce the bad file
            let mut s = String::new();
            s.push_str(
                r#"{"format":"trimask-trace/1","episode_id":"ep","num_patches":4,"feat_dim":2,"attn_dim":2}"#,
            );
            s.push('\n');
            for step in &t.steps {
                s.push_str(&serde_json::to_string(step).unwrap());
                s.push('\n');
            }
            s
        };
        let err = read_trace::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(
            matches!(err, TraceError::DimensionMismatch { step: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn gap_in_step_numbers_is_rejected() {
        let text = to_text(&trace(2, 4)).replace(r#"{"t":2"#, r#"{"t":3"#);
        let err = read_trace::<f64, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            TraceError::NonConsecutiveSteps {
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn nan_is_refused_on_save() {
        let mut t = trace(1, 2);
        t.steps[0].patches[1].f3d[0] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let err = save_trace(&t, &path).unwrap_err();
        assert!(matches!(
            err,
            TraceError::NonFiniteValue {
                patch: 1,
                field: "f3d",
                ..
            }
        ));
        assert!(!path.exists());
    }

    #[test]
    fn empty_episode_round_trips() {
        let t = trace(0, 3);
        let back: EpisodeTrace<f64> = read_trace(to_text(&t).as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn short_vector_is_dimension_mismatch() {
        let mut t = trace(1, 2);
        t.steps[0].patches[0].a3d.push(1.0);
        assert!(matches!(
            t.validate(),
            Err(TraceError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn negative_attention_rejected() {
        let mut t = trace(1, 2);
        t.steps[0].patches[0].a2d[1] = -0.5;
        assert!(matches!(
            t.validate(),
            Err(TraceError::NegativeAttention { field: "a2d", .. })
        ));
    }

    #[test]
    fn bad_json_reports_line() {
        let mut text = to_text(&trace(2, 2));
        text.push_str("{not json}\n");
        match read_trace::<f64, _>(text.as_bytes()).unwrap_err() {
            TraceError::Malformed { location, .. } => assert_eq!(location, "line 4"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn wrong_format_tag_rejected() {
        let text = to_text(&trace(1, 2)).replace("trimask-trace/1", "other/2");
        assert!(matches!(
            read_trace::<f64, _>(text.as_bytes()),
            Err(TraceError::Malformed { .. })
        ));
    }

    #[test]
    fn duplicate_patch_id_rejected() {
        let mut t = trace(1, 3);
        t.steps[0].patches[2].id = 1;
        assert!(matches!(t.validate(), Err(TraceError::Malformed { .. })));
    }

    #[test]
    fn f32_traces_round_trip() {
        let mut t: EpisodeTrace<f32> = EpisodeTrace::new("f", 1, 1, 1);
        t.steps.push(StepObservation::new(
            1,
            vec![PatchObservation::new(
                0,
                vec![0.1],
                vec![0.3],
                vec![0.7],
                vec![1e-7],
            )],
        ));
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let back: EpisodeTrace<f32> = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }
}
