//! JSON Lines mask output: a header line, then one line per step.
//!
//! ```text
//! {"format":"trimask-masks/1","episode_id":"ep0","num_patches":4}
//! {"t":1,"mask2d":[1,1,1,1],"mask3d":[1,1,1,1],"pr2d":0.0,"pr3d":0.0,"conflicts":0}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{RetentionMask, StepStats};

pub const MASK_FORMAT: &str = "trimask-masks/1";

#[derive(Debug, Error)]
pub enum MaskFileError {
    #[error("malformed mask file at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    episode_id: String,
    num_patches: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    t: u64,
    mask2d: Vec<u8>,
    mask3d: Vec<u8>,
    pr2d: f64,
    pr3d: f64,
    conflicts: usize,
}

/// Parsed mask file.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskFile {
    pub episode_id: String,
    pub num_patches: usize,
    pub masks: Vec<RetentionMask>,
    pub conflicts: Vec<usize>,
}

pub fn write_masks<W: Write>(
    mut w: W,
    episode_id: &str,
    num_patches: usize,
    steps: &[(RetentionMask, StepStats)],
) -> std::io::Result<()> {
    let header = Header {
        format: MASK_FORMAT.into(),
        episode_id: episode_id.into(),
        num_patches,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (mask, stats) in steps {
        let rec = Record {
            t: mask.t,
            mask2d: mask.mask2d.iter().map(|&b| b as u8).collect(),
            mask3d: mask.mask3d.iter().map(|&b| b as u8).collect(),
            pr2d: stats.pr2d,
            pr3d: stats.pr3d,
            conflicts: stats.conflicts_resolved,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_masks<R: BufRead>(r: R) -> Result<MaskFile, MaskFileError> {
    let mut header: Option<Header> = None;
    let mut out = MaskFile {
        episode_id: String::new(),
        num_patches: 0,
        masks: Vec::new(),
        conflicts: Vec::new(),
    };
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| MaskFileError::Malformed {
            line: i + 1,
            message,
        };
        match &header {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                if h.format != MASK_FORMAT {
                    return Err(bad(format!("unsupported format {:?}", h.format)));
                }
                out.episode_id = h.episode_id.clone();
                out.num_patches = h.num_patches;
                header = Some(h);
            }
            Some(h) => {
                let rec: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
                if rec.mask2d.len() != h.num_patches || rec.mask3d.len() != h.num_patches {
                    return Err(bad(format!("expected {} mask entries", h.num_patches)));
                }
                let to_bools = |v: &[u8]| -> Result<Vec<bool>, MaskFileError> {
                    v.iter()
                        .map(|&b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(bad(format!("mask entry {other} is not 0 or 1"))),
                        })
                        .collect()
                };
                out.masks.push(RetentionMask {
                    t: rec.t,
                    mask2d: to_bools(&rec.mask2d)?,
                    mask3d: to_bools(&rec.mask3d)?,
                });
                out.conflicts.push(rec.conflicts);
            }
        }
    }
    if header.is_none() {
        return Err(MaskFileError::Malformed {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(out)
}
