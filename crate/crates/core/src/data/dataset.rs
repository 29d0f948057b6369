use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_joints, ActionSequence, DataError, PoseVector, Result, POSE_DIM};

/// A sentence paired with the action it describes.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub sentence: Vec<String>,
    pub action: ActionSequence,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    sentence: Vec<String>,
    fps: f64,
    frames: Vec<Vec<f64>>,
}

impl DatasetRecord {
    pub fn sentence_text(&self) -> String {
        self.sentence.join(" ")
    }

    fn to_line(&self) -> RecordLine {
        RecordLine {
            id: self.id.clone(),
            sentence: self.sentence.clone(),
            fps: self.action.fps,
            frames: self.action.frames.iter().map(|f| f.as_array().to_vec()).collect(),
        }
    }

    fn from_line(line: RecordLine) -> Result<Self> {
        let invalid = |rule: String| DataError::Validation {
            id: line.id.clone(),
            rule,
        };
        if line.sentence.is_empty() || line.sentence.iter().any(|w| w.trim().is_empty()) {
            return Err(invalid("sentence must be a non-empty list of non-empty tokens".into()));
        }
        if !(line.fps > 0.0 && line.fps.is_finite()) {
            return Err(invalid(format!("fps must be positive, got {}", line.fps)));
        }
        if line.frames.is_empty() {
            return Err(invalid("action has no frames".into()));
        }
        let mut frames = Vec::with_capacity(line.frames.len());
        for (t, f) in line.frames.iter().enumerate() {
            if f.len() != POSE_DIM {
                return Err(invalid(format!(
                    "frame {t} has {} values, expected {POSE_DIM}",
                    f.len()
                )));
            }
            let p = normalize_joints(f).map_err(|e| invalid(format!("frame {t}: {e}")))?;
            if f.iter().zip(p.as_array()).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(invalid(format!("frame {t} bones are not unit length")));
            }
            frames.push(PoseVector(f.as_slice().try_into().expect("length checked")));
        }
        Ok(Self {
            id: line.id,
            sentence: line.sentence,
            action: ActionSequence { frames, fps: line.fps },
        })
    }
}

/// One JSON object per line with fields `id`, `sentence`, `fps`, `frames`.
pub fn save_dataset(records: &[DatasetRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        let line =
            serde_json::to_string(&r.to_line()).map_err(|e| DataError::Input(format!("record `{}`: {e}", r.id)))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(DatasetRecord::from_line(parsed)?);
    }
    Ok(records)
}

/// Mean of every record's first frame, renormalized.
pub fn mean_first_pose(records: &[DatasetRecord]) -> Result<PoseVector> {
    let firsts: Vec<&PoseVector> = records.iter().filter_map(|r| r.action.frames.first()).collect();
    if firsts.is_empty() {
        return Err(DataError::Input("dataset has no frames".into()));
    }
    let mut acc = [0.0; POSE_DIM];
    for f in &firsts {
        for (a, v) in acc.iter_mut().zip(f.as_array()) {
            *a += v;
        }
    }
    let n = firsts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    normalize_joints(&acc).map_err(|e| match e {
        DataError::Degenerate(m) => DataError::Degenerate(format!("mean first pose: {m}")),
        other => other,
    })
}
