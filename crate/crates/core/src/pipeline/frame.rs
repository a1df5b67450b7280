//! The per-frame observation record and its JSON Lines encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::geometry::{BBox2D, CameraIntrinsics, LineSegment2D, Pose, Vec2, Vec3};

use super::format::to_canonical_line;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox2D,
    pub confidence: f64,
}

/// A sparse map point with its pixel in this frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointObservation {
    pub uv: Vec2,
    pub xyz: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Frame {
    pub frame_id: u64,
    pub timestamp: f64,
    /// World-to-camera extrinsics.
    pub camera: Pose,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub points: Vec<PointObservation>,
    #[serde(default)]
    pub segments: Vec<LineSegment2D>,
}

impl Frame {
    /// Checks the record's internal consistency.
    pub fn validate(&self) -> Result<(), String> {
        self.intrinsics.validate().map_err(|e| format!("intrinsics: {e}"))?;
        if !self.timestamp.is_finite() {
            return Err("timestamp: not finite".into());
        }
        for (i, d) in self.detections.iter().enumerate() {
            if !d.bbox.is_valid() {
                return Err(format!("detections[{i}].bbox: invalid box {:?}", <[f64; 4]>::from(d.bbox)));
            }
            if d.label.is_empty() {
                return Err(format!("detections[{i}].label: empty"));
            }
            if !(0.0..=1.0).contains(&d.confidence) {
                return Err(format!("detections[{i}].confidence: {} outside [0, 1]", d.confidence));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.xyz.iter().all(|v| v.is_finite()) {
                return Err(format!("points[{i}].xyz: not finite"));
            }
            if !self.intrinsics.contains(&p.uv) {
                return Err(format!("points[{i}].uv: pixel outside the image"));
            }
        }
        Ok(())
    }
}

/// Parses a JSON Lines frame stream. Blank lines are skipped; frame ids must
/// be strictly increasing. Errors carry the 1-based line number.
pub fn read_frames(reader: impl BufRead) -> Result<Vec<Frame>, PipelineError> {
    let mut frames: Vec<Frame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line)
            .map_err(|e| PipelineError::schema(lineno, e.to_string()))?;
        frame
            .validate()
            .map_err(|m| PipelineError::schema(lineno, m))?;
        if let Some(prev) = frames.last() {
            if frame.frame_id <= prev.frame_id {
                return Err(PipelineError::schema(
                    lineno,
                    format!(
                        "frame_id: {} does not increase (previous {})",
                        frame.frame_id, prev.frame_id
                    ),
                ));
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn ingest(path: &std::path::Path) -> Result<Vec<Frame>, PipelineError> {
    let file = std::fs::File::open(path)?;
    read_frames(std::io::BufReader::new(file))
}

pub fn write_frames<'a>(
    mut writer: impl Write,
    frames: impl IntoIterator<Item = &'a Frame>,
) -> Result<(), PipelineError> {
    for f in frames {
        writeln!(writer, "{}", to_canonical_line(f)?)?;
    }
    Ok(())
}
