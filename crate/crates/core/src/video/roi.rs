//! ROI rectangle tracks loaded from JSONL sidecar files.
//!
//! One JSON object per frame: `{"frame": i, "x":…, "y":…, "w":…, "h":…}` in
//! source pixel coordinates. Frame indices must be contiguous from zero.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Which region the rectangles delimit; fixes the resample target size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiKind {
    Face,
    Lips,
}

impl RoiKind {
    /// Target (width, height) after resampling.
    pub fn target_size(self) -> (usize, usize) {
        match self {
            RoiKind::Face => (90, 90),
            RoiKind::Lips => (150, 100),
        }
    }
}

impl FromStr for RoiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(RoiKind::Face),
            "lips" => Ok(RoiKind::Lips),
            other => Err(Error::InvalidArgument(format!(
                "unknown ROI kind {other:?} (expected face|lips)"
            ))),
        }
    }
}

/// Rectangle in source pixel coordinates. May extend past the frame; it is
/// clamped at crop time and only a zero post-clamp area is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiRect {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

#[derive(Debug, Deserialize)]
struct RoiLine {
    frame: usize,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiTrack {
    pub kind: RoiKind,
    rects: Vec<RoiRect>,
}

impl RoiTrack {
    pub fn new(kind: RoiKind, rects: Vec<RoiRect>) -> Result<Self> {
        if rects.is_empty() {
            return Err(Error::MalformedRoi("track has no rectangles".into()));
        }
        Ok(Self { kind, rects })
    }

    /// Whole-frame track for inputs without a sidecar file.
    pub fn full_frame(kind: RoiKind, width: usize, height: usize, frames: usize) -> Self {
        let rect = RoiRect {
            x: 0,
            y: 0,
            w: width as i64,
            h: height as i64,
        };
        Self {
            kind,
            rects: vec![rect; frames.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    /// Rectangle for frame `i`; the last rectangle is reused for frames the
    /// length normalization appended.
    pub fn rect_for(&self, i: usize) -> Result<RoiRect> {
        self.rects
            .get(i.min(self.rects.len().saturating_sub(1)))
            .copied()
            .ok_or_else(|| Error::MalformedRoi("empty ROI track".into()))
    }

    pub fn parse_jsonl(text: &str, kind: RoiKind, name: &str) -> Result<Self> {
        let mut lines: Vec<RoiLine> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parsed: RoiLine = serde_json::from_str(line).map_err(|e| {
                Error::MalformedRoi(format!("{name}:{}: {e}", lineno + 1))
            })?;
            lines.push(parsed);
        }
        if lines.is_empty() {
            return Err(Error::MalformedRoi(format!("{name}: no rectangles")));
        }
        lines.sort_by_key(|l| l.frame);
        for (expect, line) in lines.iter().enumerate() {
            if line.frame != expect {
                return Err(Error::MalformedRoi(format!(
                    "{name}: frame indices must be contiguous, missing {expect}"
                )));
            }
        }
        let rects = lines
            .into_iter()
            .map(|l| RoiRect {
                x: l.x,
                y: l.y,
                w: l.w,
                h: l.h,
            })
            .collect();
        RoiTrack::new(kind, rects)
    }

    pub fn load_jsonl(path: &Path, kind: RoiKind) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        Self::parse_jsonl(&text, kind, &path.display().to_string())
    }
}
