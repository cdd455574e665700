//! Frame preprocessing: decoded RGB frames + ROI rectangles in, model-ready
//! `[0,1]` video tensors out.
//!
//! The stages run in a fixed order: temporal normalization to 28 frames,
//! per-frame ROI crop + bilinear resize (face 90x90, lips 150x100), color
//! space conversion, then packing into a (channel, frame, height, width)
//! tensor. Video decoding and face detection are out of scope; input is a
//! directory of binary PPM frames with an optional ROI sidecar.

mod color;
mod ppm;
mod resize;
mod roi;

pub use color::{convert_pixel, rgb_to_hsv, rgb_to_ycbcr, srgb_to_xyz, xyz_to_lab, ColorSpace};
pub use ppm::{load_frames, write_ppm};
pub use roi::{RoiKind, RoiRect, RoiTrack};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TARGET_FRAME_COUNT: usize = 28;

/// One decoded 8-bit RGB frame, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` bytes, R G B per pixel.
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InconsistentFrames(format!(
                "{width}x{height} RGB frame needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }
}

/// Ordered frames of one video, all the same size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSequence {
    pub source_id: String,
    frames: Vec<RgbFrame>,
}

impl FrameSequence {
    pub fn new(source_id: impl Into<String>, frames: Vec<RgbFrame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptySequence);
        }
        let (w, h) = (frames[0].width, frames[0].height);
        for (i, f) in frames.iter().enumerate() {
            if f.width != w || f.height != h {
                return Err(Error::InconsistentFrames(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.width, f.height
                )));
            }
        }
        Ok(Self {
            source_id: source_id.into(),
            frames,
        })
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames[0].width, self.frames[0].height)
    }

    /// Force the sequence to exactly `target` frames: longer sequences keep
    /// their first `target` frames, shorter ones repeat the last frame.
    pub fn normalize_length(&self, target: usize) -> Result<FrameSequence> {
        if target == 0 {
            return Err(Error::InvalidArgument(
                "target frame count must be at least 1".into(),
            ));
        }
        let mut frames = Vec::with_capacity(target);
        if self.frames.len() >= target {
            frames.extend_from_slice(&self.frames[..target]);
        } else {
            frames.extend_from_slice(&self.frames);
            let last = self.frames.last().expect("non-empty").clone();
            while frames.len() < target {
                frames.push(last.clone());
            }
        }
        FrameSequence::new(self.source_id.clone(), frames)
    }

    /// Crop every frame to its ROI rectangle, then bilinearly resample to
    /// the size dictated by the ROI kind. When the track is shorter than the
    /// sequence (frames repeated by [`normalize_length`]), the last
    /// rectangle is reused.
    pub fn crop_resize(&self, roi: &RoiTrack) -> Result<FrameSequence> {
        let (tw, th) = roi.kind.target_size();
        let mut frames = Vec::with_capacity(self.frames.len());
        for (i, frame) in self.frames.iter().enumerate() {
            let rect = roi.rect_for(i)?;
            frames.push(resize::crop_resize_frame(frame, rect, tw, th)?);
        }
        FrameSequence::new(self.source_id.clone(), frames)
    }

    /// Per-pixel conversion from 8-bit RGB; output channels lie in `[0,1]`.
    pub fn convert_color(&self, cs: ColorSpace) -> ConvertedSequence {
        ConvertedSequence {
            color_space: cs,
            frames: self.frames.iter().map(|f| color::convert_frame(f, cs)).collect(),
        }
    }
}

/// One frame after color conversion: planar `f32` channels in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Planar layout: channel c occupies `[c*h*w, (c+1)*h*w)`.
    pub data: Vec<f32>,
}

/// Frames of one video in a single color space.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedSequence {
    pub color_space: ColorSpace,
    pub frames: Vec<FloatFrame>,
}

/// Stack converted frames into a (channels, frames, height, width) tensor.
/// Values are clamped into `[0,1]` as the pipeline boundary contract.
pub fn pack_tensor(seq: &ConvertedSequence) -> Result<Tensor<f32>> {
    let first = seq.frames.first().ok_or(Error::EmptySequence)?;
    let (c, h, w) = (first.channels, first.height, first.width);
    for (i, f) in seq.frames.iter().enumerate() {
        if f.channels != c || f.height != h || f.width != w {
            return Err(Error::InconsistentFrames(format!(
                "frame {i} is {}x{}x{}, expected {c}x{h}x{w}",
                f.channels, f.height, f.width
            )));
        }
    }
    let t = seq.frames.len();
    let plane = h * w;
    let mut out = vec![0.0f32; c * t * plane];
    for (ti, f) in seq.frames.iter().enumerate() {
        for ci in 0..c {
            let src = &f.data[ci * plane..(ci + 1) * plane];
            let dst_off = (ci * t + ti) * plane;
            for (d, &s) in out[dst_off..dst_off + plane].iter_mut().zip(src.iter()) {
                *d = s.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![c, t, h, w], out)
}

/// Full preprocessing: length normalization, crop + resize, color
/// conversion, packing.
pub fn preprocess(
    seq: &FrameSequence,
    roi: &RoiTrack,
    color: ColorSpace,
    target_len: usize,
) -> Result<Tensor<f32>> {
    let normalized = seq.normalize_length(target_len)?;
    let cropped = normalized.crop_resize(roi)?;
    pack_tensor(&cropped.convert_color(color))
}
