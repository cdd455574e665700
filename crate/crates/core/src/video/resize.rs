//! ROI crop + bilinear resampling with half-pixel-center alignment.

use crate::error::{Error, Result};

use super::{RgbFrame, RoiRect};

/// Clamp `rect` to the frame, crop, and bilinearly resample to `tw` x `th`.
///
/// Sample positions use half-pixel centers: output pixel `i` reads source
/// coordinate `(i + 0.5) * src / dst - 0.5`, clamped to the crop borders.
pub fn crop_resize_frame(
    frame: &RgbFrame,
    rect: RoiRect,
    tw: usize,
    th: usize,
) -> Result<RgbFrame> {
    let fw = frame.width as i64;
    let fh = frame.height as i64;
    let x0 = rect.x.clamp(0, fw);
    let y0 = rect.y.clamp(0, fh);
    let x1 = rect.x.saturating_add(rect.w).clamp(0, fw);
    let y1 = rect.y.saturating_add(rect.h).clamp(0, fh);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::RoiOutOfBounds(format!(
            "rect ({}, {}, {}, {}) has zero area after clamping to {fw}x{fh}",
            rect.x, rect.y, rect.w, rect.h
        )));
    }
    let (cx, cy) = (x0 as usize, y0 as usize);
    let cw = (x1 - x0) as usize;
    let ch = (y1 - y0) as usize;

    let mut out = vec![0u8; tw * th * 3];
    for oy in 0..th {
        let sy = ((oy as f32 + 0.5) * ch as f32 / th as f32 - 0.5).clamp(0.0, (ch - 1) as f32);
        let y_lo = sy.floor() as usize;
        let y_hi = (y_lo + 1).min(ch - 1);
        let fy = sy - y_lo as f32;
        for ox in 0..tw {
            let sx =
                ((ox as f32 + 0.5) * cw as f32 / tw as f32 - 0.5).clamp(0.0, (cw - 1) as f32);
            let x_lo = sx.floor() as usize;
            let x_hi = (x_lo + 1).min(cw - 1);
            let fx = sx - x_lo as f32;

            let p00 = frame.pixel(cx + x_lo, cy + y_lo);
            let p01 = frame.pixel(cx + x_hi, cy + y_lo);
            let p10 = frame.pixel(cx + x_lo, cy + y_hi);
            let p11 = frame.pixel(cx + x_hi, cy + y_hi);

            let o = (oy * tw + ox) * 3;
            for c in 0..3 {
                let top = (1.0 - fx) * p00[c] as f32 + fx * p01[c] as f32;
                let bot = (1.0 - fx) * p10[c] as f32 + fx * p11[c] as f32;
                let v = (1.0 - fy) * top + fy * bot;
                out[o + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbFrame::new(tw, th, out)
}
