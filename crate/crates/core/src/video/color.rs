//! Color space conversions from 8-bit sRGB.
//!
//! The six supported spaces and their pinned conventions:
//! - `GRAY`: BT.601 luma (0.299, 0.587, 0.114).
//! - `YCBCR`: full-range BT.601 (JFIF), all channels offset into `[0,1]`.
//! - `HSV`: hexcone model, hue scaled from degrees to `[0,1]`.
//! - `XYZ`: sRGB linearization (threshold 0.04045, gamma 2.4) and the D65
//!   matrix, then divided by the D65 white point (0.9505, 1.0, 1.089).
//! - `LAB`: CIE L*a*b* from XYZ/D65 with the cube-root/linear-segment `f`,
//!   stored as (L/100, (a+128)/256, (b+128)/256) so the neutral axis maps
//!   to exactly 0.5 and the sRGB gamut stays inside `[0,1]`.
//!
//! Conversions run in `f64` and are cast to `f32` at the end.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

use super::{FloatFrame, RgbFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Gray,
    Hsv,
    Lab,
    Xyz,
    Ycbcr,
}

impl ColorSpace {
    pub const ALL: [ColorSpace; 6] = [
        ColorSpace::Rgb,
        ColorSpace::Gray,
        ColorSpace::Hsv,
        ColorSpace::Lab,
        ColorSpace::Xyz,
        ColorSpace::Ycbcr,
    ];

    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Gray => "gray",
            ColorSpace::Hsv => "hsv",
            ColorSpace::Lab => "lab",
            ColorSpace::Xyz => "xyz",
            ColorSpace::Ycbcr => "ycbcr",
        }
    }
}

impl FromStr for ColorSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "rgb" => Ok(ColorSpace::Rgb),
            "gray" => Ok(ColorSpace::Gray),
            "hsv" => Ok(ColorSpace::Hsv),
            "lab" => Ok(ColorSpace::Lab),
            "xyz" => Ok(ColorSpace::Xyz),
            "ycbcr" => Ok(ColorSpace::Ycbcr),
            other => Err(Error::InvalidArgument(format!(
                "unknown color space {other:?} (expected rgb|gray|hsv|lab|xyz|ycbcr)"
            ))),
        }
    }
}

const D65_WHITE: (f64, f64, f64) = (0.9505, 1.0, 1.089);

fn srgb_linearize(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB (each channel in `[0,1]`) to unscaled CIE XYZ under D65.
pub fn srgb_to_xyz(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let rl = srgb_linearize(r);
    let gl = srgb_linearize(g);
    let bl = srgb_linearize(b);
    (
        0.4124 * rl + 0.3576 * gl + 0.1805 * bl,
        0.2126 * rl + 0.7152 * gl + 0.0722 * bl,
        0.0193 * rl + 0.1192 * gl + 0.9505 * bl,
    )
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Unscaled CIE XYZ (D65) to CIE L*a*b*.
pub fn xyz_to_lab(x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    let fx = lab_f(x / D65_WHITE.0);
    let fy = lab_f(y / D65_WHITE.1);
    let fz = lab_f(z / D65_WHITE.2);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// Hexcone HSV with hue in degrees `[0, 360)`, s and v in `[0,1]`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let h = if chroma == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { chroma / max };
    (h, s, max)
}

/// Full-range BT.601 YCbCr (JFIF); all channels already in `[0,1]`.
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 0.5 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (y, cb, cr)
}

/// Convert one pixel to the requested space, scaled into `[0,1]`.
/// Grayscale yields a single component (the other two are zero).
pub fn convert_pixel(rgb: [u8; 3], cs: ColorSpace) -> [f64; 3] {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    match cs {
        ColorSpace::Rgb => [r, g, b],
        ColorSpace::Gray => [0.299 * r + 0.587 * g + 0.114 * b, 0.0, 0.0],
        ColorSpace::Hsv => {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            [h / 360.0, s, v]
        }
        ColorSpace::Lab => {
            let (x, y, z) = srgb_to_xyz(r, g, b);
            let (l, a, bb) = xyz_to_lab(x, y, z);
            [l / 100.0, (a + 128.0) / 256.0, (bb + 128.0) / 256.0]
        }
        ColorSpace::Xyz => {
            let (x, y, z) = srgb_to_xyz(r, g, b);
            [x / D65_WHITE.0, y / D65_WHITE.1, z / D65_WHITE.2]
        }
        ColorSpace::Ycbcr => {
            let (y, cb, cr) = rgb_to_ycbcr(r, g, b);
            [y, cb, cr]
        }
    }
}

pub(super) fn convert_frame(frame: &RgbFrame, cs: ColorSpace) -> FloatFrame {
    let channels = cs.channels();
    let plane = frame.width * frame.height;
    let mut data = vec![0.0f32; channels * plane];
    for p in 0..plane {
        let rgb = [
            frame.data[p * 3],
            frame.data[p * 3 + 1],
            frame.data[p * 3 + 2],
        ];
        let out = convert_pixel(rgb, cs);
        for c in 0..channels {
            data[c * plane + p] = out[c] as f32;
        }
    }
    FloatFrame {
        width: frame.width,
        height: frame.height,
        channels,
        data,
    }
}
