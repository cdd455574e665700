//! Binary PPM (P6, maxval 255) reading and writing.
//!
//! Frame directories hold one PPM per frame, named with zero-padded indices
//! (`000.ppm`, `001.ppm`, ...). Indices must be contiguous from zero.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{FrameSequence, RgbFrame};

/// Parse a P6 PPM with maxval 255. Header comments (`#`) are honored.
pub fn parse_ppm(bytes: &[u8], name: &str) -> Result<RgbFrame> {
    let mut pos = 0usize;

    let next_token = |pos: &mut usize| -> Result<Vec<u8>> {
        // skip whitespace and comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::MalformedPpm(format!("{name}: unexpected end of header")));
        }
        Ok(bytes[start..*pos].to_vec())
    };

    let magic = next_token(&mut pos)?;
    if magic != b"P6" {
        return Err(Error::MalformedPpm(format!(
            "{name}: magic {:?} is not P6",
            String::from_utf8_lossy(&magic)
        )));
    }
    let parse_num = |what: &str, pos: &mut usize| -> Result<usize> {
        let tok = next_token(pos)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                Error::MalformedPpm(format!(
                    "{name}: bad {what} {:?}",
                    String::from_utf8_lossy(&tok)
                ))
            })
    };
    let width = parse_num("width", &mut pos)?;
    let height = parse_num("height", &mut pos)?;
    let maxval = parse_num("maxval", &mut pos)?;
    if maxval != 255 {
        return Err(Error::MalformedPpm(format!(
            "{name}: maxval {maxval} unsupported (only 255)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(Error::MalformedPpm(format!("{name}: zero dimension")));
    }
    // exactly one whitespace byte separates header and raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedPpm(format!(
            "{name}: missing separator before raster"
        )));
    }
    pos += 1;
    let need = width * height * 3;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::MalformedPpm(format!(
            "{name}: raster has {} bytes, needs {need}",
            raster.len()
        )));
    }
    RgbFrame::new(width, height, raster[..need].to_vec())
}

/// Serialize a frame as binary P6.
pub fn encode_ppm(frame: &RgbFrame) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.data);
    out
}

pub fn write_ppm(frame: &RgbFrame, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(frame))
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// Load a frame sequence from a directory of indexed PPM files, or a single
/// PPM file as a one-frame sequence.
pub fn load_frames(path: &Path) -> Result<FrameSequence> {
    let meta = fs::metadata(path).map_err(|e| Error::io(format!("stat {}", path.display()), e))?;
    if meta.is_file() {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let frame = parse_ppm(&bytes, &path.display().to_string())?;
        return FrameSequence::new(path.display().to_string(), vec![frame]);
    }

    let mut indexed: Vec<(usize, std::path::PathBuf)> = Vec::new();
    let entries =
        fs::read_dir(path).map_err(|e| Error::io(format!("read dir {}", path.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("read dir {}", path.display()), e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::MalformedPpm(format!("{}: non-UTF8 name", p.display())))?;
        let index = stem.parse::<usize>().map_err(|_| {
            Error::MalformedPpm(format!(
                "{}: frame file names must be zero-padded indices",
                p.display()
            ))
        })?;
        indexed.push((index, p));
    }
    if indexed.is_empty() {
        return Err(Error::EmptySequence);
    }
    indexed.sort_by_key(|(i, _)| *i);
    for (expect, (got, _)) in indexed.iter().enumerate() {
        if *got != expect {
            return Err(Error::MissingFrameIndex(expect));
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    for (_, p) in &indexed {
        let bytes = fs::read(p).map_err(|e| Error::io(format!("read {}", p.display()), e))?;
        frames.push(parse_ppm(&bytes, &p.display().to_string())?);
    }
    FrameSequence::new(path.display().to_string(), frames)
}
