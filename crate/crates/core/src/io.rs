//! PFM float maps and 8-bit PGM previews.
//!
//! PFM: `Pf` (gray) or `PF` (RGB) line, `width height` line, scale line
//! (negative = little-endian), then `f32` rows from bottom to top.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major from the top row, channels interleaved.
    pub data: Vec<f64>,
}

pub fn encode_pfm(img: &FloatImage) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(CoreError::invalid("pfm", format!("{c} channels; PFM holds 1 or 3"))),
    };
    let row = img.width * img.channels;
    if img.data.len() != row * img.height {
        return Err(CoreError::invalid("pfm", "data length does not match dimensions"));
    }
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, img: &FloatImage) -> Result<()> {
    fs::write(path, encode_pfm(img)?).map_err(|e| CoreError::io(path, e))
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<FloatImage> {
    let fail = |offset: usize, msg: String| CoreError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let mut pos = 0;
    let mut line = || -> Result<(usize, String)> {
        let start = pos;
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| fail(bytes.len(), "truncated header".into()))?;
        pos = end + 1;
        let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| fail(start, "header is not text".into()))?;
        Ok((start, text.trim().to_string()))
    };
    let (at, tag) = line()?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(fail(at, format!("unknown PFM tag `{tag}`"))),
    };
    let (at, dims) = line()?;
    let dims: Vec<usize> = dims.split_whitespace().map(|t| t.parse().map_err(|_| fail(at, format!("bad dimension `{t}`")))).collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(fail(at, "expected `width height`".into()));
    };
    if width == 0 || height == 0 {
        return Err(fail(at, "zero dimension".into()));
    }
    let (at, scale) = line()?;
    let scale: f64 = scale.parse().map_err(|_| fail(at, format!("bad scale `{scale}`")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(fail(at, "scale must be non-zero".into()));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let need = row * height * 4;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(fail(bytes.len(), format!("truncated data: {} of {need} bytes", body.len())));
    }
    if body.len() > need {
        return Err(fail(pos + need, "trailing bytes after data".into()));
    }
    let mut data = vec![0.0; row * height];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (r, c) = (height - 1 - i / row, i % row);
        data[r * row + c] = v as f64;
    }
    Ok(FloatImage {
        width,
        height,
        channels,
        data,
    })
}

pub fn read_pfm(path: &Path) -> Result<FloatImage> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_pfm(&bytes, path)
}

/// Binary 8-bit grayscale PGM.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(CoreError::invalid("pgm", "pixel count does not match dimensions"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

/// Maps `[lo, hi]` linearly to `[0, 255]`, clamping outside values.
pub fn normalize_to_u8(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}
