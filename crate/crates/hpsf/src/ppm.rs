//! Binary PPM (P6) output. Linear radiance is clamped to `[0, 1]`, raised
//! to `1/2.2` and rounded to 8 bits; all other math stays linear.

use std::path::Path;

use hpsf_core::Image;

use crate::error::{Error, Result};

pub const GAMMA: f64 = 2.2;

/// 8-bit value of one linear channel.
pub fn tone_map(x: f64) -> u8 {
    let c = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (c.powf(1.0 / GAMMA) * 255.0).round() as u8
}

pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(3 * img.pixels().len());
    for p in img.pixels() {
        out.extend([tone_map(p.r), tone_map(p.g), tone_map(p.b)]);
    }
    out
}

/// Width, height and RGB bytes of a P6 file with maxval 255.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("not a P6 image: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("unsupported magic or maxval"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing data"))?;
    if data.len() != 3 * w * h {
        return Err(bad("data length does not match the size"));
    }
    Ok((w, h, data.to_vec()))
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
