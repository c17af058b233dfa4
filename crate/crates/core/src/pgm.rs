//! 8-bit binary greymaps (`P5`).

use std::io;
use std::path::Path;

/// `P5\n{width} {height}\n255\n` followed by the row-major pixels.
pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count must match the image size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses the layout written by [`encode`]: `(width, height, pixels)`.
pub fn decode(bytes: &[u8]) -> io::Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit P5 greymap"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM dimension"));
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing PGM raster"))?;
    if pixels.len() != w * h {
        return Err(bad("PGM raster size does not match its header"));
    }
    Ok((w, h, pixels.to_vec()))
}

/// `round(v * scale)` clamped to `0..=255`.
pub fn quantize(values: &[f32], scale: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v as f64 * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    std::fs::write(path, encode(width, height, pixels))
}
