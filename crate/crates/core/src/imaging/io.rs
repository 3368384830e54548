//! Binary PPM (P6) / PGM (P5) and the raw float plane dump.
//!
//! Plane dumps are little-endian: a 16-byte header `b"MCEV"`, width,
//! height and plane count as `u32`, then `planes * width * height` `f32`
//! samples, plane-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{to_u8, ImageU8};
use crate::{Error, Result};

pub const PLANES_MAGIC: &[u8; 4] = b"MCEV";

/// Reads a binary PPM with maxval 255. Dimensions that are not multiples
/// of 8 are edge-padded.
pub fn read_ppm(path: &Path) -> Result<ImageU8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, offset) = parse_header(&bytes, b"P6").map_err(|r| Error::format(path, r))?;
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(Error::format(path, format!("unsupported maxval {maxval}")));
    }
    let need = width * height * 3;
    let body = bytes
        .get(offset..offset + need)
        .ok_or_else(|| Error::format(path, "truncated pixel data"))?;
    ImageU8::from_unaligned(width, height, body.to_vec())
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_ppm(img: &ImageU8) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn write_ppm(path: &Path, img: &ImageU8) -> Result<()> {
    fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "PGM {}x{} needs {} samples, got {}",
            width,
            height,
            width * height,
            gray.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Rounds and clamps a float plane to bytes after multiplying by `scale`.
pub fn plane_to_u8(plane: &[f32], scale: f32) -> Vec<u8> {
    plane.iter().map(|&v| to_u8(v * scale)).collect()
}

pub fn write_planes_raw(path: &Path, width: usize, height: usize, planes: &[&[f32]]) -> Result<()> {
    let n = width * height;
    if let Some(bad) = planes.iter().find(|p| p.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "plane of {} samples does not match {}x{}",
            bad.len(),
            width,
            height
        )));
    }
    let mut out = Vec::with_capacity(16 + planes.len() * n * 4);
    out.extend_from_slice(PLANES_MAGIC);
    for v in [width, height, planes.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in planes {
        for v in *p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, planes)`.
pub fn read_planes_raw(path: &Path) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != PLANES_MAGIC {
        return Err(Error::format(path, "missing MCEV header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, count) = (word(4), word(8), word(12));
    let n = w * h;
    if bytes.len() != 16 + count * n * 4 {
        return Err(Error::format(path, "plane payload length mismatch"));
    }
    let planes = (0..count)
        .map(|p| {
            bytes[16 + p * n * 4..16 + (p + 1) * n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((w, h, planes))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> std::result::Result<([usize; 3], usize), String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("expected {} magic", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and '#' comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("bad header number")?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    if fields[0] == 0 || fields[1] == 0 {
        return Err("zero-area image".into());
    }
    Ok((fields, pos + 1))
}
