//! The pixel-affecting stages of baseline JPEG: chroma subsampling and
//! 8x8 DCT quantization. Entropy coding is lossless and omitted.

use std::sync::OnceLock;

use super::{align_up, ChromaSubsampling, JpegSimConfig, PlanarYCbCr};
use crate::{Error, Result};

/// ITU-T T.81 Annex K.1 luminance table, row-major.
#[rustfmt::skip]
pub const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61,
    12, 12, 14, 19, 26, 58, 60, 55,
    14, 13, 16, 24, 40, 57, 69, 56,
    14, 17, 22, 29, 51, 87, 80, 62,
    18, 22, 37, 56, 68, 109, 103, 77,
    24, 35, 55, 64, 81, 104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// ITU-T T.81 Annex K.2 chrominance table, row-major.
#[rustfmt::skip]
pub const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// libjpeg-style quality scaling of a base table.
pub fn quant_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

/// Orthonormal DCT-II basis, `basis[u * 8 + x]`.
fn dct_basis() -> &'static [f64; 64] {
    static BASIS: OnceLock<[f64; 64]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [0.0; 64];
        for u in 0..8 {
            let alpha = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for x in 0..8 {
                c[u * 8 + x] =
                    alpha * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        c
    })
}

/// Level shift, DCT, quantize/dequantize, inverse DCT, un-shift. In place.
fn code_block(block: &mut [f64; 64], table: &[u16; 64]) {
    let c = dct_basis();
    let mut tmp = [0.0f64; 64];
    for v in block.iter_mut() {
        *v -= 128.0;
    }
    // rows: tmp = B * C^T
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for x in 0..8 {
                s += block[y * 8 + x] * c[u * 8 + x];
            }
            tmp[y * 8 + u] = s;
        }
    }
    // cols: F = C * tmp, then quantize
    let mut coef = [0.0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for y in 0..8 {
                s += c[v * 8 + y] * tmp[y * 8 + u];
            }
            let t = table[v * 8 + u] as f64;
            coef[v * 8 + u] = (s / t).round() * t;
        }
    }
    // inverse: B = C^T * F * C
    for y in 0..8 {
        for u in 0..8 {
            let mut s = 0.0;
            for v in 0..8 {
                s += c[v * 8 + y] * coef[v * 8 + u];
            }
            tmp[y * 8 + u] = s;
        }
    }
    for y in 0..8 {
        for x in 0..8 {
            let mut s = 0.0;
            for u in 0..8 {
                s += tmp[y * 8 + u] * c[u * 8 + x];
            }
            block[y * 8 + x] = s + 128.0;
        }
    }
}

fn code_plane(plane: &[f32], width: usize, height: usize, table: &[u16; 64]) -> Vec<f32> {
    debug_assert!(width % 8 == 0 && height % 8 == 0);
    let mut out = vec![0.0f32; plane.len()];
    let mut block = [0.0f64; 64];
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane[(by + y) * width + bx + x] as f64;
                }
            }
            code_block(&mut block, table);
            for y in 0..8 {
                for x in 0..8 {
                    out[(by + y) * width + bx + x] = block[y * 8 + x] as f32;
                }
            }
        }
    }
    out
}

fn box_downsample(plane: &[f32], width: usize, height: usize) -> Vec<f32> {
    let (w2, h2) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * width + 2 * x;
            let s = plane[i] + plane[i + 1] + plane[i + width] + plane[i + width + 1];
            out.push(s * 0.25);
        }
    }
    out
}

fn nearest_upsample(plane: &[f32], width: usize, height: usize) -> Vec<f32> {
    let w2 = width / 2;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            out.push(plane[(y / 2) * w2 + x / 2]);
        }
    }
    out
}

fn code_chroma(
    plane: &[f32],
    width: usize,
    height: usize,
    cfg: &JpegSimConfig,
    table: &[u16; 64],
) -> Vec<f32> {
    match cfg.chroma_subsampling {
        ChromaSubsampling::Yuv444 => code_plane(plane, width, height, table),
        ChromaSubsampling::Yuv420 => {
            let small = box_downsample(plane, width, height);
            let coded = code_plane(&small, width / 2, height / 2, table);
            nearest_upsample(&coded, width, height)
        }
    }
}

/// Simulated JPEG round trip. Dimensions must be multiples of 8, or of 16
/// with 4:2:0 chroma. Output planes are not clamped.
pub fn jpeg_degrade(planes: &PlanarYCbCr, cfg: &JpegSimConfig) -> Result<PlanarYCbCr> {
    let (w, h) = (planes.width, planes.height);
    let block = cfg.alignment();
    if w == 0 || h == 0 || w % block != 0 || h % block != 0 {
        return Err(Error::NotAligned {
            width: w,
            height: h,
            block,
        });
    }
    let luma = quant_table(&LUMA_BASE, cfg.quality());
    let chroma = quant_table(&CHROMA_BASE, cfg.quality());
    Ok(PlanarYCbCr {
        width: w,
        height: h,
        y: code_plane(&planes.y, w, h, &luma),
        cb: code_chroma(&planes.cb, w, h, cfg, &chroma),
        cr: code_chroma(&planes.cr, w, h, cfg, &chroma),
    })
}

/// [`jpeg_degrade`] for arbitrary dimensions: edge-replicates to the block
/// alignment, degrades, and crops back.
pub fn jpeg_degrade_padded(planes: &PlanarYCbCr, cfg: &JpegSimConfig) -> Result<PlanarYCbCr> {
    let (w, h) = (planes.width, planes.height);
    let block = cfg.alignment();
    let (pw, ph) = (align_up(w, block), align_up(h, block));
    if (pw, ph) == (w, h) {
        return jpeg_degrade(planes, cfg);
    }
    let pad = |p: &[f32]| -> Vec<f32> {
        let mut out = Vec::with_capacity(pw * ph);
        for y in 0..ph {
            let row = &p[y.min(h - 1) * w..][..w];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[w - 1], pw - w));
        }
        out
    };
    let crop = |p: &[f32]| -> Vec<f32> {
        (0..h)
            .flat_map(|y| p[y * pw..y * pw + w].iter().copied())
            .collect()
    };
    let padded = PlanarYCbCr {
        width: pw,
        height: ph,
        y: pad(&planes.y),
        cb: pad(&planes.cb),
        cr: pad(&planes.cr),
    };
    let coded = jpeg_degrade(&padded, cfg)?;
    Ok(PlanarYCbCr {
        width: w,
        height: h,
        y: crop(&coded.y),
        cb: crop(&coded.cb),
        cr: crop(&coded.cr),
    })
}
