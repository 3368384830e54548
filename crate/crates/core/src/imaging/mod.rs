//! Pixel-level machinery: RGB rasters, full-range YCbCr planes, the lossy
//! stages of JPEG, Gaussian noising and chroma-error enrichment.

mod color;
mod enrich;
pub mod io;
mod jpeg;
mod noise;
mod resize;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use enrich::enrich;
pub use jpeg::{jpeg_degrade, jpeg_degrade_padded, quant_table, CHROMA_BASE, LUMA_BASE};
pub use noise::add_gaussian_noise;
pub use resize::resize_bilinear;

use std::str::FromStr;

use crate::{Error, Result};

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    /// Wraps `data`. Both dimensions must be at least 8 and multiples of 8;
    /// use [`ImageU8::from_unaligned`] to edge-pad arbitrary rasters.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width < 8 || height < 8 || width % 8 != 0 || height % 8 != 0 {
            return Err(Error::NotAligned {
                width,
                height,
                block: 8,
            });
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{}x{} RGB needs {} bytes, got {}",
                width,
                height,
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

    /// Accepts any non-empty raster and replicates the last row/column until
    /// both dimensions are multiples of 8 (and at least 8).
    pub fn from_unaligned(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-area image".into()));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "{}x{} RGB needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        let (pw, ph) = (align_up(width, 8), align_up(height, 8));
        if (pw, ph) == (width, height) {
            return Self::new(width, height, data);
        }
        let mut out = vec![0u8; pw * ph * 3];
        for y in 0..ph {
            let sy = y.min(height - 1);
            for x in 0..pw {
                let sx = x.min(width - 1);
                let s = (sy * width + sx) * 3;
                let d = (y * pw + x) * 3;
                out[d..d + 3].copy_from_slice(&data[s..s + 3]);
            }
        }
        Self::new(pw, ph, out)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }
}

/// Full-range YCbCr planes, nominally in [0, 255].
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarYCbCr {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f32>,
    pub cb: Vec<f32>,
    pub cr: Vec<f32>,
}

impl PlanarYCbCr {
    pub fn new(
        width: usize,
        height: usize,
        y: Vec<f32>,
        cb: Vec<f32>,
        cr: Vec<f32>,
    ) -> Result<Self> {
        let n = width * height;
        if n == 0 || y.len() != n || cb.len() != n || cr.len() != n {
            return Err(Error::InvalidImage(format!(
                "plane sizes {}/{}/{} do not match {}x{}",
                y.len(),
                cb.len(),
                cr.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            y,
            cb,
            cr,
        })
    }

    pub fn planes(&self) -> [&[f32]; 3] {
        [&self.y, &self.cb, &self.cr]
    }
}

/// YCbCr planes whose chroma carries an added copy of its own compression
/// error. Luma is an untouched copy of the source; chroma is not clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct EnrichedYCbCr {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f32>,
    pub cb: Vec<f32>,
    pub cr: Vec<f32>,
}

impl EnrichedYCbCr {
    pub fn planes(&self) -> [&[f32]; 3] {
        [&self.y, &self.cb, &self.cr]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ChromaSubsampling {
    /// Chroma averaged over 2x2 blocks before coding.
    #[default]
    Yuv420,
    Yuv444,
}

impl FromStr for ChromaSubsampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4:2:0" | "420" => Ok(Self::Yuv420),
            "4:4:4" | "444" => Ok(Self::Yuv444),
            other => Err(Error::Config(format!(
                "unknown chroma subsampling {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for ChromaSubsampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Yuv420 => "4:2:0",
            Self::Yuv444 => "4:4:4",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JpegSimConfig {
    quality: u8,
    pub chroma_subsampling: ChromaSubsampling,
}

impl JpegSimConfig {
    pub fn new(quality: u8, chroma_subsampling: ChromaSubsampling) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::Config(format!(
                "JPEG quality {quality} outside 1..=100"
            )));
        }
        Ok(Self {
            quality,
            chroma_subsampling,
        })
    }

    pub fn quality(&self) -> u8 {
        self.quality
    }

    /// Block alignment required by [`jpeg_degrade`].
    pub fn alignment(&self) -> usize {
        match self.chroma_subsampling {
            ChromaSubsampling::Yuv420 => 16,
            ChromaSubsampling::Yuv444 => 8,
        }
    }
}

impl Default for JpegSimConfig {
    /// Quality 90 with 4:2:0 chroma, the enrichment setting.
    fn default() -> Self {
        Self {
            quality: 90,
            chroma_subsampling: ChromaSubsampling::Yuv420,
        }
    }
}

/// Gaussian noise in 8-bit intensity units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise sigma {sigma} must be finite and >= 0"
            )));
        }
        Ok(Self { sigma, seed })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Peak signal-to-noise ratio between two equally sized planes, peak 255.
/// Identical planes give `f64::INFINITY`.
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len(), "psnr on planes of different size");
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

/// PSNR over all three planes jointly.
pub fn psnr_ycbcr(a: &PlanarYCbCr, b: &PlanarYCbCr) -> f64 {
    let join = |p: &PlanarYCbCr| -> Vec<f32> { p.planes().concat() };
    psnr(&join(a), &join(b))
}

pub(crate) fn align_up(v: usize, m: usize) -> usize {
    v.div_ceil(m).max(1) * m
}

/// Half-away-from-zero rounding and clamping to a byte.
#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_geometry() {
        assert!(ImageU8::new(12, 8, vec![0; 12 * 8 * 3]).is_err());
        assert!(ImageU8::new(8, 8, vec![0; 10]).is_err());
        assert!(ImageU8::new(8, 16, vec![0; 8 * 16 * 3]).is_ok());
    }

    #[test]
    fn unaligned_images_are_edge_replicated() {
        let data: Vec<u8> = (0..5 * 3 * 3).map(|v| v as u8).collect();
        let img = ImageU8::from_unaligned(5, 3, data).unwrap();
        assert_eq!((img.width(), img.height()), (8, 8));
        assert_eq!(img.pixel(7, 7), img.pixel(4, 2));
        assert_eq!(img.pixel(2, 6), img.pixel(2, 2));
        assert_eq!(img.pixel(1, 1), [18, 19, 20]);
    }

    #[test]
    fn jpeg_config_validates_quality() {
        assert!(JpegSimConfig::new(0, ChromaSubsampling::Yuv444).is_err());
        assert!(JpegSimConfig::new(101, ChromaSubsampling::Yuv444).is_err());
        let cfg = JpegSimConfig::default();
        assert_eq!(cfg.quality(), 90);
        assert_eq!(cfg.chroma_subsampling, ChromaSubsampling::Yuv420);
    }

    #[test]
    fn noise_spec_rejects_negative_sigma() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_u8(2.5), 3);
        assert_eq!(to_u8(-0.5), 0);
        assert_eq!(to_u8(254.5), 255);
        assert_eq!(to_u8(300.0), 255);
    }
}
