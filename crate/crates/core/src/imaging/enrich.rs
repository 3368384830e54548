use super::{jpeg_degrade, EnrichedYCbCr, JpegSimConfig, PlanarYCbCr};
use crate::Result;

/// Adds each chroma plane's JPEG error back onto itself:
/// `C + (C - C')` for `C` in {Cb, Cr}, where `C'` comes from
/// [`jpeg_degrade`]. Luma is copied through; the luma error is discarded.
pub fn enrich(planes: &PlanarYCbCr, cfg: &JpegSimConfig) -> Result<EnrichedYCbCr> {
    let degraded = jpeg_degrade(planes, cfg)?;
    let add_error = |orig: &[f32], coded: &[f32]| -> Vec<f32> {
        orig.iter()
            .zip(coded)
            .map(|(&c, &c2)| 2.0 * c - c2)
            .collect()
    };
    Ok(EnrichedYCbCr {
        width: planes.width,
        height: planes.height,
        y: planes.y.clone(),
        cb: add_error(&planes.cb, &degraded.cb),
        cr: add_error(&planes.cr, &degraded.cr),
    })
}
