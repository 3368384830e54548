//! Full-range (JFIF) RGB <-> YCbCr.

use super::{to_u8, ImageU8, PlanarYCbCr};

/// Forward transform. Planes are clamped to [0, 255] but not rounded.
pub fn rgb_to_ycbcr(img: &ImageU8) -> PlanarYCbCr {
    let n = img.width() * img.height();
    let mut y = Vec::with_capacity(n);
    let mut cb = Vec::with_capacity(n);
    let mut cr = Vec::with_capacity(n);
    for px in img.data().chunks_exact(3) {
        let (r, g, b) = (px[0] as f64, px[1] as f64, px[2] as f64);
        let yy = 0.299 * r + 0.587 * g + 0.114 * b;
        let cbb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
        let crr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
        y.push(yy.clamp(0.0, 255.0) as f32);
        cb.push(cbb.clamp(0.0, 255.0) as f32);
        cr.push(crr.clamp(0.0, 255.0) as f32);
    }
    PlanarYCbCr {
        width: img.width(),
        height: img.height(),
        y,
        cb,
        cr,
    }
}

/// Inverse transform, rounded half away from zero and clamped to bytes.
pub fn ycbcr_to_rgb(planes: &PlanarYCbCr) -> ImageU8 {
    let mut data = Vec::with_capacity(planes.width * planes.height * 3);
    for ((&y, &cb), &cr) in planes.y.iter().zip(&planes.cb).zip(&planes.cr) {
        let (y, cb, cr) = (y as f64, cb as f64 - 128.0, cr as f64 - 128.0);
        let r = y + 1.402 * cr;
        let g = y - 0.344136 * cb - 0.714136 * cr;
        let b = y + 1.772 * cb;
        data.extend([to_u8(r as f32), to_u8(g as f32), to_u8(b as f32)]);
    }
    ImageU8::new(planes.width, planes.height, data)
        .expect("planes carry the geometry of a valid image")
}
