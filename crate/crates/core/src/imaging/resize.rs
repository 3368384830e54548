use super::{to_u8, ImageU8};
use crate::{Error, Result};

/// Bilinear resampling with half-pixel centers. Same-size requests return
/// an exact copy.
pub fn resize_bilinear(img: &ImageU8, width: usize, height: usize) -> Result<ImageU8> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage("zero-area resize target".into()));
    }
    if (width, height) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let (sw, sh) = (img.width(), img.height());
    let src = img.data();
    let map = |dst: usize, dst_len: usize, src_len: usize| -> (usize, usize, f32) {
        let pos = ((dst as f32 + 0.5) * src_len as f32 / dst_len as f32 - 0.5).max(0.0);
        let i0 = (pos.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, pos - i0 as f32)
    };
    let cols: Vec<_> = (0..width).map(|x| map(x, width, sw)).collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let (y0, y1, fy) = map(y, height, sh);
        for &(x0, x1, fx) in &cols {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * sw + xx) * 3 + c] as f32;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data.push(to_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    ImageU8::new(width, height, data)
}
