use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{Class, LabeledImage};
use crate::imaging::ImageU8;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub per_class_count: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class_count: 200,
            image_size: 32,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_count < 10 {
            return Err(Error::Config(format!(
                "per_class_count must be at least 10, got {}",
                self.per_class_count
            )));
        }
        if self.image_size < 32 || self.image_size % 8 != 0 {
            return Err(Error::Config(format!(
                "synthetic image_size must be a multiple of 8 and at least 32, got {}",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// `per_class_count` images of each class, ordered gan, graphics, real.
/// Image `i` of class `c` depends only on `(seed, c, i)` and the size.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<LabeledImage>> {
    cfg.validate()?;
    let digits = (cfg.per_class_count - 1).to_string().len().max(4);
    let jobs: Vec<(Class, usize)> = Class::ALL
        .into_iter()
        .flat_map(|c| (0..cfg.per_class_count).map(move |i| (c, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(class, i)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((class.index() as u64) << 32) | i as u64);
            let s = cfg.image_size;
            let rgb = match class {
                Class::Gan => gan(s, &mut rng),
                Class::Graphics => graphics(s, &mut rng),
                Class::Real => real(s, &mut rng),
            };
            Ok(LabeledImage {
                image: ImageU8::new(s, s, rgb)?,
                label: class,
                id: format!("{class}/{i:0digits$}"),
            })
        })
        .collect()
}

/// Float planes to interleaved bytes.
fn interleave(planes: &[Vec<f32>; 3]) -> Vec<u8> {
    let n = planes[0].len();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        for p in planes {
            out.push(p[i].round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Luma-plus-two-chroma offsets to RGB.
fn mix(l: f32, a: f32, b: f32) -> [f32; 3] {
    [l + a, l - 0.5 * a - 0.4 * b, l - 0.5 * a + 0.9 * b]
}

fn base_color<R: Rng>(rng: &mut R) -> [f32; 3] {
    std::array::from_fn(|_| rng.random_range(70.0..186.0))
}

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// One octave of value noise with lattice spacing `cell`, values in [-1, 1].
fn value_octave<R: Rng>(s: usize, cell: usize, rng: &mut R) -> Vec<f32> {
    let g = s / cell + 2;
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        let gy = y / cell;
        let ty = smoothstep((y % cell) as f32 / cell as f32);
        for x in 0..s {
            let gx = x / cell;
            let tx = smoothstep((x % cell) as f32 / cell as f32);
            let at = |yy: usize, xx: usize| lattice[yy * g + xx];
            let top = at(gy, gx) * (1.0 - tx) + at(gy, gx + 1) * tx;
            let bot = at(gy + 1, gx) * (1.0 - tx) + at(gy + 1, gx + 1) * tx;
            out[y * s + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

const OCTAVE_DECAY: f32 = 0.6;
const GRAIN_SIGMA: f32 = 2.0;
const MAX_VIGNETTE: f32 = 0.08;

/// Multi-octave value noise on an `s x s` grid. Octave `k` has lattice
/// spacing `coarsest >> k` and amplitude `OCTAVE_DECAY^k`; octaves stop below
/// `finest`. The sum is divided by `norm`.
fn value_noise<R: Rng>(
    s: usize,
    coarsest: usize,
    finest: usize,
    norm: f32,
    rng: &mut R,
) -> Vec<f32> {
    let mut out = vec![0.0; s * s];
    let mut cell = coarsest;
    let mut amp = 1.0f32;
    while cell >= finest.max(1) {
        for (o, v) in out.iter_mut().zip(value_octave(s, cell, rng)) {
            *o += amp * v / norm;
        }
        amp *= OCTAVE_DECAY;
        cell /= 2;
    }
    out
}

/// Sum of octave amplitudes from `coarsest` down to 2-pixel cells.
fn full_norm(coarsest: usize) -> f32 {
    let mut cell = coarsest;
    let (mut amp, mut total) = (1.0f32, 0.0);
    while cell >= 2 {
        total += amp;
        amp *= OCTAVE_DECAY;
        cell /= 2;
    }
    total
}

struct Palette {
    base: [f32; 3],
    luma: f32,
    chroma: f32,
}

impl Palette {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        Self {
            base: base_color(rng),
            luma: rng.random_range(60.0..110.0),
            chroma: rng.random_range(30.0..60.0),
        }
    }
}

/// Camera-like texture: multi-octave luma and chroma noise down to 2-pixel
/// cells, a mild vignette and per-pixel Gaussian grain.
fn real<R: Rng>(s: usize, rng: &mut R) -> Vec<u8> {
    let pal = Palette::draw(rng);
    let norm = full_norm(s / 4);
    let [l, a, b] = std::array::from_fn(|_| value_noise(s, s / 4, 2, norm, rng));
    let strength = rng.random_range(0.0..MAX_VIGNETTE);
    let grain = Normal::new(0.0f32, GRAIN_SIGMA).unwrap();
    let mut planes: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; s * s]);
    let c = (s as f32 - 1.0) / 2.0;
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let r2 = ((x as f32 - c).powi(2) + (y as f32 - c).powi(2)) / (2.0 * c * c);
            let vignette = 1.0 - strength * r2;
            let px = mix(pal.luma * l[i], pal.chroma * a[i], pal.chroma * b[i]);
            for ch in 0..3 {
                planes[ch][i] = (pal.base[ch] + px[ch]) * vignette + grain.sample(rng);
            }
        }
    }
    interleave(&planes)
}

/// Catmull-Rom weights for fractional offset `t`.
fn cubic_weights(t: f32) -> [f32; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Bicubic upsampling of a `g x g` field by an integer factor, edges clamped.
fn bicubic_upsample(field: &[f32], g: usize, factor: usize) -> Vec<f32> {
    let s = g * factor;
    let at = |y: isize, x: isize| {
        let c = |v: isize| v.clamp(0, g as isize - 1) as usize;
        field[c(y) * g + c(x)]
    };
    let mut out = vec![0.0; s * s];
    for y in 0..s {
        let fy = (y as f32 + 0.5) / factor as f32 - 0.5;
        let y0 = fy.floor();
        let wy = cubic_weights(fy - y0);
        for x in 0..s {
            let fx = (x as f32 + 0.5) / factor as f32 - 0.5;
            let x0 = fx.floor();
            let wx = cubic_weights(fx - x0);
            let mut acc = 0.0;
            for (j, wyj) in wy.iter().enumerate() {
                for (k, wxk) in wx.iter().enumerate() {
                    acc +=
                        wyj * wxk * at(y0 as isize - 1 + j as isize, x0 as isize - 1 + k as isize);
                }
            }
            out[y * s + x] = acc;
        }
    }
    out
}

/// Band-limited texture: the coarse octaves of the camera-like texture
/// evaluated on a grid 8x smaller and bicubically upsampled.
fn gan<R: Rng>(s: usize, rng: &mut R) -> Vec<u8> {
    const FACTOR: usize = 8;
    let g = s / FACTOR;
    let pal = Palette::draw(rng);
    let norm = full_norm(s / 4);
    let [l, a, b] =
        std::array::from_fn(|_| bicubic_upsample(&value_noise(g, g / 4, 1, norm, rng), g, FACTOR));
    let mut planes: [Vec<f32>; 3] = std::array::from_fn(|_| vec![0.0; s * s]);
    for i in 0..s * s {
        let px = mix(pal.luma * l[i], pal.chroma * a[i], pal.chroma * b[i]);
        for ch in 0..3 {
            planes[ch][i] = pal.base[ch] + px[ch];
        }
    }
    interleave(&planes)
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[(f32, f32)], x: f32, y: f32) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Flat-shaded random polygons over a flat background, at most 16 colours.
fn graphics<R: Rng>(s: usize, rng: &mut R) -> Vec<u8> {
    let palette_len = rng.random_range(4..=16);
    let palette: Vec<[u8; 3]> = (0..palette_len)
        .map(|_| std::array::from_fn(|_| rng.random_range(20..=235)))
        .collect();
    let mut px = vec![palette[0]; s * s];
    let n = rng.random_range(10..=20);
    let sf = s as f32;
    for _ in 0..n {
        let color = palette[rng.random_range(0..palette_len)];
        let (cx, cy) = (rng.random_range(0.0..sf), rng.random_range(0.0..sf));
        let radius = rng.random_range(sf / 14.0..sf / 4.0);
        let verts = rng.random_range(3..=7);
        let mut angles: Vec<f32> = (0..verts)
            .map(|_| rng.random_range(0.0..std::f32::consts::TAU))
            .collect();
        angles.sort_by(f32::total_cmp);
        let poly: Vec<(f32, f32)> = angles
            .iter()
            .map(|a| {
                let r = radius * rng.random_range(0.5..1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let lo = |v: f32| (v - radius).floor().max(0.0) as usize;
        let hi = |v: f32| ((v + radius).ceil().max(0.0) as usize).min(s);
        for y in lo(cy)..hi(cy) {
            for x in lo(cx)..hi(cx) {
                if inside(&poly, x as f32 + 0.5, y as f32 + 0.5) {
                    px[y * s + x] = color;
                }
            }
        }
    }
    px.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, size: usize, seed: u64) -> Vec<LabeledImage> {
        generate_synthetic(&SynthConfig {
            per_class_count: n,
            image_size: size,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn counts_ids_and_order() {
        let items = sample(10, 32, 1);
        assert_eq!(items.len(), 30);
        assert_eq!(items[0].id, "gan/0000");
        assert_eq!(items[10].id, "graphics/0000");
        assert_eq!(items[29].id, "real/0009");
        assert!(items.iter().all(|i| i.image.width() == 32));
    }

    #[test]
    fn per_item_reproducible() {
        let a = sample(10, 32, 4);
        let b = sample(12, 32, 4);
        assert_eq!(a[3], b[3]);
        assert_eq!(a[10].image, b[12].image);
        assert_ne!(a[3].image, sample(10, 32, 5)[3].image);
    }

    #[test]
    fn graphics_palette_is_small() {
        for item in sample(10, 64, 2)
            .iter()
            .filter(|i| i.label == Class::Graphics)
        {
            let mut colors: Vec<&[u8]> = item.image.data().chunks(3).collect();
            colors.sort();
            colors.dedup();
            assert!(colors.len() <= 16);
        }
    }

    #[test]
    fn invalid_config() {
        let bad = SynthConfig {
            per_class_count: 9,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            image_size: 36,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn catmull_rom_weights_partition_unity() {
        for t in [0.0, 0.25, 0.5, 0.9] {
            assert!((cubic_weights(t).iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(cubic_weights(0.0), [0.0, 1.0, 0.0, 0.0]);
    }
}
