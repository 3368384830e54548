use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{to_u8, ImageU8, NoiseSpec};

/// Adds i.i.d. N(0, sigma^2) to every channel sample; rounded and clamped.
/// The stream is fully determined by `spec.seed`.
pub fn add_gaussian_noise(img: &ImageU8, spec: &NoiseSpec) -> ImageU8 {
    if spec.sigma() == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma()).expect("sigma validated by NoiseSpec");
    let data = img
        .data()
        .iter()
        .map(|&v| to_u8((v as f64 + normal.sample(&mut rng)) as f32))
        .collect();
    ImageU8::new(img.width(), img.height(), data).expect("geometry unchanged")
}
