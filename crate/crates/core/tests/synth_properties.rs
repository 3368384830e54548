use chromavit::data::{generate_synthetic, Class, LabeledImage, SynthConfig};

fn sample(per_class: usize, seed: u64) -> Vec<LabeledImage> {
    generate_synthetic(&SynthConfig {
        per_class_count: per_class,
        image_size: 32,
        seed,
    })
    .unwrap()
}

fn gray(img: &chromavit::imaging::ImageU8) -> Vec<f64> {
    img.data()
        .chunks(3)
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
        .collect()
}

/// Mean |4-neighbour Laplacian| over interior pixels.
fn laplacian(img: &chromavit::imaging::ImageU8) -> f64 {
    let (w, h) = (img.width(), img.height());
    let g = gray(img);
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = g[y * w + x];
            let l = g[y * w + x - 1] + g[y * w + x + 1] + g[(y - 1) * w + x] + g[(y + 1) * w + x]
                - 4.0 * c;
            total += l.abs();
        }
    }
    total / ((w - 2) * (h - 2)) as f64
}

fn class_mean(items: &[LabeledImage], class: Class, f: impl Fn(&LabeledImage) -> f64) -> f64 {
    let v: Vec<f64> = items.iter().filter(|i| i.label == class).map(f).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn laplacian_orders_graphics_real_gan() {
    let items = sample(50, 21);
    let m = |c| class_mean(&items, c, |i| laplacian(&i.image));
    let (gan, graphics, real) = (m(Class::Gan), m(Class::Graphics), m(Class::Real));
    assert!(
        graphics > real && real > gan,
        "graphics {graphics} real {real} gan {gan}"
    );
}

/// Energy of 8x8 block DCT coefficients with max(u, v) > 2, averaged over
/// both chroma planes, using a direct O(n^4) transform.
fn high_chroma_energy(img: &chromavit::imaging::ImageU8) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut cb = vec![0.0; w * h];
    let mut cr = vec![0.0; w * h];
    for (i, p) in img.data().chunks(3).enumerate() {
        let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
        cb[i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
        cr[i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    let alpha = |k: usize| {
        if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        }
    };
    let mut energy = 0.0;
    for plane in [&cb, &cr] {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                for v in 0..8 {
                    for u in 0..8 {
                        if u.max(v) <= 2 {
                            continue;
                        }
                        let mut s = 0.0;
                        for y in 0..8 {
                            for x in 0..8 {
                                s += plane[(by + y) * w + bx + x]
                                    * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / 16.0)
                                        .cos()
                                    * (std::f64::consts::PI * (2 * y + 1) as f64 * v as f64 / 16.0)
                                        .cos();
                            }
                        }
                        energy += (alpha(u) * alpha(v) * s).powi(2);
                    }
                }
            }
        }
    }
    energy / (2 * w * h) as f64
}

#[test]
fn gan_has_least_high_frequency_chroma() {
    let items = sample(20, 22);
    let m = |c| class_mean(&items, c, |i| high_chroma_energy(&i.image));
    let gan = m(Class::Gan);
    assert!(
        gan < m(Class::Real) && gan < m(Class::Graphics),
        "gan {gan}"
    );
}

#[test]
fn nearest_centroid_on_raw_pixels_is_weak() {
    let items = sample(200, 23);
    let dim = items[0].image.data().len();
    let mut centroids = vec![vec![0.0f64; dim]; 3];
    let mut counts = [0usize; 3];
    for item in &items {
        counts[item.label.index()] += 1;
        for (c, &v) in centroids[item.label.index()]
            .iter_mut()
            .zip(item.image.data())
        {
            *c += v as f64;
        }
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = items
        .iter()
        .filter(|item| {
            let dist = |c: &Vec<f64>| -> f64 {
                c.iter()
                    .zip(item.image.data())
                    .map(|(a, &b)| (a - b as f64).powi(2))
                    .sum()
            };
            let best = (0..3)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            best == item.label.index()
        })
        .count();
    let acc = correct as f64 / items.len() as f64;
    assert!(acc < 0.8, "nearest-centroid accuracy {acc}");
}

#[test]
fn bitwise_reproducible() {
    assert_eq!(sample(10, 24), sample(10, 24));
}
