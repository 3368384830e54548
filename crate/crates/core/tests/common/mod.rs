//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod ops;

use chromavit::fusion::{FusionConfig, FusionModel, Preprocessed};
use chromavit::nn::{Parameterized, Real, Tape, Tensor, Var};
use chromavit::vit::VitConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gradient norms below this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-4;

/// `||a - b||_2 / max(||a||_2, ||b||_2, GRAD_FLOOR)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(GRAD_FLOOR)
}

pub fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64().unwrap()).collect()
}

/// Central differences of a scalar function, one coordinate at a time.
pub fn central_difference<T: Real>(x: &[T], h: T, mut f: impl FnMut(&[T]) -> T) -> Vec<T> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (h + h)
        })
        .collect()
}

pub fn random_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub type Inputs = [(Vec<usize>, Vec<f64>)];
pub type Build<'a, T> = &'a dyn Fn(&mut Tape<T>, &[Var]) -> Var;

/// Builds `sum(op(inputs) * w)` on a fresh tape; returns the tape, the
/// input leaves and the loss.
fn weighted_loss<T: Real>(
    inputs: &Inputs,
    values: &[Vec<T>],
    build: Build<'_, T>,
    weights: &mut Option<Vec<T>>,
) -> (Tape<T>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(values)
        .map(|((shape, _), v)| {
            tape.leaf(
                &Tensor::new(shape, v.clone())
                    .unwrap()
                    .with_requires_grad(true),
            )
        })
        .collect();
    let out = build(&mut tape, &vars);
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let w = weights.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..n)
            .map(|_| T::from(rng.random_range(-1.0..1.0)).unwrap())
            .collect()
    });
    let wv = tape.constant(&shape, w.clone()).unwrap();
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod);
    (tape, vars, loss)
}

/// Worst per-input relative error between the tape gradient of
/// `sum(op(inputs) * w)` and central differences, for a fixed random `w`.
pub fn check_case<T: Real>(inputs: &Inputs, build: Build<'_, T>, h: f64) -> f64 {
    let values: Vec<Vec<T>> = inputs
        .iter()
        .map(|(_, v)| v.iter().map(|&x| T::from(x).unwrap()).collect())
        .collect();
    let mut weights = None;
    let (tape, vars, loss) = weighted_loss(inputs, &values, build, &mut weights);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(to_f64)
            .unwrap_or_else(|| vec![0.0; values[i].len()]);
        let numeric = central_difference(&values[i], T::from(h).unwrap(), |x| {
            let mut vals = values.clone();
            vals[i] = x.to_vec();
            let (t, _, l) = weighted_loss(inputs, &vals, build, &mut weights);
            t.value(l)[0]
        });
        worst = worst.max(rel_error(&analytic, &to_f64(&numeric)));
    }
    worst
}

/// A fused model under 10k parameters.
pub fn gradcheck_config() -> FusionConfig {
    FusionConfig {
        vit: VitConfig {
            mlp_ratio: 0.5,
            ..VitConfig::toy()
        },
        pool_kernel: 4,
        pool_stride: 4,
        hidden: 4,
        ..FusionConfig::toy()
    }
}

pub fn random_inputs(cfg: &FusionConfig, n: usize, seed: u64) -> Vec<Preprocessed> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = 3 * cfg.vit.image_size * cfg.vit.image_size;
    (0..n)
        .map(|_| Preprocessed {
            rgb: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            enriched: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

/// Mean crossentropy of the fused model on `inputs` with fixed labels.
pub fn model_loss<T: Real>(
    model: &FusionModel<T>,
    inputs: &[Preprocessed],
    tape: &mut Tape<T>,
) -> Var {
    let refs: Vec<&Preprocessed> = inputs.iter().collect();
    let out = model.forward(tape, &refs).unwrap();
    let n = inputs.len();
    let mut y = vec![T::zero(); n * 3];
    for r in 0..n {
        y[r * 3 + r % 3] = T::one();
    }
    let y = tape.constant(&[n, 3], y).unwrap();
    tape.crossentropy(out.probs, y).unwrap()
}

/// Central-difference gradient of the mean crossentropy with respect to the
/// named parameter tensor.
pub fn numeric_param_grad<T: Real>(
    model: &FusionModel<T>,
    inputs: &[Preprocessed],
    name: &str,
    h: f64,
) -> Vec<f64> {
    let mut original = Vec::new();
    model.visit(&mut |p| {
        if p.name == name {
            original = p.tensor.data().to_vec();
        }
    });
    let mut probe = model.clone();
    let numeric = central_difference(&original, T::from(h).unwrap(), |x| {
        probe.visit_mut(&mut |p| {
            if p.name == name {
                p.tensor.data_mut().copy_from_slice(x);
            }
        });
        let mut t = Tape::new();
        let l = model_loss(&probe, inputs, &mut t);
        t.value(l)[0]
    });
    to_f64(&numeric)
}

/// Relative error of every parameter tensor's tape gradient in `model`
/// against central differences of `reference` (the same parameters, possibly
/// at another precision). Returns the worst tensor and its error.
pub fn check_model<T: Real, U: Real>(
    model: &FusionModel<T>,
    reference: &FusionModel<U>,
    inputs: &[Preprocessed],
    h: f64,
) -> (String, f64) {
    let mut tape = Tape::new();
    let loss = model_loss(model, inputs, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let mut names = Vec::new();
    model.visit(&mut |p| names.push(p.name.clone()));
    let mut worst = (String::new(), 0.0f64);
    for name in names {
        let var = tape.param_var(&name).unwrap();
        let analytic = to_f64(grads.get(var).unwrap());
        let numeric = numeric_param_grad(reference, inputs, &name, h);
        let err = rel_error(&analytic, &numeric);
        if err > worst.1 {
            worst = (name, err);
        }
    }
    worst
}
