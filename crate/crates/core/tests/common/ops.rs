//! Every differentiable tape op with seeded inputs.

use chromavit::nn::{Real, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::random_vec;

/// Names and inputs of every differentiable op.
pub fn op_inputs(name: &str) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + 7);
    let mut t = |shape: &[usize]| {
        (
            shape.to_vec(),
            random_vec(shape.iter().product(), -1.0, 1.0, &mut rng),
        )
    };
    match name {
        "matmul" => vec![t(&[3, 4]), t(&[4, 5])],
        "matmul_shared_rhs" => vec![t(&[2, 3, 4]), t(&[4, 2])],
        "matmul_batched" => vec![t(&[2, 2, 3, 4]), t(&[2, 2, 4, 3])],
        "add" => vec![t(&[3, 4]), t(&[3, 4])],
        "add_broadcast" => vec![t(&[2, 3, 4]), t(&[4])],
        "mul" => vec![t(&[3, 4]), t(&[3, 4])],
        "scale" => vec![t(&[5])],
        "relu" => {
            // Keep inputs away from the kink.
            let v: Vec<f64> = (0..12)
                .map(|i| {
                    if i % 2 == 0 {
                        0.3 + i as f64 * 0.05
                    } else {
                        -0.4 - i as f64 * 0.03
                    }
                })
                .collect();
            vec![(vec![3, 4], v)]
        }
        "gelu" => vec![t(&[3, 4])],
        "softmax_last" => vec![t(&[3, 4])],
        "softmax_inner" => vec![t(&[3, 4, 2])],
        "layer_norm" => vec![t(&[3, 6]), t(&[6]), t(&[6])],
        "mean" => vec![t(&[3, 4, 2])],
        "sum" => vec![t(&[3, 4])],
        "reshape" => vec![t(&[3, 4])],
        "transpose" => vec![t(&[2, 3, 4])],
        "concat" => vec![t(&[2, 3]), t(&[2, 2])],
        "narrow" => vec![t(&[4, 5])],
        "avg_pool_1d" => vec![t(&[2, 12])],
        "softmax_crossentropy" => vec![t(&[4, 3])],
        "crossentropy" => {
            let rows: [[f64; 3]; 2] = [[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]];
            vec![(vec![2, 3], rows.iter().flatten().copied().collect())]
        }
        _ => unreachable!("{name}"),
    }
}

pub const OPS: &[&str] = &[
    "matmul",
    "matmul_shared_rhs",
    "matmul_batched",
    "add",
    "add_broadcast",
    "mul",
    "scale",
    "relu",
    "gelu",
    "softmax_last",
    "softmax_inner",
    "layer_norm",
    "mean",
    "sum",
    "reshape",
    "transpose",
    "concat",
    "narrow",
    "avg_pool_1d",
    "softmax_crossentropy",
    "crossentropy",
];

pub fn build_op<T: Real>(name: &str, tape: &mut Tape<T>, v: &[Var]) -> Var {
    let onehot = |tape: &mut Tape<T>, rows: usize| {
        let y = (0..rows * 3)
            .map(|i| {
                if i % 3 == (i / 3) % 3 {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect();
        tape.constant(&[rows, 3], y).unwrap()
    };
    match name {
        "matmul" | "matmul_shared_rhs" | "matmul_batched" => tape.matmul(v[0], v[1]).unwrap(),
        "add" | "add_broadcast" => tape.add(v[0], v[1]).unwrap(),
        "mul" => tape.mul(v[0], v[1]).unwrap(),
        "scale" => tape.scale(v[0], T::from(-2.5).unwrap()),
        "relu" => tape.relu(v[0]),
        "gelu" => tape.gelu(v[0]),
        "softmax_last" => tape.softmax(v[0], 1).unwrap(),
        "softmax_inner" => tape.softmax(v[0], 1).unwrap(),
        "layer_norm" => tape.layer_norm(v[0], v[1], v[2]).unwrap(),
        "mean" => tape.mean(v[0], 1).unwrap(),
        "sum" => tape.sum(v[0]),
        "reshape" => tape.reshape(v[0], &[2, 6]).unwrap(),
        "transpose" => tape.transpose(v[0], 0, 2).unwrap(),
        "concat" => tape.concat(&[v[0], v[1]], 1).unwrap(),
        "narrow" => tape.narrow(v[0], 1, 1, 3).unwrap(),
        "avg_pool_1d" => tape.avg_pool_1d(v[0], 4, 4).unwrap(),
        "softmax_crossentropy" => {
            let p = tape.softmax(v[0], 1).unwrap();
            let y = onehot(tape, 4);
            tape.crossentropy(p, y).unwrap()
        }
        "crossentropy" => {
            let y = onehot(tape, 2);
            tape.crossentropy(v[0], y).unwrap()
        }
        _ => unreachable!("{name}"),
    }
}
