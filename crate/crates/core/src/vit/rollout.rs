use super::AttentionRecord;
use crate::{Error, Result};

/// Patch-grid relevance map with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub grid: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn to_u8(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Head-averaged, identity-augmented, row-normalized attention per layer.
fn augmented_layer(rec: &AttentionRecord, l: usize) -> Vec<f64> {
    let (h, t) = (rec.heads, rec.tokens);
    let layer = rec.layer(l);
    let mut a = vec![0.0; t * t];
    for head in layer.chunks_exact(t * t) {
        a.iter_mut().zip(head).for_each(|(x, &y)| *x += y);
    }
    for i in 0..t {
        let row = &mut a[i * t..(i + 1) * t];
        row.iter_mut().for_each(|v| *v /= h as f64);
        row[i] += 1.0;
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    a
}

/// Rolled-out attention `A_L ... A_1` (row-stochastic, `[tokens, tokens]`).
pub(crate) fn rollout_matrix(rec: &AttentionRecord) -> Result<Vec<f64>> {
    if rec.layers == 0 || rec.tokens == 0 || rec.heads == 0 {
        return Err(Error::Empty("attention record"));
    }
    let t = rec.tokens;
    let mut acc = augmented_layer(rec, 0);
    for l in 1..rec.layers {
        let a = augmented_layer(rec, l);
        let mut next = vec![0.0; t * t];
        for i in 0..t {
            for k in 0..t {
                let aik = a[i * t + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..t {
                    next[i * t + j] += aik * acc[k * t + j];
                }
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// Attention rollout: the class-token row of the rolled-out matrix over the
/// patch tokens, min-max normalized onto the patch grid. A flat row
/// (min == max) maps to all zeros.
pub fn attention_rollout(rec: &AttentionRecord) -> Result<Heatmap> {
    let t = rec.tokens;
    let grid = ((t - 1) as f64).sqrt().round() as usize;
    if grid * grid + 1 != t {
        return Err(Error::InvalidArgument(format!(
            "{t} tokens do not form a square patch grid"
        )));
    }
    let r = rollout_matrix(rec)?;
    let row = &r[1..t];
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let values = if hi > lo {
        row.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; row.len()]
    };
    Ok(Heatmap { grid, values })
}
