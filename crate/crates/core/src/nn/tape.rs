//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op evaluates eagerly and appends a node holding its value and the
//! handles of its inputs. [`Tape::backward`] walks the nodes in reverse.
//! A tape is single-threaded; build one per forward pass.

use std::collections::HashMap;

use super::{Param, Parameterized, Real, Tensor};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Lower clamp applied to probabilities inside crossentropy.
pub const CLAMP_MIN_PROB: f64 = 1e-12;
/// Allowed deviation of a probability row sum from 1 in crossentropy.
const NORMALIZATION_TOL: f64 = 1e-4;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        b_batched: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: T,
    },
    Relu(Var),
    Gelu(Var),
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Mean {
        a: Var,
        axis: usize,
    },
    Sum(Var),
    Reshape(Var),
    Transpose {
        a: Var,
        d0: usize,
        d1: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        a: Var,
        axis: usize,
        start: usize,
    },
    AvgPool1d {
        a: Var,
        kernel: usize,
        stride: usize,
    },
    CrossEntropy {
        p: Var,
        y: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// `(outer, dim, inner)` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn swap_axes<T: Copy>(data: &[T], shape: &[usize], d0: usize, d1: usize) -> (Vec<T>, Vec<usize>) {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out_shape = shape.to_vec();
    out_shape.swap(d0, d1);
    let mut strides = in_strides.clone();
    strides.swap(d0, d1);

    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

#[inline]
fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let s = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = s * (x + c * x * x * x);
    // tanh(u) = 1 - 2 / (exp(2u) + 1); saturates cleanly for large |u|
    let t = T::one() - T::lit(2.0) / ((u + u).exp() + T::one());
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t)
        + half * x * (T::one() - t * t) * s * (T::one() + T::lit(3.0) * c * x * x);
    (y, dy)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t.with_requires_grad(false)))
    }

    /// An anonymous leaf; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Binds a named parameter. Repeated binds of the same name return the
    /// same node, so a parameter shared across a batch accumulates once.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.leaf(&p.tensor);
        self.params.insert(p.name.clone(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    // ---- ops -----------------------------------------------------------

    /// `[..., m, k] x [k, n]` (b shared across the batch) or
    /// `[..., m, k] x [..., k, n]` with identical leading extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let b_batched = sb.len() > 2;
        if b_batched && (sb.len() != r || sb[..r - 2] != sa[..r - 2]) {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if kb != k {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a), self.value(b));
            for i in 0..batch {
                let boff = if b_batched { i * k * n } else { 0 };
                T::gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    (k as isize, 1),
                    &bv[boff..boff + k * n],
                    (n as isize, 1),
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul { a, b, b_batched }, ng))
    }

    /// Elementwise sum; `b`'s shape may be a trailing suffix of `a`'s
    /// (bias / positional broadcast).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", sa, sb));
        }
        let shape = sa.to_vec();
        let bv = self.value(b);
        let out: Vec<T> = self
            .value(a)
            .chunks_exact(bv.len())
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(shape, out, Op::Add { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("mul", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let ng = self.ng(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Scale { a, c }, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(T::zero())).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu_parts(x).0).collect();
        let ng = self.ng(&[a]);
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), ng)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "softmax axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        if inner == 1 {
            for (xr, yr) in x.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
                let mx = xr.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for (y, &v) in yr.iter_mut().zip(xr) {
                    *y = (v - mx).exp();
                    sum = sum + *y;
                }
                let inv = T::one() / sum;
                yr.iter_mut().for_each(|y| *y = *y * inv);
            }
            let ng = self.ng(&[a]);
            return Ok(self.push(shape, out, Op::Softmax { a, axis }, ng));
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| o * dim * inner + d * inner + i;
                let mut mx = T::neg_infinity();
                for d in 0..dim {
                    mx = mx.max(x[at(d)]);
                }
                let mut sum = T::zero();
                for d in 0..dim {
                    let e = (x[at(d)] - mx).exp();
                    out[at(d)] = e;
                    sum = sum + e;
                }
                for d in 0..dim {
                    out[at(d)] = out[at(d)] / sum;
                }
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(shape, out, Op::Softmax { a, axis }, ng))
    }

    /// Normalizes over the last axis, then applies `gamma`/`beta` (shape `[D]`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::shape("layer_norm", &shape, &[]))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let dn = T::from_usize(d).unwrap();
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.len() / d;
        let mut out = Vec::with_capacity(xv.len());
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for row in xv.chunks_exact(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out.push((row[j] - mean) * rstd * g[j] + b[j]);
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let ng = self.ng(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            ng,
        ))
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "mean axis {axis} for shape {shape:?}"
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let inv = T::one() / T::from_usize(dim).unwrap();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + x[o * dim * inner + d * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut new_shape = shape;
        new_shape.remove(axis);
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::Mean { a, axis }, ng))
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let ng = self.ng(&[a]);
        self.push(vec![], vec![s], Op::Sum(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), ng))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, d0: usize, d1: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if d0 >= shape.len() || d1 >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "transpose({d0}, {d1}) for shape {shape:?}"
            )));
        }
        let (out, out_shape) = swap_axes(self.value(a), &shape, d0, d1);
        let ng = self.ng(&[a]);
        Ok(self.push(out_shape, out, Op::Transpose { a, d0, d1 }, ng))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or(Error::Empty("concat parts"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let dim = self.shape(p)[axis];
                out.extend_from_slice(&self.value(p)[o * dim * inner..(o + 1) * dim * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = self.ng(parts);
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow(axis {axis}, {start}..{}) for shape {shape:?}",
                start + len
            )));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let x = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&x[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::Narrow { a, axis, start }, ng))
    }

    /// Mean pooling windows over the last axis.
    pub fn avg_pool_1d(&mut self, a: Var, kernel: usize, stride: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let l = *shape
            .last()
            .ok_or_else(|| Error::shape("avg_pool_1d", &shape, &[]))?;
        if kernel == 0 || stride == 0 || kernel > l {
            return Err(Error::InvalidArgument(format!(
                "avg_pool_1d kernel {kernel} stride {stride} on length {l}"
            )));
        }
        let out_len = (l - kernel) / stride + 1;
        let inv = T::one() / T::from_usize(kernel).unwrap();
        let out: Vec<T> = self
            .value(a)
            .chunks_exact(l)
            .flat_map(|row| {
                (0..out_len).map(move |j| {
                    row[j * stride..j * stride + kernel]
                        .iter()
                        .copied()
                        .sum::<T>()
                        * inv
                })
            })
            .collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = out_len;
        let ng = self.ng(&[a]);
        Ok(self.push(new_shape, out, Op::AvgPool1d { a, kernel, stride }, ng))
    }

    /// Mean over the batch of `-sum(y * log(p))`, `p` clamped to
    /// `[CLAMP_MIN_PROB, 1]`. Both inputs are `[batch, classes]` and every
    /// row of `p` must sum to 1.
    pub fn crossentropy(&mut self, p: Var, y: Var) -> Result<Var> {
        let (sp, sy) = (self.shape(p), self.shape(y));
        if sp.len() != 2 || sp != sy {
            return Err(Error::shape("crossentropy", sp, sy));
        }
        let c = sp[1];
        let batch = sp[0];
        let (pv, yv) = (self.value(p), self.value(y));
        let lo = T::lit(CLAMP_MIN_PROB);
        let mut total = T::zero();
        for (row, (pr, yr)) in pv.chunks_exact(c).zip(yv.chunks_exact(c)).enumerate() {
            let sum = pr.iter().copied().sum::<T>().to_f64().unwrap_or(f64::NAN);
            if !((sum - 1.0).abs() <= NORMALIZATION_TOL) {
                return Err(Error::NotNormalized { row, sum });
            }
            for (&pp, &yy) in pr.iter().zip(yr) {
                if yy != T::zero() {
                    total = total - yy * pp.max(lo).min(T::one()).ln();
                }
            }
        }
        let loss = total / T::from_usize(batch).unwrap();
        let ng = self.ng(&[p, y]);
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy { p, y }, ng))
    }

    // ---- backward ------------------------------------------------------

    /// Gradients of scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !root.needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Runs `f` on the gradient buffer of `v` if it participates.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n.value.len()]);
            f(buf);
        };

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, b_batched } => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = sb[sb.len() - 1];
                let batch = g.len() / (m * n);
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |ga| {
                    for i in 0..batch {
                        let boff = if b_batched { i * k * n } else { 0 };
                        // ga_i += g_i * b_i^T
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &bv[boff..boff + k * n],
                            (1, n as isize),
                            &mut ga[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..batch {
                        let boff = if b_batched { i * k * n } else { 0 };
                        // gb_i += a_i^T * g_i
                        T::gemm(
                            k,
                            m,
                            n,
                            &av[i * m * k..(i + 1) * m * k],
                            (1, k as isize),
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &mut gb[boff..boff + k * n],
                            true,
                        );
                    }
                });
            }
            &Op::Add { a, b } => {
                acc(a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y)
                });
                acc(b, &mut |gb| {
                    for chunk in g.chunks_exact(gb.len()) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x = *x + y);
                    }
                });
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * bv[i];
                    }
                });
                acc(b, &mut |gb| {
                    for i in 0..gb.len() {
                        gb[i] = gb[i] + g[i] * av[i];
                    }
                });
            }
            &Op::Scale { a, c } => {
                acc(a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y * c)
                });
            }
            &Op::Relu(a) => {
                let av = self.value(a);
                acc(a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] > T::zero() {
                            ga[i] = ga[i] + g[i];
                        }
                    }
                });
            }
            &Op::Gelu(a) => {
                let av = self.value(a);
                acc(a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * gelu_parts(av[i]).1;
                    }
                });
            }
            &Op::Softmax { a, axis } => {
                let y = &node.value;
                let (outer, dim, inner) = split_axis(&node.shape, axis);
                acc(a, &mut |ga| {
                    if inner == 1 {
                        for ((gar, yr), gr) in ga
                            .chunks_exact_mut(dim)
                            .zip(y.chunks_exact(dim))
                            .zip(g.chunks_exact(dim))
                        {
                            let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>();
                            for ((o, &p), &q) in gar.iter_mut().zip(yr).zip(gr) {
                                *o = *o + p * (q - dot);
                            }
                        }
                        return;
                    }
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |d: usize| o * dim * inner + d * inner + i;
                            let dot = (0..dim).map(|d| g[at(d)] * y[at(d)]).sum::<T>();
                            for d in 0..dim {
                                ga[at(d)] = ga[at(d)] + y[at(d)] * (g[at(d)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let d = *node.shape.last().unwrap();
                let dn = T::from_usize(d).unwrap();
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                acc(*x, &mut |gx| {
                    for (r, (xr, gr)) in xv.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                        let (mu, rs) = (mean[r], rstd[r]);
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dxhat = gr[j] * gv[j];
                            s1 = s1 + dxhat;
                            s2 = s2 + dxhat * (xr[j] - mu) * rs;
                        }
                        let (m1, m2) = (s1 / dn, s2 / dn);
                        for j in 0..d {
                            let xhat = (xr[j] - mu) * rs;
                            let dxhat = gr[j] * gv[j];
                            let o = r * d + j;
                            gx[o] = gx[o] + rs * (dxhat - m1 - xhat * m2);
                        }
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (r, (xr, gr)) in xv.chunks_exact(d).zip(g.chunks_exact(d)).enumerate() {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * (xr[j] - mean[r]) * rstd[r];
                        }
                    }
                });
                acc(*beta, &mut |gb| {
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(x, &y)| *x = *x + y);
                    }
                });
            }
            &Op::Mean { a, axis } => {
                let (outer, dim, inner) = split_axis(self.shape(a), axis);
                let inv = T::one() / T::from_usize(dim).unwrap();
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        for d in 0..dim {
                            for i in 0..inner {
                                let t = o * dim * inner + d * inner + i;
                                ga[t] = ga[t] + g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                acc(a, &mut |ga| ga.iter_mut().for_each(|x| *x = *x + g[0]));
            }
            &Op::Reshape(a) => {
                acc(a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y)
                });
            }
            &Op::Transpose { a, d0, d1 } => {
                let (back, _) = swap_axes(g, &node.shape, d0, d1);
                acc(a, &mut |ga| {
                    ga.iter_mut().zip(&back).for_each(|(x, &y)| *x = *x + y)
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let dim = self.shape(p)[*axis];
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset * inner..][..dim * inner];
                            let dst = &mut gp[o * dim * inner..(o + 1) * dim * inner];
                            dst.iter_mut().zip(src).for_each(|(x, &y)| *x = *x + y);
                        }
                    });
                    offset += dim;
                }
            }
            &Op::Narrow { a, axis, start } => {
                let (outer, dim, inner) = split_axis(self.shape(a), axis);
                let len = node.shape[axis];
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        let dst = &mut ga[o * dim * inner + start * inner..][..len * inner];
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(x, &y)| *x = *x + y);
                    }
                });
            }
            &Op::AvgPool1d { a, kernel, stride } => {
                let l = *self.shape(a).last().unwrap();
                let out_len = *node.shape.last().unwrap();
                let inv = T::one() / T::from_usize(kernel).unwrap();
                acc(a, &mut |ga| {
                    for (row, grow) in ga.chunks_exact_mut(l).zip(g.chunks_exact(out_len)) {
                        for (j, &gj) in grow.iter().enumerate() {
                            for v in &mut row[j * stride..j * stride + kernel] {
                                *v = *v + gj * inv;
                            }
                        }
                    }
                });
            }
            &Op::CrossEntropy { p, y } => {
                let batch = self.shape(p)[0];
                let scale = g[0] / T::from_usize(batch).unwrap();
                let (pv, yv) = (self.value(p), self.value(y));
                let lo = T::lit(CLAMP_MIN_PROB);
                acc(p, &mut |gp| {
                    for i in 0..gp.len() {
                        if yv[i] != T::zero() && pv[i] >= lo {
                            gp[i] = gp[i] - scale * yv[i] / pv[i];
                        }
                    }
                });
                acc(y, &mut |gy| {
                    for i in 0..gy.len() {
                        gy[i] = gy[i] - scale * pv[i].max(lo).min(T::one()).ln();
                    }
                });
            }
        }
    }

    /// Adds the gradient of every parameter bound on this tape into the
    /// matching tensor of `model`.
    pub fn accumulate_grads<M: Parameterized<T> + ?Sized>(
        &self,
        grads: &Gradients<T>,
        model: &mut M,
    ) -> Result<()> {
        let mut result = Ok(());
        model.visit_mut(&mut |p| {
            if result.is_err() || !p.tensor.requires_grad() {
                return;
            }
            if let Some(g) = self.param_var(&p.name).and_then(|v| grads.get(v)) {
                result = p.tensor.accumulate_grad(g);
            }
        });
        result
    }
}
