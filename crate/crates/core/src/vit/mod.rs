//! Pre-norm vision transformer encoder producing one class-token feature
//! per image, with optional capture of attention probabilities.

mod rollout;

pub use rollout::{attention_rollout, Heatmap};

use rand::Rng;

use crate::nn::{Param, Parameterized, Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_planes: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

impl Default for VitConfig {
    /// Desk-scale encoder: 32-pixel inputs cut into 8-pixel patches.
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            in_planes: 3,
            embed_dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4.0,
        }
    }
}

impl VitConfig {
    /// ViT-L/16 geometry (D=1024, 24 layers, 16 heads).
    pub fn large() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 1024,
            depth: 24,
            heads: 16,
            ..Self::default()
        }
    }

    /// Tiny encoder for gradient checks and fast tests.
    pub fn toy() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            in_planes: 3,
            embed_dim: 16,
            depth: 1,
            heads: 2,
            mlp_ratio: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.in_planes != 3 {
            return fail(format!("in_planes must be 3, got {}", self.in_planes));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail(format!("mlp_ratio {} gives an empty MLP", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.in_planes * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Closed-form parameter count of [`VitParams`].
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let h = self.mlp_hidden();
        let block = 2 * d + 4 * (d * d + d) + 2 * d + (d * h + h) + (h * d + d);
        self.patch_dim() * d + d + d + self.tokens() * d + self.depth * block + 2 * d
    }
}

#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
}

impl<T: Real> LayerNorm<T> {
    fn new(name: &str, dim: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        tape.layer_norm(x, g, b)
    }
}

#[derive(Clone, Debug)]
struct Block<T: Real> {
    ln1: LayerNorm<T>,
    q: Linear<T>,
    k: Linear<T>,
    v: Linear<T>,
    proj: Linear<T>,
    ln2: LayerNorm<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Real> Block<T> {
    fn new<R: Rng>(name: &str, cfg: &VitConfig, rng: &mut R) -> Self {
        let d = cfg.embed_dim;
        let h = cfg.mlp_hidden();
        Self {
            ln1: LayerNorm::new(&format!("{name}.ln1"), d),
            q: Linear::new(&format!("{name}.attn.q"), d, d, rng),
            k: Linear::new(&format!("{name}.attn.k"), d, d, rng),
            v: Linear::new(&format!("{name}.attn.v"), d, d, rng),
            proj: Linear::new(&format!("{name}.attn.proj"), d, d, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), d),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), d, h, rng),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), h, d, rng),
        }
    }

    /// `x: [batch, tokens, D]`. Returns the new residual stream and the
    /// attention probabilities `[batch, heads, tokens, tokens]`.
    fn forward(&self, tape: &mut Tape<T>, x: Var, cfg: &VitConfig) -> Result<(Var, Var)> {
        let (b, t) = (tape.shape(x)[0], tape.shape(x)[1]);
        let (h, dh) = (cfg.heads, cfg.head_dim());
        let n = self.ln1.forward(tape, x)?;
        let split = |lin: &Linear<T>, tape: &mut Tape<T>| -> Result<Var> {
            let y = lin.forward(tape, n)?;
            let y = tape.reshape(y, &[b, t, h, dh])?;
            tape.transpose(y, 1, 2)
        };
        let q = split(&self.q, tape)?;
        let k = split(&self.k, tape)?;
        let v = split(&self.v, tape)?;
        let kt = tape.transpose(k, 2, 3)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, T::one() / T::from_usize(dh).unwrap().sqrt());
        let attn = tape.softmax(scores, 3)?;
        let ctx = tape.matmul(attn, v)?;
        let ctx = tape.transpose(ctx, 1, 2)?;
        let ctx = tape.reshape(ctx, &[b, t, h * dh])?;
        let out = self.proj.forward(tape, ctx)?;
        let x = tape.add(x, out)?;

        let n = self.ln2.forward(tape, x)?;
        let m = self.fc1.forward(tape, n)?;
        let m = tape.gelu(m);
        let m = self.fc2.forward(tape, m)?;
        Ok((tape.add(x, m)?, attn))
    }

    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.ln1.gamma);
        f(&self.ln1.beta);
        for l in [&self.q, &self.k, &self.v, &self.proj] {
            l.visit(f);
        }
        f(&self.ln2.gamma);
        f(&self.ln2.beta);
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.ln1.gamma);
        f(&mut self.ln1.beta);
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.proj] {
            l.visit_mut(f);
        }
        f(&mut self.ln2.gamma);
        f(&mut self.ln2.beta);
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Attention probabilities of one forward pass, `[layers, heads, tokens, tokens]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub layers: usize,
    pub heads: usize,
    pub tokens: usize,
    pub data: Vec<f64>,
}

impl AttentionRecord {
    pub fn layer(&self, l: usize) -> &[f64] {
        let n = self.heads * self.tokens * self.tokens;
        &self.data[l * n..(l + 1) * n]
    }

    /// Largest deviation of any attention row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        self.data
            .chunks_exact(self.tokens)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Output of [`VitParams::forward`].
#[derive(Debug)]
pub struct VitOutput {
    /// Class-token feature, shape `[D]`.
    pub feature: Var,
    pub attention: Option<AttentionRecord>,
}

/// Cuts `[planes, H, W]` into row-major patches, each flattened as
/// `(plane, dy, dx)`. Returns `[num_patches * patch_dim]`.
pub fn patchify<T: Real>(planes: &[T], cfg: &VitConfig) -> Result<Vec<T>> {
    let (s, p, c) = (cfg.image_size, cfg.patch_size, cfg.in_planes);
    if planes.len() != c * s * s {
        return Err(Error::shape("patchify", &[c, s, s], &[planes.len()]));
    }
    let g = cfg.grid();
    let mut out = Vec::with_capacity(planes.len());
    for py in 0..g {
        for px in 0..g {
            for ch in 0..c {
                for dy in 0..p {
                    let row = ch * s * s + (py * p + dy) * s + px * p;
                    out.extend_from_slice(&planes[row..row + p]);
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of one encoder branch.
#[derive(Clone, Debug)]
pub struct VitParams<T: Real = f32> {
    config: VitConfig,
    pub patch: Linear<T>,
    pub cls: Param<T>,
    pub pos: Param<T>,
    blocks: Vec<Block<T>>,
    pub norm: LayerNorm<T>,
}

impl<T: Real> VitParams<T> {
    /// Xavier-uniform projections, N(0, 0.02) class token and positions,
    /// unit layer norms. Parameter names are prefixed with `name`.
    pub fn new<R: Rng>(config: &VitConfig, name: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let patch = Linear::new(&format!("{name}.patch"), config.patch_dim(), d, rng);
        let cls = Param::new(format!("{name}.cls"), Tensor::normal(&[1, d], 0.02, rng));
        let pos = Param::new(
            format!("{name}.pos"),
            Tensor::normal(&[config.tokens(), d], 0.02, rng),
        );
        let blocks = (0..config.depth)
            .map(|i| Block::new(&format!("{name}.blocks.{i}"), config, rng))
            .collect();
        Ok(Self {
            config: config.clone(),
            patch,
            cls,
            pos,
            blocks,
            norm: LayerNorm::new(&format!("{name}.norm"), d),
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    /// Patch tokens before the class token and positions, `[num_patches, D]`.
    pub fn patch_embed(&self, tape: &mut Tape<T>, planes: &[T]) -> Result<Var> {
        let patches = patchify(planes, &self.config)?;
        let x = tape.constant(
            &[self.config.num_patches(), self.config.patch_dim()],
            patches,
        )?;
        self.patch.forward(tape, x)
    }

    /// Encodes `[3, S, S]` planes (plane-major) into a `[D]` feature.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        planes: &[T],
        record_attention: bool,
    ) -> Result<VitOutput> {
        let (features, attn_vars) = self.encode(tape, &[planes])?;
        let feature = tape.reshape(features, &[self.config.embed_dim])?;
        let cfg = &self.config;
        let attention = record_attention.then(|| AttentionRecord {
            layers: attn_vars.len(),
            heads: cfg.heads,
            tokens: cfg.tokens(),
            data: attn_vars
                .iter()
                .flat_map(|&a| tape.value(a).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        });
        Ok(VitOutput { feature, attention })
    }

    /// Encodes a batch of images into `[batch, D]` features.
    pub fn forward_batch(&self, tape: &mut Tape<T>, images: &[&[T]]) -> Result<Var> {
        Ok(self.encode(tape, images)?.0)
    }

    fn encode(&self, tape: &mut Tape<T>, images: &[&[T]]) -> Result<(Var, Vec<Var>)> {
        let cfg = &self.config;
        if images.is_empty() {
            return Err(Error::Empty("image batch"));
        }
        let (b, d) = (images.len(), cfg.embed_dim);
        let mut patches = Vec::with_capacity(b * cfg.num_patches() * cfg.patch_dim());
        for planes in images {
            patches.extend(patchify(planes, cfg)?);
        }
        let x = tape.constant(&[b, cfg.num_patches(), cfg.patch_dim()], patches)?;
        let tokens = self.patch.forward(tape, x)?;
        let cls = tape.param(&self.cls);
        let zeros = tape.constant(&[b, 1, d], vec![T::zero(); b * d])?;
        let cls = tape.add(zeros, cls)?;
        let x = tape.concat(&[cls, tokens], 1)?;
        let pos = tape.param(&self.pos);
        let mut x = tape.add(x, pos)?;
        let mut attn_vars = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (nx, attn) = block.forward(tape, x, cfg)?;
            x = nx;
            attn_vars.push(attn);
        }
        let x = self.norm.forward(tape, x)?;
        let first = tape.narrow(x, 1, 0, 1)?;
        Ok((tape.reshape(first, &[b, d])?, attn_vars))
    }

    /// Forward on a scratch tape, returning the feature values.
    pub fn features(&self, planes: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, planes, false)?;
        Ok(tape.value(out.feature).to_vec())
    }

    pub fn cast<U: Real>(&self) -> VitParams<U> {
        let mut out = VitParams::<U> {
            config: self.config.clone(),
            patch: cast_linear(&self.patch),
            cls: cast_param(&self.cls),
            pos: cast_param(&self.pos),
            blocks: Vec::new(),
            norm: cast_ln(&self.norm),
        };
        out.blocks = self
            .blocks
            .iter()
            .map(|b| Block {
                ln1: cast_ln(&b.ln1),
                q: cast_linear(&b.q),
                k: cast_linear(&b.k),
                v: cast_linear(&b.v),
                proj: cast_linear(&b.proj),
                ln2: cast_ln(&b.ln2),
                fc1: cast_linear(&b.fc1),
                fc2: cast_linear(&b.fc2),
            })
            .collect();
        out
    }
}

pub(crate) fn cast_param<T: Real, U: Real>(p: &Param<T>) -> Param<U> {
    Param {
        name: p.name.clone(),
        tensor: p.tensor.cast(),
    }
}

pub(crate) fn cast_linear<T: Real, U: Real>(l: &Linear<T>) -> Linear<U> {
    Linear {
        weight: cast_param(&l.weight),
        bias: cast_param(&l.bias),
    }
}

fn cast_ln<T: Real, U: Real>(l: &LayerNorm<T>) -> LayerNorm<U> {
    LayerNorm {
        gamma: cast_param(&l.gamma),
        beta: cast_param(&l.beta),
    }
}

impl<T: Real> Parameterized<T> for VitParams<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.patch.visit(f);
        f(&self.cls);
        f(&self.pos);
        for b in &self.blocks {
            b.visit(f);
        }
        f(&self.norm.gamma);
        f(&self.norm.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.patch.visit_mut(f);
        f(&mut self.cls);
        f(&mut self.pos);
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f(&mut self.norm.gamma);
        f(&mut self.norm.beta);
    }
}

impl<T: Real> Parameterized<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        Linear::visit(self, f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        Linear::visit_mut(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> VitParams<f64> {
        VitParams::new(&VitConfig::toy(), "t", &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn random_planes(cfg: &VitConfig, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..3 * cfg.image_size * cfg.image_size)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect()
    }

    #[test]
    fn toy_geometry() {
        let cfg = VitConfig::toy();
        assert_eq!(cfg.tokens(), 17);
        let vit = toy();
        let mut tape = Tape::new();
        let out = vit
            .forward(&mut tape, &random_planes(&cfg, 1), true)
            .unwrap();
        assert_eq!(tape.shape(out.feature), &[16]);
        let rec = out.attention.unwrap();
        assert_eq!((rec.layers, rec.heads, rec.tokens), (1, 2, 17));
        assert!(rec.max_row_sum_error() < 1e-5);
    }

    #[test]
    fn token_counts() {
        assert_eq!(VitConfig::default().tokens(), 17);
        assert_eq!(VitConfig::large().tokens(), 197);
    }

    #[test]
    fn closed_form_param_count() {
        for cfg in [
            VitConfig::toy(),
            VitConfig {
                depth: 2,
                mlp_ratio: 0.5,
                ..VitConfig::toy()
            },
        ] {
            let vit = VitParams::<f32>::new(&cfg, "x", &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            assert_eq!(vit.param_count(), cfg.param_count());
        }
    }

    #[test]
    fn config_validation() {
        assert!(VitConfig {
            heads: 3,
            ..VitConfig::toy()
        }
        .validate()
        .is_err());
        assert!(VitConfig {
            image_size: 30,
            ..VitConfig::toy()
        }
        .validate()
        .is_err());
        assert!(VitConfig {
            depth: 0,
            ..VitConfig::toy()
        }
        .validate()
        .is_err());
        assert!(VitConfig::default().validate().is_ok());
    }

    #[test]
    fn input_shape_is_checked() {
        let vit = toy();
        let mut tape = Tape::new();
        assert!(vit.forward(&mut tape, &[0.0; 10], false).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = VitConfig::toy();
        let planes = random_planes(&cfg, 9);
        let a = toy().features(&planes).unwrap();
        let b = toy().features(&planes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn swapping_patches_swaps_only_their_embeddings() {
        let cfg = VitConfig::toy();
        let vit = toy();
        let planes = random_planes(&cfg, 5);
        let (s, p) = (cfg.image_size, cfg.patch_size);
        // swap patch (0,1) with patch (2,3)
        let mut swapped = planes.clone();
        for c in 0..3 {
            for dy in 0..p {
                for dx in 0..p {
                    let a = c * s * s + dy * s + p + dx;
                    let b = c * s * s + (2 * p + dy) * s + 3 * p + dx;
                    swapped.swap(a, b);
                }
            }
        }
        let mut tape = Tape::new();
        let e0 = vit.patch_embed(&mut tape, &planes).unwrap();
        let e1 = vit.patch_embed(&mut tape, &swapped).unwrap();
        let d = cfg.embed_dim;
        let row = |v: Var, i: usize| tape.value(v)[i * d..(i + 1) * d].to_vec();
        let (pa, pb) = (1, 2 * cfg.grid() + 3);
        for i in 0..cfg.num_patches() {
            let want = if i == pa {
                row(e0, pb)
            } else if i == pb {
                row(e0, pa)
            } else {
                row(e0, i)
            };
            assert_eq!(row(e1, i), want, "token {i}");
        }
        assert_ne!(row(e0, pa), row(e0, pb));
    }
}
