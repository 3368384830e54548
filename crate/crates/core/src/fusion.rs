//! The two-branch classifier: an RGB encoder whose feature is average
//! pooled, an encoder over chroma-enriched YCbCr, concatenation, and a
//! dense ReLU layer followed by a 3-way softmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rayon::prelude::*;

use crate::imaging::{
    enrich, resize_bilinear, rgb_to_ycbcr, ChromaSubsampling, ImageU8, JpegSimConfig,
};
use crate::kv::KvMap;
use crate::nn::{Param, Parameterized, Real, Tape, Var};
use crate::vit::{cast_linear, AttentionRecord, Linear, VitConfig, VitParams};
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Images per encoder pass in [`FusionModel::features_many`].
pub const FEATURE_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BackboneMode {
    /// Only the head is trained; both encoders keep their initial weights.
    #[default]
    Frozen,
    EndToEnd,
}

impl std::str::FromStr for BackboneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "end_to_end" | "end-to-end" => Ok(Self::EndToEnd),
            _ => Err(Error::Config(format!("unknown backbone mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for BackboneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::EndToEnd => "end_to_end",
        })
    }
}

/// Which features reach the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    /// Pooled RGB feature concatenated with the enriched-YCbCr feature.
    #[default]
    Fused,
    /// Ablation: the unpooled RGB feature alone.
    RgbOnly,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Self::Fused),
            "rgb_only" | "rgb-only" => Ok(Self::RgbOnly),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fused => "fused",
            Self::RgbOnly => "rgb_only",
        })
    }
}

/// Per-plane `(x - mean) / std` applied after scaling samples to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub rgb_mean: [f32; 3],
    pub rgb_std: [f32; 3],
    pub ycbcr_mean: [f32; 3],
    pub ycbcr_std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            rgb_mean: [0.5; 3],
            rgb_std: [0.5; 3],
            ycbcr_mean: [0.5; 3],
            ycbcr_std: [0.5; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub vit: VitConfig,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub hidden: usize,
    pub classes: usize,
    pub enrichment: JpegSimConfig,
    pub normalization: Normalization,
    pub variant: Variant,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            vit: VitConfig::default(),
            pool_kernel: 16,
            pool_stride: 16,
            hidden: 512,
            classes: NUM_CLASSES,
            enrichment: JpegSimConfig::default(),
            normalization: Normalization::default(),
            variant: Variant::Fused,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "image_size",
    "patch_size",
    "embed_dim",
    "depth",
    "heads",
    "mlp_ratio",
    "pool_kernel",
    "pool_stride",
    "hidden",
    "classes",
    "enrich_quality",
    "enrich_subsampling",
    "variant",
];

impl FusionConfig {
    /// ViT-L/16 branches with the 16/16 pool and 512-unit head.
    pub fn large() -> Self {
        Self {
            vit: VitConfig::large(),
            ..Self::default()
        }
    }

    pub fn toy() -> Self {
        Self {
            vit: VitConfig::toy(),
            pool_kernel: 4,
            pool_stride: 4,
            hidden: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vit.validate()?;
        let d = self.vit.embed_dim;
        if self.classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "classes must be {NUM_CLASSES}, got {}",
                self.classes
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if self.pool_kernel == 0 || self.pool_stride == 0 || self.pool_kernel > d {
            return Err(Error::Config(format!(
                "pool kernel {} / stride {} invalid for embed_dim {d}",
                self.pool_kernel, self.pool_stride
            )));
        }
        if self.pool_stride == self.pool_kernel && d % self.pool_kernel != 0 {
            return Err(Error::Config(format!(
                "embed_dim {d} not divisible by pool_kernel {}",
                self.pool_kernel
            )));
        }
        if self.vit.image_size % self.enrichment.alignment() != 0 {
            return Err(Error::Config(format!(
                "image_size {} not a multiple of the {} enrichment block",
                self.vit.image_size,
                self.enrichment.alignment()
            )));
        }
        Ok(())
    }

    pub fn pooled_width(&self) -> usize {
        (self.vit.embed_dim - self.pool_kernel) / self.pool_stride + 1
    }

    /// Width of the vector entering the dense head.
    pub fn head_input_width(&self) -> usize {
        match self.variant {
            Variant::Fused => self.pooled_width() + self.vit.embed_dim,
            Variant::RgbOnly => self.vit.embed_dim,
        }
    }

    pub fn head_param_count(&self) -> usize {
        let w = self.head_input_width();
        w * self.hidden + self.hidden + self.hidden * self.classes + self.classes
    }

    pub fn branch_count(&self) -> usize {
        match self.variant {
            Variant::Fused => 2,
            Variant::RgbOnly => 1,
        }
    }

    /// Parameters updated by training in `mode`.
    pub fn trainable_param_count(&self, mode: BackboneMode) -> usize {
        match mode {
            BackboneMode::Frozen => self.head_param_count(),
            BackboneMode::EndToEnd => {
                self.head_param_count() + self.branch_count() * self.vit.param_count()
            }
        }
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("image_size", self.vit.image_size);
        kv.set("patch_size", self.vit.patch_size);
        kv.set("embed_dim", self.vit.embed_dim);
        kv.set("depth", self.vit.depth);
        kv.set("heads", self.vit.heads);
        kv.set("mlp_ratio", self.vit.mlp_ratio);
        kv.set("pool_kernel", self.pool_kernel);
        kv.set("pool_stride", self.pool_stride);
        kv.set("hidden", self.hidden);
        kv.set("classes", self.classes);
        kv.set("enrich_quality", self.enrichment.quality());
        kv.set("enrich_subsampling", self.enrichment.chroma_subsampling);
        kv.set("variant", self.variant);
        kv
    }

    /// Reads the keys written by [`FusionConfig::to_kv`]; absent keys keep
    /// their defaults and unknown keys are rejected.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(CONFIG_KEYS)?;
        let mut c = Self::default();
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parse_opt($key)? {
                    $field = v;
                }
            };
        }
        take!("image_size", c.vit.image_size);
        take!("patch_size", c.vit.patch_size);
        take!("embed_dim", c.vit.embed_dim);
        take!("depth", c.vit.depth);
        take!("heads", c.vit.heads);
        take!("mlp_ratio", c.vit.mlp_ratio);
        take!("pool_kernel", c.pool_kernel);
        take!("pool_stride", c.pool_stride);
        take!("hidden", c.hidden);
        take!("classes", c.classes);
        take!("variant", c.variant);
        let q: u8 = kv
            .parse_opt("enrich_quality")?
            .unwrap_or(c.enrichment.quality());
        let sub: ChromaSubsampling = kv
            .parse_opt("enrich_subsampling")?
            .unwrap_or(c.enrichment.chroma_subsampling);
        c.enrichment = JpegSimConfig::new(q, sub)?;
        c.validate()?;
        Ok(c)
    }
}

/// Normalized branch inputs, each `[3, S, S]` plane-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub rgb: Vec<f32>,
    pub enriched: Vec<f32>,
}

/// Resizes to the encoder geometry and builds both branch inputs.
pub fn preprocess(img: &ImageU8, cfg: &FusionConfig) -> Result<Preprocessed> {
    let s = cfg.vit.image_size;
    let img = resize_bilinear(img, s, s)?;
    let norm = &cfg.normalization;
    let n = s * s;
    let mut rgb = vec![0.0f32; 3 * n];
    for (i, px) in img.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            rgb[c * n + i] = (px[c] as f32 / 255.0 - norm.rgb_mean[c]) / norm.rgb_std[c];
        }
    }
    let enriched_planes = enrich(&rgb_to_ycbcr(&img), &cfg.enrichment)?;
    let mut enriched = Vec::with_capacity(3 * n);
    for (c, plane) in enriched_planes.planes().iter().enumerate() {
        enriched.extend(
            plane
                .iter()
                .map(|&v| (v / 255.0 - norm.ycbcr_mean[c]) / norm.ycbcr_std[c]),
        );
    }
    Ok(Preprocessed { rgb, enriched })
}

/// Dense ReLU layer and the 3-way output layer.
#[derive(Clone, Debug)]
pub struct Head<T: Real = f32> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Head<T> {
    pub fn new<R: rand::Rng>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new("head.fc1", input, hidden, rng),
            fc2: Linear::new("head.fc2", hidden, classes, rng),
        }
    }

    /// `z: [batch, width]` to `(logits, probabilities)`, both `[batch, 3]`.
    pub fn forward(&self, tape: &mut Tape<T>, z: Var) -> Result<(Var, Var)> {
        let h = self.fc1.forward(tape, z)?;
        let h = tape.relu(h);
        let logits = self.fc2.forward(tape, h)?;
        let probs = tape.softmax(logits, 1)?;
        Ok((logits, probs))
    }
}

impl<T: Real> Parameterized<T> for Head<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Output of [`FusionModel::forward`] for one batch.
#[derive(Debug)]
pub struct FusedOutput {
    /// Concatenated head input, `[batch, head_input_width]`.
    pub z: Var,
    pub logits: Var,
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct FusionModel<T: Real = f32> {
    config: FusionConfig,
    mode: BackboneMode,
    pub rgb: VitParams<T>,
    /// Absent for the RGB-only ablation.
    pub ycbcr: Option<VitParams<T>>,
    pub head: Head<T>,
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl<T: Real> FusionModel<T> {
    /// Initializes every parameter from `seed`. The RGB encoder, YCbCr
    /// encoder and head draw from separate streams, so the RGB encoder of a
    /// fused model and of its RGB-only ablation are identical for one seed.
    pub fn new(config: &FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rgb = VitParams::new(&config.vit, "rgb", &mut seeded(seed, 1))?;
        let ycbcr = match config.variant {
            Variant::Fused => Some(VitParams::new(&config.vit, "ycbcr", &mut seeded(seed, 2))?),
            Variant::RgbOnly => None,
        };
        let head = Head::new(
            config.head_input_width(),
            config.hidden,
            config.classes,
            &mut seeded(seed, 3),
        );
        let mut model = Self {
            config: config.clone(),
            mode: BackboneMode::Frozen,
            rgb,
            ycbcr,
            head,
        };
        model.apply_backbone_mode();
        Ok(model)
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn backbone_mode(&self) -> BackboneMode {
        self.mode
    }

    /// Marks the encoders trainable or frozen. New models start frozen.
    pub fn set_backbone_mode(&mut self, mode: BackboneMode) {
        self.mode = mode;
        self.apply_backbone_mode();
    }

    fn apply_backbone_mode(&mut self) {
        let on = self.mode == BackboneMode::EndToEnd;
        self.rgb.set_trainable(on);
        if let Some(y) = &mut self.ycbcr {
            y.set_trainable(on);
        }
        self.head.set_trainable(true);
    }

    /// Head input for one image, `[head_input_width]`.
    pub fn head_input(
        &self,
        tape: &mut Tape<T>,
        input: &Preprocessed,
        record: bool,
    ) -> Result<(Var, Vec<AttentionRecord>)> {
        let cast = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from(x).unwrap()).collect() };
        let mut records = Vec::new();
        let rgb = self.rgb.forward(tape, &cast(&input.rgb), record)?;
        records.extend(rgb.attention);
        let z = match &self.ycbcr {
            None => rgb.feature,
            Some(ycbcr) => {
                let pooled = tape.avg_pool_1d(
                    rgb.feature,
                    self.config.pool_kernel,
                    self.config.pool_stride,
                )?;
                let y = ycbcr.forward(tape, &cast(&input.enriched), record)?;
                records.extend(y.attention);
                tape.concat(&[pooled, y.feature], 0)?
            }
        };
        Ok((z, records))
    }

    /// Head inputs for a batch, `[batch, head_input_width]`.
    pub fn head_input_batch(&self, tape: &mut Tape<T>, batch: &[&Preprocessed]) -> Result<Var> {
        let cast = |v: &[f32]| -> Vec<T> { v.iter().map(|&x| T::from(x).unwrap()).collect() };
        let rgb: Vec<Vec<T>> = batch.iter().map(|p| cast(&p.rgb)).collect();
        let rgb_refs: Vec<&[T]> = rgb.iter().map(Vec::as_slice).collect();
        let rgb = self.rgb.forward_batch(tape, &rgb_refs)?;
        match &self.ycbcr {
            None => Ok(rgb),
            Some(ycbcr) => {
                let pooled =
                    tape.avg_pool_1d(rgb, self.config.pool_kernel, self.config.pool_stride)?;
                let enriched: Vec<Vec<T>> = batch.iter().map(|p| cast(&p.enriched)).collect();
                let refs: Vec<&[T]> = enriched.iter().map(Vec::as_slice).collect();
                let y = ycbcr.forward_batch(tape, &refs)?;
                tape.concat(&[pooled, y], 1)
            }
        }
    }

    /// Full forward over a batch.
    pub fn forward(&self, tape: &mut Tape<T>, batch: &[&Preprocessed]) -> Result<FusedOutput> {
        let z = self.head_input_batch(tape, batch)?;
        let (logits, probs) = self.head.forward(tape, z)?;
        Ok(FusedOutput { z, logits, probs })
    }

    /// Head input values for one image, computed on a scratch tape.
    pub fn features(&self, input: &Preprocessed) -> Result<Vec<T>> {
        Ok(self.features_batch(&[input])?.pop().expect("one row"))
    }

    /// Head input values for a batch, one row per input.
    pub fn features_batch(&self, inputs: &[&Preprocessed]) -> Result<Vec<Vec<T>>> {
        let mut tape = Tape::new();
        let z = self.head_input_batch(&mut tape, inputs)?;
        let w = self.config.head_input_width();
        Ok(tape.value(z).chunks_exact(w).map(<[T]>::to_vec).collect())
    }

    /// Head inputs for many images: fixed-size batches evaluated in
    /// parallel, results in input order. Batch boundaries do not depend on
    /// the thread count.
    pub fn features_many(&self, inputs: &[Preprocessed]) -> Result<Vec<Vec<T>>> {
        let batches: Vec<Vec<Vec<T>>> = inputs
            .par_chunks(FEATURE_BATCH)
            .map(|chunk| self.features_batch(&chunk.iter().collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(batches.into_iter().flatten().collect())
    }

    /// Class probabilities from precomputed head inputs, one row per item.
    pub fn head_probabilities(&self, z: &[Vec<T>]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        if z.is_empty() {
            return Ok(Vec::new());
        }
        let w = self.config.head_input_width();
        let mut tape = Tape::new();
        let flat: Vec<T> = z.iter().flatten().copied().collect();
        let zv = tape.constant(&[z.len(), w], flat)?;
        let (_, probs) = self.head.forward(&mut tape, zv)?;
        Ok(tape
            .value(probs)
            .chunks_exact(NUM_CLASSES)
            .map(|r| std::array::from_fn(|c| r[c].to_f64().unwrap_or(f64::NAN)))
            .collect())
    }

    pub fn probabilities(&self, input: &Preprocessed) -> Result<[f64; NUM_CLASSES]> {
        let z = self.features(input)?;
        Ok(self.head_probabilities(&[z])?[0])
    }

    /// Attention of each encoder (RGB first) for one image.
    pub fn attention(&self, input: &Preprocessed) -> Result<Vec<AttentionRecord>> {
        let mut tape = Tape::new();
        Ok(self.head_input(&mut tape, input, true)?.1)
    }

    pub fn predict(&self, img: &ImageU8) -> Result<usize> {
        let input = preprocess(img, &self.config)?;
        Ok(argmax(&self.probabilities(&input)?))
    }

    pub fn cast<U: Real>(&self) -> FusionModel<U> {
        let mut out = FusionModel {
            config: self.config.clone(),
            mode: self.mode,
            rgb: self.rgb.cast(),
            ycbcr: self.ycbcr.as_ref().map(VitParams::cast),
            head: Head {
                fc1: cast_linear(&self.head.fc1),
                fc2: cast_linear(&self.head.fc2),
            },
        };
        out.apply_backbone_mode();
        out
    }
}

impl<T: Real> Parameterized<T> for FusionModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.rgb.visit(f);
        if let Some(y) = &self.ycbcr {
            y.visit(f);
        }
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.rgb.visit_mut(f);
        if let Some(y) = &mut self.ycbcr {
            y.visit_mut(f);
        }
        self.head.visit_mut(f);
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(seed: u64, size: usize) -> ImageU8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageU8::new(
            size,
            size,
            (0..size * size * 3).map(|_| rng.random()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn paper_scale_arithmetic() {
        let cfg = FusionConfig::large();
        assert_eq!(cfg.pooled_width(), 64);
        assert_eq!(cfg.head_input_width(), 1088);
        assert_eq!(cfg.head_param_count(), 559_107);
        assert_eq!(cfg.trainable_param_count(BackboneMode::Frozen), 559_107);
        let head = Head::<f32>::new(1088, 512, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(head.param_count(), 559_107);
    }

    #[test]
    fn head_width_across_configs() {
        for d in [16usize, 32, 64, 128, 256, 1024] {
            let cfg = FusionConfig {
                vit: VitConfig {
                    embed_dim: d,
                    heads: 4,
                    ..VitConfig::default()
                },
                ..FusionConfig::default()
            };
            assert_eq!(cfg.head_input_width(), d / 16 + d);
        }
    }

    #[test]
    fn frozen_trainable_count_matches_model() {
        let cfg = FusionConfig::toy();
        let model = FusionModel::<f32>::new(&cfg, 1).unwrap();
        assert_eq!(model.trainable_param_count(), cfg.head_param_count());
        let mut e2e = model.clone();
        e2e.set_backbone_mode(BackboneMode::EndToEnd);
        assert_eq!(e2e.trainable_param_count(), e2e.param_count());
        assert_eq!(
            e2e.param_count(),
            cfg.trainable_param_count(BackboneMode::EndToEnd)
        );
    }

    #[test]
    fn pool_divisibility_is_enforced() {
        let cfg = FusionConfig {
            pool_kernel: 5,
            pool_stride: 5,
            ..FusionConfig::toy()
        };
        assert!(cfg.validate().is_err());
        assert!(FusionConfig {
            classes: 4,
            ..FusionConfig::toy()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = FusionConfig {
            variant: Variant::RgbOnly,
            enrichment: JpegSimConfig::new(75, ChromaSubsampling::Yuv444).unwrap(),
            ..FusionConfig::toy()
        };
        assert_eq!(FusionConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let mut kv = cfg.to_kv();
        kv.set("bogus", 1);
        assert!(FusionConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn constant_gray_preprocesses_to_constant() {
        let cfg = FusionConfig::toy();
        let p = preprocess(&ImageU8::filled(32, 32, [128, 128, 128]).unwrap(), &cfg).unwrap();
        let want = (128.0f32 / 255.0 - 0.5) / 0.5;
        assert!(p.enriched.iter().all(|&v| (v - want).abs() < 1e-5));
        assert!((want - 0.0039).abs() < 1e-4);
    }

    #[test]
    fn rgb_branch_is_in_unit_range() {
        let cfg = FusionConfig::toy();
        let p = preprocess(&random_image(4, 48), &cfg).unwrap();
        assert_eq!(p.rgb.len(), 3 * 32 * 32);
        assert!(p.rgb.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn probabilities_are_a_distribution() {
        let cfg = FusionConfig::toy();
        let model = FusionModel::<f32>::new(&cfg, 2).unwrap();
        let p = model
            .probabilities(&preprocess(&random_image(5, 32), &cfg).unwrap())
            .unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn argmax_ties_to_lowest_index() {
        assert_eq!(argmax(&[0.9, 0.05, 0.05]), 0);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn softmax_preserves_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(&[3], z.clone()).unwrap();
            let p = tape.softmax(v, 0).unwrap();
            assert_eq!(argmax(tape.value(p)), argmax(&z));
        }
    }

    #[test]
    fn batch_forward_matches_head_path() {
        let cfg = FusionConfig::toy();
        let model = FusionModel::<f32>::new(&cfg, 3).unwrap();
        let inputs: Vec<_> = (0..3)
            .map(|s| preprocess(&random_image(s, 32), &cfg).unwrap())
            .collect();
        let refs: Vec<_> = inputs.iter().collect();
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &refs).unwrap();
        assert_eq!(tape.shape(out.z), &[3, cfg.head_input_width()]);
        let z: Vec<_> = inputs.iter().map(|i| model.features(i).unwrap()).collect();
        let probs = model.head_probabilities(&z).unwrap();
        let flat: Vec<f64> = probs.iter().flatten().copied().collect();
        let direct: Vec<f64> = tape.value(out.probs).iter().map(|&v| v as f64).collect();
        assert_eq!(flat, direct);
    }

    #[test]
    fn rgb_only_ablation_shares_the_rgb_encoder() {
        let fused = FusionModel::<f32>::new(&FusionConfig::toy(), 9).unwrap();
        let ablation = FusionModel::<f32>::new(
            &FusionConfig {
                variant: Variant::RgbOnly,
                ..FusionConfig::toy()
            },
            9,
        )
        .unwrap();
        assert_eq!(fused.rgb.checksum(), ablation.rgb.checksum());
        assert!(ablation.ycbcr.is_none());
        assert_eq!(ablation.config().head_input_width(), 16);
    }
}
