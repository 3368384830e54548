//! Run configuration: defaults, then a `key = value` file, then flags.

use std::path::{Path, PathBuf};

use chromavit::data::{Partition, SynthConfig};
use chromavit::eval::{DEFAULT_QUALITIES, DEFAULT_SIGMAS};
use chromavit::fusion::{self, FusionConfig};
use chromavit::imaging::ChromaSubsampling;
use chromavit::kv::KvMap;
use chromavit::train::{self, TrainConfig};
use chromavit::{Error, Result};
use clap::Args;

macro_rules! config_flags {
    ($($key:ident: $help:literal),* $(,)?) => {
        // Every configuration key, one flag each.
        #[derive(Args, Clone, Debug, Default)]
        pub struct ConfigArgs {
            /// `key = value` file; flags override its entries
            #[arg(long, value_name = "PATH", global = true)]
            pub config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE", global = true, help = $help)]
                pub $key: Option<String>,
            )*
        }

        pub const KEYS: &[&str] = &[$(stringify!($key)),*];

        impl ConfigArgs {
            fn overrides(&self) -> KvMap {
                let mut kv = KvMap::new();
                $(
                    if let Some(v) = &self.$key {
                        kv.set(stringify!($key), v);
                    }
                )*
                kv
            }
        }
    };
}

config_flags! {
    seed: "Seed for synthesis, splitting, initialization, shuffling and noise [default: 7]",
    threads: "Worker threads; 0 uses every core [default: 0]",
    data_dir: "Dataset root holding gan/, graphics/ and real/ [default: data]",
    out_dir: "Directory for run artifacts [default: out]",
    checkpoint: "Model checkpoint to load [default: <out_dir>/best.mcew]",
    image: "Single PPM input for enrich-dump and attention",
    partition: "Split partition to evaluate: train, validation or test [default: test]",
    limit: "Number of partition images attention maps are drawn for [default: 4]",
    per_class: "Synthetic images per class [default: 200]",
    image_size: "Model input side in pixels, also the synthetic image side [default: 32]",
    patch_size: "Patch side in pixels [default: 8]",
    embed_dim: "Token width D [default: 128]",
    depth: "Encoder blocks per branch [default: 4]",
    heads: "Attention heads [default: 4]",
    mlp_ratio: "MLP hidden width as a multiple of D [default: 4]",
    pool_kernel: "Average-pool window over the RGB feature [default: 16]",
    pool_stride: "Average-pool stride over the RGB feature [default: 16]",
    hidden: "Head hidden units [default: 512]",
    classes: "Output classes; must be 3 [default: 3]",
    enrich_quality: "JPEG quality of the enrichment pass [default: 90]",
    enrich_subsampling: "Chroma subsampling of the enrichment pass: 4:2:0 or 4:4:4 [default: 4:2:0]",
    variant: "fused or rgb_only [default: fused]",
    batch_size: "Minibatch size [default: 16]",
    epochs: "Training epochs [default: 50]",
    lr: "Adam learning rate [default: 0.001]",
    beta1: "Adam beta1 [default: 0.9]",
    beta2: "Adam beta2 [default: 0.999]",
    eps: "Adam epsilon [default: 1e-8]",
    backbone_mode: "end_to_end or frozen [default: end_to_end]",
    qualities: "Comma-separated JPEG qualities for sweep-jpeg [default: 100,90,...,10]",
    sweep_subsampling: "Chroma subsampling used by sweep-jpeg [default: 4:2:0]",
    sigmas: "Comma-separated noise sigmas for sweep-noise [default: 5,10,15,20,25]",
    thresholds: "Number of evenly spaced DET thresholds in [0, 1] [default: 101]",
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub image: Option<PathBuf>,
    pub partition: Partition,
    pub limit: usize,
    pub synth: SynthConfig,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub qualities: Vec<u8>,
    pub sweep_subsampling: ChromaSubsampling,
    pub sigmas: Vec<f64>,
    pub thresholds: usize,
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {:?}", s.trim())))
        })
        .collect()
}

fn subset(kv: &KvMap, keys: &[&str]) -> KvMap {
    let mut out = KvMap::new();
    for k in keys {
        if let Some(v) = kv.get(k) {
            out.set(k, v);
        }
    }
    out
}

impl RunConfig {
    pub fn load(args: &ConfigArgs) -> Result<Self> {
        let mut kv = match &args.config {
            Some(path) => read_config_file(path)?,
            None => KvMap::new(),
        };
        let overrides = args.overrides();
        for k in overrides.keys() {
            kv.set(k, overrides.get(k).unwrap());
        }
        Self::from_kv(&kv)
    }

    /// Validates every key up front.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        kv.check_keys(KEYS)?;
        let seed = kv.parse_opt("seed")?.unwrap_or(7);
        let out_dir: PathBuf = kv.get("out_dir").unwrap_or("out").into();
        let fusion = FusionConfig::from_kv(&subset(kv, fusion::CONFIG_KEYS))?;
        let mut tkv = subset(kv, train::CONFIG_KEYS);
        tkv.set("seed", seed);
        tkv.set("checkpoint_dir", out_dir.display());
        let train = TrainConfig::from_kv(&tkv)?;
        let synth = SynthConfig {
            per_class_count: kv.parse_opt("per_class")?.unwrap_or(200),
            image_size: fusion.vit.image_size,
            seed,
        };
        synth.validate()?;
        let qualities = match kv.get("qualities") {
            Some(s) => parse_list("qualities", s)?,
            None => DEFAULT_QUALITIES.to_vec(),
        };
        if qualities.is_empty() || qualities.iter().any(|q| !(1..=100).contains(q)) {
            return Err(Error::Config(format!("qualities {qualities:?} must lie in 1..=100")));
        }
        let sigmas: Vec<f64> = match kv.get("sigmas") {
            Some(s) => parse_list("sigmas", s)?,
            None => DEFAULT_SIGMAS.to_vec(),
        };
        if sigmas.is_empty() || sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config(format!("sigmas {sigmas:?} must be finite and non-negative")));
        }
        let thresholds = kv.parse_opt("thresholds")?.unwrap_or(101);
        if thresholds < 2 {
            return Err(Error::Config("thresholds must be at least 2".into()));
        }
        let limit = kv.parse_opt("limit")?.unwrap_or(4);
        if limit == 0 {
            return Err(Error::Config("limit must be at least 1".into()));
        }
        Ok(Self {
            seed,
            threads: kv.parse_opt("threads")?.unwrap_or(0),
            data_dir: kv.get("data_dir").unwrap_or("data").into(),
            checkpoint: kv
                .get("checkpoint")
                .map_or_else(|| out_dir.join(train::BEST_CHECKPOINT), PathBuf::from),
            out_dir,
            image: kv.get("image").map(PathBuf::from),
            partition: kv.parse_opt("partition")?.unwrap_or(Partition::Test),
            limit,
            synth,
            fusion,
            train,
            qualities,
            sweep_subsampling: kv.parse_opt("sweep_subsampling")?.unwrap_or_default(),
            sigmas,
            thresholds,
        })
    }

    /// The model and training keys that fix a trained checkpoint, as written
    /// next to it.
    pub fn model_kv(&self) -> KvMap {
        let mut kv = self.fusion.to_kv();
        let t = self.train.to_kv();
        for k in t.keys().filter(|&k| k != "checkpoint_dir") {
            kv.set(k, t.get(k).unwrap());
        }
        kv
    }
}

fn read_config_file(path: &Path) -> Result<KvMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    KvMap::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
