//! Mini-batch training with Adam, crossentropy loss and best-validation
//! model selection.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{DatasetSplit, LabeledImage, Partition};
use crate::fusion::{argmax, preprocess, BackboneMode, FusionModel, Preprocessed, NUM_CLASSES};
use crate::kv::KvMap;
use crate::nn::{checkpoint, AdamConfig, AdamState, Tape, CLAMP_MIN_PROB};
use crate::{Error, Result};

pub const BEST_CHECKPOINT: &str = "best.mcew";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// End-to-end by default: without pretrained weights, frozen encoders
    /// only expose random features.
    pub backbone_mode: BackboneMode,
    /// When set, the best checkpoint is written here each time it improves.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            adam: AdamConfig::default(),
            seed: 7,
            backbone_mode: BackboneMode::EndToEnd,
            checkpoint_dir: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "batch_size",
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "backbone_mode",
    "checkpoint_dir",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "batch_size and epochs must be at least 1".into(),
            ));
        }
        let a = &self.adam;
        let ok = a.lr > 0.0
            && a.lr.is_finite()
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("lr", self.adam.lr);
        kv.set("beta1", self.adam.beta1);
        kv.set("beta2", self.adam.beta2);
        kv.set("eps", self.adam.eps);
        kv.set("seed", self.seed);
        kv.set("backbone_mode", self.backbone_mode);
        if let Some(dir) = &self.checkpoint_dir {
            kv.set("checkpoint_dir", dir.display());
        }
        kv
    }

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
        take!("batch_size", c.batch_size);
        take!("epochs", c.epochs);
        take!("lr", c.adam.lr);
        take!("beta1", c.adam.beta1);
        take!("beta2", c.adam.beta2);
        take!("eps", c.adam.eps);
        take!("seed", c.seed);
        take!("backbone_mode", c.backbone_mode);
        c.checkpoint_dir = kv.get("checkpoint_dir").map(PathBuf::from);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Zero-based index of the selected epoch.
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,train_accuracy,validation_loss,validation_accuracy,best\n",
        );
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                e.train_loss,
                e.train_accuracy,
                e.validation_loss,
                e.validation_accuracy,
                u8::from(i == self.best_epoch)
            ));
        }
        out
    }
}

/// Mean negative log-likelihood and accuracy of probability rows.
pub fn loss_and_accuracy(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> (f64, f64) {
    if probs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, &y) in probs.iter().zip(labels) {
        loss -= p[y].max(CLAMP_MIN_PROB).ln();
        correct += usize::from(argmax(p) == y);
    }
    let n = probs.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Preprocesses items in parallel, preserving order.
pub fn preprocess_all(model: &FusionModel, items: &[&LabeledImage]) -> Result<Vec<Preprocessed>> {
    items
        .par_iter()
        .map(|i| preprocess(&i.image, model.config()))
        .collect()
}

/// Head inputs for items in parallel, preserving order.
pub fn head_inputs(model: &FusionModel, inputs: &[Preprocessed]) -> Result<Vec<Vec<f32>>> {
    model.features_many(inputs)
}

enum Inputs {
    /// Frozen encoders: cached head inputs.
    Features(Vec<Vec<f32>>),
    Images(Vec<Preprocessed>),
}

impl Inputs {
    fn len(&self) -> usize {
        match self {
            Inputs::Features(v) => v.len(),
            Inputs::Images(v) => v.len(),
        }
    }

    fn probabilities(&self, model: &FusionModel) -> Result<Vec<[f64; NUM_CLASSES]>> {
        match self {
            Inputs::Features(z) => model.head_probabilities(z),
            Inputs::Images(p) => model.head_probabilities(&head_inputs(model, p)?),
        }
    }
}

/// Trains `model` on the split's training partition, returning the model
/// from the epoch with the highest validation accuracy (earliest on ties).
pub fn train(
    model: FusionModel,
    items: &[LabeledImage],
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainLog)> {
    train_with_progress(model, items, split, cfg, &mut |_, _| {})
}

/// As [`train`], calling `progress(epoch_index, record)` after each epoch.
pub fn train_with_progress(
    mut model: FusionModel,
    items: &[LabeledImage],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, &EpochRecord),
) -> Result<(FusionModel, TrainLog)> {
    cfg.validate()?;
    model.set_backbone_mode(cfg.backbone_mode);
    let train_items = split.select(items, Partition::Train)?;
    let val_items = split.select(items, Partition::Validation)?;
    if train_items.is_empty() {
        return Err(Error::Empty("training partition"));
    }
    let train_labels: Vec<usize> = train_items.iter().map(|i| i.label.index()).collect();
    let val_labels: Vec<usize> = val_items.iter().map(|i| i.label.index()).collect();

    let load = |set: &[&LabeledImage]| -> Result<Inputs> {
        let pre = preprocess_all(&model, set)?;
        Ok(match cfg.backbone_mode {
            BackboneMode::Frozen => Inputs::Features(head_inputs(&model, &pre)?),
            BackboneMode::EndToEnd => Inputs::Images(pre),
        })
    };
    let train_inputs = load(&train_items)?;
    let val_inputs = load(&val_items)?;

    let mut adam = AdamState::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    let mut log = TrainLog::default();
    let mut best: Option<(f64, FusionModel)> = None;
    let width = model.config().head_input_width();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let probs = match &train_inputs {
                Inputs::Features(z) => {
                    let flat: Vec<f32> = batch.iter().flat_map(|&i| z[i].iter().copied()).collect();
                    let zv = tape.constant(&[batch.len(), width], flat)?;
                    model.head.forward(&mut tape, zv)?.1
                }
                Inputs::Images(p) => {
                    let refs: Vec<&Preprocessed> = batch.iter().map(|&i| &p[i]).collect();
                    model.forward(&mut tape, &refs)?.probs
                }
            };
            if tape.value(probs).iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            let mut onehot = vec![0.0f32; batch.len() * NUM_CLASSES];
            for (r, &i) in batch.iter().enumerate() {
                onehot[r * NUM_CLASSES + train_labels[i]] = 1.0;
            }
            let y = tape.constant(&[batch.len(), NUM_CLASSES], onehot)?;
            let loss = tape.crossentropy(probs, y)?;
            let loss_value = tape.value(loss)[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            loss_sum += loss_value * batch.len() as f64;
            for (r, &i) in batch.iter().enumerate() {
                let row = &tape.value(probs)[r * NUM_CLASSES..(r + 1) * NUM_CLASSES];
                let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
                correct += usize::from(argmax(&row) == train_labels[i]);
            }
            let grads = tape.backward(loss)?;
            tape.accumulate_grads(&grads, &mut model)?;
            adam.step(&mut model)?;
            crate::nn::Parameterized::zero_grad(&mut model);
        }
        let n = order.len() as f64;
        let (validation_loss, validation_accuracy) =
            loss_and_accuracy(&val_inputs.probabilities(&model)?, &val_labels);
        let record = EpochRecord {
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            validation_loss,
            validation_accuracy,
        };
        log.epochs.push(record);
        progress(epoch, &record);
        // NaN validation accuracy (empty partition) keeps the first epoch.
        let improved = match &best {
            None => true,
            Some((acc, _)) => validation_accuracy > *acc,
        };
        if improved {
            log.best_epoch = epoch;
            if let Some(dir) = &cfg.checkpoint_dir {
                save_best(dir, &model)?;
            }
            best = Some((validation_accuracy, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, log))
}

fn save_best(dir: &Path, model: &FusionModel) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save(&dir.join(BEST_CHECKPOINT), model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_dataset, SynthConfig};
    use crate::fusion::FusionConfig;
    use crate::nn::Parameterized;

    fn toy_data(per_class: usize, seed: u64) -> (Vec<LabeledImage>, DatasetSplit) {
        let items = generate_synthetic(&SynthConfig {
            per_class_count: per_class,
            image_size: 32,
            seed,
        })
        .unwrap();
        let split = split_dataset(&items, seed).unwrap();
        (items, split)
    }

    #[test]
    fn one_batch_one_step() {
        let (items, mut split) = toy_data(10, 1);
        split.train.truncate(16);
        let model = FusionModel::new(&FusionConfig::toy(), 1).unwrap();
        let head_before = model.head.checksum();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model, &items, &split, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 1);
        assert_ne!(trained.head.checksum(), head_before);
    }

    #[test]
    fn frozen_mode_leaves_encoders_untouched() {
        let (items, split) = toy_data(10, 2);
        let model = FusionModel::new(&FusionConfig::toy(), 2).unwrap();
        let rgb = model.rgb.checksum();
        let ycbcr = model.ycbcr.as_ref().unwrap().checksum();
        let cfg = TrainConfig {
            epochs: 3,
            backbone_mode: BackboneMode::Frozen,
            ..TrainConfig::default()
        };
        let (trained, _) = train(model, &items, &split, &cfg).unwrap();
        assert_eq!(trained.rgb.checksum(), rgb);
        assert_eq!(trained.ycbcr.as_ref().unwrap().checksum(), ycbcr);
    }

    #[test]
    fn same_seed_same_log() {
        let (items, split) = toy_data(10, 3);
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let model = FusionModel::new(&FusionConfig::toy(), 3).unwrap();
            let (m, log) = train(model, &items, &split, &cfg).unwrap();
            (m.checksum(), log)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn end_to_end_updates_encoders() {
        let (items, split) = toy_data(10, 4);
        let model = FusionModel::new(&FusionConfig::toy(), 4).unwrap();
        let rgb = model.rgb.checksum();
        let cfg = TrainConfig {
            epochs: 1,
            backbone_mode: BackboneMode::EndToEnd,
            ..TrainConfig::default()
        };
        let (trained, log) = train(model, &items, &split, &cfg).unwrap();
        assert_ne!(trained.rgb.checksum(), rgb);
        assert!(log.epochs[0].train_loss.is_finite());
    }

    #[test]
    fn divergence_is_reported() {
        let (items, split) = toy_data(10, 5);
        let mut model = FusionModel::new(&FusionConfig::toy(), 5).unwrap();
        model.head.fc2.bias.tensor.data_mut()[0] = f32::NAN;
        let err = train(model, &items, &split, &TrainConfig::default()).unwrap_err();
        assert!(
            matches!(err, Error::Divergence { epoch: 1, batch: 1 }),
            "{err}"
        );
    }

    #[test]
    fn best_checkpoint_is_written() {
        let (items, split) = toy_data(10, 6);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let model = FusionModel::new(&FusionConfig::toy(), 6).unwrap();
        let (trained, _) = train(model, &items, &split, &cfg).unwrap();
        let mut fresh = FusionModel::<f32>::new(&FusionConfig::toy(), 99).unwrap();
        checkpoint::load_into(&dir.path().join(BEST_CHECKPOINT), &mut fresh).unwrap();
        assert_eq!(fresh.checksum(), trained.checksum());
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let cfg = TrainConfig {
            epochs: 3,
            seed: 11,
            checkpoint_dir: Some("runs/a".into()),
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn loss_and_accuracy_counts() {
        let probs = [[0.5, 0.25, 0.25], [0.2, 0.2, 0.6]];
        let (loss, acc) = loss_and_accuracy(&probs, &[0, 1]);
        assert!((loss - (-(0.5f64).ln() - (0.2f64).ln()) / 2.0).abs() < 1e-12);
        assert_eq!(acc, 0.5);
    }
}
