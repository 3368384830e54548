//! Accuracy, confusion matrices, DET curves, robustness sweeps and feature
//! export.

use std::fmt;

use rayon::prelude::*;

use crate::data::{Class, LabeledImage};
use crate::fusion::{argmax, preprocess, FusionModel, Preprocessed, NUM_CLASSES};
use crate::imaging::{
    add_gaussian_noise, jpeg_degrade_padded, rgb_to_ycbcr, ycbcr_to_rgb, ChromaSubsampling,
    ImageU8, JpegSimConfig, NoiseSpec,
};
use crate::{Error, Result};

pub const DEFAULT_QUALITIES: [u8; 10] = [100, 90, 80, 70, 60, 50, 40, 30, 20, 10];
pub const DEFAULT_SIGMAS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];

/// Fraction of positions where `predictions` and `labels` agree.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        let mut m = Self::default();
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= NUM_CLASSES || l >= NUM_CLASSES {
                return Err(Error::InvalidArgument(format!(
                    "class index out of range: {p} / {l}"
                )));
            }
            m.counts[l][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Diagonal over row sum; `None` for a class with no samples.
    pub fn per_class_accuracy(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let n = self.row_sum(c);
            (n > 0).then(|| self.counts[c][c] as f64 / n as f64)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true,pred_gan,pred_graphics,pred_real\n");
        for (c, row) in Class::ALL.iter().zip(&self.counts) {
            out.push_str(&format!("{c},{},{},{}\n", row[0], row[1], row[2]));
        }
        out
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10} {:>8} {:>8} {:>8}",
            "true\\pred", "gan", "graphics", "real"
        )?;
        for (c, row) in Class::ALL.iter().zip(&self.counts) {
            writeln!(
                f,
                "{:>10} {:>8} {:>8} {:>8}",
                c.name(),
                row[0],
                row[1],
                row[2]
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn from_probabilities(probs: &[[f64; NUM_CLASSES]], labels: &[usize]) -> Result<Self> {
        let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let accuracy = accuracy(&predictions, labels)?;
        let confusion = ConfusionMatrix::from_pairs(&predictions, labels)?;
        Ok(Self {
            accuracy,
            per_class: confusion.per_class_accuracy(),
            confusion,
        })
    }
}

/// Class probabilities for each image, computed in parallel and returned
/// in input order.
pub fn predict_probabilities(
    model: &FusionModel,
    images: &[&ImageU8],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    let inputs: Vec<Preprocessed> = images
        .par_iter()
        .map(|img| preprocess(img, model.config()))
        .collect::<Result<_>>()?;
    model.head_probabilities(&model.features_many(&inputs)?)
}

pub fn evaluate(model: &FusionModel, items: &[&LabeledImage]) -> Result<Evaluation> {
    let images: Vec<&ImageU8> = items.iter().map(|i| &i.image).collect();
    Evaluation::from_probabilities(&predict_probabilities(model, &images)?, &labels_of(items))
}

fn labels_of(items: &[&LabeledImage]) -> Vec<usize> {
    items.iter().map(|i| i.label.index()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Quality,
    Sigma,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Quality => "quality",
            SweepAxis::Sigma => "sigma",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| v.to_string())
}

impl SweepReport {
    pub fn accuracy_at(&self, value: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.value == value)
            .map(|p| p.evaluation.accuracy)
    }

    /// One row per point: axis value, overall and per-class accuracy, count.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},accuracy,gan,graphics,real,count\n", self.axis.name());
        for p in &self.points {
            let e = &p.evaluation;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                p.value,
                e.accuracy,
                fmt_opt(e.per_class[0]),
                fmt_opt(e.per_class[1]),
                fmt_opt(e.per_class[2]),
                e.confusion.total()
            ));
        }
        out
    }

    /// Per-class accuracy against the axis.
    pub fn per_class_csv(&self) -> String {
        let mut out = format!("{},gan,graphics,real\n", self.axis.name());
        for p in &self.points {
            let c = &p.evaluation.per_class;
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.value,
                fmt_opt(c[0]),
                fmt_opt(c[1]),
                fmt_opt(c[2])
            ));
        }
        out
    }

    /// Overall accuracy against the axis.
    pub fn overall_csv(&self) -> String {
        let mut out = format!("{},accuracy\n", self.axis.name());
        for p in &self.points {
            out.push_str(&format!("{},{}\n", p.value, p.evaluation.accuracy));
        }
        out
    }

    /// Accuracy of one class against the axis.
    pub fn class_csv(&self, class: Class) -> String {
        let mut out = format!("{},{class}\n", self.axis.name());
        for p in &self.points {
            out.push_str(&format!(
                "{},{}\n",
                p.value,
                fmt_opt(p.evaluation.per_class[class.index()])
            ));
        }
        out
    }
}

fn check_monotone(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty("sweep axis"));
    }
    let inc = values.windows(2).all(|w| w[0] < w[1]);
    let dec = values.windows(2).all(|w| w[0] > w[1]);
    if !(inc || dec) {
        return Err(Error::InvalidArgument(format!(
            "sweep axis {values:?} is not strictly monotone"
        )));
    }
    Ok(())
}

/// JPEG round trip of an RGB image at quality `q`.
pub fn jpeg_round_trip(img: &ImageU8, cfg: &JpegSimConfig) -> Result<ImageU8> {
    Ok(ycbcr_to_rgb(&jpeg_degrade_padded(&rgb_to_ycbcr(img), cfg)?))
}

/// Accuracy on the items after compressing each at every quality factor.
pub fn jpeg_sweep(
    model: &FusionModel,
    items: &[&LabeledImage],
    factors: &[u8],
    subsampling: ChromaSubsampling,
) -> Result<SweepReport> {
    check_monotone(&factors.iter().map(|&q| q as f64).collect::<Vec<_>>())?;
    let labels = labels_of(items);
    let mut points = Vec::with_capacity(factors.len());
    for &q in factors {
        let cfg = JpegSimConfig::new(q, subsampling)?;
        let degraded: Vec<ImageU8> = items
            .par_iter()
            .map(|i| jpeg_round_trip(&i.image, &cfg))
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageU8> = degraded.iter().collect();
        let evaluation =
            Evaluation::from_probabilities(&predict_probabilities(model, &refs)?, &labels)?;
        points.push(SweepPoint {
            value: q as f64,
            evaluation,
        });
    }
    Ok(SweepReport {
        axis: SweepAxis::Quality,
        points,
    })
}

/// Seed for the noise added to the item at `index`; shared across sigmas.
pub fn noise_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Accuracy on the items after adding Gaussian noise at every sigma.
pub fn noise_sweep(
    model: &FusionModel,
    items: &[&LabeledImage],
    sigmas: &[f64],
    seed: u64,
) -> Result<SweepReport> {
    check_monotone(sigmas)?;
    let labels = labels_of(items);
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let noisy: Vec<ImageU8> = items
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                Ok(add_gaussian_noise(
                    &item.image,
                    &NoiseSpec::new(sigma, noise_seed(seed, i))?,
                ))
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageU8> = noisy.iter().collect();
        let evaluation =
            Evaluation::from_probabilities(&predict_probabilities(model, &refs)?, &labels)?;
        points.push(SweepPoint {
            value: sigma,
            evaluation,
        });
    }
    Ok(SweepReport {
        axis: SweepAxis::Sigma,
        points,
    })
}

/// `n` evenly spaced thresholds covering [0, 1].
pub fn default_thresholds(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// One-vs-rest error rates per class.
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    pub thresholds: Vec<f64>,
    /// `(fpr, fnr)` per threshold; `None` when the class has no positive or
    /// no negative samples.
    pub classes: [Option<Vec<(f64, f64)>>; NUM_CLASSES],
}

impl DetCurve {
    pub fn from_probabilities(
        probs: &[[f64; NUM_CLASSES]],
        labels: &[usize],
        thresholds: &[f64],
    ) -> Self {
        let classes = std::array::from_fn(|c| {
            let pos = labels.iter().filter(|&&l| l == c).count();
            let neg = labels.len() - pos;
            if pos == 0 || neg == 0 {
                return None;
            }
            let mut scores: Vec<(f64, bool)> = probs
                .iter()
                .zip(labels)
                .map(|(p, &l)| (p[c], l == c))
                .collect();
            scores.sort_by(|a, b| a.0.total_cmp(&b.0));
            Some(
                thresholds
                    .iter()
                    .map(|&t| {
                        // Everything before `cut` scores below t and is rejected.
                        let cut = scores.partition_point(|s| s.0 < t);
                        let fn_ = scores[..cut].iter().filter(|s| s.1).count();
                        let fp = scores[cut..].iter().filter(|s| !s.1).count();
                        (fp as f64 / neg as f64, fn_ as f64 / pos as f64)
                    })
                    .collect(),
            )
        });
        Self {
            thresholds: thresholds.to_vec(),
            classes,
        }
    }

    /// `class,threshold,fpr,fnr` rows; undefined classes get `nan` rates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,threshold,fpr,fnr\n");
        for (class, curve) in Class::ALL.iter().zip(&self.classes) {
            for (i, t) in self.thresholds.iter().enumerate() {
                match curve {
                    Some(c) => out.push_str(&format!("{class},{t},{},{}\n", c[i].0, c[i].1)),
                    None => out.push_str(&format!("{class},{t},nan,nan\n")),
                }
            }
        }
        out
    }
}

pub fn det_curve(
    model: &FusionModel,
    items: &[&LabeledImage],
    thresholds: &[f64],
) -> Result<DetCurve> {
    let images: Vec<&ImageU8> = items.iter().map(|i| &i.image).collect();
    let probs = predict_probabilities(model, &images)?;
    Ok(DetCurve::from_probabilities(
        &probs,
        &labels_of(items),
        thresholds,
    ))
}

/// `id,label,f0..` rows holding each item's head input.
pub fn export_features(model: &FusionModel, items: &[&LabeledImage]) -> Result<String> {
    let inputs: Vec<Preprocessed> = items
        .par_iter()
        .map(|i| preprocess(&i.image, model.config()))
        .collect::<Result<_>>()?;
    let rows = model.features_many(&inputs)?;
    let width = model.config().head_input_width();
    let mut out = String::from("id,label");
    for k in 0..width {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for (item, z) in items.iter().zip(rows) {
        out.push_str(&format!("{},{}", item.id, item.label.index()));
        for v in z {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}
