use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chromavit::data::{
    generate_synthetic, load_dataset, save_dataset, split_dataset, DatasetSplit, LabeledImage,
};
use chromavit::eval::{
    default_thresholds, det_curve, evaluate, export_features, jpeg_sweep, noise_sweep, Evaluation,
    SweepReport,
};
use chromavit::fusion::{preprocess, FusionModel};
use chromavit::imaging::io::{plane_to_u8, read_ppm, write_pgm, write_planes_raw};
use chromavit::imaging::{enrich, resize_bilinear, rgb_to_ycbcr};
use chromavit::kv::KvMap;
use chromavit::nn::checkpoint;
use chromavit::train::{train_with_progress, BEST_CHECKPOINT};
use chromavit::vit::attention_rollout;
use chromavit::{fusion, Error};

use crate::config::RunConfig;

pub const SPLIT_FILE: &str = "split.csv";
pub const MODEL_CONFIG_FILE: &str = "model.cfg";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// A failed command: exit status plus a one-line message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn mismatch(message: String) -> Self {
        Self {
            code: 5,
            kind: "checkpoint",
            message,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::NotAligned { .. } => (2, "config"),
            Error::Io { .. } | Error::Format { .. } | Error::Dataset(_) | Error::InvalidImage(_) => {
                (3, "io")
            }
            Error::Divergence { .. } => (4, "divergence"),
            _ => (1, "internal"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: String = self
            .message
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect();
        write!(f, "error: {}: {}", self.kind, flat)
    }
}

pub type CmdResult = Result<(), Failure>;

fn artifact(kind: &str, path: &Path) {
    println!("ARTIFACT {kind} {}", path.display());
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_artifact(kind: &str, path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| io_err(path, e))?;
    artifact(kind, path);
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, Error> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    Ok(&cfg.out_dir)
}

/// The split stored in the output directory, or a fresh one from the seed.
fn load_split(cfg: &RunConfig, items: &[LabeledImage]) -> Result<(DatasetSplit, bool), Error> {
    let path = cfg.out_dir.join(SPLIT_FILE);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let split = DatasetSplit::from_csv(&text, cfg.seed)?;
        split.select(items, cfg.partition)?;
        Ok((split, false))
    } else {
        Ok((split_dataset(items, cfg.seed)?, true))
    }
}

fn load_model(cfg: &RunConfig) -> Result<FusionModel, Failure> {
    let path = &cfg.checkpoint;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    checkpoint::decode(&bytes).map_err(|r| Error::Format {
        path: path.clone(),
        reason: r,
    })?;
    if let Some(dir) = path.parent() {
        let saved = dir.join(MODEL_CONFIG_FILE);
        if saved.exists() {
            let text = fs::read_to_string(&saved).map_err(|e| io_err(&saved, e))?;
            let trained = KvMap::parse(&text)?;
            let current = cfg.fusion.to_kv();
            for key in fusion::CONFIG_KEYS {
                let (then, now) = (trained.get(key), current.get(key));
                if then.is_some() && then != now {
                    return Err(Failure::mismatch(format!(
                        "{} was trained with {key} = {}, configuration has {}",
                        path.display(),
                        then.unwrap(),
                        now.unwrap_or("nothing")
                    )));
                }
            }
        }
    }
    let mut model = FusionModel::new(&cfg.fusion, cfg.seed)?;
    checkpoint::load_into(path, &mut model).map_err(|e| Failure::mismatch(e.to_string()))?;
    Ok(model)
}

fn partition_items<'a>(
    cfg: &RunConfig,
    items: &'a [LabeledImage],
) -> Result<Vec<&'a LabeledImage>, Error> {
    let (split, _) = load_split(cfg, items)?;
    split.select(items, cfg.partition)
}

pub fn synth(cfg: &RunConfig) -> CmdResult {
    let items = generate_synthetic(&cfg.synth)?;
    let manifest = save_dataset(&cfg.data_dir, &items)?;
    println!(
        "synthesized {} images ({} per class, {}px)",
        items.len(),
        cfg.synth.per_class_count,
        cfg.synth.image_size
    );
    artifact("dataset", &cfg.data_dir);
    artifact("manifest", &manifest);
    Ok(())
}

pub fn split(cfg: &RunConfig) -> CmdResult {
    let items = load_dataset(&cfg.data_dir)?;
    let split = split_dataset(&items, cfg.seed)?;
    println!(
        "split {} images: {} train, {} validation, {} test",
        items.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    write_artifact("split", &out_dir(cfg)?.join(SPLIT_FILE), split.to_csv())?;
    Ok(())
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    let items = load_dataset(&cfg.data_dir)?;
    let (split, fresh) = load_split(cfg, &items)?;
    let dir = out_dir(cfg)?;
    if fresh {
        write_artifact("split", &dir.join(SPLIT_FILE), split.to_csv())?;
    }
    let model = FusionModel::new(&cfg.fusion, cfg.seed)?;
    let epochs = cfg.train.epochs;
    let (_, log) = train_with_progress(model, &items, &split, &cfg.train, &mut |e, r| {
        println!(
            "epoch {}/{epochs} train_loss {:.4} train_accuracy {:.4} validation_loss {:.4} validation_accuracy {:.4}",
            e + 1,
            r.train_loss,
            r.train_accuracy,
            r.validation_loss,
            r.validation_accuracy
        );
    })?;
    if let Some(best) = log.best() {
        println!(
            "best epoch {} validation_accuracy {:.4}",
            log.best_epoch + 1,
            best.validation_accuracy
        );
    }
    artifact("checkpoint", &dir.join(BEST_CHECKPOINT));
    write_artifact("config", &dir.join(MODEL_CONFIG_FILE), cfg.model_kv().to_text())?;
    write_artifact("log", &dir.join(TRAIN_LOG_FILE), log.to_csv())?;
    Ok(())
}

fn summary_csv(e: &Evaluation) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("accuracy,{}\n", e.accuracy));
    for (class, acc) in chromavit::data::Class::ALL.iter().zip(e.per_class) {
        match acc {
            Some(a) => out.push_str(&format!("{class},{a}\n")),
            None => out.push_str(&format!("{class},nan\n")),
        }
    }
    out.push_str(&format!("count,{}\n", e.confusion.total()));
    out
}

fn print_evaluation(label: &str, e: &Evaluation) {
    print!("{}", e.confusion);
    let per_class: Vec<String> = chromavit::data::Class::ALL
        .iter()
        .zip(e.per_class)
        .map(|(c, a)| match a {
            Some(a) => format!("{c} {a:.4}"),
            None => format!("{c} n/a"),
        })
        .collect();
    println!(
        "{label} accuracy {:.4} over {} images ({})",
        e.accuracy,
        e.confusion.total(),
        per_class.join(", ")
    );
}

pub fn eval(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let items = load_dataset(&cfg.data_dir)?;
    let part = partition_items(cfg, &items)?;
    let e = evaluate(&model, &part)?;
    let name = cfg.partition.name();
    print_evaluation(name, &e);
    let dir = out_dir(cfg)?;
    write_artifact("metrics", &dir.join(format!("eval_{name}.csv")), summary_csv(&e))?;
    write_artifact(
        "confusion",
        &dir.join(format!("confusion_{name}.csv")),
        e.confusion.to_csv(),
    )?;
    Ok(())
}

fn print_sweep(r: &SweepReport) {
    for p in &r.points {
        println!(
            "{} {} accuracy {:.4}",
            r.axis.name(),
            p.value,
            p.evaluation.accuracy
        );
    }
}

pub fn sweep_jpeg(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let items = load_dataset(&cfg.data_dir)?;
    let part = partition_items(cfg, &items)?;
    let r = jpeg_sweep(&model, &part, &cfg.qualities, cfg.sweep_subsampling)?;
    print_sweep(&r);
    let dir = out_dir(cfg)?;
    write_artifact("sweep", &dir.join("sweep_jpeg.csv"), r.to_csv())?;
    write_artifact(
        "figure",
        &dir.join("fig2_class_accuracy_jpeg.csv"),
        r.per_class_csv(),
    )?;
    write_artifact("figure", &dir.join("fig6_accuracy_jpeg.csv"), r.overall_csv())?;
    write_artifact(
        "figure",
        &dir.join("fig7_gan_accuracy_jpeg.csv"),
        r.class_csv(chromavit::data::Class::Gan),
    )?;
    Ok(())
}

pub fn sweep_noise(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let items = load_dataset(&cfg.data_dir)?;
    let part = partition_items(cfg, &items)?;
    let r = noise_sweep(&model, &part, &cfg.sigmas, cfg.seed)?;
    print_sweep(&r);
    let dir = out_dir(cfg)?;
    write_artifact("sweep", &dir.join("sweep_noise.csv"), r.to_csv())?;
    write_artifact("figure", &dir.join("fig8_accuracy_noise.csv"), r.overall_csv())?;
    Ok(())
}

pub fn det(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let items = load_dataset(&cfg.data_dir)?;
    let part = partition_items(cfg, &items)?;
    let curve = det_curve(&model, &part, &default_thresholds(cfg.thresholds))?;
    let e = evaluate(&model, &part)?;
    print_evaluation(cfg.partition.name(), &e);
    for (class, c) in chromavit::data::Class::ALL.iter().zip(&curve.classes) {
        if c.is_none() {
            println!("{class}: DET curve undefined (class absent or alone)");
        }
    }
    let dir = out_dir(cfg)?;
    write_artifact("figure", &dir.join("fig5_det.csv"), curve.to_csv())?;
    write_artifact("figure", &dir.join("fig5_confusion.csv"), e.confusion.to_csv())?;
    Ok(())
}

fn required_image(cfg: &RunConfig, command: &str) -> Result<PathBuf, Error> {
    cfg.image
        .clone()
        .ok_or_else(|| Error::Config(format!("{command} needs --image")))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

/// Writes the model-resolution Y, Cb, Cr and enriched Cb, Cr planes.
pub fn enrich_dump(cfg: &RunConfig) -> CmdResult {
    let path = required_image(cfg, "enrich-dump")?;
    let img = read_ppm(&path)?;
    let s = cfg.fusion.vit.image_size;
    let img = resize_bilinear(&img, s, s)?;
    let planes = rgb_to_ycbcr(&img);
    let e = enrich(&planes, &cfg.fusion.enrichment)?;
    let dir = out_dir(cfg)?;
    let name = stem(&path);
    let named: [(&str, &[f32]); 5] = [
        ("y", &planes.y),
        ("cb", &planes.cb),
        ("cr", &planes.cr),
        ("cb_enriched", &e.cb),
        ("cr_enriched", &e.cr),
    ];
    for (plane, data) in named {
        let p = dir.join(format!("{name}_{plane}.pgm"));
        write_pgm(&p, s, s, &plane_to_u8(data, 1.0))?;
        artifact("plane", &p);
    }
    let raw = dir.join(format!("{name}_planes.f32"));
    let all: Vec<&[f32]> = named.iter().map(|(_, d)| *d).collect();
    write_planes_raw(&raw, s, s, &all)?;
    artifact("planes", &raw);
    Ok(())
}

pub fn features(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let items = load_dataset(&cfg.data_dir)?;
    let part = partition_items(cfg, &items)?;
    let csv = export_features(&model, &part)?;
    println!(
        "exported {} feature rows of width {}",
        part.len(),
        model.config().head_input_width()
    );
    let dir = out_dir(cfg)?;
    write_artifact(
        "features",
        &dir.join(format!("features_{}.csv", cfg.partition.name())),
        csv,
    )?;
    Ok(())
}

/// Nearest-neighbour upscale of a `grid x grid` map to `size x size`.
fn upscale(values: &[u8], grid: usize, size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            out.push(values[(y * grid / size) * grid + x * grid / size]);
        }
    }
    out
}

/// Rollout heatmaps for each branch, one PGM per branch and image.
pub fn attention(cfg: &RunConfig) -> CmdResult {
    let model = load_model(cfg)?;
    let images: Vec<(String, chromavit::imaging::ImageU8)> = match &cfg.image {
        Some(path) => vec![(stem(path), read_ppm(path)?)],
        None => {
            let items = load_dataset(&cfg.data_dir)?;
            partition_items(cfg, &items)?
                .into_iter()
                .take(cfg.limit)
                .map(|i| (i.id.replace('/', "_"), i.image.clone()))
                .collect()
        }
    };
    let dir = out_dir(cfg)?;
    let s = cfg.fusion.vit.image_size;
    for (name, img) in images {
        let input = preprocess(&img, &cfg.fusion)?;
        let records = model.attention(&input)?;
        let predicted = chromavit::data::Class::from_index(model.predict(&img)?)?;
        println!("{name}: predicted {predicted}");
        for (branch, rec) in ["rgb", "ycbcr"].iter().zip(&records) {
            let heat = attention_rollout(rec)?;
            let p = dir.join(format!("attention_{name}_{branch}.pgm"));
            write_pgm(&p, s, s, &upscale(&heat.to_u8(), heat.grid, s))?;
            artifact("heatmap", &p);
        }
    }
    Ok(())
}
