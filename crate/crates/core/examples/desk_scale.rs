//! Trains the fused model and its RGB-only ablation on synthetic data and
//! prints test accuracy plus JPEG robustness.
//!
//! `cargo run --release --example desk_scale -- [seed] [image_size] [patch_size] [backbone_mode] [epochs]`

use std::time::Instant;

use chromavit::data::{generate_synthetic, split_dataset, Partition, SynthConfig};
use chromavit::eval::{evaluate, jpeg_sweep};
use chromavit::fusion::{FusionConfig, FusionModel, Variant};
use chromavit::imaging::ChromaSubsampling;
use chromavit::train::TrainConfig;

fn main() -> chromavit::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));
    let size: usize = args.next().map_or(32, |s| s.parse().expect("image size"));
    let patch: usize = args.next().map_or(8, |s| s.parse().expect("patch size"));
    let mode: chromavit::fusion::BackboneMode =
        args.next().map_or(Ok(Default::default()), |s| s.parse())?;
    let epochs: usize = args.next().map_or(50, |s| s.parse().expect("epochs"));
    let t0 = Instant::now();
    let items = generate_synthetic(&SynthConfig {
        per_class_count: 200,
        image_size: size,
        seed,
    })?;
    let split = split_dataset(&items, seed)?;
    let test = split.select(&items, Partition::Test)?;
    let tcfg = TrainConfig {
        seed,
        epochs,
        backbone_mode: mode,
        ..TrainConfig::default()
    };
    for variant in [Variant::Fused, Variant::RgbOnly] {
        let mut cfg = FusionConfig {
            variant,
            ..FusionConfig::default()
        };
        cfg.vit.image_size = size;
        cfg.vit.patch_size = patch;
        let model = FusionModel::new(&cfg, seed)?;
        let (model, log) =
            chromavit::train::train_with_progress(model, &items, &split, &tcfg, &mut |e, r| {
                if std::env::var_os("VERBOSE").is_some() {
                    println!(
                        "    epoch {e}: loss {:.4} acc {:.3} val {:.3}",
                        r.train_loss, r.train_accuracy, r.validation_accuracy
                    );
                }
            })?;
        let clean = evaluate(&model, &test)?;
        println!(
            "{variant}: best epoch {} val {:.3} test {:.3} ({:.0?})",
            log.best_epoch + 1,
            log.best().unwrap().validation_accuracy,
            clean.accuracy,
            t0.elapsed()
        );
        for sub in [ChromaSubsampling::Yuv420, ChromaSubsampling::Yuv444] {
            let r = jpeg_sweep(&model, &test, &[100, 90, 70, 50, 30, 10], sub)?;
            let accs: Vec<String> = r
                .points
                .iter()
                .map(|p| format!("{:.3}", p.evaluation.accuracy))
                .collect();
            println!("  {sub} sweep {}  ({:.0?})", accs.join(" "), t0.elapsed());
            if std::env::var_os("VERBOSE").is_some() {
                print!(
                    "{}{}",
                    r.points[0].evaluation.confusion, r.points[3].evaluation.confusion
                );
            }
        }
    }
    Ok(())
}
