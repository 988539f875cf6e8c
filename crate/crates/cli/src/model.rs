use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fluorosynth::datapipe::{Dataset, Subimage};
use fluorosynth::image::Image2D;
use fluorosynth::metrics::{GeneratorTranslator, MeanSd, Translator, UnetTranslator};
use fluorosynth::nets::{ModelBundle, ModelConfig, UnetBundle};
use fluorosynth::trainer::{
    load_bundle, load_unet, read_manifest, save_bundle, save_unet, train_loop, train_unet_loop,
    truncate_history, CheckpointModel, CsvRecord, HistoryRow, Persist, TrainConfig, MANIFEST_NAME,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{emit, write_json};
use crate::error::{CliError, CliResult};
use crate::runlog::RunLog;
use crate::ModelKind;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_CSV: &str = "history.csv";

pub const CYCLEGAN_LABEL: &str = "CycleGAN";
pub const UNET_LABEL: &str = "U-Net";

/// Epoch and step counters shared by both bundle kinds.
trait Progress {
    fn epoch(&self) -> u64;
    fn step(&self) -> u64;
}

impl Progress for ModelBundle {
    fn epoch(&self) -> u64 {
        self.epoch
    }
    fn step(&self) -> u64 {
        self.step
    }
}

impl Progress for UnetBundle {
    fn epoch(&self) -> u64 {
        self.epoch
    }
    fn step(&self) -> u64 {
        self.step
    }
}

fn column_means<L: CsvRecord>(rows: &[HistoryRow<L>]) -> Vec<(&'static str, f64)> {
    let names = L::header();
    let mut sums = vec![0.0; names.len()];
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r.losses.fields()) {
            *s += v;
        }
    }
    names
        .into_iter()
        .zip(sums)
        .map(|(n, s)| (n, s / rows.len().max(1) as f64))
        .collect()
}

/// Runs the schedule one epoch at a time so progress reaches the log;
/// checkpoints follow the configured cadence.
fn run_schedule<B: Progress, L: CsvRecord>(
    bundle: &mut B,
    cfg: &TrainConfig,
    log: &mut RunLog,
    ckpt: &Path,
    history: &Path,
    mut epoch_fn: impl FnMut(&mut B, &TrainConfig, Persist) -> fluorosynth::Result<Vec<HistoryRow<L>>>,
    save: impl Fn(&B, &Path) -> fluorosynth::Result<()>,
) -> CliResult<Vec<(&'static str, f64)>> {
    let mut last = Vec::new();
    while bundle.epoch() < cfg.epochs {
        let epoch = bundle.epoch();
        let t = Instant::now();
        let one = TrainConfig {
            epochs: epoch + 1,
            ..cfg.clone()
        };
        let rows = epoch_fn(
            bundle,
            &one,
            Persist {
                checkpoint_dir: None,
                history_csv: Some(history),
            },
        )?;
        last = column_means(&rows);
        let summary: Vec<String> = last.iter().map(|(n, v)| format!("{n}={v:.5}")).collect();
        log.line(format!(
            "epoch {}/{} steps={} lr={:.2e} {:.1} s {}",
            epoch + 1,
            cfg.epochs,
            bundle.step(),
            cfg.lr_at(epoch),
            t.elapsed().as_secs_f64(),
            summary.join(" ")
        ));
        if bundle.epoch() == epoch {
            log.line("step budget reached inside the epoch; no checkpoint for the partial epoch");
            break;
        }
        let done = bundle.epoch();
        if done == cfg.epochs || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) {
            save(bundle, ckpt)?;
            log.line(format!("checkpoint at epoch {done} -> {}", ckpt.display()));
        }
    }
    Ok(last)
}

pub fn train(
    cfg: &RunConfig,
    log: &mut RunLog,
    data: &Path,
    kind: ModelKind,
    resume: bool,
) -> CliResult<()> {
    let ds = Dataset::load(data)?;
    let subs: Vec<(u64, Subimage)> = ds.train_subimages()?;
    log.line(format!(
        "{} training subimages from {}",
        subs.len(),
        data.display()
    ));
    let ckpt = cfg.out.join(CHECKPOINT_DIR);
    let history = cfg.out.join(HISTORY_CSV);
    let resuming = resume && ckpt.join(MANIFEST_NAME).exists();
    if resume && !resuming {
        log.line("no checkpoint to resume from; starting fresh");
    }
    if !resuming && history.exists() {
        fs::remove_file(&history).map_err(|e| CliError::io(&history, e))?;
    }
    let t = Instant::now();
    let (epoch, step, last) = match kind {
        ModelKind::Cyclegan => {
            let mut b = if resuming {
                let b = load_bundle(&ckpt, &cfg.model)?;
                truncate_history(&history, b.step)?;
                log.line(format!(
                    "resumed CycleGAN at epoch {} step {}",
                    b.epoch, b.step
                ));
                b
            } else {
                log.line(format!("initialized CycleGAN with seed {}", cfg.seed));
                ModelBundle::init(&cfg.model, cfg.train.adamax, cfg.seed)?
            };
            let extractor = cfg.model.extractor.build()?;
            let last = run_schedule(
                &mut b,
                &cfg.train,
                log,
                &ckpt,
                &history,
                |b, c, p| train_loop(b, &subs, c, &extractor, p),
                |b, dir| save_bundle(dir, b),
            )?;
            (b.epoch, b.step, last)
        }
        ModelKind::Unet => {
            let mut b = if resuming {
                let b = load_unet(&ckpt, &cfg.model.unet)?;
                truncate_history(&history, b.step)?;
                log.line(format!(
                    "resumed U-Net at epoch {} step {}",
                    b.epoch, b.step
                ));
                b
            } else {
                log.line(format!("initialized U-Net with seed {}", cfg.seed));
                UnetBundle::init(&cfg.model.unet, cfg.train.adamax, cfg.seed)?
            };
            let last = run_schedule(
                &mut b,
                &cfg.train,
                log,
                &ckpt,
                &history,
                |b, c, p| train_unet_loop(b, &subs, c, p),
                |b, dir| save_unet(dir, b),
            )?;
            (b.epoch, b.step, last)
        }
    };
    let losses: serde_json::Map<String, serde_json::Value> = last
        .into_iter()
        .map(|(n, v)| (n.to_string(), json!(v)))
        .collect();
    emit(&json!({
        "model": match kind { ModelKind::Cyclegan => "cyclegan", ModelKind::Unet => "unet" },
        "checkpoint": ckpt,
        "history": history,
        "epoch": epoch,
        "step": step,
        "train_seconds": t.elapsed().as_secs_f64(),
        "last_epoch_mean": losses,
    }));
    Ok(())
}

/// Loads whichever model a checkpoint holds as a DRR→FPD translator.
pub(crate) fn load_translator(
    checkpoint: &Path,
    base: &ModelConfig,
    label: Option<&str>,
) -> CliResult<Box<dyn Translator>> {
    let manifest = read_manifest(checkpoint)?;
    Ok(match manifest.model {
        CheckpointModel::Cyclegan {
            generator,
            discriminator,
        } => {
            let model = ModelConfig {
                generator,
                discriminator,
                ..base.clone()
            };
            let b = load_bundle(checkpoint, &model)?;
            Box::new(GeneratorTranslator {
                label: label.unwrap_or(CYCLEGAN_LABEL).to_string(),
                config: b.generator,
                params: b.g_drr2fpd,
            })
        }
        CheckpointModel::Unet { unet } => {
            let b = load_unet(checkpoint, &unet)?;
            Box::new(UnetTranslator {
                label: label.unwrap_or(UNET_LABEL).to_string(),
                config: b.config,
                params: b.params,
            })
        }
    })
}

fn output_name(input: &Path, index: usize) -> String {
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    format!("{index:03}-{stem}-synthetic.pgm")
}

pub fn infer(
    cfg: &RunConfig,
    log: &mut RunLog,
    checkpoint: &Path,
    inputs: &[PathBuf],
) -> CliResult<()> {
    let t = Instant::now();
    let translator = load_translator(checkpoint, &cfg.model, None)?;
    let load_ms = t.elapsed().as_secs_f64() * 1e3;
    log.line(format!(
        "loaded {} from {} in {load_ms:.1} ms",
        translator.label(),
        checkpoint.display()
    ));

    let images = inputs
        .iter()
        .map(|p| Image2D::load_pgm(p))
        .collect::<fluorosynth::Result<Vec<_>>>()?;
    let warmup = cfg.eval.warmup;
    for _ in 0..warmup {
        translator.translate(&images[0])?;
    }
    let mut per_image = Vec::new();
    let mut times = Vec::new();
    for (i, (input, image)) in inputs.iter().zip(&images).enumerate() {
        let start = Instant::now();
        let out = translator.translate(image)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        let path = cfg.out.join(output_name(input, i));
        out.save_pgm(&path)?;
        log.line(format!(
            "{} -> {} in {ms:.2} ms",
            input.display(),
            path.display()
        ));
        times.push(ms);
        per_image.push(json!({ "input": input, "output": path, "generation_ms": ms }));
    }
    let stats = MeanSd::of(&times);
    let report = json!({
        "model": translator.label(),
        "checkpoint": checkpoint,
        "load_ms": load_ms,
        "warmup_iterations": warmup,
        "generation_ms": { "mean": stats.mean, "sd": stats.sd, "n": stats.n, "table": stats.table(1) },
        "images": per_image,
    });
    write_json(&cfg.out.join("infer.json"), &report)?;
    println!("load time: {load_ms:.1} ms");
    println!(
        "generation time per image: {} ms (n = {}, {warmup} warm-up runs excluded)",
        stats.table(1),
        stats.n
    );
    emit(&report);
    Ok(())
}
