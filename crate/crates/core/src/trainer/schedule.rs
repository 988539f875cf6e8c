use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_bundle, save_unet};
use super::losses::{AdversarialMode, LossWeights};
use super::step::{train_step, unet_step, Batch, LossBreakdown};
use crate::datapipe::{augment, AugmentSpec, Subimage};
use crate::error::{Error, Result};
use crate::gradcore::AdamaxConfig;
use crate::image::Image2D;
use crate::nets::{FeatureExtractor, ModelBundle, UnetBundle};
use crate::seeds::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub adamax: AdamaxConfig,
    /// First epoch (0-based) trained at the reduced rate.
    pub lr_drop_epoch: u64,
    pub lr_drop_factor: f64,
    pub adversarial: AdversarialMode,
    pub weights: LossWeights,
    pub augment: AugmentSpec,
    pub seed: u64,
    /// Checkpoint every this many epochs; the final epoch is always saved.
    pub checkpoint_every: u64,
    /// Stop after this many optimizer steps in total (no checkpoint is
    /// written for a partial epoch).
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 550,
            batch_size: 16,
            adamax: AdamaxConfig::default(),
            lr_drop_epoch: 500,
            lr_drop_factor: 0.1,
            adversarial: AdversarialMode::default(),
            weights: LossWeights::default(),
            augment: AugmentSpec::default(),
            seed: 0,
            checkpoint_every: 50,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Schedule scaled by 1/10 for desk-scale data, with a 5× learning rate
    /// to offset the far smaller number of steps.
    pub fn toy() -> Self {
        Self {
            epochs: 55,
            lr_drop_epoch: 50,
            batch_size: 8,
            adamax: AdamaxConfig {
                lr: 1e-3,
                ..AdamaxConfig::default()
            },
            augment: AugmentSpec::toy(),
            checkpoint_every: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.adamax.lr > 0.0) || !(self.lr_drop_factor > 0.0) {
            return Err(Error::invalid(
                "learning rate and drop factor must be positive",
            ));
        }
        self.weights.validate()
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        if epoch >= self.lr_drop_epoch {
            self.adamax.lr * self.lr_drop_factor
        } else {
            self.adamax.lr
        }
    }
}

/// Sample order of one epoch.
pub fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(&[seed, 0xE90C, epoch]));
    order
}

/// Augmented batch of the given subimages; each sample is keyed on its
/// parent pair, the epoch and its index in the training set.
pub fn assemble_batch(
    data: &[(u64, Subimage)],
    indices: &[usize],
    spec: &AugmentSpec,
    epoch: u64,
) -> Result<Batch> {
    let mut drr = Vec::with_capacity(indices.len());
    let mut fpd = Vec::with_capacity(indices.len());
    for &i in indices {
        let (pair_id, sub) = &data[i];
        let (d, f, _) = augment(sub, spec, *pair_id, epoch, i as u64)?;
        drr.push(d);
        fpd.push(f);
    }
    Batch::new(
        Image2D::batch(&drr.iter().collect::<Vec<_>>())?,
        Image2D::batch(&fpd.iter().collect::<Vec<_>>())?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow<L> {
    pub step: u64,
    pub epoch: u64,
    pub losses: L,
}

pub trait CsvRecord {
    fn header() -> Vec<&'static str>;
    fn fields(&self) -> Vec<f64>;
}

impl CsvRecord for LossBreakdown {
    fn header() -> Vec<&'static str> {
        LossBreakdown::CSV_FIELDS.to_vec()
    }

    fn fields(&self) -> Vec<f64> {
        self.values().to_vec()
    }
}

/// Supervised L1 loss of the U-Net baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Loss(pub f64);

impl CsvRecord for L1Loss {
    fn header() -> Vec<&'static str> {
        vec!["l1"]
    }

    fn fields(&self) -> Vec<f64> {
        vec![self.0]
    }
}

pub fn history_header<L: CsvRecord>() -> String {
    let mut cols = vec!["step", "epoch"];
    cols.extend(L::header());
    cols.join(",")
}

pub fn history_line<L: CsvRecord>(row: &HistoryRow<L>) -> String {
    let mut s = format!("{},{}", row.step, row.epoch);
    for v in row.losses.fields() {
        s.push(',');
        s.push_str(&v.to_string());
    }
    s
}

/// Appends rows to a loss-history CSV, writing the header for a new file.
pub fn append_history<L: CsvRecord>(path: &Path, rows: &[HistoryRow<L>]) -> Result<()> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        if fresh {
            writeln!(out, "{}", history_header::<L>())?;
        }
        for r in rows {
            writeln!(out, "{}", history_line(r))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Truncates a history file to the rows with `step <= last_step`, so a
/// resumed run continues the file without duplicates.
pub fn truncate_history(path: &Path, last_step: u64) -> Result<()> {
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(());
    };
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|s| s <= last_step);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(kept.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Where and how often a loop persists its state.
#[derive(Debug, Clone, Copy)]
pub struct Persist<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    pub history_csv: Option<&'a Path>,
}

impl Persist<'_> {
    pub const NONE: Persist<'static> = Persist {
        checkpoint_dir: None,
        history_csv: None,
    };
}

fn run_epochs<S, L: CsvRecord>(
    state: &mut S,
    data: &[(u64, Subimage)],
    cfg: &TrainConfig,
    persist: Persist,
    epoch_of: impl Fn(&S) -> (u64, u64),
    set_epoch: impl Fn(&mut S, u64),
    mut step: impl FnMut(&mut S, &Batch, f64) -> Result<L>,
    save: impl Fn(&S, &Path) -> Result<()>,
) -> Result<Vec<HistoryRow<L>>> {
    cfg.validate()?;
    let mut history = Vec::new();
    let (start, _) = epoch_of(state);
    if start >= cfg.epochs {
        return Ok(history);
    }
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    for epoch in start..cfg.epochs {
        let order = epoch_permutation(cfg.seed, epoch, data.len());
        let lr = cfg.lr_at(epoch);
        let mut epoch_rows = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| epoch_of(state).1 >= m) {
                if let Some(p) = persist.history_csv {
                    append_history(p, &epoch_rows)?;
                }
                history.extend(epoch_rows);
                return Ok(history);
            }
            let batch = assemble_batch(data, chunk, &cfg.augment, epoch)?;
            let losses = step(state, &batch, lr)?;
            epoch_rows.push(HistoryRow {
                step: epoch_of(state).1,
                epoch,
                losses,
            });
        }
        set_epoch(state, epoch + 1);
        if let Some(p) = persist.history_csv {
            append_history(p, &epoch_rows)?;
        }
        history.extend(epoch_rows);
        let done = epoch + 1;
        if let Some(dir) = persist.checkpoint_dir {
            if done == cfg.epochs || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
            {
                save(state, dir)?;
            }
        }
    }
    Ok(history)
}

/// Trains from `bundle.epoch` up to `cfg.epochs`.
pub fn train_loop(
    bundle: &mut ModelBundle,
    data: &[(u64, Subimage)],
    cfg: &TrainConfig,
    extractor: &FeatureExtractor,
    persist: Persist,
) -> Result<Vec<HistoryRow<LossBreakdown>>> {
    run_epochs(
        bundle,
        data,
        cfg,
        persist,
        |b| (b.epoch, b.step),
        |b, e| b.epoch = e,
        |b, batch, lr| train_step(b, batch, &cfg.weights, cfg.adversarial, lr, extractor),
        |b, dir| save_bundle(dir, b),
    )
}

/// Same schedule for the supervised U-Net baseline.
pub fn train_unet_loop(
    bundle: &mut UnetBundle,
    data: &[(u64, Subimage)],
    cfg: &TrainConfig,
    persist: Persist,
) -> Result<Vec<HistoryRow<L1Loss>>> {
    run_epochs(
        bundle,
        data,
        cfg,
        persist,
        |b| (b.epoch, b.step),
        |b, e| b.epoch = e,
        |b, batch, lr| unet_step(b, batch, lr).map(L1Loss),
        |b, dir| save_unet(dir, b),
    )
}
