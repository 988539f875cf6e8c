use rand::seq::index::sample;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::nets::{FeatureExtractor, FeatureExtractorSpec};
use crate::seeds::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KidConfig {
    pub features: FeatureExtractorSpec,
    pub degree: u32,
    pub offset: f64,
    pub block_size: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Images per extractor forward pass.
    pub batch: usize,
}

impl Default for KidConfig {
    fn default() -> Self {
        Self {
            features: FeatureExtractorSpec::default(),
            degree: 3,
            offset: 1.0,
            block_size: 50,
            blocks: 100,
            seed: 0,
            batch: 8,
        }
    }
}

impl KidConfig {
    pub fn toy() -> Self {
        Self {
            features: FeatureExtractorSpec::toy(),
            block_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size < 2 || self.degree < 1 || self.blocks < 1 || self.batch < 1 {
            return Err(Error::invalid(
                "KID needs block size ≥ 2, degree ≥ 1 and at least one block",
            ));
        }
        Ok(())
    }
}

/// Block-averaged squared MMD with its standard error over blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub blocks: usize,
    pub block_size: usize,
}

/// `(xᵀy/d + offset)^degree`.
pub fn polynomial_kernel(x: &[f64], y: &[f64], degree: u32, offset: f64) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + offset).powi(degree as i32)
}

/// Unbiased squared MMD between two equally sized samples.
pub fn mmd2_unbiased(x: &[&[f64]], y: &[&[f64]], degree: u32, offset: f64) -> f64 {
    let m = x.len();
    let k = |a: &[f64], b: &[f64]| polynomial_kernel(a, b, degree, offset);
    let (mut kxx, mut kyy, mut kxy) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kxx += k(x[i], x[j]);
                kyy += k(y[i], y[j]);
            }
            kxy += k(x[i], y[j]);
        }
    }
    let mf = m as f64;
    (kxx + kyy) / (mf * (mf - 1.0)) - 2.0 * kxy / (mf * mf)
}

fn summarize(values: &[f64], block_size: usize) -> KidEstimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    KidEstimate {
        mean,
        std_error: sd / n.sqrt(),
        blocks: values.len(),
        block_size,
    }
}

fn check_features(set: &[Vec<f64>], cfg: &KidConfig, need: usize) -> Result<()> {
    cfg.validate()?;
    if set.len() < need {
        return Err(Error::invalid(format!(
            "KID needs at least {need} samples, got {}",
            set.len()
        )));
    }
    Ok(())
}

/// KID between two feature sets: each block draws `block_size` samples
/// without replacement from each set.
pub fn kid_features(a: &[Vec<f64>], b: &[Vec<f64>], cfg: &KidConfig) -> Result<KidEstimate> {
    check_features(a, cfg, cfg.block_size)?;
    check_features(b, cfg, cfg.block_size)?;
    let mut rng = stream_rng(&[cfg.seed, 0x1D]);
    let mut values = Vec::with_capacity(cfg.blocks);
    for _ in 0..cfg.blocks {
        let ia = sample(&mut rng, a.len(), cfg.block_size);
        let ib = sample(&mut rng, b.len(), cfg.block_size);
        let x: Vec<&[f64]> = ia.iter().map(|i| a[i].as_slice()).collect();
        let y: Vec<&[f64]> = ib.iter().map(|i| b[i].as_slice()).collect();
        values.push(mmd2_unbiased(&x, &y, cfg.degree, cfg.offset));
    }
    Ok(summarize(&values, cfg.block_size))
}

/// KID of a set against itself. Blocks are disjoint `2·block_size` slices
/// of one seeded permutation, compared half against half, so block values are
/// independent and the standard error is not understated. Uses
/// `min(blocks, n / (2·block_size))` blocks.
pub fn kid_self_features(set: &[Vec<f64>], cfg: &KidConfig) -> Result<KidEstimate> {
    check_features(set, cfg, 2 * cfg.block_size)?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut stream_rng(&[cfg.seed, 0x5E1F]));
    let m = cfg.block_size;
    let values: Vec<f64> = order
        .chunks_exact(2 * m)
        .take(cfg.blocks)
        .map(|idx| {
            let x: Vec<&[f64]> = idx[..m].iter().map(|&i| set[i].as_slice()).collect();
            let y: Vec<&[f64]> = idx[m..].iter().map(|&i| set[i].as_slice()).collect();
            mmd2_unbiased(&x, &y, cfg.degree, cfg.offset)
        })
        .collect();
    Ok(summarize(&values, m))
}

/// Pooled extractor embeddings of single-channel images.
pub fn embed_images(
    extractor: &FeatureExtractor,
    images: &[&Image2D],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        out.extend(extractor.embed(&Image2D::batch(chunk)?)?);
    }
    Ok(out)
}

pub fn kid(
    a: &[&Image2D],
    b: &[&Image2D],
    extractor: &FeatureExtractor,
    cfg: &KidConfig,
) -> Result<KidEstimate> {
    let fa = embed_images(extractor, a, cfg.batch)?;
    let fb = embed_images(extractor, b, cfg.batch)?;
    kid_features(&fa, &fb, cfg)
}
