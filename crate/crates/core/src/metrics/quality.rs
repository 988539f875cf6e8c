use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

fn check_extents(a: &Image2D, b: &Image2D) -> Result<()> {
    if !a.same_extent(b) {
        return Err(Error::shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mae(a: &Image2D, b: &Image2D) -> Result<f64> {
    check_extents(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(s / a.data().len() as f64)
}

pub fn mse(a: &Image2D, b: &Image2D) -> Result<f64> {
    check_extents(a, b)?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(s / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `+inf`.
pub fn psnr(a: &Image2D, b: &Image2D, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    /// Normalized 1-D Gaussian window.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let t: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = t.iter().sum();
        t.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filtering of a row-major `f64` field.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &c) in taps.iter().enumerate() {
                acc += c * src[y * w + x + t];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, &c) in taps.iter().enumerate() {
                acc += c * rows[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn ssim_values(a: &Image2D, b: &Image2D, cfg: &SsimConfig) -> Result<(usize, usize, Vec<f64>)> {
    check_extents(a, b)?;
    let k = cfg.window;
    if k == 0 || a.width() < k || a.height() < k {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the {k}x{k} SSIM window",
            a.width(),
            a.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    let x: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = cfg.taps();
    let [mx, my, exx, eyy, exy] = [&x, &y, &xx, &yy, &xy].map(|f| filter_valid(f, w, h, &taps));
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let values = (0..mx.len())
        .map(|i| {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cov = exy[i] - mx[i] * my[i];
            ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2))
        })
        .collect();
    Ok((w - k + 1, h - k + 1, values))
}

/// Local SSIM values over every full window position.
pub fn ssim_map(a: &Image2D, b: &Image2D, cfg: &SsimConfig) -> Result<Image2D> {
    let (w, h, v) = ssim_values(a, b, cfg)?;
    Image2D::new(w, h, v.into_iter().map(|s| s as f32).collect())
}

/// Mean of the SSIM map, accumulated in `f64`.
pub fn ssim(a: &Image2D, b: &Image2D, cfg: &SsimConfig) -> Result<f64> {
    let (_, _, v) = ssim_values(a, b, cfg)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image2D {
        let data = (0..w * h).map(|_| rng.random::<f32>()).collect();
        Image2D::new(w, h, data).unwrap()
    }

    #[test]
    fn mae_and_psnr_examples() {
        let a = Image2D::filled(8, 8, 0.3);
        let b = a.map(|v| v + 0.1);
        assert!((mae(&a, &b).unwrap() - 0.1).abs() < 1e-6);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-4);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(mae(&a, &Image2D::filled(4, 8, 0.0)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 32, 24);
        assert!((ssim(&a, &a, &SsimConfig::default()).unwrap() - 1.0).abs() < 1e-12);
        let bin = Image2D::from_fn(32, 32, |x, y| ((x / 3 + y / 2) % 2) as f32);
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv, &SsimConfig::default()).unwrap() < 0.0);
        assert!(ssim(
            &Image2D::filled(10, 30, 0.0),
            &Image2D::filled(10, 30, 0.0),
            &SsimConfig::default()
        )
        .is_err());
    }

    #[test]
    fn ssim_map_mean_matches_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (
            random_image(&mut rng, 20, 17),
            random_image(&mut rng, 20, 17),
        );
        let cfg = SsimConfig::default();
        let m = ssim_map(&a, &b, &cfg).unwrap();
        assert_eq!((m.width(), m.height()), (10, 7));
        let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / 70.0;
        assert!((mean - ssim(&a, &b, &cfg).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn metrics_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SsimConfig::default();
        for _ in 0..10 {
            let (a, b) = (
                random_image(&mut rng, 16, 16),
                random_image(&mut rng, 16, 16),
            );
            assert_eq!(mae(&a, &b).unwrap(), mae(&b, &a).unwrap());
            assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
            assert!((ssim(&a, &b, &cfg).unwrap() - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_approaches_one_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_image(&mut rng, 24, 24);
        let noise = random_image(&mut rng, 24, 24);
        let cfg = SsimConfig::default();
        let mut prev = f64::NEG_INFINITY;
        for eps in [0.5f32, 0.25, 0.1, 0.05, 0.01, 0.001] {
            let b = Image2D::from_fn(24, 24, |x, y| a.get(x, y) + eps * (noise.get(x, y) - 0.5));
            let s = ssim(&a, &b, &cfg).unwrap();
            assert!(s > prev, "{s} <= {prev}");
            prev = s;
        }
        assert!(prev > 0.999);
    }

    #[test]
    fn flips_do_not_change_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (
            random_image(&mut rng, 20, 14),
            random_image(&mut rng, 20, 14),
        );
        let cfg = SsimConfig::default();
        let base = (
            mae(&a, &b).unwrap(),
            psnr(&a, &b, 1.0).unwrap(),
            ssim(&a, &b, &cfg).unwrap(),
        );
        for (fa, fb) in [(a.flip_lr(), b.flip_lr()), (a.flip_ud(), b.flip_ud())] {
            assert!((mae(&fa, &fb).unwrap() - base.0).abs() < 1e-12);
            assert!((psnr(&fa, &fb, 1.0).unwrap() - base.1).abs() < 1e-9);
            assert!((ssim(&fa, &fb, &cfg).unwrap() - base.2).abs() < 1e-9);
        }
    }
}
