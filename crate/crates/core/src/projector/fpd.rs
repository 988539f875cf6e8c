use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

pub const MAX_SHIFT_MM: f64 = 10.0;

/// Degradation chain that turns a normalized DRR into a stand-in FPD image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpdSimSpec {
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Photon count per unit intensity; 0 disables the signal-dependent term.
    pub photon_scale: f64,
    /// Gaussian blur width of the scatter component, in pixels.
    pub scatter_sigma_px: f64,
    pub scatter_fraction: f64,
    pub port_edge: bool,
    pub call_cable: bool,
    /// Darkening of the port-edge band.
    pub port_edge_strength: f64,
    /// Brightening along the cable.
    pub cable_strength: f64,
    /// Translation applied to the volume before projecting the FPD image.
    pub shift_mm: [f64; 3],
    pub seed: u64,
}

impl Default for FpdSimSpec {
    fn default() -> Self {
        Self {
            gamma: 0.6,
            noise_sigma: 0.02,
            photon_scale: 2000.0,
            scatter_sigma_px: 6.0,
            scatter_fraction: 0.2,
            port_edge: false,
            call_cable: false,
            port_edge_strength: 0.25,
            cable_strength: 0.35,
            shift_mm: [0.0; 3],
            seed: 0,
        }
    }
}

impl FpdSimSpec {
    /// Spec that leaves the image untouched.
    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            noise_sigma: 0.0,
            photon_scale: 0.0,
            scatter_sigma_px: 0.0,
            scatter_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.photon_scale >= 0.0 && self.scatter_sigma_px >= 0.0) {
            return Err(Error::invalid(
                "noise and blur parameters must be non-negative",
            ));
        }
        if !(0.0..=1.0).contains(&self.scatter_fraction) {
            return Err(Error::invalid("scatter fraction must lie in [0, 1]"));
        }
        if self.shift_mm.iter().any(|s| !(s.abs() <= MAX_SHIFT_MM)) {
            return Err(Error::invalid(format!(
                "shift {:?} exceeds ±{MAX_SHIFT_MM} mm",
                self.shift_mm
            )));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps, truncated at 3σ.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &Image2D, sigma: f64) -> Image2D {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &Image2D, horizontal: bool| {
        Image2D::from_fn(w as usize, h as usize, |x, y| {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                let o = t as i64 - r;
                let (sx, sy) = if horizontal {
                    ((x as i64 + o).clamp(0, w - 1), y as i64)
                } else {
                    (x as i64, (y as i64 + o).clamp(0, h - 1))
                };
                acc += kt * src.get(sx as usize, sy as usize) as f64;
            }
            acc as f32
        })
    };
    pass(&pass(img, true), false)
}

/// Signed overlay offsets per pixel; zero where no overlay applies.
pub fn overlay_offsets(width: usize, height: usize, spec: &FpdSimSpec) -> Vec<f32> {
    let mut out = vec![0f32; width * height];
    let (w, h) = (width as f64, height as f64);
    if spec.port_edge {
        // Slightly tilted straight band near the right edge.
        let half = (0.03 * w).max(1.0);
        for y in 0..height {
            let center = 0.8 * w + 0.05 * w * (y as f64 / h - 0.5);
            for x in 0..width {
                if (x as f64 + 0.5 - center).abs() <= half {
                    out[y * width + x] -= spec.port_edge_strength as f32;
                }
            }
        }
    }
    if spec.call_cable {
        // Thin sinusoidal curve running top to bottom.
        let half = (0.006 * w).max(0.5);
        for y in 0..height {
            let t = y as f64 / h;
            let center = 0.25 * w + 0.08 * w * (2.0 * std::f64::consts::PI * 1.5 * t).sin();
            for x in 0..width {
                if (x as f64 + 0.5 - center).abs() <= half {
                    out[y * width + x] += spec.cable_strength as f32;
                }
            }
        }
    }
    out
}

/// gamma → scatter → noise → overlays → clamp.
pub fn simulate_fpd(drr: &Image2D, spec: &FpdSimSpec) -> Result<Image2D> {
    spec.validate()?;
    let mut img = drr.map(|v| (v.clamp(0.0, 1.0) as f64).powf(spec.gamma) as f32);
    if spec.scatter_sigma_px > 0.0 && spec.scatter_fraction > 0.0 {
        let blurred = gaussian_blur(&img, spec.scatter_sigma_px);
        let f = spec.scatter_fraction as f32;
        for (v, b) in img.data_mut().iter_mut().zip(blurred.data()) {
            *v = (1.0 - f) * *v + f * b;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.photon_scale > 0.0 || spec.noise_sigma > 0.0 {
        for v in img.data_mut() {
            let mut var = spec.noise_sigma * spec.noise_sigma;
            if spec.photon_scale > 0.0 {
                var += (*v as f64).max(0.0) / spec.photon_scale;
            }
            let n: f64 = rng.sample(StandardNormal);
            *v += (var.sqrt() * n) as f32;
        }
    }
    let overlay = overlay_offsets(img.width(), img.height(), spec);
    for (v, o) in img.data_mut().iter_mut().zip(&overlay) {
        *v = (*v + o).clamp(0.0, 1.0);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image2D {
        Image2D::from_fn(40, 30, |x, y| ((x + 2 * y) % 37) as f32 / 36.0)
    }

    #[test]
    fn identity_settings_leave_input_unchanged() {
        let img = ramp();
        assert_eq!(simulate_fpd(&img, &FpdSimSpec::identity()).unwrap(), img);
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let spec = FpdSimSpec {
            seed: 7,
            ..FpdSimSpec::default()
        };
        let a = simulate_fpd(&ramp(), &spec).unwrap();
        assert_eq!(a, simulate_fpd(&ramp(), &spec).unwrap());
        assert_ne!(
            a,
            simulate_fpd(&ramp(), &FpdSimSpec { seed: 8, ..spec }).unwrap()
        );
    }

    #[test]
    fn gaussian_noise_level_in_flat_region() {
        let flat = Image2D::filled(128, 128, 0.5);
        let spec = FpdSimSpec {
            noise_sigma: 0.05,
            seed: 3,
            ..FpdSimSpec::identity()
        };
        let out = simulate_fpd(&flat, &spec).unwrap();
        let n = out.data().len() as f64;
        let res: Vec<f64> = out.data().iter().map(|&v| v as f64 - 0.5).collect();
        let mean = res.iter().sum::<f64>() / n;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.05).abs() < 0.005, "{sd}");
    }

    #[test]
    fn overlays_change_exactly_the_mask() {
        let img = Image2D::filled(64, 48, 0.5);
        let base = FpdSimSpec {
            seed: 1,
            ..FpdSimSpec::identity()
        };
        let on = FpdSimSpec {
            port_edge: true,
            call_cable: true,
            ..base.clone()
        };
        let off_img = simulate_fpd(&img, &base).unwrap();
        let on_img = simulate_fpd(&img, &on).unwrap();
        let mask = overlay_offsets(64, 48, &on);
        assert!(mask.iter().any(|&m| m < 0.0) && mask.iter().any(|&m| m > 0.0));
        for ((a, b), m) in off_img.data().iter().zip(on_img.data()).zip(&mask) {
            assert_eq!(a != b, *m != 0.0);
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass_roughly() {
        let flat = Image2D::filled(20, 20, 0.3);
        let b = gaussian_blur(&flat, 2.0);
        assert!(b.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));
        let k = gaussian_kernel(1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_bound_is_enforced() {
        let spec = FpdSimSpec {
            shift_mm: [0.0, 10.5, 0.0],
            ..FpdSimSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
