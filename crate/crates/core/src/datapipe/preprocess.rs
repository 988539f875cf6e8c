use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;

/// Sizes and thresholds of the preprocessing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub border_margin: usize,
    pub resize_to: usize,
    pub subimage_size: usize,
    pub subimages_per_image: usize,
    pub air_threshold: f64,
    /// Normalized DRR value below which a pixel counts as air.
    pub air_level: f32,
    pub attempt_budget: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            border_margin: 20,
            resize_to: 384,
            subimage_size: 144,
            subimages_per_image: 20,
            air_threshold: 0.40,
            air_level: 0.02,
            attempt_budget: 1000,
        }
    }
}

impl PreprocessConfig {
    pub fn toy() -> Self {
        Self {
            border_margin: 4,
            resize_to: 64,
            subimage_size: 40,
            subimages_per_image: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subimage_size == 0 || self.subimage_size > self.resize_to {
            return Err(Error::invalid(format!(
                "subimage size {} must lie in 1..={}",
                self.subimage_size, self.resize_to
            )));
        }
        if !(0.0..=1.0).contains(&self.air_threshold) {
            return Err(Error::invalid("air threshold must lie in [0, 1]"));
        }
        if self.resize_to < 2 {
            return Err(Error::invalid("resize target must be at least 2"));
        }
        Ok(())
    }

    /// Border crop then bilinear resize.
    pub fn apply(&self, image: &Image2D) -> Result<Image2D> {
        let cropped = crop_border(image, self.border_margin)?;
        Ok(resize_bilinear(&cropped, self.resize_to, self.resize_to))
    }
}

/// Drops `margin` pixels from every edge.
pub fn crop_border(image: &Image2D, margin: usize) -> Result<Image2D> {
    if 2 * margin >= image.width() || 2 * margin >= image.height() {
        return Err(Error::invalid(format!(
            "margin {margin} too large for {}x{} image",
            image.width(),
            image.height()
        )));
    }
    image.crop(
        margin,
        margin,
        image.width() - 2 * margin,
        image.height() - 2 * margin,
    )
}

/// Corner-aligned bilinear resampling: output corners coincide with input
/// corners.
pub fn resize_bilinear(image: &Image2D, width: usize, height: usize) -> Image2D {
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let s = if n_out == 1 {
                    0.0
                } else {
                    o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let i0 = (s.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(width, image.width());
    let ys = axis(height, image.height());
    Image2D::from_fn(width, height, |x, y| {
        let (x0, x1, fx) = xs[x];
        let (y0, y1, fy) = ys[y];
        let top = image.get(x0, y0) as f64 * (1.0 - fx) + image.get(x1, y0) as f64 * fx;
        let bottom = image.get(x0, y1) as f64 * (1.0 - fx) + image.get(x1, y1) as f64 * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    })
}

/// Clamp to `[lo, hi]`, then map affinely onto `[0, 1]`.
pub fn normalize(image: &Image2D, lo: f64, hi: f64) -> Result<Image2D> {
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "degenerate normalization window [{lo}, {hi}]"
        )));
    }
    let span = hi - lo;
    Ok(image.map(|v| ((v as f64).clamp(lo, hi) - lo) as f32 / span as f32))
}

/// Inverse of [`normalize`] on `[0, 1]`.
pub fn denormalize(image: &Image2D, lo: f64, hi: f64) -> Image2D {
    image.map(|v| (lo + v as f64 * (hi - lo)) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crop_border_sizes_and_indexing() {
        let img = Image2D::from_fn(768, 768, |x, y| (x * 1000 + y) as f32);
        let c = crop_border(&img, 20).unwrap();
        assert_eq!((c.width(), c.height()), (728, 728));
        assert_eq!(c.get(0, 0), img.get(20, 20));
        assert_eq!(crop_border(&img, 0).unwrap(), img);
        assert!(crop_border(&img, 384).is_err());
    }

    #[test]
    fn checkerboard_midpoint() {
        let img = Image2D::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize_bilinear(&img, 3, 3);
        assert_eq!(r.get(1, 1), 0.5);
        assert_eq!(r.get(0, 0), 0.0);
        assert_eq!(r.get(2, 0), 1.0);
    }

    #[test]
    fn ramp_stays_linear() {
        let img = Image2D::from_fn(728, 728, |x, _| x as f32 / 727.0);
        let r = resize_bilinear(&img, 384, 384);
        for y in [0, 100, 383] {
            for x in 0..384 {
                assert!((r.get(x, y) - x as f32 / 383.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn constant_survives_full_chain() {
        let img = Image2D::filled(768, 768, 0.4375);
        let out = PreprocessConfig::default().apply(&img).unwrap();
        assert_eq!((out.width(), out.height()), (384, 384));
        assert!(out.data().iter().all(|&v| v == 0.4375));
    }

    #[test]
    fn normalize_examples() {
        let img = Image2D::new(3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(normalize(&img, 0.0, 1.0).unwrap(), img);
        let hi = Image2D::filled(4, 4, 7.5);
        assert!(normalize(&hi, 2.0, 7.5)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(normalize(&img, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn resize_stays_within_source_range(
            vals in prop::collection::vec(-3.0f32..3.0, 20),
            w in 1usize..30, h in 1usize..30,
        ) {
            let img = Image2D::new(5, 4, vals).unwrap();
            let (lo, hi) = img.min_max();
            let r = resize_bilinear(&img, w, h);
            for &v in r.data() {
                prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }

        #[test]
        fn normalization_round_trip_through_pgm(raw in prop::collection::vec(0.0f32..50.0, 16)) {
            let (lo, hi) = (0.0, 50.0);
            let img = Image2D::new(4, 4, raw).unwrap();
            let n = normalize(&img, lo, hi).unwrap();
            let back = denormalize(&Image2D::from_pgm(&n.to_pgm16(), "mem").unwrap(), lo, hi);
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!(((a - b) / (hi - lo) as f32).abs() <= 1.0 / 65535.0);
            }
        }
    }
}
