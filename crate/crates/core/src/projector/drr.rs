use serde::{Deserialize, Serialize};

use super::volume::AttenuationVolume;
use crate::error::{Error, Result};
use crate::image::Image2D;

/// Cone-beam imaging geometry. The source sits at `(0, -sid, 0)`, the
/// detector plane at `y = sdd - sid` with columns along +x and rows running
/// from +z downwards. Couch roll rotates the volume about the z axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionGeometry {
    pub sdd_mm: f64,
    pub sid_mm: f64,
    pub detector_cols: usize,
    pub detector_rows: usize,
    pub pixel_pitch_mm: f64,
    pub couch_roll_deg: f64,
    pub step_mm: f64,
}

impl Default for ProjectionGeometry {
    fn default() -> Self {
        Self {
            sdd_mm: 2390.0,
            sid_mm: 1690.0,
            detector_cols: 768,
            detector_rows: 768,
            pixel_pitch_mm: 0.388,
            couch_roll_deg: 0.0,
            step_mm: 1.0,
        }
    }
}

pub const MAX_ROLL_DEG: f64 = 20.0;

impl ProjectionGeometry {
    /// Coarse detector with the same field of view, for desk-scale runs.
    pub fn toy() -> Self {
        Self {
            detector_cols: 160,
            detector_rows: 160,
            pixel_pitch_mm: 0.388 * 4.8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sid_mm > 0.0 && self.sid_mm < self.sdd_mm) {
            return Err(Error::invalid(format!(
                "source-to-isocenter {} must be positive and below source-to-detector {}",
                self.sid_mm, self.sdd_mm
            )));
        }
        if !(self.pixel_pitch_mm > 0.0) || !(self.step_mm > 0.0) {
            return Err(Error::invalid("pixel pitch and step must be positive"));
        }
        if self.detector_cols == 0 || self.detector_rows == 0 {
            return Err(Error::invalid("detector has no pixels"));
        }
        if !(self.couch_roll_deg.abs() <= MAX_ROLL_DEG) {
            return Err(Error::invalid(format!(
                "couch roll {} outside ±{MAX_ROLL_DEG} degrees",
                self.couch_roll_deg
            )));
        }
        Ok(())
    }

    pub fn source(&self) -> [f64; 3] {
        [0.0, -self.sid_mm, 0.0]
    }

    /// World position of a detector pixel centre.
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 3] {
        let u = (col as f64 + 0.5 - 0.5 * self.detector_cols as f64) * self.pixel_pitch_mm;
        let v = (0.5 * self.detector_rows as f64 - row as f64 - 0.5) * self.pixel_pitch_mm;
        [u, self.sdd_mm - self.sid_mm, v]
    }

    /// Maps a world point into the (rolled) volume frame.
    fn to_volume_frame(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = (-self.couch_roll_deg).to_radians().sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
    }
}

/// Parametric entry/exit distances of a ray against an axis-aligned box.
pub fn ray_box(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a] < lo[a] || origin[a] > hi[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut ta, mut tb) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
}

/// Fixed-step ray sum `Σ ΔL·μ` along a unit direction. Samples sit at the
/// midpoint of each step; the last step is shortened to end at the exit.
pub fn ray_sum(volume: &AttenuationVolume, origin: [f64; 3], dir: [f64; 3], step: f64) -> f64 {
    let (lo, hi) = volume.grid().bounds();
    let Some((t0, t1)) = ray_box(origin, dir, lo, hi) else {
        return 0.0;
    };
    let length = t1 - t0;
    let steps = (length / step).ceil() as usize;
    let g = volume.grid();
    let f0: [f64; 3] =
        std::array::from_fn(|a| (origin[a] + t0 * dir[a] - g.origin[a]) / g.spacing[a]);
    let df: [f64; 3] = std::array::from_fn(|a| dir[a] / g.spacing[a]);
    let mut q = 0.0;
    for k in 0..steps {
        let start = k as f64 * step;
        let seg = step.min(length - start);
        if seg <= 0.0 {
            break;
        }
        let t = start + 0.5 * seg;
        q += seg * volume.sample_voxel([f0[0] + t * df[0], f0[1] + t * df[1], f0[2] + t * df[2]]);
    }
    q
}

/// Raw DRR: one ray sum per detector pixel.
pub fn project_drr(volume: &AttenuationVolume, geometry: &ProjectionGeometry) -> Result<Image2D> {
    geometry.validate()?;
    let (lo, hi) = volume.grid().bounds();
    let src = geometry.to_volume_frame(geometry.source());
    if (0..3).all(|a| src[a] >= lo[a] && src[a] <= hi[a]) {
        return Err(Error::invalid("source lies inside the volume"));
    }
    let cols = geometry.detector_cols;
    let render_row = |row: usize, out: &mut [f32]| {
        for (col, px) in out.iter_mut().enumerate() {
            let p = geometry.to_volume_frame(geometry.pixel_center(col, row));
            let d = [p[0] - src[0], p[1] - src[1], p[2] - src[2]];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            *px = ray_sum(
                volume,
                src,
                [d[0] / n, d[1] / n, d[2] / n],
                geometry.step_mm,
            ) as f32;
        }
    };
    let mut data = vec![0f32; cols * geometry.detector_rows];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(row, out)| render_row(row, out));
    }
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(cols)
        .enumerate()
        .for_each(|(row, out)| render_row(row, out));
    Image2D::new(cols, geometry.detector_rows, data)
}

/// Maps `[0, q_max]` onto `[0, 1]`, clamping above.
pub fn normalize_ray_sums(raw: &Image2D, q_max: f64) -> Result<Image2D> {
    if !(q_max > 0.0 && q_max.is_finite()) {
        return Err(Error::invalid(format!(
            "normalization maximum must be positive, got {q_max}"
        )));
    }
    Ok(raw.map(|q| ((q as f64 / q_max).clamp(0.0, 1.0)) as f32))
}
