use rand::Rng;
use serde::{Deserialize, Serialize};

use super::preprocess::PreprocessConfig;
use crate::error::{Error, Result};
use crate::gradcore::reflect_index;
use crate::image::Image2D;
use crate::seeds::stream_rng;

/// Paired DRR and FPD views of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub drr: Image2D,
    pub fpd: Image2D,
    pub case_id: u32,
    pub frame_id: u32,
    pub geometry: String,
}

impl ImagePair {
    pub fn new(
        drr: Image2D,
        fpd: Image2D,
        case_id: u32,
        frame_id: u32,
        geometry: impl Into<String>,
    ) -> Result<Self> {
        if !drr.same_extent(&fpd) {
            return Err(Error::shape(format!(
                "DRR {}x{} and FPD {}x{} differ in size",
                drr.width(),
                drr.height(),
                fpd.width(),
                fpd.height()
            )));
        }
        Ok(Self {
            drr,
            fpd,
            case_id,
            frame_id,
            geometry: geometry.into(),
        })
    }

    /// Stable identifier used to key random streams.
    pub fn pair_id(&self) -> u64 {
        (self.case_id as u64) << 32 | self.frame_id as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subimage {
    pub x: usize,
    pub y: usize,
    pub drr: Image2D,
    pub fpd: Image2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubimageSet {
    pub case_id: u32,
    pub frame_id: u32,
    pub items: Vec<Subimage>,
    pub attempts: usize,
}

impl SubimageSet {
    pub fn positions(&self) -> Vec<[usize; 2]> {
        self.items.iter().map(|s| [s.x, s.y]).collect()
    }
}

pub fn air_fraction(drr: &Image2D, x0: usize, y0: usize, size: usize, air_level: f32) -> f64 {
    let mut air = 0usize;
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            if drr.get(x, y) < air_level {
                air += 1;
            }
        }
    }
    air as f64 / (size * size) as f64
}

/// Seeded rejection sampling of subimage positions under the air rule.
pub fn extract_subimages(
    pair: &ImagePair,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<SubimageSet> {
    cfg.validate()?;
    let size = cfg.subimage_size;
    if size > pair.drr.width() || size > pair.drr.height() {
        return Err(Error::invalid(format!(
            "subimage size {size} exceeds image extent"
        )));
    }
    let mut rng = stream_rng(&[seed, 0x5B, pair.pair_id()]);
    let mut items: Vec<Subimage> = Vec::new();
    let mut attempts = 0;
    while items.len() < cfg.subimages_per_image && attempts < cfg.attempt_budget {
        attempts += 1;
        let x = rng.random_range(0..=pair.drr.width() - size);
        let y = rng.random_range(0..=pair.drr.height() - size);
        if items.iter().any(|s| s.x == x && s.y == y) {
            continue;
        }
        if air_fraction(&pair.drr, x, y, size, cfg.air_level) < cfg.air_threshold {
            items.push(Subimage {
                x,
                y,
                drr: pair.drr.crop(x, y, size, size)?,
                fpd: pair.fpd.crop(x, y, size, size)?,
            });
        }
    }
    Ok(SubimageSet {
        case_id: pair.case_id,
        frame_id: pair.frame_id,
        items,
        attempts,
    })
}

/// Re-crops subimages at recorded positions.
pub fn subimages_at(
    pair: &ImagePair,
    size: usize,
    positions: &[[usize; 2]],
) -> Result<SubimageSet> {
    let items = positions
        .iter()
        .map(|&[x, y]| {
            Ok(Subimage {
                x,
                y,
                drr: pair.drr.crop(x, y, size, size)?,
                fpd: pair.fpd.crop(x, y, size, size)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SubimageSet {
        case_id: pair.case_id,
        frame_id: pair.frame_id,
        items,
        attempts: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    pub crop: usize,
    pub max_shift: usize,
    pub flip_lr_prob: f64,
    pub flip_ud_prob: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            crop: 124,
            max_shift: 20,
            flip_lr_prob: 0.5,
            flip_ud_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn toy() -> Self {
        Self {
            crop: 32,
            max_shift: 4,
            ..Self::default()
        }
    }

    /// Checks these settings against a subimage size. Shifted windows may leave the
    /// subimage by up to one reflection period.
    pub fn validate(&self, size: usize) -> Result<()> {
        if self.crop == 0 || self.crop > size {
            return Err(Error::invalid(format!(
                "crop {} must lie in 1..={size}",
                self.crop
            )));
        }
        let margin = (size - self.crop) / 2;
        if self.max_shift > margin + size - 1 {
            return Err(Error::invalid(format!(
                "shift {} too large for {size} subimages",
                self.max_shift
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_lr_prob) || !(0.0..=1.0).contains(&self.flip_ud_prob) {
            return Err(Error::invalid("flip probabilities must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    pub dx: i64,
    pub dy: i64,
    pub flip_lr: bool,
    pub flip_ud: bool,
}

impl AugmentSpec {
    pub fn draw(&self, pair_id: u64, epoch: u64, index: u64) -> AugmentDraw {
        let mut rng = stream_rng(&[self.seed, 0xA6, pair_id, epoch, index]);
        let s = self.max_shift as i64;
        AugmentDraw {
            dx: rng.random_range(-s..=s),
            dy: rng.random_range(-s..=s),
            flip_lr: rng.random_bool(self.flip_lr_prob),
            flip_ud: rng.random_bool(self.flip_ud_prob),
        }
    }
}

/// Applies a draw to one image: window of `crop` pixels centred then
/// shifted by `(dx, dy)`, reflecting at the subimage border, then flips.
pub fn apply_draw(image: &Image2D, crop: usize, d: AugmentDraw) -> Image2D {
    let ox = (image.width() - crop) as i64 / 2 + d.dx;
    let oy = (image.height() - crop) as i64 / 2 + d.dy;
    let out = Image2D::from_fn(crop, crop, |x, y| {
        let sx = reflect_index((ox + x as i64) as isize, image.width());
        let sy = reflect_index((oy + y as i64) as isize, image.height());
        image.get(sx, sy)
    });
    let out = if d.flip_lr { out.flip_lr() } else { out };
    if d.flip_ud {
        out.flip_ud()
    } else {
        out
    }
}

/// Random crop and flips shared by both images of a subimage pair, keyed on
/// `(seed, pair id, epoch, index)`.
pub fn augment(
    sub: &Subimage,
    spec: &AugmentSpec,
    pair_id: u64,
    epoch: u64,
    index: u64,
) -> Result<(Image2D, Image2D, AugmentDraw)> {
    spec.validate(sub.drr.width().min(sub.drr.height()))?;
    let d = spec.draw(pair_id, epoch, index);
    Ok((
        apply_draw(&sub.drr, spec.crop, d),
        apply_draw(&sub.fpd, spec.crop, d),
        d,
    ))
}
