use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const HU_MIN: f32 = -1024.0;
pub const HU_MAX: f32 = 4000.0;
pub const HU_AIR: f32 = -1000.0;

const FSVOL_MAGIC: &[u8; 4] = b"FSVL";

/// Voxel lattice in millimetres. `origin` is the centre of voxel (0, 0, 0);
/// values are stored x-fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeGrid {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl VolumeGrid {
    /// Grid whose centre sits at the world origin.
    pub fn centered(extents: [usize; 3], spacing: [f64; 3]) -> Self {
        let origin = std::array::from_fn(|a| -0.5 * (extents[a] as f64 - 1.0) * spacing[a]);
        Self {
            extents,
            spacing,
            origin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.contains(&0) {
            return Err(Error::invalid(format!(
                "volume extents {:?} contain zero",
                self.extents
            )));
        }
        if !self.spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!(
                "voxel spacing {:?} must be positive",
                self.spacing
            )));
        }
        if !self.origin.iter().all(|o| o.is_finite()) {
            return Err(Error::invalid("volume origin is not finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.extents[1] + j) * self.extents[0] + i
    }

    /// World position of a voxel centre.
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Axis-aligned box covered by the voxels (outer faces).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let lo = std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a]);
        let hi = std::array::from_fn(|a| {
            self.origin[a] + (self.extents[a] as f64 - 0.5) * self.spacing[a]
        });
        (lo, hi)
    }
}

/// CT volume in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    grid: VolumeGrid,
    hu: Vec<f32>,
}

impl CtVolume {
    pub fn new(grid: VolumeGrid, hu: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if hu.len() != grid.len() {
            return Err(Error::shape(format!(
                "{:?} volume needs {} voxels, got {}",
                grid.extents,
                grid.len(),
                hu.len()
            )));
        }
        if let Some(v) = hu.iter().find(|v| !(HU_MIN..=HU_MAX).contains(*v)) {
            return Err(Error::invalid(format!(
                "HU value {v} outside [{HU_MIN}, {HU_MAX}]"
            )));
        }
        Ok(Self { grid, hu })
    }

    pub fn filled(grid: VolumeGrid, value: f32) -> Result<Self> {
        Self::new(grid, vec![value; grid.len()])
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn hu(&self) -> &[f32] {
        &self.hu
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.hu[self.grid.index(i, j, k)]
    }

    /// Same voxels, anatomy translated by `shift_mm`.
    pub fn shifted(&self, shift_mm: [f64; 3]) -> Self {
        let mut grid = self.grid;
        for a in 0..3 {
            grid.origin[a] += shift_mm[a];
        }
        Self {
            grid,
            hu: self.hu.clone(),
        }
    }

    /// Appends `before`/`after` copies of the first/last axial slice.
    pub fn extend_slices(&self, before: usize, after: usize) -> Self {
        let [nx, ny, nz] = self.grid.extents;
        let slice = nx * ny;
        let mut hu = Vec::with_capacity(slice * (nz + before + after));
        for _ in 0..before {
            hu.extend_from_slice(&self.hu[..slice]);
        }
        hu.extend_from_slice(&self.hu);
        for _ in 0..after {
            hu.extend_from_slice(&self.hu[slice * (nz - 1)..]);
        }
        let mut grid = self.grid;
        grid.extents[2] = nz + before + after;
        grid.origin[2] -= before as f64 * grid.spacing[2];
        Self { grid, hu }
    }

    pub fn to_fsvol(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 2 * self.hu.len());
        out.extend_from_slice(FSVOL_MAGIC);
        for &e in &self.grid.extents {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &s in &self.grid.spacing {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
        for &o in &self.grid.origin {
            out.extend_from_slice(&(o as f32).to_le_bytes());
        }
        for &v in &self.hu {
            out.extend_from_slice(&(v.round() as i16).to_le_bytes());
        }
        out
    }

    pub fn from_fsvol(bytes: &[u8], context: &str) -> Result<Self> {
        let err = |m: &str| Error::format(context, m.to_string());
        if bytes.len() < 40 || &bytes[..4] != FSVOL_MAGIC {
            return Err(err("missing FSVL header"));
        }
        let word = |i: usize| {
            [
                bytes[4 + 4 * i],
                bytes[5 + 4 * i],
                bytes[6 + 4 * i],
                bytes[7 + 4 * i],
            ]
        };
        let extents = std::array::from_fn(|a| u32::from_le_bytes(word(a)) as usize);
        let spacing = std::array::from_fn(|a| f32::from_le_bytes(word(3 + a)) as f64);
        let origin = std::array::from_fn(|a| f32::from_le_bytes(word(6 + a)) as f64);
        let grid = VolumeGrid {
            extents,
            spacing,
            origin,
        };
        let payload = &bytes[40..];
        if payload.len() != 2 * grid.len() {
            return Err(err("payload size does not match extents"));
        }
        let hu = payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
            .collect();
        Self::new(grid, hu).map_err(|e| err(&e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_fsvol()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_fsvol(&bytes, &path.display().to_string())
    }
}

/// Linear attenuation coefficients per millimetre.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationVolume {
    grid: VolumeGrid,
    mu: Vec<f32>,
}

impl AttenuationVolume {
    pub fn new(grid: VolumeGrid, mu: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if mu.len() != grid.len() {
            return Err(Error::shape(format!(
                "{:?} volume needs {} voxels, got {}",
                grid.extents,
                grid.len(),
                mu.len()
            )));
        }
        Ok(Self { grid, mu })
    }

    pub fn uniform(grid: VolumeGrid, mu: f32) -> Result<Self> {
        Self::new(grid, vec![mu; grid.len()])
    }

    pub fn grid(&self) -> &VolumeGrid {
        &self.grid
    }

    pub fn mu(&self) -> &[f32] {
        &self.mu
    }

    /// Trilinear interpolation at a world point. Points inside the voxel box
    /// but beyond the outermost centres take the edge value; outside is 0.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let g = &self.grid;
        let mut f = [0f64; 3];
        for a in 0..3 {
            f[a] = (p[a] - g.origin[a]) / g.spacing[a];
            if !(-0.5..=g.extents[a] as f64 - 0.5).contains(&f[a]) {
                return 0.0;
            }
        }
        self.sample_voxel(f)
    }

    /// Trilinear interpolation at continuous voxel coordinates, clamped to
    /// the outermost centres.
    #[inline]
    pub(crate) fn sample_voxel(&self, f: [f64; 3]) -> f64 {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = g.extents[a];
            let f = f[a].clamp(0.0, (n - 1) as f64);
            let i = (f as usize).min(n.saturating_sub(2));
            base[a] = i;
            frac[a] = if n == 1 { 0.0 } else { f - i as f64 };
        }
        let step = [1, g.extents[0], g.extents[0] * g.extents[1]];
        let i0 = g.index(base[0], base[1], base[2]);
        if g.extents.iter().all(|&n| n >= 2) {
            let m = &self.mu;
            let [fx, fy, fz] = frac;
            let lerp = |a: f32, b: f32, t: f64| a as f64 + (b as f64 - a as f64) * t;
            let (sy, sz) = (step[1], step[2]);
            let c00 = lerp(m[i0], m[i0 + 1], fx);
            let c10 = lerp(m[i0 + sy], m[i0 + sy + 1], fx);
            let c01 = lerp(m[i0 + sz], m[i0 + sz + 1], fx);
            let c11 = lerp(m[i0 + sy + sz], m[i0 + sy + sz + 1], fx);
            let c0 = c00 + (c10 - c00) * fy;
            let c1 = c01 + (c11 - c01) * fy;
            return c0 + (c1 - c0) * fz;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let mut w = 1.0;
            let mut idx = i0;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    if g.extents[a] == 1 {
                        w = 0.0;
                        break;
                    }
                    w *= frac[a];
                    idx += step[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.mu[idx] as f64;
            }
        }
        acc
    }
}

/// `μ = mu_water · (1 + HU/1000)`, clamped at zero.
pub fn hu_to_attenuation(volume: &CtVolume, mu_water: f64) -> Result<AttenuationVolume> {
    if !(mu_water > 0.0 && mu_water.is_finite()) {
        return Err(Error::invalid(format!(
            "mu_water must be positive, got {mu_water}"
        )));
    }
    let mu = volume
        .hu
        .iter()
        .map(|&h| (mu_water * (1.0 + h as f64 / 1000.0)).max(0.0) as f32)
        .collect();
    AttenuationVolume::new(volume.grid, mu)
}
