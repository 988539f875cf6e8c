use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::volume::{CtVolume, VolumeGrid, HU_AIR, HU_MAX, HU_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub hu: f32,
}

impl Ellipsoid {
    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    fn surface(&self, n: usize) -> Vec<[f64; 3]> {
        unit_sphere(n)
            .into_iter()
            .map(|u| std::array::from_fn(|a| self.center[a] + self.radii[a] * u[a]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub hu: f32,
}

impl Sphere {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>() <= self.radius * self.radius
    }

    fn as_ellipsoid(&self) -> Ellipsoid {
        Ellipsoid {
            center: self.center,
            radii: [self.radius; 3],
            hu: self.hu,
        }
    }
}

/// Tubular ribs on an elliptic shell inside the body, stacked along z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RibSpec {
    pub period_mm: f64,
    pub tube_radius_mm: f64,
    /// Shell size relative to the body's transverse radii.
    pub shell_scale: f64,
    /// Fraction of the body's z half-length carrying ribs.
    pub z_fraction: f64,
    pub hu: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub body: Ellipsoid,
    pub lungs: Vec<Ellipsoid>,
    pub ribs: Option<RibSpec>,
    pub tumor: Option<Sphere>,
    pub marker: Option<Sphere>,
    /// Standard deviation of voxel noise added inside the body.
    pub texture_hu: f32,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            body: Ellipsoid {
                center: [0.0; 3],
                radii: [120.0, 85.0, 110.0],
                hu: 40.0,
            },
            lungs: vec![
                Ellipsoid {
                    center: [-52.0, 0.0, 10.0],
                    radii: [40.0, 55.0, 85.0],
                    hu: -800.0,
                },
                Ellipsoid {
                    center: [52.0, 0.0, 10.0],
                    radii: [40.0, 55.0, 85.0],
                    hu: -800.0,
                },
            ],
            ribs: Some(RibSpec {
                period_mm: 24.0,
                tube_radius_mm: 5.0,
                shell_scale: 0.9,
                z_fraction: 0.75,
                hu: 700.0,
            }),
            tumor: Some(Sphere {
                center: [45.0, 5.0, 20.0],
                radius: 14.0,
                hu: 60.0,
            }),
            marker: Some(Sphere {
                center: [45.0, 5.0, 38.0],
                radius: 2.0,
                hu: 3000.0,
            }),
            texture_hu: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn body_only(body: Ellipsoid) -> Self {
        Self {
            body,
            lungs: Vec::new(),
            ribs: None,
            tumor: None,
            marker: None,
            texture_hu: 0.0,
            seed: 0,
        }
    }

    /// Seeded anatomical variation around the default thorax.
    pub fn random_case(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = Self::default();
        let s = rng.random_range(0.9..1.05);
        spec.body.radii = [120.0 * s, 85.0 * rng.random_range(0.92..1.05), 110.0];
        let lung_scale = rng.random_range(0.85..1.0);
        let lung_dz = rng.random_range(-8.0..8.0);
        for (lung, side) in spec.lungs.iter_mut().zip([-1.0, 1.0]) {
            lung.center = [side * 52.0 * s, rng.random_range(-4.0..4.0), 10.0 + lung_dz];
            lung.radii = [40.0 * s * lung_scale, 52.0 * lung_scale, 80.0 * lung_scale];
        }
        if let Some(ribs) = spec.ribs.as_mut() {
            ribs.period_mm = rng.random_range(21.0..27.0);
        }
        let lung = &spec.lungs[rng.random_range(0..2)];
        let radius = rng.random_range(8.0..16.0);
        let reach = [
            lung.radii[0] - radius - 4.0,
            lung.radii[1] - radius - 4.0,
            lung.radii[2] - radius - 4.0,
        ];
        let center: [f64; 3] =
            std::array::from_fn(|a| lung.center[a] + rng.random_range(-0.5..0.5) * reach[a]);
        spec.tumor = Some(Sphere {
            center,
            radius,
            hu: rng.random_range(20.0..80.0),
        });
        spec.marker = rng.random_bool(0.5).then(|| Sphere {
            center: [center[0], center[1], center[2] + radius + 3.0],
            radius: 2.0,
            hu: 3000.0,
        });
        spec.texture_hu = 15.0;
        spec.seed = rng.random();
        spec
    }

    fn shapes(&self) -> Vec<(&'static str, Ellipsoid)> {
        let mut out = vec![("body", self.body.clone())];
        out.extend(self.lungs.iter().map(|l| ("lung", l.clone())));
        out.extend(self.tumor.iter().map(|t| ("tumor", t.as_ellipsoid())));
        out.extend(self.marker.iter().map(|m| ("marker", m.as_ellipsoid())));
        out
    }

    pub fn validate(&self, grid: &VolumeGrid) -> Result<()> {
        grid.validate()?;
        let (lo, hi) = grid.bounds();
        for (name, e) in self.shapes() {
            if !e.radii.iter().all(|&r| r > 0.0 && r.is_finite()) {
                return Err(Error::invalid(format!("{name} radii must be positive")));
            }
            if !(HU_MIN..=HU_MAX).contains(&e.hu) {
                return Err(Error::invalid(format!(
                    "{name} HU {} outside CT range",
                    e.hu
                )));
            }
            if (0..3).any(|a| e.center[a] - e.radii[a] < lo[a] || e.center[a] + e.radii[a] > hi[a])
            {
                return Err(Error::invalid(format!(
                    "{name} does not fit inside the volume"
                )));
            }
            if name != "body" && e.surface(256).iter().any(|&p| !self.body.contains(p)) {
                return Err(Error::invalid(format!("{name} extends outside the body")));
            }
        }
        for (i, a) in self.lungs.iter().enumerate() {
            for b in &self.lungs[i + 1..] {
                if a.surface(256).iter().any(|&p| b.contains(p))
                    || b.surface(256).iter().any(|&p| a.contains(p))
                {
                    return Err(Error::invalid("lung ellipsoids overlap"));
                }
            }
        }
        if let Some(r) = &self.ribs {
            let inner = self.body.radii[0].min(self.body.radii[1]);
            if !(r.period_mm > 2.0 * r.tube_radius_mm && r.tube_radius_mm > 0.0) {
                return Err(Error::invalid("rib period must exceed the rib diameter"));
            }
            if !(r.shell_scale > 0.0 && r.tube_radius_mm < (1.0 - r.shell_scale) * inner) {
                return Err(Error::invalid("rib shell extends outside the body"));
            }
            if !(0.0..=1.0).contains(&r.z_fraction) || !(HU_MIN..=HU_MAX).contains(&r.hu) {
                return Err(Error::invalid("rib z fraction or HU out of range"));
            }
        }
        if !(self.texture_hu >= 0.0) {
            return Err(Error::invalid("texture deviation must be non-negative"));
        }
        Ok(())
    }

    fn in_rib(&self, p: [f64; 3]) -> bool {
        let Some(r) = &self.ribs else { return false };
        let b = &self.body;
        let (x, y, z) = (p[0] - b.center[0], p[1] - b.center[1], p[2] - b.center[2]);
        if z.abs() > r.z_fraction * b.radii[2] {
            return false;
        }
        let (ax, ay) = (r.shell_scale * b.radii[0], r.shell_scale * b.radii[1]);
        let rn = ((x / ax).powi(2) + (y / ay).powi(2)).sqrt();
        if rn == 0.0 {
            return false;
        }
        let dr = (rn - 1.0) * (x * x + y * y).sqrt() / rn;
        let dz = z - (z / r.period_mm).round() * r.period_mm;
        dr * dr + dz * dz <= r.tube_radius_mm * r.tube_radius_mm
    }

    /// Tissue label at a point, by priority.
    pub fn classify(&self, p: [f64; 3]) -> Option<f32> {
        if let Some(m) = self.marker.as_ref().filter(|m| m.contains(p)) {
            return Some(m.hu);
        }
        if !self.body.contains(p) {
            return None;
        }
        if self.in_rib(p) {
            return self.ribs.as_ref().map(|r| r.hu);
        }
        if let Some(t) = self.tumor.as_ref().filter(|t| t.contains(p)) {
            return Some(t.hu);
        }
        if let Some(l) = self.lungs.iter().find(|l| l.contains(p)) {
            return Some(l.hu);
        }
        Some(self.body.hu)
    }
}

fn unit_sphere(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            [r * t.cos(), r * t.sin(), z]
        })
        .collect()
}

/// Voxelizes a phantom on a grid centred at the world origin.
pub fn make_phantom(
    spec: &PhantomSpec,
    extents: [usize; 3],
    spacing: [f64; 3],
) -> Result<CtVolume> {
    let grid = VolumeGrid::centered(extents, spacing);
    spec.validate(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut hu = Vec::with_capacity(grid.len());
    for k in 0..extents[2] {
        for j in 0..extents[1] {
            for i in 0..extents[0] {
                let v = match spec.classify(grid.position(i, j, k)) {
                    None => HU_AIR,
                    Some(base) if spec.texture_hu > 0.0 => {
                        let n: f32 = rng.sample(StandardNormal);
                        (base + spec.texture_hu * n).clamp(HU_MIN, HU_MAX)
                    }
                    Some(base) => base,
                };
                hu.push(v);
            }
        }
    }
    CtVolume::new(grid, hu)
}
