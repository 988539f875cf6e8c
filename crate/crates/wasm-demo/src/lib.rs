//! Browser demo over the core library: a DRR with a couch-roll slider, the
//! FPD simulation chain, and MAE/PSNR/SSIM between the two images.
//!
//! [`Scene`] holds the logic and runs natively; [`Demo`] is the thin
//! JavaScript-facing wrapper.

use fluorosynth::image::Image2D;
use fluorosynth::metrics::{mae, psnr, ssim, SsimConfig};
use fluorosynth::projector::{
    hu_to_attenuation, make_phantom, normalize_ray_sums, project_drr, simulate_fpd,
    AttenuationVolume, FpdSimSpec, PhantomSpec, ProjectionGeometry, MU_WATER,
};
use fluorosynth::Result;
use wasm_bindgen::prelude::*;

/// Detector side in pixels.
pub const DETECTOR: usize = 128;

const EXTENTS: [usize; 3] = [64, 64, 64];
const SPACING_MM: [f64; 3] = [4.0; 3];

/// Knobs of the FPD chain exposed on the page.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpdControls {
    pub gamma: f64,
    pub scatter_fraction: f64,
    pub noise_sigma: f64,
    pub port_edge: bool,
    pub call_cable: bool,
    pub seed: u64,
}

impl Default for FpdControls {
    fn default() -> Self {
        let d = FpdSimSpec::default();
        Self {
            gamma: d.gamma,
            scatter_fraction: d.scatter_fraction,
            noise_sigma: d.noise_sigma,
            port_edge: false,
            call_cable: false,
            seed: 0,
        }
    }
}

impl FpdControls {
    fn spec(&self) -> FpdSimSpec {
        FpdSimSpec {
            gamma: self.gamma,
            scatter_fraction: self.scatter_fraction,
            noise_sigma: self.noise_sigma,
            port_edge: self.port_edge,
            call_cable: self.call_cable,
            seed: self.seed,
            ..FpdSimSpec::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub mae: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub struct Scene {
    volume: AttenuationVolume,
    geometry: ProjectionGeometry,
    /// Window fixed by the zero-roll projection so rolled views stay comparable.
    q_max: f64,
    drr: Image2D,
    fpd: Option<Image2D>,
}

impl Scene {
    pub fn new(phantom_seed: u64) -> Result<Self> {
        let ct = make_phantom(&PhantomSpec::random_case(phantom_seed), EXTENTS, SPACING_MM)?;
        let volume = hu_to_attenuation(&ct, MU_WATER)?;
        let full = ProjectionGeometry::default();
        let geometry = ProjectionGeometry {
            detector_cols: DETECTOR,
            detector_rows: DETECTOR,
            pixel_pitch_mm: full.pixel_pitch_mm * full.detector_cols as f64 / DETECTOR as f64,
            step_mm: 2.0,
            ..full
        };
        let raw = project_drr(&volume, &geometry)?;
        let q_max = raw.min_max().1 as f64;
        let drr = normalize_ray_sums(&raw, q_max)?;
        Ok(Self {
            volume,
            geometry,
            q_max,
            drr,
            fpd: None,
        })
    }

    /// Re-projects at `roll_deg`; the previous FPD is discarded.
    pub fn project(&mut self, roll_deg: f64) -> Result<&Image2D> {
        let geometry = ProjectionGeometry {
            couch_roll_deg: roll_deg,
            ..self.geometry
        };
        geometry.validate()?;
        let raw = project_drr(&self.volume, &geometry)?;
        self.geometry = geometry;
        self.drr = normalize_ray_sums(&raw, self.q_max)?;
        self.fpd = None;
        Ok(&self.drr)
    }

    pub fn simulate(&mut self, controls: &FpdControls) -> Result<&Image2D> {
        let fpd = simulate_fpd(&self.drr, &controls.spec())?;
        Ok(self.fpd.insert(fpd))
    }

    pub fn drr(&self) -> &Image2D {
        &self.drr
    }

    pub fn fpd(&self) -> Option<&Image2D> {
        self.fpd.as_ref()
    }

    pub fn roll_deg(&self) -> f64 {
        self.geometry.couch_roll_deg
    }

    /// DRR against the current FPD, or `None` before the first simulation.
    pub fn compare(&self) -> Result<Option<Scores>> {
        let Some(fpd) = &self.fpd else {
            return Ok(None);
        };
        Ok(Some(Scores {
            mae: mae(&self.drr, fpd)?,
            psnr_db: psnr(&self.drr, fpd, 1.0)?,
            ssim: ssim(&self.drr, fpd, &SsimConfig::default())?,
        }))
    }
}

/// Grey image as RGBA bytes for `ImageData`.
pub fn to_rgba(img: &Image2D) -> Vec<u8> {
    img.data()
        .iter()
        .flat_map(|&v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn js(e: fluorosynth::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(phantom_seed: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            scene: Scene::new(phantom_seed as u64).map_err(js)?,
        })
    }

    pub fn size(&self) -> usize {
        DETECTOR
    }

    /// RGBA pixels of the DRR at `roll_deg`.
    pub fn drr(&mut self, roll_deg: f64) -> std::result::Result<Vec<u8>, JsError> {
        self.scene.project(roll_deg).map(to_rgba).map_err(js)
    }

    /// RGBA pixels of the simulated FPD image of the current DRR.
    pub fn fpd(
        &mut self,
        gamma: f64,
        scatter_fraction: f64,
        noise_sigma: f64,
        port_edge: bool,
        call_cable: bool,
        seed: u32,
    ) -> std::result::Result<Vec<u8>, JsError> {
        let controls = FpdControls {
            gamma,
            scatter_fraction,
            noise_sigma,
            port_edge,
            call_cable,
            seed: seed as u64,
        };
        self.scene.simulate(&controls).map(to_rgba).map_err(js)
    }

    /// `[mae, psnr_db, ssim]`, empty before the first FPD simulation.
    pub fn metrics(&self) -> std::result::Result<Vec<f64>, JsError> {
        Ok(self
            .scene
            .compare()
            .map_err(js)?
            .map(|s| vec![s.mae, s.psnr_db, s.ssim])
            .unwrap_or_default())
    }
}
