use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::pairs::{extract_subimages, subimages_at, ImagePair, Subimage};
use super::preprocess::{normalize, PreprocessConfig};
use crate::error::{Error, Result};
use crate::image::{snap16, Image2D};
use crate::projector::{
    hu_to_attenuation, make_phantom, project_drr, simulate_fpd, FpdSimSpec, PhantomSpec,
    ProjectionGeometry, MU_WATER,
};
use crate::seeds::{stream_rng, stream_seed};

pub const MANIFEST_FORMAT: &str = "fluorosynth-dataset/1";

/// Everything needed to regenerate a paired phantom dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub train_cases: usize,
    pub train_pairs: usize,
    pub test_cases: usize,
    pub test_pairs: usize,
    pub shift_range_mm: [f64; 2],
    pub roll_range_deg: f64,
    pub volume_extents: [usize; 3],
    pub voxel_spacing_mm: [f64; 3],
    pub mu_water: f64,
    pub geometry: ProjectionGeometry,
    /// Template for the per-frame FPD chain; seed, shift and overlay
    /// toggles are drawn per frame.
    pub fpd: FpdSimSpec,
    pub port_edge_prob: f64,
    pub call_cable_prob: f64,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            train_cases: 79,
            train_pairs: 304,
            test_cases: 28,
            test_pairs: 100,
            shift_range_mm: [3.0, 8.0],
            roll_range_deg: 20.0,
            volume_extents: [256, 256, 200],
            voxel_spacing_mm: [1.0, 1.0, 1.25],
            mu_water: MU_WATER,
            geometry: ProjectionGeometry::default(),
            fpd: FpdSimSpec::default(),
            port_edge_prob: 0.3,
            call_cable_prob: 0.3,
            preprocess: PreprocessConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn toy() -> Self {
        Self {
            train_cases: 16,
            train_pairs: 64,
            test_cases: 4,
            test_pairs: 16,
            volume_extents: [64, 64, 64],
            voxel_spacing_mm: [4.0; 3],
            geometry: ProjectionGeometry::toy(),
            preprocess: PreprocessConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_cases == 0 || self.train_pairs < self.train_cases {
            return Err(Error::invalid(
                "need at least one training pair per training case",
            ));
        }
        if self.test_pairs < self.test_cases {
            return Err(Error::invalid("need at least one test pair per test case"));
        }
        let [lo, hi] = self.shift_range_mm;
        if !(0.0 <= lo && lo <= hi && hi <= crate::projector::MAX_SHIFT_MM) {
            return Err(Error::invalid(format!(
                "shift range {:?} invalid",
                self.shift_range_mm
            )));
        }
        if !(0.0..=crate::projector::MAX_ROLL_DEG).contains(&self.roll_range_deg) {
            return Err(Error::invalid("roll range outside ±20 degrees"));
        }
        if !(0.0..=1.0).contains(&self.port_edge_prob)
            || !(0.0..=1.0).contains(&self.call_cable_prob)
        {
            return Err(Error::invalid("overlay probabilities must lie in [0, 1]"));
        }
        self.geometry.validate()?;
        self.fpd.validate()?;
        self.preprocess.validate()
    }

    /// `(case id, frame id)` of every pair, training split first. Pairs are
    /// spread over cases as evenly as possible.
    pub fn frames(&self) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
        let split = |first_case: usize, cases: usize, pairs: usize| {
            let mut out = Vec::with_capacity(pairs);
            for c in 0..cases {
                let n = (c + 1) * pairs / cases - c * pairs / cases;
                out.extend((0..n).map(|k| ((first_case + c) as u32, k as u32)));
            }
            out
        };
        (
            split(0, self.train_cases, self.train_pairs),
            split(self.train_cases, self.test_cases, self.test_pairs),
        )
    }
}

/// Per-frame acquisition details recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub case_id: u32,
    pub frame_id: u32,
    pub geometry: String,
    pub roll_deg: f64,
    pub shift_mm: [f64; 3],
    pub phantom_seed: u64,
    pub fpd_seed: u64,
    pub port_edge: bool,
    pub call_cable: bool,
    #[serde(default)]
    pub subimages: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub train_cases: usize,
    pub train_pairs: usize,
    pub train_subimages: usize,
    pub test_cases: usize,
    pub test_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub spec: DatasetSpec,
    /// Raw ray-sum window mapped onto `[0, 1]`.
    pub window: [f64; 2],
    pub counts: Counts,
    pub train: Vec<FrameRecord>,
    pub test: Vec<FrameRecord>,
}

impl Manifest {
    fn check(&self) -> Result<()> {
        let err = |m: String| Error::format("manifest.json", m);
        if self.format != MANIFEST_FORMAT {
            return Err(err(format!("unknown format `{}`", self.format)));
        }
        let c = &self.counts;
        let cases = |r: &[FrameRecord]| {
            let mut ids: Vec<u32> = r.iter().map(|f| f.case_id).collect();
            ids.dedup();
            ids.len()
        };
        let subs: usize = self.train.iter().map(|f| f.subimages.len()).sum();
        if c.train_pairs != self.train.len()
            || c.test_pairs != self.test.len()
            || c.train_subimages != subs
            || c.train_cases != cases(&self.train)
            || c.test_cases != cases(&self.test)
        {
            return Err(err("counts disagree with frame records".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
}

fn frame_dir(root: &Path, r: &FrameRecord) -> PathBuf {
    root.join("cases")
        .join(r.case_id.to_string())
        .join("frames")
        .join(r.frame_id.to_string())
}

impl Dataset {
    /// Training subimages with the identifier of their parent pair.
    pub fn train_subimages(&self) -> Result<Vec<(u64, Subimage)>> {
        let size = self.manifest.spec.preprocess.subimage_size;
        let mut out = Vec::new();
        for (pair, rec) in self.train.iter().zip(&self.manifest.train) {
            let set = subimages_at(pair, size, &rec.subimages)?;
            out.extend(set.items.into_iter().map(|s| (pair.pair_id(), s)));
        }
        Ok(out)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        for (pairs, recs) in [
            (&self.train, &self.manifest.train),
            (&self.test, &self.manifest.test),
        ] {
            for (pair, rec) in pairs.iter().zip(recs) {
                let dir = frame_dir(root, rec);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                pair.drr.save_pgm(&dir.join("drr.pgm"))?;
                pair.fpd.save_pgm(&dir.join("fpd.pgm"))?;
            }
        }
        let path = root.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        manifest.check()?;
        let on_disk = count_frame_dirs(&root.join("cases"))?;
        let listed = manifest.train.len() + manifest.test.len();
        if on_disk != listed {
            return Err(Error::format(
                path.display().to_string(),
                format!("manifest lists {listed} frames but {on_disk} exist on disk"),
            ));
        }
        let load = |recs: &[FrameRecord]| -> Result<Vec<ImagePair>> {
            recs.iter()
                .map(|r| {
                    let dir = frame_dir(root, r);
                    let drr = Image2D::load_pgm(&dir.join("drr.pgm"))?;
                    let fpd = Image2D::load_pgm(&dir.join("fpd.pgm"))?;
                    ImagePair::new(drr, fpd, r.case_id, r.frame_id, r.geometry.clone())
                })
                .collect()
        };
        let train = load(&manifest.train)?;
        let test = load(&manifest.test)?;
        let side = manifest.spec.preprocess.resize_to;
        if let Some(p) = train
            .iter()
            .chain(&test)
            .find(|p| p.drr.width() != side || p.drr.height() != side)
        {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "case {} frame {} is not {side}x{side}",
                    p.case_id, p.frame_id
                ),
            ));
        }
        Ok(Self {
            manifest,
            train,
            test,
        })
    }
}

fn count_frame_dirs(cases: &Path) -> Result<usize> {
    let mut n = 0;
    let Ok(entries) = fs::read_dir(cases) else {
        return Ok(0);
    };
    for case in entries {
        let case = case.map_err(|e| Error::io(cases, e))?;
        let frames = case.path().join("frames");
        if let Ok(it) = fs::read_dir(&frames) {
            for f in it {
                let f = f.map_err(|e| Error::io(&frames, e))?;
                n += f.path().is_dir() as usize;
            }
        }
    }
    Ok(n)
}

struct RawFrame {
    record: FrameRecord,
    drr: Image2D,
    fpd: Image2D,
}

fn unit_direction<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

/// Phantom cases → projected DRR/FPD pairs → dataset-wide normalization →
/// FPD degradation → border crop and resize → training subimages.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (train_frames, test_frames) = spec.frames();
    let mut raw: Vec<RawFrame> = Vec::with_capacity(train_frames.len() + test_frames.len());
    let all: Vec<(u32, u32)> = train_frames.iter().chain(&test_frames).copied().collect();
    let mut current: Option<(u32, u64, crate::projector::CtVolume)> = None;
    for &(case_id, frame_id) in &all {
        if current.as_ref().map(|c| c.0) != Some(case_id) {
            let phantom_seed = stream_seed(&[spec.seed, 0xCA5E, case_id as u64]);
            let volume = make_phantom(
                &PhantomSpec::random_case(phantom_seed),
                spec.volume_extents,
                spec.voxel_spacing_mm,
            )?;
            current = Some((case_id, phantom_seed, volume));
        }
        let (_, phantom_seed, volume) = current.as_ref().expect("phantom built above");
        let mut rng = stream_rng(&[spec.seed, 0xF2A3, case_id as u64, frame_id as u64]);
        let roll_deg = rng.random_range(-spec.roll_range_deg..=spec.roll_range_deg);
        let magnitude = rng.random_range(spec.shift_range_mm[0]..=spec.shift_range_mm[1]);
        let shift_mm = unit_direction(&mut rng).map(|c| c * magnitude);
        let record = FrameRecord {
            case_id,
            frame_id,
            geometry: format!("roll={roll_deg:+.2}"),
            roll_deg,
            shift_mm,
            phantom_seed: *phantom_seed,
            fpd_seed: rng.random(),
            port_edge: rng.random_bool(spec.port_edge_prob),
            call_cable: rng.random_bool(spec.call_cable_prob),
            subimages: Vec::new(),
        };
        let geometry = ProjectionGeometry {
            couch_roll_deg: roll_deg,
            ..spec.geometry
        };
        let drr = project_drr(&hu_to_attenuation(volume, spec.mu_water)?, &geometry)?;
        let fpd = project_drr(
            &hu_to_attenuation(&volume.shifted(shift_mm), spec.mu_water)?,
            &geometry,
        )?;
        raw.push(RawFrame { record, drr, fpd });
    }
    let q_max = raw
        .iter()
        .flat_map(|f| f.drr.data().iter().chain(f.fpd.data()))
        .fold(0f32, |m, &v| m.max(v)) as f64;
    if !(q_max > 0.0) {
        return Err(Error::invalid("all projections are empty"));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut train_records = Vec::new();
    let mut test_records = Vec::new();
    for (i, frame) in raw.into_iter().enumerate() {
        let mut record = frame.record;
        let fpd_spec = FpdSimSpec {
            seed: record.fpd_seed,
            shift_mm: record.shift_mm,
            port_edge: record.port_edge,
            call_cable: record.call_cable,
            ..spec.fpd.clone()
        };
        let drr = normalize(&frame.drr, 0.0, q_max)?;
        let fpd = simulate_fpd(&normalize(&frame.fpd, 0.0, q_max)?, &fpd_spec)?;
        let drr = spec.preprocess.apply(&drr)?.map(snap16);
        let fpd = spec.preprocess.apply(&fpd)?.map(snap16);
        let pair = ImagePair::new(
            drr,
            fpd,
            record.case_id,
            record.frame_id,
            record.geometry.clone(),
        )?;
        if i < train_frames.len() {
            record.subimages = extract_subimages(&pair, &spec.preprocess, spec.seed)?.positions();
            train.push(pair);
            train_records.push(record);
        } else {
            test.push(pair);
            test_records.push(record);
        }
    }
    let counts = Counts {
        train_cases: spec.train_cases,
        train_pairs: train.len(),
        train_subimages: train_records.iter().map(|r| r.subimages.len()).sum(),
        test_cases: spec.test_cases,
        test_pairs: test.len(),
    };
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        spec: spec.clone(),
        window: [0.0, q_max],
        counts,
        train: train_records,
        test: test_records,
    };
    Ok(Dataset {
        manifest,
        train,
        test,
    })
}
