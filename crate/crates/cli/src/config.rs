use std::fs;
use std::path::{Path, PathBuf};

use fluorosynth::datapipe::DatasetSpec;
use fluorosynth::metrics::EvalConfig;
use fluorosynth::nets::ModelConfig;
use fluorosynth::projector::{FpdSimSpec, PhantomSpec, ProjectionGeometry, MU_WATER};
use fluorosynth::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const EFFECTIVE_CONFIG: &str = "effective-config.json";

/// Volume settings for the `phantom` and `project` subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    pub extents: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub mu_water: f64,
    /// Draw a seeded anatomical variation instead of using `spec` as given.
    pub random_case: bool,
    pub spec: PhantomSpec,
}

impl PhantomSection {
    fn new(toy: bool) -> Self {
        let d = if toy {
            DatasetSpec::toy()
        } else {
            DatasetSpec::default()
        };
        Self {
            extents: d.volume_extents,
            spacing_mm: d.voxel_spacing_mm,
            mu_water: MU_WATER,
            random_case: false,
            spec: PhantomSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub phantom: PhantomSection,
    pub geometry: ProjectionGeometry,
    pub fpd: FpdSimSpec,
    pub datapipe: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Section seeds filled from the global seed unless the config file sets
/// them explicitly.
const SEED_PATHS: [&str; 6] = [
    "/phantom/spec/seed",
    "/fpd/seed",
    "/datapipe/seed",
    "/train/seed",
    "/train/augment/seed",
    "/eval/kid/seed",
];

impl RunConfig {
    /// Full-scale defaults, or the scaled toy schedule.
    pub fn defaults(toy: bool) -> Self {
        if toy {
            Self {
                seed: 0,
                out: PathBuf::from("fluorosynth-out"),
                phantom: PhantomSection::new(true),
                geometry: ProjectionGeometry::toy(),
                fpd: FpdSimSpec::default(),
                datapipe: DatasetSpec::toy(),
                model: ModelConfig::toy(),
                train: TrainConfig::toy(),
                eval: EvalConfig::toy(),
            }
        } else {
            Self {
                seed: 0,
                out: PathBuf::from("fluorosynth-out"),
                phantom: PhantomSection::new(false),
                geometry: ProjectionGeometry::default(),
                fpd: FpdSimSpec::default(),
                datapipe: DatasetSpec::default(),
                model: ModelConfig::default(),
                train: TrainConfig::default(),
                eval: EvalConfig::default(),
            }
        }
    }

    /// Defaults, then the config file, then command-line flags.
    pub fn resolve(
        toy: bool,
        file: Option<&Path>,
        seed: Option<u64>,
        out: Option<PathBuf>,
    ) -> CliResult<Self> {
        let mut merged = serde_json::to_value(Self::defaults(toy)).expect("defaults serialize");
        let user = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                if !v.is_object() {
                    return Err(CliError::config(format!(
                        "{}: top level must be an object",
                        path.display()
                    )));
                }
                v
            }
            None => Value::Object(Default::default()),
        };
        merge(&mut merged, &user);
        let master = seed
            .or_else(|| user.get("seed").and_then(Value::as_u64))
            .unwrap_or(0);
        merged["seed"] = master.into();
        for path in SEED_PATHS {
            if seed.is_some() || user.pointer(path).is_none() {
                if let Some(slot) = merged.pointer_mut(path) {
                    *slot = master.into();
                }
            }
        }
        if let Some(out) = out {
            merged["out"] = Value::String(out.display().to_string());
        }
        let cfg: Self = serde_json::from_value(merged).map_err(|e| match file {
            Some(p) => CliError::config(format!("{}: {e}", p.display())),
            None => CliError::config(e.to_string()),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.geometry.validate()?;
        self.fpd.validate()?;
        self.datapipe.validate()?;
        self.train.validate()?;
        self.model.extractor.validate()?;
        self.eval.kid.features.validate()?;
        if !(self.phantom.mu_water > 0.0) {
            return Err(CliError::config("phantom.mu_water must be positive"));
        }
        Ok(())
    }

    /// Writes `effective-config.json` into `dir`.
    pub fn write_effective(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

/// Recursive object merge; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}
