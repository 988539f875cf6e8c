//! Checkpoint directories: `bundle.fstn` (tensor archive) plus
//! `manifest.json` naming the architecture digest, epoch and step.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::archive::{load_archive, save_archive};
use crate::gradcore::{AdamaxConfig, AdamaxState, ParamSet};
use crate::nets::{
    DiscriminatorConfig, GeneratorConfig, ModelBundle, ModelConfig, UnetBundle, UnetConfig,
};

pub const CHECKPOINT_FORMAT: &str = "fluorosynth-checkpoint/1";
pub const ARCHIVE_NAME: &str = "bundle.fstn";
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CheckpointModel {
    Cyclegan {
        generator: GeneratorConfig,
        discriminator: DiscriminatorConfig,
    },
    Unet {
        unet: UnetConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub config_digest: String,
    pub epoch: u64,
    pub step: u64,
    pub model: CheckpointModel,
    pub adamax: AdamaxConfig,
    pub archive: String,
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            path.display().to_string(),
            format!("unknown format `{}`", m.format),
        ));
    }
    Ok(m)
}

fn write_checkpoint(
    dir: &Path,
    manifest: &CheckpointManifest,
    tensors: &ParamSet<f32>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // Archive first, manifest last: a manifest only ever names a complete archive.
    let tmp = dir.join(format!("{ARCHIVE_NAME}.tmp"));
    save_archive(&tmp, tensors)?;
    let archive = dir.join(ARCHIVE_NAME);
    fs::rename(&tmp, &archive).map_err(|e| Error::io(&archive, e))?;
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Checks that `tensors` holds exactly the names and shapes of `template`.
fn conform(tensors: &ParamSet<f32>, template: &ParamSet<f32>, what: &str) -> Result<()> {
    for (name, t) in template.iter() {
        let got = tensors.get(name)?;
        if got.shape() != t.shape() {
            return Err(Error::format(
                what,
                format!(
                    "{name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                ),
            ));
        }
    }
    if tensors.len() != template.len() {
        return Err(Error::format(
            what,
            format!("{} tensors, expected {}", tensors.len(), template.len()),
        ));
    }
    Ok(())
}

fn section(all: &ParamSet<f32>, prefix: &str) -> ParamSet<f32> {
    all.strip_prefix(prefix)
}

pub fn save_bundle(dir: &Path, b: &ModelBundle) -> Result<()> {
    let pair = b.generator_pair();
    let mut t = ParamSet::new();
    t.extend(pair.clone());
    t.extend(b.d_fpd.prefixed("d_fpd"));
    t.extend(b.d_drr.prefixed("d_drr"));
    t.extend(b.opt_g.to_tensors(&pair)?.prefixed("opt_g"));
    t.extend(b.opt_d_fpd.to_tensors(&b.d_fpd)?.prefixed("opt_d_fpd"));
    t.extend(b.opt_d_drr.to_tensors(&b.d_drr)?.prefixed("opt_d_drr"));
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config_digest: b.digest(),
        epoch: b.epoch,
        step: b.step,
        model: CheckpointModel::Cyclegan {
            generator: b.generator.clone(),
            discriminator: b.discriminator.clone(),
        },
        adamax: b.opt_g.config,
        archive: ARCHIVE_NAME.into(),
    };
    write_checkpoint(dir, &manifest, &t)
}

/// Loads a bundle, refusing archives built for another architecture.
pub fn load_bundle(dir: &Path, expected: &ModelConfig) -> Result<ModelBundle> {
    let manifest = read_manifest(dir)?;
    let want = expected.digest();
    let CheckpointModel::Cyclegan {
        generator,
        discriminator,
    } = &manifest.model
    else {
        return Err(Error::format(
            dir.display().to_string(),
            "checkpoint holds a U-Net, not a CycleGAN",
        ));
    };
    if manifest.config_digest != want
        || crate::nets::ModelConfig::digest_of(generator, discriminator) != want
    {
        return Err(Error::DigestMismatch {
            expected: want,
            found: manifest.config_digest,
        });
    }
    let all = load_archive(&dir.join(&manifest.archive))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g_template = expected.generator.init_params::<f32, _>(&mut rng)?;
    let d_template = expected.discriminator.init_params::<f32, _>(&mut rng)?;
    let what = dir.join(&manifest.archive).display().to_string();

    let mut b = ModelBundle {
        generator: expected.generator.clone(),
        discriminator: expected.discriminator.clone(),
        g_drr2fpd: section(&all, "g_drr2fpd"),
        g_fpd2drr: section(&all, "g_fpd2drr"),
        d_fpd: section(&all, "d_fpd"),
        d_drr: section(&all, "d_drr"),
        opt_g: AdamaxState::new(manifest.adamax),
        opt_d_fpd: AdamaxState::new(manifest.adamax),
        opt_d_drr: AdamaxState::new(manifest.adamax),
        epoch: manifest.epoch,
        step: manifest.step,
    };
    conform(&b.g_drr2fpd, &g_template, &what)?;
    conform(&b.g_fpd2drr, &g_template, &what)?;
    conform(&b.d_fpd, &d_template, &what)?;
    conform(&b.d_drr, &d_template, &what)?;
    let pair = b.generator_pair();
    b.opt_g = AdamaxState::from_tensors(manifest.adamax, &section(&all, "opt_g"), &pair)?;
    b.opt_d_fpd =
        AdamaxState::from_tensors(manifest.adamax, &section(&all, "opt_d_fpd"), &b.d_fpd)?;
    b.opt_d_drr =
        AdamaxState::from_tensors(manifest.adamax, &section(&all, "opt_d_drr"), &b.d_drr)?;
    Ok(b)
}

pub fn save_unet(dir: &Path, b: &UnetBundle) -> Result<()> {
    let mut t = b.params.prefixed("unet");
    t.extend(b.opt.to_tensors(&b.params)?.prefixed("opt"));
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config_digest: ModelConfig::unet_digest_of(&b.config),
        epoch: b.epoch,
        step: b.step,
        model: CheckpointModel::Unet {
            unet: b.config.clone(),
        },
        adamax: b.opt.config,
        archive: ARCHIVE_NAME.into(),
    };
    write_checkpoint(dir, &manifest, &t)
}

pub fn load_unet(dir: &Path, expected: &UnetConfig) -> Result<UnetBundle> {
    let manifest = read_manifest(dir)?;
    let want = ModelConfig::unet_digest_of(expected);
    if manifest.config_digest != want
        || manifest.model
            != (CheckpointModel::Unet {
                unet: expected.clone(),
            })
    {
        return Err(Error::DigestMismatch {
            expected: want,
            found: manifest.config_digest,
        });
    }
    let all = load_archive(&dir.join(&manifest.archive))?;
    let template = expected.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0))?;
    let params = section(&all, "unet");
    conform(&params, &template, &dir.display().to_string())?;
    let opt = AdamaxState::from_tensors(manifest.adamax, &section(&all, "opt"), &params)?;
    Ok(UnetBundle {
        config: expected.clone(),
        params,
        opt,
        epoch: manifest.epoch,
        step: manifest.step,
    })
}
