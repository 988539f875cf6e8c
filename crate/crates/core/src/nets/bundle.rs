use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DiscriminatorConfig, FeatureExtractorSpec, GeneratorConfig, UnetConfig};
use crate::error::Result;
use crate::gradcore::{AdamaxConfig, AdamaxState, ParamSet};

/// Architecture of the translation model pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub extractor: FeatureExtractorSpec,
    pub unet: UnetConfig,
}

impl ModelConfig {
    pub fn toy() -> Self {
        Self {
            generator: GeneratorConfig::toy(),
            discriminator: DiscriminatorConfig::toy(),
            extractor: FeatureExtractorSpec::toy(),
            unet: UnetConfig::toy(),
        }
    }

    /// Hex SHA-256 over the canonical JSON of the CycleGAN architecture.
    pub fn digest(&self) -> String {
        Self::digest_of(&self.generator, &self.discriminator)
    }

    pub fn digest_of(generator: &GeneratorConfig, discriminator: &DiscriminatorConfig) -> String {
        digest_json(&(generator, discriminator))
    }

    pub fn unet_digest(&self) -> String {
        Self::unet_digest_of(&self.unet)
    }

    pub fn unet_digest_of(unet: &UnetConfig) -> String {
        digest_json(unet)
    }
}

fn digest_json<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("configs serialize");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Both generators, both discriminators and their optimizer states.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub g_drr2fpd: ParamSet<f32>,
    pub g_fpd2drr: ParamSet<f32>,
    pub d_fpd: ParamSet<f32>,
    pub d_drr: ParamSet<f32>,
    /// Joint state over both generators (names prefixed `g_drr2fpd/`, `g_fpd2drr/`).
    pub opt_g: AdamaxState<f32>,
    pub opt_d_fpd: AdamaxState<f32>,
    pub opt_d_drr: AdamaxState<f32>,
    pub epoch: u64,
    pub step: u64,
}

impl ModelBundle {
    pub fn init(model: &ModelConfig, adamax: AdamaxConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            g_drr2fpd: model.generator.init_params(&mut rng)?,
            g_fpd2drr: model.generator.init_params(&mut rng)?,
            d_fpd: model.discriminator.init_params(&mut rng)?,
            d_drr: model.discriminator.init_params(&mut rng)?,
            generator: model.generator.clone(),
            discriminator: model.discriminator.clone(),
            opt_g: AdamaxState::new(adamax),
            opt_d_fpd: AdamaxState::new(adamax),
            opt_d_drr: AdamaxState::new(adamax),
            epoch: 0,
            step: 0,
        })
    }

    pub fn digest(&self) -> String {
        ModelConfig::digest_of(&self.generator, &self.discriminator)
    }

    /// Both generators under one prefixed namespace.
    pub fn generator_pair(&self) -> ParamSet<f32> {
        let mut p = self.g_drr2fpd.prefixed("g_drr2fpd");
        p.extend(self.g_fpd2drr.prefixed("g_fpd2drr"));
        p
    }

    pub fn set_generator_pair(&mut self, pair: &ParamSet<f32>) {
        self.g_drr2fpd = pair.strip_prefix("g_drr2fpd");
        self.g_fpd2drr = pair.strip_prefix("g_fpd2drr");
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.g_drr2fpd.bit_eq(&other.g_drr2fpd)
            && self.g_fpd2drr.bit_eq(&other.g_fpd2drr)
            && self.d_fpd.bit_eq(&other.d_fpd)
            && self.d_drr.bit_eq(&other.d_drr)
            && self.epoch == other.epoch
            && self.step == other.step
    }
}

/// U-Net baseline parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct UnetBundle {
    pub config: UnetConfig,
    pub params: ParamSet<f32>,
    pub opt: AdamaxState<f32>,
    pub epoch: u64,
    pub step: u64,
}

impl UnetBundle {
    pub fn init(config: &UnetConfig, adamax: AdamaxConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            params: config.init_params(&mut rng)?,
            config: config.clone(),
            opt: AdamaxState::new(adamax),
            epoch: 0,
            step: 0,
        })
    }
}
