//! Networks: generator, patch discriminator, style feature extractor and the
//! U-Net baseline, all as forward functions over [`crate::gradcore`].

mod bundle;
mod discriminator;
mod extractor;
mod generator;
mod layers;
mod unet;

pub use bundle::{ModelBundle, ModelConfig, UnetBundle};
pub use discriminator::DiscriminatorConfig;
pub use extractor::{FeatureExtractor, FeatureExtractorSpec, WeightSource};
pub use generator::GeneratorConfig;
pub use layers::{StageShape, INIT_STD};
pub use unet::UnetConfig;
