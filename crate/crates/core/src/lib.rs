//! Synthesis of flat-panel-detector (FPD) X-ray images from digitally
//! reconstructed radiographs (DRR) with a cycle-consistent adversarial
//! network, plus everything needed to run it end to end without clinical
//! data: a tensor engine with reverse-mode autodiff, the networks, the
//! four-term trainer, a cone-beam DRR projector with a procedural phantom,
//! the preprocessing pipeline and image-quality metrics.

pub mod datapipe;
pub mod error;
pub mod gradcore;
pub mod image;
pub mod metrics;
pub mod nets;
pub mod projector;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
