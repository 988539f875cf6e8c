//! Preprocessing chain, subimage extraction under the air rule, paired
//! augmentation and dataset persistence.

mod dataset;
mod pairs;
mod preprocess;

pub use dataset::{
    generate_dataset, Counts, Dataset, DatasetSpec, FrameRecord, Manifest, MANIFEST_FORMAT,
};
pub use pairs::{
    air_fraction, apply_draw, augment, extract_subimages, subimages_at, AugmentDraw, AugmentSpec,
    ImagePair, Subimage, SubimageSet,
};
pub use preprocess::{crop_border, denormalize, normalize, resize_bilinear, PreprocessConfig};
