//! Four-term CycleGAN objective, the Adamax schedule and checkpoints.

mod checkpoint;
mod losses;
mod schedule;
mod step;

pub use checkpoint::{
    load_bundle, load_unet, read_manifest, save_bundle, save_unet, CheckpointManifest,
    CheckpointModel, ARCHIVE_NAME, CHECKPOINT_FORMAT, MANIFEST_NAME,
};
pub use losses::{
    adversarial_loss, cycle_loss, identity_loss, style_distance, style_loss, AdversarialMode,
    LossWeights, Mapping, Side,
};
pub use schedule::{
    append_history, assemble_batch, epoch_permutation, history_header, history_line, train_loop,
    train_unet_loop, truncate_history, CsvRecord, HistoryRow, L1Loss, Persist, TrainConfig,
};
pub use step::{train_step, unet_step, Batch, LossBreakdown};
