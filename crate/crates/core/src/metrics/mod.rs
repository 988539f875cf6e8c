//! Image-quality metrics, KID, evaluation reports and timing.

mod evaluate;
mod kid;
mod quality;
mod stats;

pub use evaluate::{
    deterministic_rows, evaluate, report_csv, report_json, timing_csv, timing_json, write_report,
    EvalConfig, GeneratorTranslator, IdentityTranslator, MethodSummary, MetricsReport, PairRow,
    Translator, UnetTranslator, BASELINE_LABEL,
};
pub use kid::{
    embed_images, kid, kid_features, kid_self_features, mmd2_unbiased, polynomial_kernel,
    KidConfig, KidEstimate,
};
pub use quality::{mae, mse, psnr, ssim, ssim_map, SsimConfig};
pub use stats::{quantile_sorted, BoxStats, MeanSd};
