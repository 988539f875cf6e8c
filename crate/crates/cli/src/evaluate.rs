use std::path::Path;
use std::time::Instant;

use fluorosynth::datapipe::Dataset;
use fluorosynth::metrics::{evaluate as score, write_report, Translator};
use fluorosynth::trainer::read_manifest;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::emit;
use crate::error::{CliError, CliResult};
use crate::model::load_translator;
use crate::runlog::RunLog;
use crate::Baseline;

pub fn evaluate(
    cfg: &RunConfig,
    log: &mut RunLog,
    data: &Path,
    checkpoint: &Path,
    baseline: Baseline,
    unet_checkpoint: Option<&Path>,
) -> CliResult<()> {
    let ds = Dataset::load(data)?;
    let mut methods: Vec<Box<dyn Translator>> = Vec::new();
    if baseline == Baseline::Unet {
        let path = unet_checkpoint
            .ok_or_else(|| CliError::config("--baseline unet needs --unet-checkpoint"))?;
        methods.push(load_translator(path, &cfg.model, None)?);
    }
    methods.push(load_translator(checkpoint, &cfg.model, None)?);
    let digest = read_manifest(checkpoint)?.config_digest;
    let extractor = cfg.eval.kid.features.build()?;
    let t = Instant::now();
    let refs: Vec<&dyn Translator> = methods.iter().map(|m| m.as_ref()).collect();
    let report = score(&refs, &ds.test, &cfg.eval, &extractor, &digest)?;
    log.line(format!(
        "scored {} test pairs in {:.3} s",
        report.pairs,
        t.elapsed().as_secs_f64()
    ));
    write_report(&cfg.out, &report)?;
    let mut summary = Vec::new();
    for m in &report.methods {
        log.line(format!(
            "{:<9} MAE {}  PSNR {} dB  SSIM {}  KID {:.5} ± {:.5}",
            m.method,
            m.mae.table(4),
            m.psnr.table(2),
            m.ssim.table(4),
            m.kid.mean,
            m.kid.std_error
        ));
        summary.push(json!({
            "method": m.method,
            "mae": m.mae.mean,
            "psnr_db": m.psnr.mean,
            "ssim": m.ssim.mean,
            "kid": m.kid.mean,
            "kid_std_error": m.kid.std_error,
        }));
    }
    emit(
        &json!({ "report": cfg.out.join("report.json"), "pairs": report.pairs, "methods": summary }),
    );
    Ok(())
}
