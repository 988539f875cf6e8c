use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::kid::{embed_images, kid_features, KidConfig, KidEstimate};
use super::quality::{mae, psnr, ssim, SsimConfig};
use super::stats::{BoxStats, MeanSd};
use crate::datapipe::ImagePair;
use crate::error::{Error, Result};
use crate::gradcore::{ParamSet, Tape};
use crate::image::Image2D;
use crate::nets::{FeatureExtractor, GeneratorConfig, UnetConfig};

/// Anything that turns a DRR into a synthetic FPD image.
pub trait Translator {
    fn label(&self) -> &str;
    fn translate(&self, drr: &Image2D) -> Result<Image2D>;
}

/// Returns the DRR unchanged.
pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn label(&self) -> &str {
        "identity"
    }

    fn translate(&self, drr: &Image2D) -> Result<Image2D> {
        Ok(drr.clone())
    }
}

/// A trained DRR→FPD generator, run fully convolutionally on the whole image.
pub struct GeneratorTranslator {
    pub label: String,
    pub config: GeneratorConfig,
    pub params: ParamSet<f32>,
}

impl Translator for GeneratorTranslator {
    fn label(&self) -> &str {
        &self.label
    }

    fn translate(&self, drr: &Image2D) -> Result<Image2D> {
        let out = self
            .config
            .forward(&Tape::inference(), &self.params, &drr.to_tensor())?;
        Image2D::from_tensor(&out, 0)
    }
}

pub struct UnetTranslator {
    pub label: String,
    pub config: UnetConfig,
    pub params: ParamSet<f32>,
}

impl Translator for UnetTranslator {
    fn label(&self) -> &str {
        &self.label
    }

    fn translate(&self, drr: &Image2D) -> Result<Image2D> {
        let out = self
            .config
            .forward(&Tape::inference(), &self.params, &drr.to_tensor())?;
        Image2D::from_tensor(&out, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ssim: SsimConfig,
    pub kid: KidConfig,
    pub psnr_peak: f64,
    /// Untimed translations run before timing starts.
    pub warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            kid: KidConfig::default(),
            psnr_peak: 1.0,
            warmup: 2,
        }
    }
}

impl EvalConfig {
    pub fn toy() -> Self {
        Self {
            kid: KidConfig::toy(),
            ..Self::default()
        }
    }
}

pub const BASELINE_LABEL: &str = "DRR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub case_id: u32,
    pub frame_id: u32,
    pub method: String,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub generation_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mae: MeanSd,
    pub psnr: MeanSd,
    pub ssim: MeanSd,
    pub kid: KidEstimate,
    pub generation_ms: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_digest: String,
    pub pairs: usize,
    pub warmup: usize,
    pub methods: Vec<MethodSummary>,
    /// Ordered by (case, frame), then method.
    pub rows: Vec<PairRow>,
}

impl MetricsReport {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == label)
    }

    pub fn rows_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a PairRow> + 'a {
        self.rows.iter().filter(move |r| r.method == label)
    }
}

struct Column {
    label: String,
    outputs: Vec<Image2D>,
    times_ms: Option<Vec<f64>>,
}

fn run_translator(t: &dyn Translator, pairs: &[&ImagePair], warmup: usize) -> Result<Column> {
    for p in pairs.iter().take(warmup) {
        t.translate(&p.drr)?;
    }
    let mut outputs = Vec::with_capacity(pairs.len());
    let mut times = Vec::with_capacity(pairs.len());
    for p in pairs {
        let start = Instant::now();
        let out = t.translate(&p.drr)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        if !out.same_extent(&p.fpd) {
            return Err(Error::shape(format!(
                "{} produced a differently sized image",
                t.label()
            )));
        }
        outputs.push(out);
    }
    Ok(Column {
        label: t.label().to_string(),
        outputs,
        times_ms: Some(times),
    })
}

/// Scores every method against the ground-truth FPD images, with the raw
/// DRR as the first (baseline) column.
pub fn evaluate(
    methods: &[&dyn Translator],
    pairs: &[ImagePair],
    cfg: &EvalConfig,
    extractor: &FeatureExtractor,
    config_digest: &str,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut ordered: Vec<&ImagePair> = pairs.iter().collect();
    ordered.sort_by_key(|p| (p.case_id, p.frame_id));

    let mut columns = vec![Column {
        label: BASELINE_LABEL.to_string(),
        outputs: ordered.iter().map(|p| p.drr.clone()).collect(),
        times_ms: None,
    }];
    for m in methods {
        columns.push(run_translator(*m, &ordered, cfg.warmup)?);
    }

    let truth: Vec<&Image2D> = ordered.iter().map(|p| &p.fpd).collect();
    let truth_features = embed_images(extractor, &truth, cfg.kid.batch)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for col in &columns {
        let (mut maes, mut psnrs, mut ssims) = (Vec::new(), Vec::new(), Vec::new());
        for (i, (out, p)) in col.outputs.iter().zip(&ordered).enumerate() {
            let row = PairRow {
                case_id: p.case_id,
                frame_id: p.frame_id,
                method: col.label.clone(),
                mae: mae(out, &p.fpd)?,
                psnr: psnr(out, &p.fpd, cfg.psnr_peak)?,
                ssim: ssim(out, &p.fpd, &cfg.ssim)?,
                generation_ms: col.times_ms.as_ref().map(|t| t[i]),
            };
            maes.push(row.mae);
            psnrs.push(row.psnr);
            ssims.push(row.ssim);
            rows.push(row);
        }
        let features = embed_images(
            extractor,
            &col.outputs.iter().collect::<Vec<_>>(),
            cfg.kid.batch,
        )?;
        summaries.push(MethodSummary {
            method: col.label.clone(),
            mae: MeanSd::of(&maes),
            psnr: MeanSd::of(&psnrs),
            ssim: MeanSd::of(&ssims),
            kid: kid_features(&features, &truth_features, &cfg.kid)?,
            generation_ms: col.times_ms.as_deref().map(MeanSd::of),
        });
    }
    let methods_order: Vec<&str> = columns.iter().map(|c| c.label.as_str()).collect();
    rows.sort_by_key(|r| {
        (
            r.case_id,
            r.frame_id,
            methods_order.iter().position(|m| *m == r.method),
        )
    });
    Ok(MetricsReport {
        config_digest: config_digest.to_string(),
        pairs: ordered.len(),
        warmup: cfg.warmup,
        methods: summaries,
        rows,
    })
}

fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v > 0.0 {
        json!("inf")
    } else if v < 0.0 {
        json!("-inf")
    } else {
        json!("nan")
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "nan".into()
    }
}

fn mean_sd_json(m: &MeanSd, decimals: usize) -> Value {
    json!({ "mean": num(m.mean), "sd": num(m.sd), "n": m.n, "table": m.table(decimals) })
}

pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from("case,frame,method,mae,psnr_db,ssim\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.case_id,
            r.frame_id,
            r.method,
            fmt_num(r.mae),
            fmt_num(r.psnr),
            fmt_num(r.ssim)
        ));
    }
    s
}

/// Per-pair generation times of the timed methods.
pub fn timing_csv(report: &MetricsReport) -> String {
    let mut s = String::from("case,frame,method,generation_ms\n");
    for r in &report.rows {
        if let Some(t) = r.generation_ms {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r.case_id,
                r.frame_id,
                r.method,
                fmt_num(t)
            ));
        }
    }
    s
}

pub fn timing_json(report: &MetricsReport) -> Value {
    let methods: Vec<Value> = report
        .methods
        .iter()
        .filter_map(|m| {
            m.generation_ms
                .as_ref()
                .map(|t| json!({ "method": m.method, "generation_ms": mean_sd_json(t, 1) }))
        })
        .collect();
    json!({ "clock": "monotonic", "warmup_iterations": report.warmup, "methods": methods })
}

/// Aggregates as JSON; `table` fields follow the `mean ± sd` layout.
pub fn report_json(report: &MetricsReport) -> Value {
    let methods: Vec<Value> = report
        .methods
        .iter()
        .map(|m| {
            let column = |f: fn(&PairRow) -> f64| -> Vec<f64> {
                report.rows_for(&m.method).map(f).collect()
            };
            json!({
                "method": m.method,
                "mae": mean_sd_json(&m.mae, 2),
                "psnr_db": mean_sd_json(&m.psnr, 2),
                "ssim": mean_sd_json(&m.ssim, 2),
                "kid": {
                    "mean": num(m.kid.mean),
                    "std_error": num(m.kid.std_error),
                    "blocks": m.kid.blocks,
                    "block_size": m.kid.block_size,
                    "table": format!("{:.4}", m.kid.mean),
                },
                "box": {
                    "mae": BoxStats::of(&column(|r| r.mae)),
                    "psnr_db": BoxStats::of(&column(|r| r.psnr)),
                    "ssim": BoxStats::of(&column(|r| r.ssim)),
                },
            })
        })
        .collect();
    json!({
        "config_digest": report.config_digest,
        "pairs": report.pairs,
        "warmup_iterations": report.warmup,
        "methods": methods,
    })
}

/// Writes `report.csv` and `report.json` (metrics only, reproducible) plus
/// `timing.csv` and `timing.json` into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let pretty = |v: Value| serde_json::to_string_pretty(&v).expect("report serializes") + "\n";
    write("report.csv", report_csv(report))?;
    write("report.json", pretty(report_json(report)))?;
    write("timing.csv", timing_csv(report))?;
    write("timing.json", pretty(timing_json(report)))
}

/// Per-pair rows without timings, for comparing reports across runs.
pub fn deterministic_rows(report: &MetricsReport) -> Vec<PairRow> {
    report
        .rows
        .iter()
        .map(|r| PairRow {
            generation_ms: None,
            ..r.clone()
        })
        .collect()
}
