use std::fs;
use std::path::Path;

use fluorosynth::datapipe::{Dataset, ImagePair};
use fluorosynth::image::Image2D;
use serde_json::Value;

use crate::config::RunConfig;
use crate::data::emit;
use crate::error::{CliError, CliResult};
use crate::model::load_translator;
use crate::runlog::RunLog;

const GAP: usize = 4;
/// Gain applied to absolute difference images.
const DIFF_GAIN: f32 = 4.0;

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError {
        kind: crate::error::Kind::Io,
        message: format!("{}: {e}", path.display()),
    })
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Table with one row per method: MAE, PSNR, SSIM as mean ± sd, KID, time.
pub fn markdown_table(report: &Value, timing: Option<&Value>) -> String {
    let mut s = String::from("| Method | MAE | PSNR (dB) | SSIM | KID | Time (ms) |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    let empty = Vec::new();
    for m in report["methods"].as_array().unwrap_or(&empty) {
        let name = text(&m["method"]);
        let time = timing
            .and_then(|t| t["methods"].as_array())
            .and_then(|ms| ms.iter().find(|x| x["method"] == m["method"]))
            .map(|x| text(&x["generation_ms"]["table"]))
            .unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "| {name} | {} | {} | {} | {} | {time} |\n",
            text(&m["mae"]["table"]),
            text(&m["psnr_db"]["table"]),
            text(&m["ssim"]["table"]),
            text(&m["kid"]["table"]),
        ));
    }
    s
}

/// Box-plot quantiles per method and metric; outliers joined by `;`.
pub fn boxplot_csv(report: &Value) -> String {
    let mut s = String::from("method,metric,q1,median,q3,whisker_low,whisker_high,outliers\n");
    let empty = Vec::new();
    for m in report["methods"].as_array().unwrap_or(&empty) {
        for metric in ["mae", "psnr_db", "ssim"] {
            let b = &m["box"][metric];
            if b.is_null() {
                continue;
            }
            let outliers: Vec<String> = b["outliers"]
                .as_array()
                .unwrap_or(&empty)
                .iter()
                .map(|v| v.to_string())
                .collect();
            s.push_str(&format!(
                "{},{metric},{},{},{},{},{},{}\n",
                text(&m["method"]),
                b["q1"],
                b["median"],
                b["q3"],
                b["whisker_low"],
                b["whisker_high"],
                outliers.join(";")
            ));
        }
    }
    s
}

/// Images side by side on a white background.
pub fn hconcat(images: &[&Image2D]) -> Image2D {
    let h = images.iter().map(|i| i.height()).max().unwrap_or(0);
    let w = images.iter().map(|i| i.width()).sum::<usize>() + GAP * images.len().saturating_sub(1);
    let mut out = Image2D::filled(w, h, 1.0);
    let mut x0 = 0;
    for img in images {
        for y in 0..img.height() {
            for x in 0..img.width() {
                out.set(x0 + x, y, img.get(x, y));
            }
        }
        x0 += img.width() + GAP;
    }
    out
}

fn abs_diff(a: &Image2D, b: &Image2D) -> Image2D {
    Image2D::from_fn(a.width(), a.height(), |x, y| {
        ((a.get(x, y) - b.get(x, y)).abs() * DIFF_GAIN).min(1.0)
    })
}

fn render_panels(
    cfg: &RunConfig,
    log: &mut RunLog,
    data: &Path,
    checkpoint: &Path,
    unet_checkpoint: Option<&Path>,
    count: usize,
) -> CliResult<Vec<String>> {
    let ds = Dataset::load(data)?;
    let ours = load_translator(checkpoint, &cfg.model, None)?;
    let unet = unet_checkpoint
        .map(|p| load_translator(p, &cfg.model, None))
        .transpose()?;
    let dir = cfg.out.join("panels");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut pairs: Vec<&ImagePair> = ds.test.iter().collect();
    pairs.sort_by_key(|p| (p.case_id, p.frame_id));
    let mut columns = vec![
        "DRR".to_string(),
        "FPD".to_string(),
        ours.label().to_string(),
    ];
    columns.extend(unet.as_ref().map(|u| u.label().to_string()));
    columns.push(format!("|{} - FPD| x{DIFF_GAIN}", ours.label()));
    let mut written = Vec::new();
    for p in pairs.into_iter().take(count) {
        let syn = ours.translate(&p.drr)?;
        let mut row = vec![p.drr.clone(), p.fpd.clone(), syn.clone()];
        if let Some(u) = &unet {
            row.push(u.translate(&p.drr)?);
        }
        row.push(abs_diff(&syn, &p.fpd));
        let name = format!("case{}-frame{}.pgm", p.case_id, p.frame_id);
        hconcat(&row.iter().collect::<Vec<_>>()).save_pgm(&dir.join(&name))?;
        written.push(name);
    }
    let index = dir.join("columns.txt");
    fs::write(&index, columns.join("\n") + "\n").map_err(|e| CliError::io(&index, e))?;
    log.line(format!(
        "rendered {} panels with columns {}",
        written.len(),
        columns.join(", ")
    ));
    Ok(written)
}

pub fn report(
    cfg: &RunConfig,
    log: &mut RunLog,
    eval_dir: &Path,
    model: Option<(&Path, &Path)>,
    unet_checkpoint: Option<&Path>,
    panels: usize,
) -> CliResult<()> {
    let report = read_json(&eval_dir.join("report.json"))?;
    let timing_path = eval_dir.join("timing.json");
    let timing = if timing_path.exists() {
        Some(read_json(&timing_path)?)
    } else {
        None
    };
    let table = markdown_table(&report, timing.as_ref());
    let write = |name: &str, body: &str| {
        let path = cfg.out.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))
    };
    write("table.md", &table)?;
    write("boxplot.csv", &boxplot_csv(&report))?;
    log.line(format!(
        "wrote table.md and boxplot.csv from {}",
        eval_dir.display()
    ));
    print!("{table}");
    let rendered = match model {
        Some((data, checkpoint)) => {
            render_panels(cfg, log, data, checkpoint, unet_checkpoint, panels)?
        }
        None => Vec::new(),
    };
    emit(&serde_json::json!({
        "table": cfg.out.join("table.md"),
        "boxplot": cfg.out.join("boxplot.csv"),
        "panels": rendered,
    }));
    Ok(())
}
