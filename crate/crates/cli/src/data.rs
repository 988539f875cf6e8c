use std::fs;
use std::path::Path;
use std::time::Instant;

use fluorosynth::datapipe::generate_dataset;
use fluorosynth::image::Image2D;
use fluorosynth::projector::{
    hu_to_attenuation, make_phantom, normalize_ray_sums, project_drr, simulate_fpd, CtVolume,
    PhantomSpec, ProjectionGeometry,
};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::runlog::RunLog;

pub(crate) fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Prints a one-line JSON summary on stdout.
pub(crate) fn emit(value: &Value) {
    println!("{value}");
}

fn axial_slice(ct: &CtVolume, k: usize) -> Image2D {
    let [nx, ny, _] = ct.grid().extents;
    Image2D::from_fn(nx, ny, |x, y| {
        ((ct.get(x, ny - 1 - y, k) + 1000.0) / 2000.0).clamp(0.0, 1.0)
    })
}

pub fn phantom(cfg: &RunConfig, log: &mut RunLog) -> CliResult<()> {
    let p = &cfg.phantom;
    let spec = if p.random_case {
        PhantomSpec::random_case(p.spec.seed)
    } else {
        p.spec.clone()
    };
    let t = Instant::now();
    let ct = make_phantom(&spec, p.extents, p.spacing_mm)?;
    log.line(format!(
        "voxelized {:?} at {:?} mm in {:.3} s",
        p.extents,
        p.spacing_mm,
        t.elapsed().as_secs_f64()
    ));
    let path = cfg.out.join("phantom.fsvol");
    ct.save(&path)?;
    axial_slice(&ct, p.extents[2] / 2).save_pgm(&cfg.out.join("phantom-slice.pgm"))?;
    write_json(
        &cfg.out.join("phantom-spec.json"),
        &serde_json::to_value(&spec).expect("spec serializes"),
    )?;
    log.line(format!("wrote {}", path.display()));
    emit(
        &json!({ "volume": path, "extents": p.extents, "spacing_mm": p.spacing_mm, "phantom_seed": spec.seed }),
    );
    Ok(())
}

fn geometry_with(cfg: &RunConfig, roll: Option<f64>) -> CliResult<ProjectionGeometry> {
    let g = ProjectionGeometry {
        couch_roll_deg: roll.unwrap_or(cfg.geometry.couch_roll_deg),
        ..cfg.geometry
    };
    g.validate()?;
    Ok(g)
}

fn window(raw: &Image2D, q_max: Option<f64>) -> CliResult<f64> {
    let q = q_max.unwrap_or(raw.min_max().1 as f64);
    if !(q > 0.0) {
        return Err(CliError::config("projection is empty; pass --q-max"));
    }
    Ok(q)
}

fn project_volume(
    cfg: &RunConfig,
    log: &mut RunLog,
    ct: &CtVolume,
    geometry: &ProjectionGeometry,
) -> CliResult<Image2D> {
    let t = Instant::now();
    let raw = project_drr(&hu_to_attenuation(ct, cfg.phantom.mu_water)?, geometry)?;
    log.line(format!(
        "projected {}x{} rays at roll {:+.2} deg in {:.3} s",
        geometry.detector_cols,
        geometry.detector_rows,
        geometry.couch_roll_deg,
        t.elapsed().as_secs_f64()
    ));
    Ok(raw)
}

pub fn project(
    cfg: &RunConfig,
    log: &mut RunLog,
    volume: &Path,
    roll: Option<f64>,
    q_max: Option<f64>,
) -> CliResult<()> {
    let ct = CtVolume::load(volume)?;
    let geometry = geometry_with(cfg, roll)?;
    let raw = project_volume(cfg, log, &ct, &geometry)?;
    let q = window(&raw, q_max)?;
    let drr = normalize_ray_sums(&raw, q)?;
    let path = cfg.out.join("drr.pgm");
    drr.save_pgm(&path)?;
    let meta = json!({
        "image": path,
        "q_max": q,
        "raw_max": raw.min_max().1,
        "roll_deg": geometry.couch_roll_deg,
        "width": drr.width(),
        "height": drr.height(),
    });
    write_json(&cfg.out.join("drr.json"), &meta)?;
    emit(&meta);
    Ok(())
}

pub fn simulate(
    cfg: &RunConfig,
    log: &mut RunLog,
    drr: Option<&Path>,
    volume: Option<&Path>,
    roll: Option<f64>,
    q_max: Option<f64>,
) -> CliResult<()> {
    let spec = &cfg.fpd;
    let source = match (drr, volume) {
        (Some(path), _) => {
            if spec.shift_mm != [0.0; 3] {
                log.line("fpd.shift_mm needs --volume; ignored for an image input");
            }
            Image2D::load_pgm(path)?
        }
        (None, Some(path)) => {
            let ct = CtVolume::load(path)?.shifted(spec.shift_mm);
            log.line(format!("volume shifted by {:?} mm", spec.shift_mm));
            let raw = project_volume(cfg, log, &ct, &geometry_with(cfg, roll)?)?;
            normalize_ray_sums(&raw, window(&raw, q_max)?)?
        }
        (None, None) => return Err(CliError::config("simulate-fpd needs --drr or --volume")),
    };
    let fpd = simulate_fpd(&source, spec)?;
    let path = cfg.out.join("fpd.pgm");
    fpd.save_pgm(&path)?;
    let meta = json!({
        "image": path,
        "seed": spec.seed,
        "shift_mm": spec.shift_mm,
        "port_edge": spec.port_edge,
        "call_cable": spec.call_cable,
    });
    write_json(&cfg.out.join("fpd.json"), &meta)?;
    emit(&meta);
    Ok(())
}

pub fn make_dataset(cfg: &RunConfig, log: &mut RunLog) -> CliResult<()> {
    let spec = &cfg.datapipe;
    log.line(format!(
        "generating {} train pairs ({} cases) and {} test pairs ({} cases), dataset seed {}",
        spec.train_pairs, spec.train_cases, spec.test_pairs, spec.test_cases, spec.seed
    ));
    let t = Instant::now();
    let ds = generate_dataset(spec)?;
    log.line(format!("generated in {:.3} s", t.elapsed().as_secs_f64()));
    ds.save(&cfg.out)?;
    let c = &ds.manifest.counts;
    log.line(format!(
        "wrote {} with {} training subimages",
        cfg.out.display(),
        c.train_subimages
    ));
    emit(&json!({
        "dataset": cfg.out,
        "train_pairs": c.train_pairs,
        "test_pairs": c.test_pairs,
        "train_subimages": c.train_subimages,
        "window": ds.manifest.window,
    }));
    Ok(())
}
