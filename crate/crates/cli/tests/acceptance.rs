//! Acceptance gate. Each test prints one `criterion N PASS|FAIL` line on
//! stderr (uncaptured) and then asserts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use fluorosynth::datapipe::{
    air_fraction, augment, crop_border, extract_subimages, generate_dataset, resize_bilinear,
    AugmentSpec, Dataset, DatasetSpec, ImagePair, PreprocessConfig, Subimage,
};
use fluorosynth::gradcore::gradcheck::run_suite;
use fluorosynth::gradcore::{AdamaxConfig, Tape, Tensor};
use fluorosynth::image::Image2D;
use fluorosynth::metrics::{
    embed_images, kid_features, kid_self_features, mae, psnr, ssim, KidConfig, SsimConfig,
};
use fluorosynth::nets::{
    DiscriminatorConfig, FeatureExtractorSpec, GeneratorConfig, ModelBundle, ModelConfig,
};
use fluorosynth::projector::{
    hu_to_attenuation, make_phantom, normalize_ray_sums, project_drr, ray_sum, simulate_fpd,
    AttenuationVolume, FpdSimSpec, PhantomSpec, ProjectionGeometry, VolumeGrid, MU_WATER,
};
use fluorosynth::seeds::stream_rng;
use fluorosynth::trainer::{
    cycle_loss, identity_loss, style_loss, train_loop, Persist, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

/// Criteria run one at a time so wall-clock budgets are not shared.
static SERIAL: Mutex<()> = Mutex::new(());

fn gate(n: u32, name: &str, body: impl FnOnce() -> Outcome) {
    let _lock = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome =
        std::panic::catch_unwind(std::panic::AssertUnwindSafe(body)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {n:>2} {tag} {name} [{secs:.1} s]: {detail}"
    );
    if let Err(e) = outcome {
        panic!("criterion {n} failed: {e}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- CLI runs

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn cli(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fluorosynth"))
        .current_dir(dir)
        .env("FLUOROSYNTH_QUIET", "1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_json(path: &Path) -> Result<Value, String> {
    serde_json::from_slice(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

struct ToyRun {
    dir: PathBuf,
    /// make-dataset, CycleGAN training and evaluation.
    pipeline_s: f64,
    unet_train_s: f64,
    infer_stdout: String,
    infer_inputs: usize,
}

fn toy_run() -> Result<ToyRun, String> {
    let dir = scratch("acceptance-toy");
    let d = dir.as_path();
    let t = Instant::now();
    cli(d, &["make-dataset", "--toy", "--out", "data"])?;
    cli(d, &["train", "--toy", "--data", "data", "--out", "cg"])?;
    let mut pipeline_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    cli(
        d,
        &[
            "train", "--toy", "--model", "unet", "--data", "data", "--out", "un",
        ],
    )?;
    let unet_train_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    cli(
        d,
        &[
            "evaluate",
            "--toy",
            "--data",
            "data",
            "--checkpoint",
            "cg/checkpoint",
            "--baseline",
            "unet",
            "--unet-checkpoint",
            "un/checkpoint",
            "--out",
            "ev",
        ],
    )?;
    pipeline_s += t.elapsed().as_secs_f64();

    let manifest = read_json(&d.join("data/manifest.json"))?;
    let inputs: Vec<String> = manifest["test"]
        .as_array()
        .ok_or("manifest has no test list")?
        .iter()
        .take(4)
        .map(|r| {
            format!(
                "data/cases/{}/frames/{}/drr.pgm",
                r["case_id"], r["frame_id"]
            )
        })
        .collect();
    let mut args = vec![
        "infer",
        "--toy",
        "--checkpoint",
        "cg/checkpoint",
        "--out",
        "inf",
    ];
    for i in &inputs {
        args.extend(["--input", i.as_str()]);
    }
    let infer_stdout = cli(d, &args)?;
    Ok(ToyRun {
        dir,
        pipeline_s,
        unet_train_s,
        infer_stdout,
        infer_inputs: inputs.len(),
    })
}

fn toy() -> Result<&'static ToyRun, String> {
    static RUN: OnceLock<Result<ToyRun, String>> = OnceLock::new();
    RUN.get_or_init(toy_run)
        .as_ref()
        .map_err(|e| format!("toy pipeline failed: {e}"))
}

struct MethodRow {
    mae: f64,
    psnr: f64,
    kid: f64,
    kid_se: f64,
}

fn method(report: &Value, name: &str) -> Result<MethodRow, String> {
    let m = report["methods"]
        .as_array()
        .and_then(|ms| ms.iter().find(|m| m["method"] == name))
        .ok_or_else(|| format!("method {name} missing from report"))?;
    let num = |v: &Value| v.as_f64().ok_or_else(|| format!("{name}: non-numeric {v}"));
    Ok(MethodRow {
        mae: num(&m["mae"]["mean"])?,
        psnr: num(&m["psnr_db"]["mean"])?,
        kid: num(&m["kid"]["mean"])?,
        kid_se: num(&m["kid"]["std_error"])?,
    })
}

// ------------------------------------------------------------- criterion 1

#[test]
fn criterion_01_gradient_checks() {
    gate(1, "gradient checks", || {
        let start = Instant::now();
        let reports = run_suite(100, 2024).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        for r in &reports {
            ensure(r.cases >= 100, || {
                format!("{} ran {} cases", r.name, r.cases)
            })?;
            ensure(r.passed(), || {
                format!(
                    "{}: max relative error {:.3e} > {:.0e}",
                    r.name,
                    r.max_error,
                    r.tolerance()
                )
            })?;
        }
        ensure(secs < 300.0, || format!("took {secs:.0} s"))?;
        let worst = reports.iter().map(|r| r.max_error).fold(0.0, f64::max);
        Ok(format!(
            "{} ops x 100 cases, worst relative error {worst:.2e}, {secs:.1} s",
            reports.len()
        ))
    });
}

// ------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_architecture_traces() {
    gate(2, "architecture traces", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GeneratorConfig::default();
        let gp = g
            .init_params::<f32, _>(&mut rng)
            .map_err(|e| e.to_string())?;
        let x = Tensor::<f32>::rand_uniform([1, 1, 124, 124], 0.0, 1.0, &mut rng);
        let mut trace = Vec::new();
        let y = g
            .forward_traced(&Tape::inference(), &gp, &x, Some(&mut trace))
            .map_err(|e| e.to_string())?;
        ensure(y.shape() == [1, 1, 124, 124], || {
            format!("generator output {:?}", y.shape())
        })?;
        let got: Vec<(usize, usize)> = trace.iter().map(|s| (s.shape[1], s.shape[2])).collect();
        let mut want = vec![(1, 124), (64, 124), (128, 62), (128, 62), (256, 31)];
        want.extend([(256, 31); 9]);
        want.extend([(128, 62), (64, 124), (1, 124)]);
        ensure(got == want, || format!("generator trace {got:?}"))?;

        let d = DiscriminatorConfig::default();
        let dp = d
            .init_params::<f32, _>(&mut rng)
            .map_err(|e| e.to_string())?;
        let x = Tensor::<f32>::rand_uniform([2, 1, 124, 124], 0.0, 1.0, &mut rng);
        let mut trace = Vec::new();
        let y = d
            .forward_traced(&Tape::inference(), &dp, &x, Some(&mut trace))
            .map_err(|e| e.to_string())?;
        let got: Vec<(usize, usize)> = trace.iter().map(|s| (s.shape[1], s.shape[2])).collect();
        let want = [(1, 124), (64, 62), (128, 31), (256, 16), (512, 16), (1, 16)];
        ensure(got == want, || format!("discriminator trace {got:?}"))?;
        ensure(y.shape() == [2, 1, 16, 16], || {
            format!("patch map {:?}", y.shape())
        })?;
        Ok("generator 124->62->31 (9 residual blocks)->124, discriminator 64-128-256-512 to a 16x16 patch map".into())
    });
}

// ------------------------------------------------------------- criterion 3

fn smooth_pairs(n: usize) -> Vec<(u64, Subimage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..n)
        .map(|i| {
            let (a, c) = (rng.random_range(0.1..0.3f32), rng.random_range(0.0..6.0f32));
            let drr = Image2D::from_fn(40, 40, |x, y| {
                let (u, v) = (x as f32 / 40.0, y as f32 / 40.0);
                (0.5 + a * (6.0 * u + c).sin() * (4.0 * v).cos()).clamp(0.0, 1.0)
            });
            let fpd = drr.map(|v| v.powf(0.6) * 0.9);
            (
                i as u64 / 2,
                Subimage {
                    x: 0,
                    y: 0,
                    drr,
                    fpd,
                },
            )
        })
        .collect()
}

#[test]
fn criterion_03_losses() {
    gate(3, "losses", || {
        let model = ModelConfig::toy();
        let ex = model.extractor.build().map_err(|e| e.to_string())?;
        let mut bundle =
            ModelBundle::init(&model, AdamaxConfig::default(), 5).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 2,
            lr_drop_epoch: 2,
            ..TrainConfig::toy()
        };
        let rows = train_loop(&mut bundle, &smooth_pairs(8), &cfg, &ex, Persist::NONE)
            .map_err(|e| e.to_string())?;
        ensure(!rows.is_empty(), || "no training steps".into())?;
        let mut worst = 0f64;
        for r in &rows {
            let l = r.losses;
            let by_hand = l.adv_g
                + cfg.weights.lambda1 * l.cycle
                + cfg.weights.lambda2 * l.identity
                + cfg.weights.lambda3 * l.style;
            worst = worst.max((l.total_g - by_hand).abs());
        }
        ensure(worst < 1e-6, || {
            format!("total_G recombination off by {worst:.2e}")
        })?;

        let tape = Tape::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let drr = Tensor::<f64>::rand_uniform([2, 1, 16, 16], 0.0, 1.0, &mut rng);
        let fpd = Tensor::<f64>::rand_uniform([2, 1, 16, 16], 0.0, 1.0, &mut rng);
        let id = |x: &Tensor<f64>| Ok(x.clone());
        let cyc = cycle_loss(&tape, &id, &id, &drr, &fpd)
            .and_then(|t| t.item())
            .ok();
        let idt = identity_loss(&tape, &id, &id, &drr, &fpd)
            .and_then(|t| t.item())
            .ok();
        ensure(cyc == Some(0.0) && idt == Some(0.0), || {
            format!("cycle {cyc:?}, identity {idt:?}")
        })?;

        let ex = FeatureExtractorSpec::default()
            .build()
            .map_err(|e| e.to_string())?;
        let tape = Tape::<f32>::inference();
        let img = Tensor::<f32>::rand_uniform([1, 1, 32, 32], 0.0, 1.0, &mut rng);
        let style = style_loss(&tape, &ex, &ex.params, &img, &img, &img, &img)
            .and_then(|t| t.item())
            .map_err(|e| e.to_string())?;
        ensure(style == 0.0, || {
            format!("style of identical images {style}")
        })?;
        Ok(format!(
            "total_G recombines within {worst:.1e} over {} steps; identity, cycle and style exactly 0",
            rows.len()
        ))
    });
}

// ------------------------------------------------------------- criterion 4

fn unit(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    let d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Chord length through the centred cube `[-half, half]³` by slab clipping.
fn chord(o: [f64; 3], d: [f64; 3], half: f64) -> f64 {
    let (mut enter, mut leave) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > half {
                return 0.0;
            }
            continue;
        }
        let (t1, t2) = ((-half - o[a]) / d[a], (half - o[a]) / d[a]);
        enter = enter.max(t1.min(t2));
        leave = leave.min(t1.max(t2));
    }
    (leave - enter.max(0.0)).max(0.0)
}

fn geometry(n: usize, pitch: f64) -> ProjectionGeometry {
    ProjectionGeometry {
        detector_cols: n,
        detector_rows: n,
        pixel_pitch_mm: pitch,
        ..ProjectionGeometry::default()
    }
}

#[test]
fn criterion_04_projector() {
    gate(4, "projector", || {
        let mu = 0.02;
        let cube = AttenuationVolume::uniform(VolumeGrid::centered([50; 3], [2.0; 3]), mu as f32)
            .map_err(|e| e.to_string())?;
        let g = geometry(33, 5.0);
        let src = g.source();
        let central = ray_sum(&cube, src, [0.0, 1.0, 0.0], g.step_mm);
        let central_err = (central - mu * 100.0).abs() / (mu * 100.0);
        ensure(central_err < 0.01, || {
            format!("central ray {central} vs {}", mu * 100.0)
        })?;

        let img = project_drr(&cube, &g).map_err(|e| e.to_string())?;
        let (mut oblique_err, mut checked) = (0f64, 0);
        for row in 0..g.detector_rows {
            for col in 0..g.detector_cols {
                let len = chord(src, unit(src, g.pixel_center(col, row)), 50.0);
                if len < 20.0 {
                    continue;
                }
                let err = (img.get(col, row) as f64 - mu * len).abs() / (mu * len);
                oblique_err = oblique_err.max(err);
                checked += 1;
            }
        }
        ensure(oblique_err < 0.015, || {
            format!("oblique error {oblique_err:.4}")
        })?;

        let grid = VolumeGrid::centered([20, 18, 16], [5.0, 5.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut random = || {
            let v = (0..grid.len())
                .map(|_| rng.random_range(0.0..0.04f32))
                .collect();
            AttenuationVolume::new(grid, v).unwrap()
        };
        let (v1, v2) = (random(), random());
        let (a, b) = (0.75f32, 1.5f32);
        let mix = v1
            .mu()
            .iter()
            .zip(v2.mu())
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        let v3 = AttenuationVolume::new(grid, mix).map_err(|e| e.to_string())?;
        let lg = ProjectionGeometry {
            couch_roll_deg: 7.0,
            ..geometry(24, 6.0)
        };
        let mut linear_err = 0f64;
        for (col, row) in [(12, 10), (3, 4), (20, 15), (7, 18)] {
            let d = unit(lg.source(), lg.pixel_center(col, row));
            let s = |v: &AttenuationVolume| ray_sum(v, lg.source(), d, 1.0);
            let expect = a as f64 * s(&v1) + b as f64 * s(&v2);
            linear_err = linear_err.max((s(&v3) - expect).abs() / expect);
        }
        ensure(linear_err < 1e-6, || {
            format!("linearity error {linear_err:.2e}")
        })?;

        let hg = geometry(9, 12.0);
        let mut halving = 0f64;
        for row in 0..9 {
            for col in 0..9 {
                let d = unit(hg.source(), hg.pixel_center(col, row));
                let coarse = ray_sum(&cube, hg.source(), d, 1.0);
                let fine = ray_sum(&cube, hg.source(), d, 0.5);
                halving = halving.max((coarse - fine).abs() / fine);
            }
        }
        ensure(halving < 0.005, || {
            format!("step halving changes sums by {halving:.4}")
        })?;
        Ok(format!(
            "relative errors: central {central_err:.1e}, oblique max {oblique_err:.1e} over {checked} rays, \
             linearity {linear_err:.1e}, step halving {halving:.1e}"
        ))
    });
}

// ------------------------------------------------------------- criterion 5

fn ssim_oracle(a: &Image2D, b: &Image2D) -> f64 {
    let (k, r, sigma) = (11usize, 5.0f64, 1.5f64);
    let mut w = vec![0.0; k * k];
    for j in 0..k {
        for i in 0..k {
            w[j * k + i] =
                (-((i as f64 - r).powi(2) + (j as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let (mut acc, mut count) = (0.0, 0);
    for y0 in 0..=a.height() - k {
        for x0 in 0..=a.width() - k {
            let at = |img: &Image2D, i: usize| img.get(x0 + i % k, y0 + i / k) as f64;
            let mx: f64 = (0..k * k).map(|i| w[i] * at(a, i)).sum();
            let my: f64 = (0..k * k).map(|i| w[i] * at(b, i)).sum();
            let vx: f64 = (0..k * k).map(|i| w[i] * (at(a, i) - mx).powi(2)).sum();
            let vy: f64 = (0..k * k).map(|i| w[i] * (at(b, i) - my).powi(2)).sum();
            let cxy: f64 = (0..k * k)
                .map(|i| w[i] * (at(a, i) - mx) * (at(b, i) - my))
                .sum();
            acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn mmd_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = |a: &Vec<f64>, b: &Vec<f64>| {
        (a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / d + 1.0).powi(3)
    };
    let m = x.len() as f64;
    let within = |s: &[Vec<f64>]| {
        let mut t = 0.0;
        for (i, a) in s.iter().enumerate() {
            for (j, b) in s.iter().enumerate() {
                if i != j {
                    t += k(a, b);
                }
            }
        }
        t / (m * (m - 1.0))
    };
    let cross: f64 = x.iter().flat_map(|a| y.iter().map(move |b| k(a, b))).sum();
    within(x) + within(y) - 2.0 * cross / (m * m)
}

fn noisy_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image2D {
    let base: Vec<f32> = (0..w * h).map(|_| rng.random()).collect();
    Image2D::from_fn(w, h, |x, y| {
        let at = |x: usize, y: usize| base[y.min(h - 1) * w + x.min(w - 1)];
        (at(x, y) + at(x + 1, y) + at(x, y + 1) + at(x + 1, y + 1)) / 4.0
    })
}

#[test]
fn criterion_05_metrics() {
    gate(5, "metrics", || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut worst = 0f64;
        for case in 0..6 {
            let (w, h) = (20 + case * 3, 24 + case);
            let a = noisy_image(&mut rng, w, h);
            let n = noisy_image(&mut rng, w, h);
            let b = Image2D::from_fn(w, h, |x, y| 0.8 * a.get(x, y) + 0.2 * n.get(x, y));
            let diffs: Vec<f64> = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| p as f64 - q as f64)
                .collect();
            let mae_ref = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
            let mse = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
            let psnr_ref = -10.0 * mse.log10();
            let e = |r: fluorosynth::Result<f64>, want: f64| {
                r.map(|v| (v - want).abs()).unwrap_or(f64::INFINITY)
            };
            worst = worst
                .max(e(mae(&a, &b), mae_ref))
                .max(e(psnr(&a, &b, 1.0), psnr_ref))
                .max(e(ssim(&a, &b, &SsimConfig::default()), ssim_oracle(&a, &b)));
        }
        ensure(worst < 1e-6, || {
            format!("MAE/PSNR/SSIM differ from oracles by {worst:.2e}")
        })?;

        let mut kid_err = 0f64;
        for shift in [0.0, 0.3, 1.0] {
            let mut set = |s: f64| -> Vec<Vec<f64>> {
                (0..8)
                    .map(|_| (0..5).map(|_| rng.random::<f64>() + s).collect())
                    .collect()
            };
            let (x, y) = (set(0.0), set(shift));
            let cfg = KidConfig {
                block_size: 8,
                blocks: 3,
                ..KidConfig::toy()
            };
            let est = kid_features(&x, &y, &cfg).map_err(|e| e.to_string())?;
            kid_err = kid_err.max((est.mean - mmd_oracle(&x, &y)).abs());
        }
        ensure(kid_err < 1e-8, || {
            format!("KID differs from brute force by {kid_err:.2e}")
        })?;

        let ex = FeatureExtractorSpec::toy()
            .build()
            .map_err(|e| e.to_string())?;
        let images: Vec<Image2D> = (0..240).map(|_| noisy_image(&mut rng, 32, 32)).collect();
        let refs: Vec<&Image2D> = images.iter().collect();
        let cfg = KidConfig {
            block_size: 12,
            blocks: 50,
            ..KidConfig::toy()
        };
        let feats = embed_images(&ex, &refs, cfg.batch).map_err(|e| e.to_string())?;
        let own = kid_self_features(&feats, &cfg).map_err(|e| e.to_string())?;
        ensure(own.mean.abs() <= 3.0 * own.std_error, || {
            format!("self-KID {:.3e} with SE {:.3e}", own.mean, own.std_error)
        })?;
        Ok(format!(
            "quality oracles within {worst:.1e}, KID brute force within {kid_err:.1e}, self-KID {:.2e} +/- {:.2e}",
            own.mean, own.std_error
        ))
    });
}

// ------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_directional_reproduction() {
    gate(6, "directional reproduction", || {
        let run = toy()?;
        let manifest = read_json(&run.dir.join("data/manifest.json"))?;
        let counts = &manifest["counts"];
        ensure(
            counts["train_pairs"] == 64 && counts["test_pairs"] == 16,
            || format!("counts {counts}"),
        )?;
        let effective = read_json(&run.dir.join("cg/effective-config.json"))?;
        let batch = effective["train"]["batch_size"]
            .as_u64()
            .unwrap_or(u64::MAX);
        ensure(batch <= 8, || format!("batch size {batch}"))?;

        let report = read_json(&run.dir.join("ev/report.json"))?;
        let drr = method(&report, "DRR")?;
        let syn = method(&report, "CycleGAN")?;
        let values = format!(
            "MAE {:.4} vs {:.4}, PSNR {:.2} vs {:.2} dB, KID {:.5} vs {:.5}, {:.0} s",
            syn.mae, drr.mae, syn.psnr, drr.psnr, syn.kid, drr.kid, run.pipeline_s
        );
        ensure(
            syn.mae < drr.mae && syn.psnr > drr.psnr && syn.kid < drr.kid,
            || values.clone(),
        )?;
        ensure(run.pipeline_s < 1800.0, || values.clone())?;
        Ok(values)
    });
}

// ------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_cyclegan_versus_unet_kid() {
    gate(7, "CycleGAN vs U-Net KID", || {
        let run = toy()?;
        let report = read_json(&run.dir.join("ev/report.json"))?;
        let cg = method(&report, "CycleGAN")?;
        let un = method(&report, "U-Net")?;
        let values = format!(
            "KID CycleGAN {:.5} +/- {:.5}, U-Net {:.5} +/- {:.5} (U-Net trained in {:.0} s)",
            cg.kid, cg.kid_se, un.kid, un.kid_se, run.unet_train_s
        );
        ensure(cg.kid <= un.kid, || values.clone())?;
        Ok(values)
    });
}

// ------------------------------------------------------------- criterion 8

fn full_size_pair() -> Result<ImagePair, String> {
    let ct = make_phantom(&PhantomSpec::random_case(3), [64, 64, 64], [4.0; 3])
        .map_err(|e| e.to_string())?;
    let vol = hu_to_attenuation(&ct, MU_WATER).map_err(|e| e.to_string())?;
    let g = ProjectionGeometry {
        step_mm: 2.0,
        couch_roll_deg: 6.0,
        ..ProjectionGeometry::default()
    };
    let raw = project_drr(&vol, &g).map_err(|e| e.to_string())?;
    let drr = normalize_ray_sums(&raw, raw.min_max().1 as f64).map_err(|e| e.to_string())?;
    let fpd = simulate_fpd(
        &drr,
        &FpdSimSpec {
            seed: 8,
            ..FpdSimSpec::default()
        },
    )
    .map_err(|e| e.to_string())?;
    ImagePair::new(drr, fpd, 0, 0, "roll=+6.00").map_err(|e| e.to_string())
}

fn air_oracle(pair: &ImagePair, cfg: &PreprocessConfig, seed: u64) -> Vec<[usize; 2]> {
    let size = cfg.subimage_size;
    let w = pair.drr.width();
    let air = |x0: usize, y0: usize| {
        let mut n = 0;
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                if pair.drr.data()[y * w + x] < cfg.air_level {
                    n += 1;
                }
            }
        }
        n as f64 / (size * size) as f64
    };
    let mut rng = stream_rng(&[seed, 0x5B, pair.pair_id()]);
    let (mut out, mut attempts) = (Vec::new(), 0);
    while out.len() < cfg.subimages_per_image && attempts < cfg.attempt_budget {
        attempts += 1;
        let x = rng.random_range(0..=w - size);
        let y = rng.random_range(0..=pair.drr.height() - size);
        if !out.contains(&[x, y]) && air(x, y) < cfg.air_threshold {
            out.push([x, y]);
        }
    }
    out
}

fn tiny_dataset_spec(seed: u64) -> DatasetSpec {
    let mut s = DatasetSpec::toy();
    (s.train_cases, s.train_pairs, s.test_cases, s.test_pairs) = (2, 4, 1, 2);
    s.seed = seed;
    s
}

#[test]
fn criterion_08_preprocessing() {
    gate(8, "preprocessing", || {
        let pair = full_size_pair()?;
        let cfg = PreprocessConfig::default();
        let mut sizes = vec![pair.drr.width()];
        let cropped = crop_border(&pair.drr, cfg.border_margin).map_err(|e| e.to_string())?;
        sizes.push(cropped.width());
        let resized = resize_bilinear(&cropped, cfg.resize_to, cfg.resize_to);
        sizes.push(resized.width());
        let small = ImagePair::new(
            resized,
            cfg.apply(&pair.fpd).map_err(|e| e.to_string())?,
            0,
            0,
            "roll=+6.00",
        )
        .map_err(|e| e.to_string())?;
        let set = extract_subimages(&small, &cfg, 1).map_err(|e| e.to_string())?;
        let sub = set.items.first().ok_or("no subimages accepted")?;
        sizes.push(sub.drr.width());
        let (crop, _, _) = augment(sub, &AugmentSpec::default(), small.pair_id(), 0, 0)
            .map_err(|e| e.to_string())?;
        sizes.push(crop.width());
        ensure(sizes == [768, 728, 384, 144, 124], || {
            format!("size chain {sizes:?}")
        })?;

        for seed in [0, 1, 77] {
            let got = extract_subimages(&small, &cfg, seed).map_err(|e| e.to_string())?;
            let want = air_oracle(&small, &cfg, seed);
            ensure(got.positions() == want, || {
                format!("seed {seed}: {:?} vs {want:?}", got.positions())
            })?;
            for s in &got.items {
                let f = air_fraction(&small.drr, s.x, s.y, cfg.subimage_size, cfg.air_level);
                ensure(f < cfg.air_threshold, || {
                    format!("accepted window with air {f}")
                })?;
            }
        }

        let a = generate_dataset(&tiny_dataset_spec(21)).map_err(|e| e.to_string())?;
        let b = generate_dataset(&tiny_dataset_spec(21)).map_err(|e| e.to_string())?;
        let bits = |d: &Dataset| -> Vec<u32> {
            d.train
                .iter()
                .chain(&d.test)
                .flat_map(|p| p.drr.data().iter().chain(p.fpd.data()))
                .map(|v| v.to_bits())
                .collect()
        };
        ensure(bits(&a) == bits(&b) && a == b, || {
            "same seed gave different datasets".into()
        })?;
        let c = generate_dataset(&tiny_dataset_spec(22)).map_err(|e| e.to_string())?;
        ensure(bits(&a) != bits(&c), || {
            "different seeds gave identical datasets".into()
        })?;
        Ok(format!(
            "{sizes:?}, air rule matches the brute-force oracle, datasets bitwise reproducible"
        ))
    });
}

// ------------------------------------------------------------- criterion 9

const SMALL: &str = r#"{
  "datapipe": {"train_cases": 2, "train_pairs": 4, "test_cases": 1, "test_pairs": 3},
  "train": {"epochs": 4, "checkpoint_every": 1},
  "eval": {"kid": {"block_size": 3, "blocks": 5}}
}"#;

#[test]
fn criterion_09_determinism_and_resume() {
    gate(9, "determinism and resume", || {
        let dir = scratch("acceptance-determinism");
        let d = dir.as_path();
        fs::write(d.join("four.json"), SMALL).map_err(|e| e.to_string())?;
        fs::write(
            d.join("two.json"),
            SMALL.replace(r#""epochs": 4"#, r#""epochs": 2"#),
        )
        .map_err(|e| e.to_string())?;
        for run in ["a", "b"] {
            let data = format!("{run}/data");
            cli(
                d,
                &[
                    "make-dataset",
                    "--toy",
                    "--config",
                    "four.json",
                    "--out",
                    &data,
                ],
            )?;
            cli(
                d,
                &[
                    "train",
                    "--toy",
                    "--config",
                    "four.json",
                    "--data",
                    &data,
                    "--out",
                    &format!("{run}/train"),
                ],
            )?;
            cli(
                d,
                &[
                    "evaluate",
                    "--toy",
                    "--config",
                    "four.json",
                    "--data",
                    &data,
                    "--checkpoint",
                    &format!("{run}/train/checkpoint"),
                    "--out",
                    &format!("{run}/eval"),
                ],
            )?;
        }
        cli(
            d,
            &[
                "train", "--toy", "--config", "two.json", "--data", "a/data", "--out", "r",
            ],
        )?;
        cli(
            d,
            &[
                "train",
                "--toy",
                "--config",
                "four.json",
                "--data",
                "a/data",
                "--out",
                "r",
                "--resume",
            ],
        )?;

        let same = |x: &str, y: &str| -> Result<(), String> {
            ensure(read(&d.join(x))? == read(&d.join(y))?, || {
                format!("{x} differs from {y}")
            })
        };
        for f in [
            "data/manifest.json",
            "train/history.csv",
            "train/checkpoint/bundle.fstn",
            "eval/report.csv",
            "eval/report.json",
        ] {
            same(&format!("a/{f}"), &format!("b/{f}"))?;
        }
        same("a/train/history.csv", "r/history.csv")?;
        same("a/train/checkpoint/bundle.fstn", "r/checkpoint/bundle.fstn")?;
        same(
            "a/train/checkpoint/manifest.json",
            "r/checkpoint/manifest.json",
        )?;
        Ok("history, checkpoint and reports bitwise equal across runs; 2+2 resumed epochs equal 4 straight".into())
    });
}

// ------------------------------------------------------------ criterion 10

#[test]
fn criterion_10_inference_timing() {
    gate(10, "inference timing", || {
        let run = toy()?;
        let out = &run.infer_stdout;
        let load_line = out.lines().find(|l| l.starts_with("load time:"));
        let gen_line = out
            .lines()
            .find(|l| l.starts_with("generation time per image:"));
        ensure(load_line.is_some() && gen_line.is_some(), || {
            format!("stdout lacks timing lines: {out}")
        })?;
        let report = read_json(&run.dir.join("inf/infer.json"))?;
        let load = report["load_ms"].as_f64().unwrap_or(-1.0);
        let gen = report["generation_ms"]["mean"].as_f64().unwrap_or(-1.0);
        let n = report["generation_ms"]["n"].as_u64().unwrap_or(0) as usize;
        ensure(load > 0.0 && gen > 0.0 && n == run.infer_inputs, || {
            format!("infer.json {report}")
        })?;
        Ok(format!(
            "load {load:.1} ms, generation {gen:.2} ms per image over {n} images"
        ))
    });
}
