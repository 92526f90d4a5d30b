use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use trochlea::denoiser::{self, load_checkpoint, save_checkpoint, smoothed, DenoiserNet, TrainingPair};
use trochlea::diffusion::{inpaint_with, InpaintOptions};
use trochlea::io::{load_labels, load_mask, save_mask, save_raw};
use trochlea::masking::{apply_mask, inpainting_mask, localize_patella, segment_background};
use trochlea::metrics::{self, paired_csv, wilcoxon_signed_rank, MetricReport, PairedRow};
use trochlea::phantom::{
    generate_phantom, measure_sulcus_angle, measurement_slice, write_phantom, GrooveMeasurement, PhantomFamily,
    PhantomSpec,
};
use trochlea::preprocess::preprocess;
use trochlea::selftest::{self, SelftestOptions};
use trochlea::wavelet::save_coeffs;
use trochlea::{BinaryMask, Error, LabelMap, Volume};

use crate::config::{resolve_seed, PipelineConfig};
use crate::error::CliError;
use crate::util::{emit, log_artifact, pair_up, read_volume, stem, thread_pool, write_text};
use crate::{
    Cli, Command, EvaluateArgs, Family, InpaintArgs, MaskArgs, MeasureArgs, PhantomArgs, PreprocessArgs, SelftestArgs,
    TrainArgs,
};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), cli.preset)?;
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?
    );
    if let Some(c) = &cli.config {
        log_artifact("config", c)?;
    }
    match &cli.command {
        Command::Preprocess(a) => run_preprocess(&cfg, a),
        Command::Mask(a) => run_mask(&cfg, a),
        Command::Phantom(a) => run_phantom(&cfg, a),
        Command::Train(a) => run_train(&cfg, a),
        Command::Inpaint(a) => run_inpaint(&cfg, a),
        Command::Measure(a) => run_measure(&cfg, a),
        Command::Evaluate(a) => run_evaluate(&cfg, a),
        Command::Selftest(a) => run_selftest(&cfg, a),
    }
}

fn seed_for(flag: Option<u64>, cfg: &PipelineConfig) -> Result<u64, CliError> {
    let (seed, source) = resolve_seed(flag, cfg.seed)?;
    log::info!("seed {seed} (from {source})");
    Ok(seed)
}

fn input(role: &str, path: &Path) -> Result<Volume, CliError> {
    log_artifact(role, path)?;
    read_volume(path)
}

fn run_preprocess(cfg: &PipelineConfig, a: &PreprocessArgs) -> Result<(), CliError> {
    let v = input("input", &a.input)?;
    let n = preprocess(&v, &cfg.preprocess)?;
    save_raw(&n.volume, &a.out)?;
    let hash = log_artifact("output", &a.out)?;
    emit(&json!({
        "output": a.out,
        "dims": n.volume.dims(),
        "spacing_mm": n.volume.spacing(),
        "clip_low": n.low,
        "clip_high": n.high,
        "degenerate": n.degenerate,
        "sha256": hash,
    }))
}

fn run_mask(cfg: &PipelineConfig, a: &MaskArgs) -> Result<(), CliError> {
    log_artifact("labels", &a.labels)?;
    let labels = load_labels(&a.labels)?;
    let (mask, kind) = inpainting_mask(&labels, &cfg.mask, &cfg.patella)?;
    save_mask(&mask, &a.out)?;
    let hash = log_artifact("mask", &a.out)?;
    if let Some(path) = &a.input {
        let v = input("input", path)?;
        v.grid().ensure_same(labels.grid(), "image and labels")?;
        if let Some(out) = &a.masked {
            save_raw(&apply_mask(&v, &mask)?, out)?;
            log_artifact("masked", out)?;
        }
        if let Some(out) = &a.clean {
            let fg = segment_background(&v, &cfg.background)?;
            log::info!("background threshold {}", fg.threshold);
            save_raw(&fg.cleaned, out)?;
            log_artifact("clean", out)?;
        }
    }
    emit(&json!({ "mask": a.out, "kind": kind, "voxels": mask.count(), "sha256": hash }))
}

fn run_phantom(cfg: &PipelineConfig, a: &PhantomArgs) -> Result<(), CliError> {
    let seed = seed_for(a.seed, cfg)?;
    let mut specs: Vec<(String, PhantomSpec)> = match (a.sa, a.tgd, a.family) {
        (Some(sa), Some(tgd), _) => {
            let spec = PhantomSpec {
                sulcus_angle_deg: sa,
                groove_depth_mm: tgd,
                seed,
                ..cfg.phantom.clone()
            };
            vec![(a.name.clone().unwrap_or_else(|| "phantom".into()), spec)]
        }
        (_, _, Some(family)) => {
            let (tag, fam) = match family {
                Family::Healthy => ("healthy", PhantomFamily::healthy()),
                Family::Dysplastic => ("dysplastic", PhantomFamily::dysplastic()),
            };
            let fam = PhantomFamily {
                base: cfg.phantom.clone(),
                ..fam
            };
            let prefix = a.name.as_deref().unwrap_or(tag);
            fam.specs(a.count, seed)
                .into_iter()
                .enumerate()
                .map(|(i, s)| (format!("{prefix}_{i:03}"), s))
                .collect()
        }
        _ => return Err(CliError::Invalid("give --sa and --tgd, or --family".into())),
    };
    if let Some(noise) = a.noise {
        for (_, s) in &mut specs {
            s.noise_std = noise;
        }
    }
    for (name, spec) in specs {
        let p = generate_phantom(&spec)?;
        let files = write_phantom(&a.out, &name, &p)?;
        let (mask, kind) = inpainting_mask(&p.labels, &cfg.mask, &cfg.patella)?;
        let mask_path = a.out.join(format!("{name}_mask.vol"));
        save_mask(&mask, &mask_path)?;
        for path in [&files.volume, &files.labels, &files.truth, &mask_path] {
            log_artifact("phantom", path)?;
        }
        emit(&json!({
            "name": name,
            "volume": files.volume,
            "labels": files.labels,
            "truth": files.truth,
            "mask": mask_path,
            "mask_kind": kind,
            "ground_truth": p.truth,
        }))?;
    }
    Ok(())
}

/// `<stem>.vol` for every `<stem>_labels.vol` in `dir`, sorted by name.
fn training_set(cfg: &PipelineConfig, dir: &Path) -> Result<Vec<(String, TrainingPair)>, CliError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Invalid(format!("cannot list {}: {e}", dir.display())))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_labels.vol"))
                .map(String::from)
        })
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::Invalid(format!(
            "no <stem>_labels.vol files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(stems.len());
    for s in stems {
        let y0 = input("train", &dir.join(format!("{s}.vol")))?;
        if y0.dims() != cfg.resolution {
            return Err(CliError::Invalid(format!(
                "{s}.vol has dims {:?}, the configured resolution is {:?}",
                y0.dims(),
                cfg.resolution
            )));
        }
        let mask_path = dir.join(format!("{s}_mask.vol"));
        let mask = if mask_path.is_file() {
            load_mask(&mask_path)?
        } else {
            let labels = load_labels(dir.join(format!("{s}_labels.vol")))?;
            inpainting_mask(&labels, &cfg.mask, &cfg.patella)?.0
        };
        y0.grid().ensure_same(mask.grid(), "volume and mask")?;
        out.push((s, TrainingPair { y0, mask }));
    }
    Ok(out)
}

fn run_train(cfg: &PipelineConfig, a: &TrainArgs) -> Result<(), CliError> {
    let seed = seed_for(a.seed, cfg)?;
    let mut tc = cfg.training.clone();
    tc.seed = seed;
    if let Some(n) = a.iterations {
        tc.iterations = n;
    }
    tc.validate()?;
    let data: Vec<TrainingPair> = training_set(cfg, &a.data)?.into_iter().map(|(_, p)| p).collect();
    log::info!("training on {} volumes for {} iterations", data.len(), tc.iterations);
    let schedule = cfg.schedule.build()?;
    let mut net = DenoiserNet::new(cfg.network.clone(), seed)?;
    log::info!("network has {} parameters", net.param_count());
    let started = Instant::now();
    let every = (tc.iterations / 20).max(1);
    let report = denoiser::train(&mut net, &data, &schedule, &tc, &mut |it, loss| {
        if (it + 1) % every == 0 {
            log::info!("iteration {} loss {loss:.5} ({:.0?})", it + 1, started.elapsed());
        }
    })?;
    save_checkpoint(&net, &a.out, tc.iterations, seed, &cfg.schedule)?;
    let hash = log_artifact("checkpoint", &a.out)?;
    log_artifact("checkpoint header", &denoiser::header_path(&a.out))?;
    if let Some(path) = &a.loss_csv {
        let mut text = String::from("iteration,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            text.push_str(&format!("{i},{l}\n"));
        }
        write_text(path, &text)?;
        log_artifact("loss", path)?;
    }
    let window = 100.min(report.losses.len());
    let s = smoothed(&report.losses, window);
    let first = report.losses.iter().take(window).sum::<f64>() / window as f64;
    let last = *s.last().expect("at least one iteration");
    emit(&json!({
        "checkpoint": a.out,
        "volumes": data.len(),
        "iterations": tc.iterations,
        "seed": seed,
        "initial_loss": first,
        "final_loss": last,
        "ratio": last / first,
        "seconds": started.elapsed().as_secs_f64(),
        "sha256": hash,
    }))
}

fn run_inpaint(cfg: &PipelineConfig, a: &InpaintArgs) -> Result<(), CliError> {
    let seed = seed_for(a.seed, cfg)?;
    let jobs = pair_up(&a.input, &a.mask, "masks")?;
    log_artifact("checkpoint", &a.checkpoint)?;
    let (net, header) = load_checkpoint(&a.checkpoint)?;
    if header.schedule != cfg.schedule {
        log::warn!("using the schedule stored in the checkpoint, which differs from the config");
    }
    let schedule = header.schedule.build()?;
    let outputs: Vec<PathBuf> = if jobs.len() == 1 {
        vec![a.out.clone()]
    } else {
        std::fs::create_dir_all(&a.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", a.out.display())))?;
        jobs.iter()
            .map(|(i, _)| a.out.join(format!("{}_inpainted.vol", stem(i))))
            .collect()
    };
    if let Some(d) = &a.snapshots {
        std::fs::create_dir_all(d).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", d.display())))?;
    }
    let opts = InpaintOptions {
        clamp_x0: cfg.inpaint.clamp_x0,
        snapshot_every: if a.snapshots.is_some() {
            cfg.inpaint.snapshot_every
        } else {
            0
        },
    };
    let work = |i: usize| -> Result<serde_json::Value, CliError> {
        let (vol_path, mask_path) = jobs[i];
        let v = input("input", vol_path)?;
        log_artifact("mask", mask_path)?;
        let mask = load_mask(mask_path)?;
        let item_seed = seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
        let started = Instant::now();
        let mut observer = |t: usize, x: &trochlea::WaveletCoeffs| -> trochlea::Result<()> {
            match &a.snapshots {
                Some(d) => save_coeffs(x, d.join(format!("{}_t{:04}.vol", stem(vol_path), t - 1))),
                None => Ok(()),
            }
        };
        let result = inpaint_with(&v, &mask, &net, &schedule, &mut rng, &opts, &mut observer)?;
        save_raw(&result.output, &outputs[i])?;
        let hash = log_artifact("output", &outputs[i])?;
        log::info!("{} done in {:.1?}", vol_path.display(), started.elapsed());
        Ok(json!({
            "input": vol_path,
            "mask": mask_path,
            "output": outputs[i],
            "seed": item_seed,
            "sha256": hash,
        }))
    };
    let results: Vec<Result<serde_json::Value, CliError>> =
        thread_pool(a.jobs)?.install(|| (0..jobs.len()).into_par_iter().map(work).collect());
    for r in results {
        emit(&r?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Measured {
    status: &'static str,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    measurement: Option<GrooveMeasurement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

/// Unmeasurable grooves are reported as such; for statistics they count as flat.
fn measure_at(v: &Volume, k: usize) -> Result<(Measured, GrooveMeasurement), CliError> {
    match measure_sulcus_angle(v, k) {
        Ok(m) => Ok((
            Measured {
                status: "ok",
                measurement: Some(m.clone()),
                reason: None,
            },
            m,
        )),
        Err(Error::Unmeasurable(reason)) => Ok((
            Measured {
                status: "unmeasurable",
                measurement: None,
                reason: Some(reason),
            },
            GrooveMeasurement::flat(k),
        )),
        Err(e) => Err(e.into()),
    }
}

fn pick_slice(
    cfg: &PipelineConfig,
    v: &Volume,
    labels: Option<&LabelMap>,
    fixed: Option<usize>,
) -> Result<usize, CliError> {
    if let Some(k) = fixed {
        if k >= v.dims()[2] {
            return Err(CliError::Invalid(format!(
                "slice {k} is outside {} slices",
                v.dims()[2]
            )));
        }
        return Ok(k);
    }
    if let Some(l) = labels {
        v.grid().ensure_same(l.grid(), "image and labels")?;
        if let Some(k) = localize_patella(l, &cfg.patella).as_ref().and_then(measurement_slice) {
            return Ok(k);
        }
        log::warn!("no patella found in the labels, measuring the middle slice");
    }
    Ok(v.dims()[2] / 2)
}

fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn run_measure(cfg: &PipelineConfig, a: &MeasureArgs) -> Result<(), CliError> {
    if !a.labels.is_empty() && a.labels.len() != a.input.len() {
        return Err(CliError::Invalid("give one --labels per --input".into()));
    }
    if !a.after.is_empty() && a.after.len() != a.input.len() {
        return Err(CliError::Invalid("give one --after per --input".into()));
    }
    let mut rows = Vec::new();
    let (mut sa, mut tgd) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    let mut unmeasurable = [0usize; 2];
    for (i, path) in a.input.iter().enumerate() {
        let v = input("input", path)?;
        let labels = match a.labels.get(i) {
            Some(p) => {
                log_artifact("labels", p)?;
                Some(load_labels(p)?)
            }
            None => None,
        };
        let k = pick_slice(cfg, &v, labels.as_ref(), a.slice)?;
        let (before, bm) = measure_at(&v, k)?;
        let Some(after_path) = a.after.get(i) else {
            emit(&json!({ "input": path, "slice": k, "result": before }))?;
            continue;
        };
        let w = input("after", after_path)?;
        w.grid().ensure_same(v.grid(), "paired volumes")?;
        let (after, am) = measure_at(&w, k)?;
        unmeasurable[0] += (before.status != "ok") as usize;
        unmeasurable[1] += (after.status != "ok") as usize;
        emit(
            &json!({ "input": path, "after": after_path, "slice": k, "before_result": before, "after_result": after }),
        )?;
        let name = stem(path);
        rows.push(PairedRow {
            name: name.clone(),
            quantity: "sulcus_angle_deg".into(),
            before: bm.sulcus_angle_deg,
            after: am.sulcus_angle_deg,
        });
        rows.push(PairedRow {
            name,
            quantity: "groove_depth_mm".into(),
            before: bm.groove_depth_mm,
            after: am.groove_depth_mm,
        });
        sa.0.push(bm.sulcus_angle_deg);
        sa.1.push(am.sulcus_angle_deg);
        tgd.0.push(bm.groove_depth_mm);
        tgd.1.push(am.groove_depth_mm);
    }
    if a.after.is_empty() {
        return Ok(());
    }
    let test = |b: &[f64], a: &[f64]| match wilcoxon_signed_rank(b, a) {
        Ok(r) => Ok(serde_json::to_value(r).expect("result serializes")),
        Err(Error::Degenerate(why)) => {
            log::warn!("signed-rank test skipped: {why}");
            Ok(serde_json::Value::Null)
        }
        Err(e) => Err(CliError::from(e)),
    };
    emit(&json!({
        "summary": {
            "pairs": sa.0.len(),
            "unmeasurable_before": unmeasurable[0],
            "unmeasurable_after": unmeasurable[1],
            "sulcus_angle_deg": {
                "median_before": median(&sa.0),
                "median_after": median(&sa.1),
                "wilcoxon": test(&sa.0, &sa.1)?,
            },
            "groove_depth_mm": {
                "median_before": median(&tgd.0),
                "median_after": median(&tgd.1),
                "wilcoxon": test(&tgd.0, &tgd.1)?,
            },
        }
    }))?;
    if let Some(path) = &a.csv {
        write_text(path, &paired_csv(&rows))?;
        log_artifact("table", path)?;
    }
    Ok(())
}

fn run_evaluate(cfg: &PipelineConfig, a: &EvaluateArgs) -> Result<(), CliError> {
    if a.reference.len() != a.pred.len() {
        return Err(CliError::Invalid(format!(
            "{} predictions but {} references",
            a.pred.len(),
            a.reference.len()
        )));
    }
    let masks = pair_up(&a.pred, &a.mask, "masks")?;
    let work = |i: usize| -> Result<MetricReport, CliError> {
        let pred = input("pred", &a.pred[i])?;
        let reference = input("ref", &a.reference[i])?;
        log_artifact("mask", masks[i].1)?;
        let mask: BinaryMask = load_mask(masks[i].1)?;
        Ok(metrics::evaluate(&pred, &reference, &mask, &cfg.ssim)?)
    };
    let reports: Vec<Result<MetricReport, CliError>> =
        thread_pool(a.jobs)?.install(|| (0..a.pred.len()).into_par_iter().map(work).collect());
    let reports = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    for (i, r) in reports.iter().enumerate() {
        emit(&json!({ "pred": a.pred[i], "ref": a.reference[i], "mask": masks[i].1, "report": r }))?;
    }
    let agg = metrics::aggregate(&reports)?;
    if reports.len() > 1 {
        emit(&json!({ "aggregate": agg }))?;
    }
    if let Some(path) = &a.aggregate {
        let text = serde_json::to_string_pretty(&agg).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_text(path, &text)?;
        log_artifact("aggregate", path)?;
    }
    Ok(())
}

fn run_selftest(cfg: &PipelineConfig, a: &SelftestArgs) -> Result<(), CliError> {
    let seed = seed_for(a.seed, cfg)?;
    if a.cases == 0 {
        return Err(CliError::Invalid("--cases must be at least 1".into()));
    }
    let checks = selftest::run(&SelftestOptions { cases: a.cases, seed });
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        if a.json {
            emit(c)?;
        } else {
            println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
    }
    log::info!("{} of {} checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}
