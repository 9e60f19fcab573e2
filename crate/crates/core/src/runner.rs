//! Whole runs: metrics, checkpoints, final PLY, resume, evaluation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::SceneConfig;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::guidance::{psnr, TargetScene};
use crate::io::write_ply;
use crate::math::Vec3;
use crate::raster::render;
use crate::trainer::{StepReport, Trainer};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_PLY: &str = "final.ply";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Stop after this step instead of `total_steps` (checkpoints as usual).
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: u64,
    pub n_gaussians: usize,
    pub last_report: Option<StepReport>,
}

/// Keeps the records with `step <= keep_through` of an existing metrics file.
fn truncate_metrics(path: &Path, keep_through: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let mut kept = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let step = serde_json::from_str::<serde_json::Value>(&line)
            .ok()
            .and_then(|v| v.get("step").and_then(|s| s.as_u64()));
        if step.is_some_and(|s| s <= keep_through) {
            kept.push(line);
        }
    }
    let mut f = BufWriter::new(File::create(path)?);
    for l in kept {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

/// Runs the trainer to `total_steps` (or `stop_after`), writing
/// `metrics.jsonl`, periodic checkpoints, `final.ckpt` and `final.ply` into
/// `out_dir`. A failing step is checkpointed before the error is returned.
pub fn run(trainer: &mut Trainer, guidance: &mut dyn crate::guidance::Guidance, opts: &RunOptions) -> Result<RunSummary> {
    if trainer.config.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| run_inner(trainer, guidance, opts))
    } else {
        run_inner(trainer, guidance, opts)
    }
}

fn run_inner(trainer: &mut Trainer, guidance: &mut dyn crate::guidance::Guidance, opts: &RunOptions) -> Result<RunSummary> {
    fs::create_dir_all(&opts.out_dir)?;
    let metrics_path = opts.out_dir.join(METRICS_FILE);
    truncate_metrics(&metrics_path, trainer.step)?;
    let mut metrics = BufWriter::new(OpenOptions::new().create(true).append(true).open(&metrics_path)?);
    let end = opts
        .stop_after
        .unwrap_or(u64::MAX)
        .min(trainer.config.total_steps());
    let snapshot = trainer.config.snapshot_interval;
    let mut last = None;
    while trainer.step < end {
        let report = match trainer.train_step(guidance) {
            Ok(r) => r,
            Err(e) => {
                metrics.flush()?;
                let path = opts.out_dir.join(format!("failed_{:06}.ckpt", trainer.step));
                trainer.checkpoint().save(&path)?;
                log::error!("step {} failed: {e}; state saved to {}", trainer.step + 1, path.display());
                return Err(e);
            }
        };
        serde_json::to_writer(&mut metrics, &report).map_err(|e| Error::Io(e.into()))?;
        metrics.write_all(b"\n")?;
        if let Some(d) = &report.densify {
            log::info!("step {}: densify {:?}", report.step, d);
        }
        if report.step % 100 == 0 {
            log::info!(
                "step {} loss {:.6} N {} w {:?}",
                report.step,
                report.loss_guidance,
                report.n_gaussians,
                report.weights
            );
        }
        if snapshot > 0 && trainer.step % snapshot == 0 {
            metrics.flush()?;
            trainer.checkpoint().save(&opts.out_dir.join(checkpoint_name(trainer.step)))?;
        }
        last = Some(report);
    }
    metrics.flush()?;
    trainer.checkpoint().save(&opts.out_dir.join(FINAL_CHECKPOINT))?;
    let mut ply = BufWriter::new(File::create(opts.out_dir.join(FINAL_PLY))?);
    write_ply(&trainer.cloud, &mut ply)?;
    Ok(RunSummary {
        steps: trainer.step,
        n_gaussians: trainer.cloud.len(),
        last_report: last,
    })
}

/// Evenly spaced turntable views at a fixed elevation.
pub fn turntable(scene: &SceneConfig, n: usize, elevation_deg: f64, phase_deg: f64) -> Result<Vec<crate::Camera>> {
    (0..n)
        .map(|k| scene.orbit_camera(phase_deg + 360.0 * k as f64 / n as f64, elevation_deg))
        .collect()
}

pub const EVAL_VIEWS: usize = 15;
pub const EVAL_ELEVATION_DEG: f64 = 15.0;
/// Offset from any training phase grid; views are held out by construction.
pub const EVAL_PHASE_DEG: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: usize,
    pub per_view_psnr: Vec<f64>,
    /// Mean of finite per-view values; `+∞` when every view matches exactly.
    pub mean_psnr: f64,
    pub exact_match: bool,
    pub n_gaussians: usize,
}

/// PSNR of the cloud against `target` on the 15-view turntable over a white
/// background.
pub fn evaluate(cloud: &GaussianCloud, target: &TargetScene, scene: &SceneConfig) -> Result<EvalReport> {
    let bg = Vec3::repeat(1.0);
    let mut per_view = Vec::new();
    for cam in turntable(scene, EVAL_VIEWS, EVAL_ELEVATION_DEG, EVAL_PHASE_DEG)? {
        let img = render(cloud, &cam, bg)?.color;
        per_view.push(psnr(&img, &target.render(&cam, bg)?)?);
    }
    let exact = per_view.iter().all(|p| p.is_infinite());
    let finite: Vec<f64> = per_view.iter().copied().filter(|p| p.is_finite()).collect();
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(EvalReport {
        views: per_view.len(),
        per_view_psnr: per_view,
        mean_psnr: mean,
        exact_match: exact,
        n_gaussians: cloud.len(),
    })
}
