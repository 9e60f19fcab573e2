//! Command-line front end: training runs, rendering, PLY interchange and
//! turntable evaluation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mvgs_core::config::{GuidanceKind, RunConfig};
use mvgs_core::guidance::{AnalyticScene, Guidance, PhotometricGuidance, RemoteGuidance, TargetScene};
use mvgs_core::io::{read_ply, write_ply, Checkpoint};
use mvgs_core::math::Vec3;
use mvgs_core::runner::{self, EvalReport, RunOptions, RunSummary};
use mvgs_core::trainer::Trainer;
use mvgs_core::{render, GaussianCloud};

/// Environment variable capping the size of the worker pool.
pub const THREADS_ENV: &str = "MVGS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mvgs", version, about = "Multi-view guided Gaussian splat optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a cloud and write metrics, checkpoints and the final PLY.
    Train(TrainArgs),
    /// Render a checkpoint from one orbit view or as a turntable.
    Render(RenderArgs),
    /// Write the cloud of a checkpoint as a PLY file.
    ExportPly(ExportArgs),
    /// Read a PLY file into a step-0 checkpoint.
    ImportPly(ImportArgs),
    /// Turntable PSNR against a synthetic target plus the Gaussian count.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GuidanceArg {
    Photometric,
    Remote,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint; its stored config is used unless --config is given.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum)]
    pub guidance: Option<GuidanceArg>,
    #[arg(long, value_name = "HOST:PORT")]
    pub remote_addr: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Stop after this step (a checkpoint is still written).
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub azimuth: f64,
    #[arg(long, default_value_t = 15.0, allow_negative_numbers = true)]
    pub elevation: f64,
    /// Output PNG; with --turntable, a pattern whose run of `#` becomes the view index.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a 16-bit depth PNG (z / far · 65535, 0 where no surface).
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Render N evenly spaced views at --elevation starting at --azimuth.
    #[arg(long, value_name = "N")]
    pub turntable: Option<usize>,
    #[arg(long, value_parser = parse_rgb, default_value = "1,1,1")]
    pub background: Vec3,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ImportArgs {
    pub ply: PathBuf,
    /// Run configuration stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Synthetic target: a `.ply` cloud or a TOML analytic scene.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_rgb(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|c| c.trim().parse::<f64>().map_err(|e| format!("{c:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [r, g, b] if v.iter().all(|c| (0.0..=1.0).contains(c)) => Ok(Vec3::new(*r, *g, *b)),
        _ => Err("expected three comma-separated values in [0, 1]".into()),
    }
}

/// Sizes the global pool from `MVGS_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v:?}"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let s = cmd_train(&a)?;
            println!("trained to step {} with {} Gaussians", s.steps, s.n_gaussians);
        }
        Command::Render(a) => {
            for p in cmd_render(&a)? {
                println!("{}", p.display());
            }
        }
        Command::ExportPly(a) => {
            let n = cmd_export_ply(&a.checkpoint, &a.out)?;
            println!("wrote {n} Gaussians to {}", a.out.display());
        }
        Command::ImportPly(a) => {
            let cloud = cmd_import_ply(&a.ply)?;
            let cfg = match &a.config {
                Some(p) => load_config(p)?,
                None => RunConfig::default(),
            };
            let n = cloud.len();
            Trainer::with_cloud(cfg, cloud)?.checkpoint().save(&a.out)?;
            println!("imported {n} Gaussians into {}", a.out.display());
        }
        Command::Eval(a) => {
            let r = cmd_eval(&a)?;
            println!("{}", serde_json::to_string(&r)?);
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let ck = Checkpoint::load(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let cfg = RunConfig::from_toml(&ck.config).context("checkpoint config")?;
    Ok((ck, cfg))
}

/// Effective configuration for a training run: file or checkpoint config,
/// then command-line overrides.
pub fn train_config(args: &TrainArgs) -> Result<(RunConfig, Option<Checkpoint>)> {
    let (mut cfg, ck) = match (&args.config, &args.resume) {
        (Some(c), r) => (load_config(c)?, r.as_deref().map(load_checkpoint).transpose()?.map(|x| x.0)),
        (None, Some(r)) => {
            let (ck, cfg) = load_checkpoint(r)?;
            (cfg, Some(ck))
        }
        (None, None) => (RunConfig::default(), None),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.deterministic {
        cfg.deterministic = true;
    }
    match args.guidance {
        Some(GuidanceArg::Photometric) => cfg.guidance.kind = GuidanceKind::Photometric,
        Some(GuidanceArg::Remote) => cfg.guidance.kind = GuidanceKind::Remote,
        None => {}
    }
    if let Some(a) = &args.remote_addr {
        a.to_socket_addrs().with_context(|| format!("--remote-addr {a:?}"))?;
        cfg.guidance.remote_addr = a.clone();
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok((cfg, ck))
}

pub fn make_guidance(cfg: &RunConfig) -> Box<dyn Guidance> {
    match cfg.guidance.kind {
        GuidanceKind::Photometric => {
            Box::new(PhotometricGuidance::new(TargetScene::Analytic(cfg.guidance.target.clone())))
        }
        GuidanceKind::Remote => Box::new(RemoteGuidance::new(
            cfg.guidance.remote_addr.clone(),
            Duration::from_secs_f64(cfg.guidance.timeout_secs),
        )),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunSummary> {
    let (cfg, ck) = train_config(args)?;
    let mut guidance = make_guidance(&cfg);
    let out_dir = PathBuf::from(&cfg.out_dir);
    let mut trainer = match ck {
        Some(ck) => Trainer::from_checkpoint(cfg, ck)?,
        None => Trainer::new(cfg)?,
    };
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("config.toml"), trainer.config.to_toml())?;
    let opts = RunOptions {
        out_dir,
        stop_after: args.stop_after,
    };
    Ok(runner::run(&mut trainer, guidance.as_mut(), &opts)?)
}

/// Replaces the first run of `#` in `pattern` by the zero-padded index.
pub fn pattern_path(pattern: &Path, index: usize) -> Result<PathBuf> {
    let s = pattern.to_string_lossy();
    let Some(start) = s.find('#') else {
        bail!("turntable output pattern {s:?} has no '#' placeholder");
    };
    let width = s[start..].chars().take_while(|&c| c == '#').count();
    Ok(PathBuf::from(format!("{}{index:0width$}{}", &s[..start], &s[start + width..])))
}

fn save_color(path: &Path, out: &mvgs_core::RenderOutput) -> Result<()> {
    let mut img = image::RgbImage::new(out.width as u32, out.height as u32);
    for (px, c) in img.pixels_mut().zip(&out.color) {
        *px = image::Rgb([0, 1, 2].map(|k| (c[k].clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn save_depth(path: &Path, out: &mvgs_core::RenderOutput, far: f64) -> Result<()> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(out.width as u32, out.height as u32);
    for (px, z) in img.pixels_mut().zip(&out.depth) {
        *px = image::Luma([((z / far).clamp(0.0, 1.0) * 65535.0).round() as u16]);
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Returns the written color image paths.
pub fn cmd_render(args: &RenderArgs) -> Result<Vec<PathBuf>> {
    let (ck, cfg) = load_checkpoint(&args.checkpoint)?;
    let scene = &cfg.scene;
    let views: Vec<(PathBuf, Option<PathBuf>, mvgs_core::Camera)> = match args.turntable {
        None => vec![(args.out.clone(), args.depth.clone(), scene.orbit_camera(args.azimuth, args.elevation)?)],
        Some(0) => bail!("--turntable needs at least one view"),
        Some(n) => runner::turntable(scene, n, args.elevation, args.azimuth)?
            .into_iter()
            .enumerate()
            .map(|(k, cam)| {
                let depth = args.depth.as_deref().map(|d| pattern_path(d, k)).transpose()?;
                Ok((pattern_path(&args.out, k)?, depth, cam))
            })
            .collect::<Result<_>>()?,
    };
    let mut written = Vec::new();
    for (color, depth, cam) in views {
        let out = render(&ck.cloud, &cam, args.background)?;
        save_color(&color, &out)?;
        if let Some(d) = depth {
            save_depth(&d, &out, scene.far)?;
        }
        written.push(color);
    }
    Ok(written)
}

/// Returns the number of Gaussians written.
pub fn cmd_export_ply(checkpoint: &Path, out: &Path) -> Result<usize> {
    let (ck, _) = load_checkpoint(checkpoint)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_ply(&ck.cloud, &mut w)?;
    Ok(ck.cloud.len())
}

pub fn cmd_import_ply(path: &Path) -> Result<GaussianCloud> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_ply(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

/// Loads an evaluation target from a `.ply` cloud or an analytic scene in TOML.
pub fn load_target(path: &Path) -> Result<TargetScene> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        return Ok(TargetScene::Cloud(cmd_import_ply(path)?));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scene: AnalyticScene = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    scene.validate().map_err(|(f, m)| anyhow::anyhow!("{}: {f}: {m}", path.display()))?;
    Ok(TargetScene::Analytic(scene))
}

/// Without a target the configured photometric target is used.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let (ck, cfg) = load_checkpoint(&args.checkpoint)?;
    let target = match &args.target {
        Some(p) => load_target(p)?,
        None => TargetScene::Analytic(cfg.guidance.target.clone()),
    };
    let report = runner::evaluate(&ck.cloud, &target, &cfg.scene)?;
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

