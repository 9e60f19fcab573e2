//! Run configuration: TOML with unknown keys rejected and every range
//! checked on load. Errors carry the line of the offending key.

use serde::{Deserialize, Serialize};

use crate::camera::SceneConfig;
use crate::densify::DensifySchedule;
use crate::error::{Error, Result};
use crate::guidance::AnalyticScene;
use crate::optim::LearningRates;
use crate::surface::SurfaceParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerConfig {
    pub flatten: bool,
    pub proximity: bool,
    pub flatten_budget: usize,
    pub proximity_gaussians: usize,
    pub proximity_points: usize,
    /// Soft-assignment temperature; defaults to `(0.05 · scene_extent)²`.
    pub tau: Option<f64>,
    /// Rebuild the surface every this many steps.
    pub surface_refresh_interval: u64,
    /// Learn the uncertainty weights; otherwise they stay at `eta_init`.
    pub learn_weights: bool,
    /// Initial log-variances `η` for guidance, flatten and proximity.
    pub eta_init: [f64; 3],
    pub surface: SurfaceParams,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            flatten: true,
            proximity: true,
            flatten_budget: 16384,
            proximity_gaussians: 16384,
            proximity_points: 16384,
            tau: None,
            surface_refresh_interval: 100,
            learn_weights: true,
            eta_init: [0.0; 3],
            surface: SurfaceParams::default(),
        }
    }
}

impl RegularizerConfig {
    pub fn tau(&self, scene_extent: f64) -> f64 {
        self.tau.unwrap_or((0.05 * scene_extent).powi(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    Photometric,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub kind: GuidanceKind,
    pub remote_addr: String,
    pub timeout_secs: f64,
    pub prompt: String,
    pub negative_prompt: String,
    pub guidance_scale: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Target of photometric guidance and of evaluation.
    pub target: AnalyticScene,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            kind: GuidanceKind::Photometric,
            remote_addr: "127.0.0.1:7860".into(),
            timeout_secs: 120.0,
            prompt: String::new(),
            negative_prompt: String::new(),
            guidance_scale: 50.0,
            t_min: 0.02,
            t_max: 0.98,
            target: AnalyticScene::textured_sphere(0.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_init: usize,
    /// Checkpoint every this many steps; `0` writes only the final one.
    pub snapshot_interval: u64,
    /// Single-threaded, timing-free metrics.
    pub deterministic: bool,
    pub out_dir: String,
    pub scene: SceneConfig,
    pub densify: DensifySchedule,
    pub learning_rates: LearningRates,
    pub regularizers: RegularizerConfig,
    pub guidance: GuidanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_init: 5000,
            snapshot_interval: 1000,
            deterministic: false,
            out_dir: "run".into(),
            scene: SceneConfig::default(),
            densify: DensifySchedule::default(),
            learning_rates: LearningRates::default(),
            regularizers: RegularizerConfig::default(),
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Line (1-based) of the first `key =` assignment inside `[section]` (or at
/// top level when `section` is empty).
fn find_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[') {
            current = h.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if !section.is_empty() && current == section && key.is_empty() {
                return Some(i + 1);
            }
            continue;
        }
        let is_key = t
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='));
        if is_key && !key.is_empty() {
            if current == section || current.starts_with(&format!("{section}.")) {
                return Some(i + 1);
            }
            fallback.get_or_insert(i + 1);
        }
    }
    fallback
}

fn unknown_key(msg: &str) -> Option<&str> {
    msg.strip_prefix("unknown field `")?.split('`').next()
}

fn key_offset(table: &str, key: &str) -> Option<usize> {
    let mut offset = 0;
    for (i, line) in table.split_inclusive('\n').enumerate() {
        let t = line.trim_start();
        if i > 0 && t.starts_with('[') {
            return None;
        }
        if t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')) {
            return Some(offset + line.len() - t.len());
        }
        offset += line.len();
    }
    None
}

impl RunConfig {
    pub fn total_steps(&self) -> u64 {
        self.densify.total_steps
    }

    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| {
                // Unknown keys are reported against the enclosing table; point at the key.
                let start = unknown_key(e.message())
                    .and_then(|k| key_offset(&text[s.start..], k))
                    .map_or(s.start, |o| s.start + o);
                text[..start].matches('\n').count() + 1
            });
            match line {
                Some(l) => Error::Config(format!("line {l}: {}", e.message())),
                None => Error::Config(e.message().to_string()),
            }
        })?;
        if let Err((section, field, msg)) = cfg.check() {
            let line = find_line(text, section, field).or_else(|| find_line(text, section, ""));
            let name = if section.is_empty() { field.to_string() } else { format!("{section}.{field}") };
            return Err(Error::Config(match line {
                Some(l) => format!("line {l}: {name}: {msg}"),
                None => format!("{name}: {msg}"),
            }));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(s, f, m)| Error::Config(format!("{s}.{f}: {m}")))
    }

    fn check(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        self.scene.validate().map_err(|(f, m)| ("scene", f, m))?;
        self.densify.validate().map_err(|(f, m)| ("densify", f, m))?;
        self.learning_rates.validate().map_err(|(f, m)| ("learning_rates", f, m))?;
        self.guidance.target.validate().map_err(|(f, m)| ("guidance.target", f, m))?;
        if self.n_init == 0 {
            return Err(("", "n_init", "must be >= 1".into()));
        }
        let r = &self.regularizers;
        if r.surface_refresh_interval == 0 {
            return Err(("regularizers", "surface_refresh_interval", "must be >= 1".into()));
        }
        if r.flatten_budget == 0 {
            return Err(("regularizers", "flatten_budget", "must be >= 1".into()));
        }
        if r.proximity_gaussians == 0 || r.proximity_points == 0 {
            return Err(("regularizers", "proximity_gaussians", "budgets must be >= 1".into()));
        }
        if r.eta_init.iter().any(|e| !e.is_finite()) {
            return Err(("regularizers", "eta_init", "must be finite".into()));
        }
        if let Some(t) = r.tau {
            if !(t > 0.0) {
                return Err(("regularizers", "tau", "must be > 0".into()));
            }
        }
        let s = &r.surface;
        if s.n_views == 0 {
            return Err(("regularizers.surface", "n_views", "must be >= 1".into()));
        }
        if s.voxel_size.is_some_and(|v| !(v > 0.0)) {
            return Err(("regularizers.surface", "voxel_size", "must be > 0".into()));
        }
        if s.density_radius.is_some_and(|v| !(v > 0.0)) {
            return Err(("regularizers.surface", "density_radius", "must be > 0".into()));
        }
        let g = &self.guidance;
        if !(g.timeout_secs > 0.0 && g.timeout_secs.is_finite()) {
            return Err(("guidance", "timeout_secs", "must be > 0".into()));
        }
        if !(g.guidance_scale >= 0.0 && g.guidance_scale.is_finite()) {
            return Err(("guidance", "guidance_scale", "must be finite and >= 0".into()));
        }
        if !(0.0 <= g.t_min && g.t_min < g.t_max && g.t_max <= 1.0) {
            return Err(("guidance", "t_min", "need 0 <= t_min < t_max <= 1".into()));
        }
        if g.kind == GuidanceKind::Remote && g.remote_addr.is_empty() {
            return Err(("guidance", "remote_addr", "required for remote guidance".into()));
        }
        Ok(())
    }
}
