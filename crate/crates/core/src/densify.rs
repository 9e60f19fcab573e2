//! Gradient-driven clone/split densification, opacity pruning, opacity
//! resets, and the schedule that sequences them with surface pruning.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::surface::{surface_prune, PruneMode, SurfaceCloud};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifySchedule {
    pub start_step: u64,
    pub interval: u64,
    pub stop_step: u64,
    pub total_steps: u64,
    /// Threshold on the mean screen-space positional gradient (NDC units).
    pub grad_threshold: f64,
    pub opacity_prune_threshold: f64,
    /// `0` disables resets.
    pub opacity_reset_interval: u64,
    pub opacity_reset_cap: f64,
    /// Defaults to `0.01 · scene_extent`.
    pub split_scale_threshold: Option<f64>,
    pub split_factor: f64,
    pub surface_prune: bool,
    pub surface_prune_mode: PruneMode,
}

impl Default for DensifySchedule {
    fn default() -> Self {
        DensifySchedule {
            start_step: 1000,
            interval: 200,
            stop_step: 8000,
            total_steps: 10000,
            grad_threshold: 0.05,
            opacity_prune_threshold: 0.05,
            opacity_reset_interval: 3000,
            opacity_reset_cap: 0.01,
            split_scale_threshold: None,
            split_factor: 1.6,
            surface_prune: true,
            surface_prune_mode: PruneMode::Knn { k: 5 },
        }
    }
}

impl DensifySchedule {
    /// Range checks; errors name the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.start_step == 0 {
            return Err(("start_step", "must be > 0".into()));
        }
        if self.start_step >= self.stop_step {
            return Err(("start_step", "must be < stop_step".into()));
        }
        if self.stop_step > self.total_steps {
            return Err(("stop_step", "must be <= total_steps".into()));
        }
        if self.interval == 0 {
            return Err(("interval", "must be >= 1".into()));
        }
        if !(self.grad_threshold > 0.0) {
            return Err(("grad_threshold", "must be > 0".into()));
        }
        if !(self.opacity_prune_threshold > 0.0 && self.opacity_prune_threshold < 1.0) {
            return Err(("opacity_prune_threshold", "must lie in (0, 1)".into()));
        }
        if !(self.opacity_reset_cap > 0.0 && self.opacity_reset_cap < 1.0) {
            return Err(("opacity_reset_cap", "must lie in (0, 1)".into()));
        }
        if let Some(t) = self.split_scale_threshold {
            if !(t > 0.0) {
                return Err(("split_scale_threshold", "must be > 0".into()));
            }
        }
        if !(self.split_factor > 1.0) {
            return Err(("split_factor", "must be > 1".into()));
        }
        self.surface_prune_mode
            .validate()
            .map_err(|e| ("surface_prune_mode", e.to_string()))?;
        Ok(())
    }

    pub fn split_threshold(&self, scene_extent: f64) -> f64 {
        self.split_scale_threshold.unwrap_or(0.01 * scene_extent)
    }

    /// Whether densification runs after the (1-based) training step `step`.
    pub fn densify_fires(&self, step: u64) -> bool {
        step >= self.start_step && step <= self.stop_step && step % self.interval == 0
    }

    /// Opacity resets run at multiples of the reset interval up to `stop_step`.
    pub fn reset_fires(&self, step: u64) -> bool {
        self.opacity_reset_interval > 0
            && step > 0
            && step <= self.stop_step
            && step % self.opacity_reset_interval == 0
    }
}

/// Counts of one densification event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationReport {
    pub step: u64,
    pub cloned: usize,
    pub split: usize,
    pub opacity_pruned: usize,
    pub surface_pruned: usize,
    pub new_total: usize,
}

/// For every row of the mutated cloud, the row of the previous cloud whose
/// optimizer state it inherits, or `None` for a fresh (zero-state) row.
pub type RowMap = Vec<Option<usize>>;

/// One draw from `N(μ, R S² Rᵀ)` of Gaussian `i`.
fn sample_from(cloud: &GaussianCloud, i: usize, rng: &mut impl Rng) -> Vec3 {
    let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
    cloud.means[i] + cloud.rotation_matrix(i) * cloud.scale(i).component_mul(&z)
}

/// Clones small and splits large high-gradient Gaussians, prunes transparent
/// ones and, when a surface and a prune mode are available, those away from
/// the surface. Gradient statistics are reset.
///
/// Off-schedule calls are a logged no-op returning `None`.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    surface: Option<&SurfaceCloud>,
    schedule: &DensifySchedule,
    scene_extent: f64,
    step: u64,
    rng: &mut impl Rng,
) -> Result<Option<(MutationReport, RowMap)>> {
    if !schedule.densify_fires(step) {
        log::warn!("densify_and_prune called off-schedule at step {step}; ignored");
        return Ok(None);
    }
    if cloud.is_empty() {
        return Err(Error::invalid("cannot densify an empty cloud"));
    }
    let n = cloud.len();
    let split_thresh = schedule.split_threshold(scene_extent);
    let mut report = MutationReport {
        step,
        ..Default::default()
    };
    let mut map: RowMap = (0..n).map(Some).collect();
    let mut remove = vec![false; n];

    for i in 0..n {
        if !(cloud.mean_grad(i) > schedule.grad_threshold) {
            continue;
        }
        let mut s = cloud.splat(i);
        if s.scale.max() <= split_thresh {
            s.mean = sample_from(cloud, i, rng);
            cloud.push(&s);
            report.cloned += 1;
            map.push(None);
            remove.push(false);
        } else {
            let child_scale = s.scale / schedule.split_factor;
            for _ in 0..2 {
                s.mean = sample_from(cloud, i, rng);
                s.scale = child_scale;
                cloud.push(&s);
                map.push(None);
                remove.push(false);
            }
            remove[i] = true;
            report.split += 1;
        }
    }

    for (i, r) in remove.iter_mut().enumerate() {
        if !*r && cloud.opacity(i) < schedule.opacity_prune_threshold {
            *r = true;
            report.opacity_pruned += 1;
        }
    }

    if let (true, Some(surface)) = (schedule.surface_prune, surface) {
        if !surface.is_empty() {
            let mask = surface_prune(cloud, surface, schedule.surface_prune_mode)?;
            for (r, p) in remove.iter_mut().zip(mask.prune) {
                if p && !*r {
                    *r = true;
                    report.surface_pruned += 1;
                }
            }
        }
    }

    if remove.iter().all(|r| *r) {
        // Never empty the cloud: keep the most opaque Gaussian.
        let keep = (0..cloud.len())
            .max_by(|&a, &b| cloud.opacity_logits[a].total_cmp(&cloud.opacity_logits[b]).then(cloud.ids[b].cmp(&cloud.ids[a])))
            .expect("non-empty");
        remove[keep] = false;
        log::warn!("densify_and_prune: pruning would empty the cloud; kept one Gaussian");
    }
    let keep: Vec<bool> = remove.iter().map(|r| !r).collect();
    cloud.retain(&keep);
    let mut it = keep.iter();
    map.retain(|_| *it.next().unwrap());
    cloud.reset_grad_stats();
    report.new_total = cloud.len();
    log::info!(
        "densify step={} cloned={} split={} opacity_pruned={} surface_pruned={} new_total={}",
        report.step,
        report.cloned,
        report.split,
        report.opacity_pruned,
        report.surface_pruned,
        report.new_total
    );
    Ok(Some((report, map)))
}

/// Caps every opacity above `cap` at `cap`; returns the affected rows.
pub fn reset_opacity(cloud: &mut GaussianCloud, cap: f64) -> Result<Vec<usize>> {
    if !(cap > 0.0 && cap < 1.0) {
        return Err(Error::invalid(format!("opacity cap must lie in (0, 1), got {cap}")));
    }
    let cap_logit = math::logit(cap);
    let mut changed = Vec::new();
    for (i, l) in cloud.opacity_logits.iter_mut().enumerate() {
        if *l > cap_logit {
            *l = cap_logit;
            changed.push(i);
        }
    }
    Ok(changed)
}
