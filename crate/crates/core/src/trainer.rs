//! The optimization loop: four orbit views per step, guidance, surface
//! regularizers, uncertainty-weighted combination, Adam, and the
//! densification schedule.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{BackgroundPolicy, Camera, SceneConfig};
use crate::cloud::{init_cloud, GaussianCloud};
use crate::config::RunConfig;
use crate::densify::{densify_and_prune, reset_opacity, MutationReport};
use crate::error::{Error, Result};
use crate::guidance::{Guidance, GuidanceContext, GuidanceView};
use crate::io::Checkpoint;
use crate::math::Vec3;
use crate::optim::OptimizerState;
use crate::raster::{render, render_backward, ParamGradients, RenderOutput};
use crate::regularizers::{combine_active, flatten_loss, proximity_loss, LossWeights, RegularizerOutput};
use crate::surface::{build_surface, surface_cameras, SurfaceCloud};

pub const VIEWS_PER_STEP: usize = 4;

#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: Camera,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// Four views 90° apart in azimuth from a uniform phase, sharing one
/// elevation drawn from the scene's interval.
pub fn sample_cameras(scene: &SceneConfig, rng: &mut impl Rng) -> Result<Vec<TrainingView>> {
    let phase: f64 = rng.random_range(0.0..360.0);
    let el = if scene.elevation_max_deg > scene.elevation_min_deg {
        rng.random_range(scene.elevation_min_deg..scene.elevation_max_deg)
    } else {
        scene.elevation_min_deg
    };
    cameras_at(scene, phase, el)
}

pub fn cameras_at(scene: &SceneConfig, phase_deg: f64, elevation_deg: f64) -> Result<Vec<TrainingView>> {
    (0..VIEWS_PER_STEP)
        .map(|k| {
            let az = phase_deg + 90.0 * k as f64;
            Ok(TrainingView {
                camera: scene.orbit_camera(az, elevation_deg)?,
                azimuth_deg: az,
                elevation_deg,
            })
        })
        .collect()
}

/// Independent stream for step `step`, so a resumed run replays exactly.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(step);
    r
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTimings {
    pub render_ms: f64,
    pub guidance_ms: f64,
    pub surface_ms: f64,
    pub regularizer_ms: f64,
    pub backward_ms: f64,
    pub total_ms: f64,
}

/// One metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_guidance: f64,
    pub loss_flatten: Option<f64>,
    pub loss_proximity: Option<f64>,
    pub total_loss: f64,
    /// Current `w_k = e^{η_k/2}` for guidance, flatten and proximity.
    pub weights: [f64; 3],
    pub eta: [f64; 3],
    pub grad_norm: f64,
    pub n_gaussians: usize,
    pub surface_points: Option<usize>,
    pub surface_rebuilt: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub densify: Option<MutationReport>,
    pub opacity_reset: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<StepTimings>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: RunConfig,
    pub cloud: GaussianCloud,
    pub opt: OptimizerState,
    pub weights: LossWeights,
    pub surface: Option<SurfaceCloud>,
    /// Completed steps.
    pub step: u64,
    pub record_timings: bool,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let cloud = init_cloud(config.n_init, config.scene.scene_extent, config.seed)?;
        Self::with_cloud(config, cloud)
    }

    pub fn with_cloud(config: RunConfig, cloud: GaussianCloud) -> Result<Self> {
        config.validate()?;
        cloud.validate()?;
        let opt = OptimizerState::new(cloud.len(), config.learning_rates.clone(), config.total_steps());
        Ok(Trainer {
            record_timings: !config.deterministic,
            cloud,
            opt,
            weights: LossWeights {
                eta: config.regularizers.eta_init,
            },
            surface: None,
            step: 0,
            config,
        })
    }

    pub fn from_checkpoint(config: RunConfig, ck: Checkpoint) -> Result<Self> {
        let mut t = Self::with_cloud(config, ck.cloud)?;
        t.opt.groups = ck.moments;
        t.opt.eta = ck.eta_moments;
        t.opt.step = ck.optimizer_step;
        t.weights = ck.weights;
        t.surface = ck.surface;
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            cloud: self.cloud.clone(),
            moments: self.opt.groups.clone(),
            eta_moments: self.opt.eta.clone(),
            optimizer_step: self.opt.step,
            weights: self.weights,
            surface: self.surface.clone(),
            config: self.config.to_toml(),
        }
    }

    fn context(&self, seed: u64) -> GuidanceContext {
        let g = &self.config.guidance;
        GuidanceContext {
            prompt: g.prompt.clone(),
            negative_prompt: g.negative_prompt.clone(),
            guidance_scale: g.guidance_scale,
            t_min: g.t_min,
            t_max: g.t_max,
            seed,
        }
    }

    fn needs_surface(&self) -> bool {
        let r = &self.config.regularizers;
        r.flatten || r.proximity || self.config.densify.surface_prune
    }

    /// Runs step `self.step + 1`. On error the cloud and optimizer are left
    /// exactly as before the call.
    pub fn train_step(&mut self, guidance: &mut dyn Guidance) -> Result<StepReport> {
        let t0 = Instant::now();
        let t = self.step + 1;
        let cfg = &self.config;
        let scene = &cfg.scene;
        let mut rng = step_rng(cfg.seed, t);
        let views = sample_cameras(scene, &mut rng)?;
        let bg = match scene.background {
            BackgroundPolicy::Fixed { rgb } => Vec3::from(rgb),
            BackgroundPolicy::RandomPerStep => Vec3::new(rng.random(), rng.random(), rng.random()),
        };
        let guidance_seed: u64 = rng.random();

        let tr = Instant::now();
        let outs: Vec<RenderOutput> =
            views.iter().map(|v| render(&self.cloud, &v.camera, bg)).collect::<Result<_>>()?;
        let render_ms = ms(tr);

        let tg = Instant::now();
        let gviews: Vec<GuidanceView<'_>> = views
            .iter()
            .zip(&outs)
            .map(|(v, o)| GuidanceView {
                camera: &v.camera,
                azimuth_deg: v.azimuth_deg,
                elevation_deg: v.elevation_deg,
                image: &o.color,
                background: bg,
            })
            .collect();
        let g = guidance.evaluate(&gviews, &self.context(guidance_seed))?;
        let guidance_ms = ms(tg);
        if g.grads.len() != views.len() {
            return Err(Error::Shape {
                what: "guidance gradient views",
                expected: views.len(),
                actual: g.grads.len(),
            });
        }
        if !g.loss.is_finite() || g.grads.iter().flatten().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite(format!("guidance output at step {t}")));
        }

        let ts = Instant::now();
        let reg = &cfg.regularizers;
        let mut surface = self.surface.clone();
        let mut rebuilt = false;
        if self.needs_surface() && t % reg.surface_refresh_interval == 0 {
            let mut cams = surface_cameras(reg.surface.n_views, scene, &mut rng)?;
            if reg.surface.include_training_views {
                cams.extend(views.iter().map(|v| v.camera.clone()));
            }
            surface = Some(build_surface(&self.cloud, &cams, &reg.surface, scene, t)?);
            rebuilt = true;
        }
        let surface_ms = ms(ts);

        let tl = Instant::now();
        let usable = surface.as_ref().filter(|s| !s.is_empty());
        let flat: Option<RegularizerOutput> = match usable {
            Some(s) if reg.flatten => Some(flatten_loss(&self.cloud, s, reg.flatten_budget, &mut rng)?),
            _ => None,
        };
        let prox: Option<RegularizerOutput> = match usable {
            Some(s) if reg.proximity => Some(proximity_loss(
                &self.cloud,
                s,
                reg.tau(scene.scene_extent),
                (reg.proximity_gaussians, reg.proximity_points),
                &mut rng,
            )?),
            _ => None,
        };
        let losses = [Some(g.loss), flat.as_ref().map(|o| o.loss), prox.as_ref().map(|o| o.loss)];
        let combined = combine_active(losses, &self.weights)?;
        let regularizer_ms = ms(tl);

        let tb = Instant::now();
        let scales = combined.scales;
        let mut grads = ParamGradients::zeros(self.cloud.len());
        for ((v, out), dg) in views.iter().zip(&outs).zip(&g.grads) {
            let d: Vec<Vec3> = dg.iter().map(|p| p * scales[0]).collect();
            grads.add_scaled(&render_backward(&self.cloud, &v.camera, out, &d, None)?, 1.0);
        }
        for (k, o) in [(1, &flat), (2, &prox)] {
            if let Some(o) = o {
                for i in 0..grads.len() {
                    grads.means[i] += o.grads.means[i] * scales[k];
                    grads.log_scales[i] += o.grads.log_scales[i] * scales[k];
                    grads.rotations[i] += o.grads.rotations[i] * scales[k];
                }
            }
        }
        let backward_ms = ms(tb);
        if !grads.is_finite() || !combined.total.is_finite() {
            return Err(Error::NonFinite(format!("gradients at step {t}")));
        }

        let d_eta: [Option<f64>; 3] = if reg.learn_weights {
            std::array::from_fn(|k| losses[k].map(|_| combined.d_eta[k]))
        } else {
            [None; 3]
        };
        let mut cloud = self.cloud.clone();
        let mut opt = self.opt.clone();
        let mut weights = self.weights;
        for i in 0..cloud.len() {
            if grads.visible_count[i] > 0 {
                cloud.grad_accum[i] += grads.screen_grad_norm[i];
                cloud.grad_count[i] += grads.visible_count[i];
            }
        }
        opt.step(&mut cloud, &grads, &mut weights, d_eta)?;
        cloud.validate().map_err(|e| Error::NonFinite(format!("parameters after step {t}: {e}")))?;

        let sched = &cfg.densify;
        let mut densify = None;
        if sched.densify_fires(t) {
            if let Some((report, map)) =
                densify_and_prune(&mut cloud, surface.as_ref(), sched, scene.scene_extent, t, &mut rng)?
            {
                opt.apply_row_map(&map);
                densify = Some(report);
            }
        }
        let opacity_reset = sched.reset_fires(t);
        if opacity_reset {
            let rows = reset_opacity(&mut cloud, sched.opacity_reset_cap)?;
            opt.reset_opacity_rows(&rows);
        }

        self.cloud = cloud;
        self.opt = opt;
        self.weights = weights;
        self.surface = surface;
        self.step = t;
        let timings = self.record_timings.then(|| StepTimings {
            render_ms,
            guidance_ms,
            surface_ms,
            regularizer_ms,
            backward_ms,
            total_ms: ms(t0),
        });
        Ok(StepReport {
            step: t,
            loss_guidance: g.loss,
            loss_flatten: losses[1],
            loss_proximity: losses[2],
            total_loss: combined.total,
            weights: self.weights.weights(),
            eta: self.weights.eta,
            grad_norm: grads.norm(),
            n_gaussians: self.cloud.len(),
            surface_points: self.surface.as_ref().map(|s| s.len()),
            surface_rebuilt: rebuilt,
            densify,
            opacity_reset,
            timings,
        })
    }
}
