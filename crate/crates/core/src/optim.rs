//! Adam with per-group log-linear learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::densify::RowMap;
use crate::error::{Error, Result};
use crate::raster::ParamGradients;
use crate::regularizers::LossWeights;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// `lr(t) = a · (b/a)^(t/T)` for `t ∈ [0, T]`; the endpoints are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub init: f64,
    #[serde(rename = "final")]
    pub final_: f64,
}

impl LrSchedule {
    pub const fn new(init: f64, final_: f64) -> Self {
        LrSchedule { init, final_ }
    }

    pub fn at(&self, step: u64, total: u64) -> f64 {
        if step == 0 || total == 0 {
            return self.init;
        }
        if step >= total {
            return self.final_;
        }
        let t = step as f64 / total as f64;
        (self.init.ln() * (1.0 - t) + self.final_.ln() * t).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub position: LrSchedule,
    pub color: LrSchedule,
    pub opacity: LrSchedule,
    pub scaling: LrSchedule,
    pub rotation: LrSchedule,
    /// Fixed rate for the loss-weight log-variances.
    pub eta: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: LrSchedule::new(1.6e-4, 1.6e-6),
            color: LrSchedule::new(3e-3, 2.5e-3),
            opacity: LrSchedule::new(0.1, 0.05),
            scaling: LrSchedule::new(5e-3, 1e-3),
            rotation: LrSchedule::new(1e-3, 2e-4),
            eta: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let groups = [
            ("position", self.position),
            ("color", self.color),
            ("opacity", self.opacity),
            ("scaling", self.scaling),
            ("rotation", self.rotation),
        ];
        for (name, s) in groups {
            if !(s.init > 0.0 && s.final_ > 0.0 && s.init.is_finite() && s.final_.is_finite()) {
                return Err((name, "learning rates must be positive and finite".into()));
            }
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(("eta", "must be >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moments of one parameter group, `dim` values per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub dim: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    fn new(dim: usize, rows: usize) -> Self {
        Moments {
            dim,
            m: vec![0.0; dim * rows],
            v: vec![0.0; dim * rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.dim
    }

    fn remap(&mut self, map: &RowMap) {
        let d = self.dim;
        let pick = |src: &[f64]| -> Vec<f64> {
            map.iter()
                .flat_map(|r| match r {
                    Some(i) => src[i * d..(i + 1) * d].to_vec(),
                    None => vec![0.0; d],
                })
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }

    fn zero_rows(&mut self, rows: &[usize]) {
        for &r in rows {
            for k in 0..self.dim {
                self.m[r * self.dim + k] = 0.0;
                self.v[r * self.dim + k] = 0.0;
            }
        }
    }

    /// One Adam update of the flattened parameters, in place.
    fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: impl Iterator<Item = f64>,
        lr: f64,
        bc1: f64,
        bc2: f64,
    ) {
        for (k, (p, g)) in params.zip(grads).enumerate() {
            self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g;
            self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g * g;
            let mh = self.m[k] / bc1;
            let vh = self.v[k] / bc2;
            *p -= lr * mh / (vh.sqrt() + EPSILON);
        }
    }
}

pub const GROUP_NAMES: [&str; 5] = ["means", "log_scales", "rotations", "colors", "opacity"];

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Indexed like [`GROUP_NAMES`].
    pub groups: [Moments; 5],
    pub eta: Moments,
    /// Number of completed updates; drives bias correction.
    pub step: u64,
    pub rates: LearningRates,
    pub total_steps: u64,
}

impl OptimizerState {
    pub fn new(rows: usize, rates: LearningRates, total_steps: u64) -> Self {
        OptimizerState {
            groups: [
                Moments::new(3, rows),
                Moments::new(3, rows),
                Moments::new(4, rows),
                Moments::new(3, rows),
                Moments::new(1, rows),
            ],
            eta: Moments::new(1, 3),
            step: 0,
            rates,
            total_steps,
        }
    }

    pub fn rows(&self) -> usize {
        self.groups[0].rows()
    }

    /// Current rates `[means, log_scales, rotations, colors, opacity]`.
    pub fn current_rates(&self) -> [f64; 5] {
        let (t, total) = (self.step, self.total_steps);
        let r = &self.rates;
        [
            r.position.at(t, total),
            r.scaling.at(t, total),
            r.rotation.at(t, total),
            r.color.at(t, total),
            r.opacity.at(t, total),
        ]
    }

    /// Applies one Adam update to the cloud and to the loss weights whose
    /// gradient is `Some`; `None` entries keep their weight and moments
    /// frozen. Colors are clamped to `[0, 1]` and quaternions renormalized.
    pub fn step(
        &mut self,
        cloud: &mut GaussianCloud,
        grads: &ParamGradients,
        weights: &mut LossWeights,
        d_eta: [Option<f64>; 3],
    ) -> Result<()> {
        if grads.len() != cloud.len() || self.rows() != cloud.len() {
            return Err(Error::Shape {
                what: "optimizer rows vs cloud",
                expected: cloud.len(),
                actual: if grads.len() != cloud.len() { grads.len() } else { self.rows() },
            });
        }
        let rates = self.current_rates();
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let [gm, gs, gr, gc, go] = &mut self.groups;
        gm.update(cloud.means.iter_mut().flatten(), grads.means.iter().flatten().copied(), rates[0], bc1, bc2);
        let (s, gsv) = (cloud.log_scales.iter_mut().flatten(), grads.log_scales.iter().flatten().copied());
        gs.update(s, gsv, rates[1], bc1, bc2);
        let (r, grv) = (cloud.rotations.iter_mut().flatten(), grads.rotations.iter().flatten().copied());
        gr.update(r, grv, rates[2], bc1, bc2);
        gc.update(cloud.colors.iter_mut().flatten(), grads.colors.iter().flatten().copied(), rates[3], bc1, bc2);
        go.update(cloud.opacity_logits.iter_mut(), grads.opacity_logits.iter().copied(), rates[4], bc1, bc2);
        for c in &mut cloud.colors {
            c.apply(|x| *x = x.clamp(0.0, 1.0));
        }
        cloud.normalize_rotations();

        for (k, d) in d_eta.iter().enumerate() {
            if let Some(d) = d {
                let mut one = Moments {
                    dim: 1,
                    m: vec![self.eta.m[k]],
                    v: vec![self.eta.v[k]],
                };
                one.update(std::iter::once(&mut weights.eta[k]), std::iter::once(*d), self.rates.eta, bc1, bc2);
                self.eta.m[k] = one.m[0];
                self.eta.v[k] = one.v[0];
            }
        }
        Ok(())
    }

    /// Reorders, duplicates or zero-initializes rows after densification.
    pub fn apply_row_map(&mut self, map: &RowMap) {
        for g in &mut self.groups {
            g.remap(map);
        }
    }

    /// Clears the opacity moments of `rows` (after an opacity reset).
    pub fn reset_opacity_rows(&mut self, rows: &[usize]) {
        self.groups[4].zero_rows(rows);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_exact_and_monotone() {
        let s = LrSchedule::new(1.6e-4, 1.6e-6);
        assert_eq!(s.at(0, 10000), 1.6e-4);
        assert_eq!(s.at(10000, 10000), 1.6e-6);
        assert!((s.at(5000, 10000) - 1.6e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for t in (0..=10000).step_by(250) {
            let v = s.at(t, 10000);
            assert!(v <= prev && (1.6e-6..=1.6e-4).contains(&v));
            prev = v;
        }
    }
}
