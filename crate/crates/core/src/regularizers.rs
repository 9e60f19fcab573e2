//! Surface-alignment losses and the uncertainty-weighted loss combiner.
//!
//! All gradients are analytic. Eigenpairs of each covariance come straight
//! from its factorization: eigenvalues `s_k²`, eigenvectors the columns of
//! `R(q)`.

use nalgebra::Matrix3;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{self, Quat, Vec3};
use crate::spatial::HashGrid;
use crate::surface::SurfaceCloud;

/// Candidate count for the influence argmax.
pub const MATCH_CANDIDATES: usize = 16;
/// Floor on the flattening eigenvalue `s_min²`.
pub const LAMBDA_FLOOR: f64 = 1e-7;

/// Learnable log-variances `η = log w²` for the guidance, flattening and
/// proximity terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta: [f64; 3],
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { eta: [0.0; 3] }
    }
}

impl LossWeights {
    pub const SDS: usize = 0;
    pub const FLATTEN: usize = 1;
    pub const PROXIMITY: usize = 2;

    /// `w_k = exp(η_k / 2)`.
    pub fn weights(&self) -> [f64; 3] {
        self.eta.map(|e| (0.5 * e).exp())
    }

    /// Factor `1 / (2 w_k²)` applied to each loss and its gradients.
    pub fn scales(&self) -> [f64; 3] {
        self.eta.map(|e| 0.5 * (-e).exp())
    }
}

/// A surface point and the Gaussian with the largest influence on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedSurfaceSample {
    pub point: Vec3,
    pub gaussian: usize,
    pub influence: f64,
}

/// `σ_g · exp(−½ (x−μ_g)ᵀ Σ_g⁻¹ (x−μ_g))`.
pub fn influence(cloud: &GaussianCloud, g: usize, x: &Vec3) -> f64 {
    let d = x - cloud.means[g];
    let r = cloud.rotation_matrix(g);
    let s = cloud.scale(g);
    let mahal: f64 = (0..3).map(|k| (d.dot(&r.column(k)) / s[k]).powi(2)).sum();
    cloud.opacity(g) * (-0.5 * mahal).exp()
}

/// Argmax of the influence over `candidates`; ties go to the lowest id.
pub fn match_influential_gaussian(
    x: &Vec3,
    cloud: &GaussianCloud,
    candidates: &[usize],
) -> Result<PairedSurfaceSample> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot match against an empty cloud"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    let mut best: Option<(usize, f64)> = None;
    for &g in candidates {
        if g >= cloud.len() {
            return Err(Error::invalid(format!("candidate {g} out of range")));
        }
        let v = influence(cloud, g, x);
        best = match best {
            None => Some((g, v)),
            Some((bg, bv)) if v > bv || (v == bv && cloud.ids[g] < cloud.ids[bg]) => Some((g, v)),
            keep => keep,
        };
    }
    let (gaussian, influence) = best.unwrap();
    Ok(PairedSurfaceSample {
        point: *x,
        gaussian,
        influence,
    })
}

/// Per-Gaussian geometry gradients of a regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryGradients {
    pub means: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    pub rotations: Vec<Quat>,
}

impl GeometryGradients {
    pub fn zeros(n: usize) -> Self {
        GeometryGradients {
            means: vec![Vec3::zeros(); n],
            log_scales: vec![Vec3::zeros(); n],
            rotations: vec![Quat::zeros(); n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerOutput {
    pub loss: f64,
    pub grads: GeometryGradients,
    pub samples: usize,
    /// Set when the surface was empty and the loss degenerated to zero.
    pub empty_surface: bool,
}

impl RegularizerOutput {
    fn empty(n: usize) -> Self {
        RegularizerOutput {
            loss: 0.0,
            grads: GeometryGradients::zeros(n),
            samples: 0,
            empty_surface: true,
        }
    }
}

/// Sorted subset of `0..n` of size `min(n, budget)`.
fn sample_indices(n: usize, budget: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= budget {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, budget).into_vec();
    v.sort_unstable();
    v
}

/// Flattening loss: mean over sampled surface points `x` of
/// `((x − μ_g)·v_g)² / λ_g`, where `g` is the most influential Gaussian at `x`,
/// `v_g` the axis of its smallest scale and `λ_g = max(s_min², 1e-7)`.
pub fn flatten_loss(
    cloud: &GaussianCloud,
    surface: &SurfaceCloud,
    sample_budget: usize,
    rng: &mut impl Rng,
) -> Result<RegularizerOutput> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("cannot regularize an empty cloud"));
    }
    if surface.is_empty() || sample_budget == 0 {
        if surface.is_empty() {
            log::warn!("flatten_loss: empty surface, loss is zero");
        }
        return Ok(RegularizerOutput::empty(n));
    }
    let picks = sample_indices(surface.len(), sample_budget, rng);
    let grid = HashGrid::build(&cloud.means, None);

    let terms: Vec<(usize, f64, Vec3, Vec3, Matrix3<f64>)> = picks
        .par_iter()
        .map(|&pi| {
            let x = surface.points[pi];
            let cands: Vec<usize> = grid
                .knn(&x, MATCH_CANDIDATES)
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            let g = match_influential_gaussian(&x, cloud, &cands)
                .expect("non-empty candidates")
                .gaussian;
            let r = cloud.rotation_matrix(g);
            let s = cloud.scale(g);
            let k = math::argmin3(&s);
            let v = r.column(k).into_owned();
            let d = x - cloud.means[g];
            let proj = d.dot(&v);
            let lam = (s[k] * s[k]).max(LAMBDA_FLOOR);
            let term = proj * proj / lam;
            let d_mean = v * (-2.0 * proj / lam);
            let mut d_ls = Vec3::zeros();
            if s[k] * s[k] > LAMBDA_FLOOR {
                d_ls[k] = -2.0 * term;
            }
            let mut d_rot = Matrix3::zeros();
            d_rot.set_column(k, &(d * (2.0 * proj / lam)));
            (g, term, d_mean, d_ls, d_rot)
        })
        .collect();

    let inv = 1.0 / terms.len() as f64;
    let mut out = RegularizerOutput {
        loss: 0.0,
        grads: GeometryGradients::zeros(n),
        samples: terms.len(),
        empty_surface: false,
    };
    // Rotation matrix gradients are pulled back per Gaussian after summation.
    let mut d_rots: Vec<Option<Matrix3<f64>>> = vec![None; n];
    for (g, term, dm, dls, dr) in terms {
        out.loss += term * inv;
        out.grads.means[g] += dm * inv;
        out.grads.log_scales[g] += dls * inv;
        let slot = d_rots[g].get_or_insert_with(Matrix3::zeros);
        *slot += dr * inv;
    }
    for (g, dr) in d_rots.into_iter().enumerate() {
        if let Some(dr) = dr {
            out.grads.rotations[g] = math::rotation_vjp(&cloud.rotations[g], &dr);
        }
    }
    Ok(out)
}

/// Proximity loss: mean over sampled Gaussians of
/// `Σ_i α_gi ‖p_i − μ_g‖²` with `α_g· = softmax_i(−‖p_i − μ_g‖² / τ)` over the
/// sampled surface points.
pub fn proximity_loss(
    cloud: &GaussianCloud,
    surface: &SurfaceCloud,
    tau: f64,
    budgets: (usize, usize),
    rng: &mut impl Rng,
) -> Result<RegularizerOutput> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    let n = cloud.len();
    if n == 0 {
        return Err(Error::invalid("cannot regularize an empty cloud"));
    }
    if surface.is_empty() || budgets.0 == 0 || budgets.1 == 0 {
        if surface.is_empty() {
            log::warn!("proximity_loss: empty surface, loss is zero");
        }
        return Ok(RegularizerOutput::empty(n));
    }
    let gs = sample_indices(n, budgets.0, rng);
    let ps = sample_indices(surface.len(), budgets.1, rng);
    let points: Vec<Vec3> = ps.iter().map(|&i| surface.points[i]).collect();

    let per: Vec<(usize, f64, Vec3)> = gs
        .par_iter()
        .map(|&g| {
            let mu = cloud.means[g];
            let (loss, grad) = soft_assignment_term(&mu, &points, tau);
            (g, loss, grad)
        })
        .collect();

    let inv = 1.0 / per.len() as f64;
    let mut out = RegularizerOutput {
        loss: 0.0,
        grads: GeometryGradients::zeros(n),
        samples: per.len(),
        empty_surface: false,
    };
    for (g, l, dm) in per {
        out.loss += l * inv;
        out.grads.means[g] += dm * inv;
    }
    Ok(out)
}

/// `Σ_i α_i D_i` and its gradient in `μ`, with `D_i = ‖p_i − μ‖²`.
pub(crate) fn soft_assignment_term(mu: &Vec3, points: &[Vec3], tau: f64) -> (f64, Vec3) {
    let dist: Vec<f64> = points.iter().map(|p| (p - mu).norm_squared()).collect();
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = dist.iter().map(|d| (-(d - dmin) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    let loss: f64 = e.iter().zip(&dist).map(|(ei, di)| ei / z * di).sum();
    let mut grad = Vec3::zeros();
    for ((p, di), ei) in points.iter().zip(&dist).zip(&e) {
        let a = ei / z;
        // dL/dD_i = α_i (1 − (D_i − L)/τ), dD_i/dμ = −2 (p_i − μ)
        grad += (p - mu) * (-2.0 * a * (1.0 - (di - loss) / tau));
    }
    (loss, grad)
}

/// Soft assignment weights of one center over `points`.
pub fn soft_assignment(mu: &Vec3, points: &[Vec3], tau: f64) -> Vec<f64> {
    let dist: Vec<f64> = points.iter().map(|p| (p - mu).norm_squared()).collect();
    let dmin = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = dist.iter().map(|d| (-(d - dmin) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    /// `dL_total/dη_k`.
    pub d_eta: [f64; 3],
    /// `1 / (2 w_k²)`, the factor on each loss's parameter gradients.
    pub scales: [f64; 3],
}

/// `Σ_k L_k / (2 w_k²) + log(w_sds w_s w_p)` with `w_k² = exp(η_k)`.
pub fn combine_losses(losses: [f64; 3], weights: &LossWeights) -> Result<CombinedLoss> {
    combine_active(losses.map(Some), weights)
}

/// Like [`combine_losses`]; `None` marks a term that is absent this step. It
/// contributes neither its loss nor its log-weight, and its `η` gradient is 0.
pub fn combine_active(losses: [Option<f64>; 3], weights: &LossWeights) -> Result<CombinedLoss> {
    let scales = weights.scales();
    let mut total = 0.0;
    let mut d_eta = [0.0; 3];
    for k in 0..3 {
        let Some(l) = losses[k] else { continue };
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss term {k}")));
        }
        if l < 0.0 {
            return Err(Error::invalid(format!("loss term {k} is negative ({l})")));
        }
        total += l * scales[k] + 0.5 * weights.eta[k];
        d_eta[k] = -l * scales[k] + 0.5;
    }
    Ok(CombinedLoss {
        total,
        d_eta,
        scales,
    })
}
