//! The optimizable Gaussian set and its initialization.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3, IDENTITY_QUAT};
use crate::spatial::HashGrid;

/// Tolerance on `|q| = 1` accepted by [`build_covariance`].
pub const UNIT_QUAT_TOL: f64 = 1e-6;

pub const INIT_OPACITY: f64 = 0.1;

/// Builds `Σ = R(q) diag(s)² R(q)ᵀ` for linear scales `s` and a unit quaternion
/// `q = (w, x, y, z)`.
pub fn build_covariance(scales: &Vec3, q: &Quat) -> Result<Mat3> {
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("scales must be positive, got {scales:?}")));
    }
    let n = q.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::invalid(format!("quaternion is not unit (|q| = {n})")));
    }
    Ok(math::covariance_from(&math::rotation_of_unit(q), scales))
}

/// Gaussian parameters in their unconstrained storage form plus the
/// per-Gaussian densification statistics.
///
/// Scales are stored as logarithms and opacities as logits, so the exposed
/// values are always positive and inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    /// `(w, x, y, z)`, kept at unit norm between optimizer steps.
    pub rotations: Vec<Quat>,
    pub colors: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    /// Stable identities; used to break depth ties deterministically.
    pub ids: Vec<u64>,
    /// Accumulated screen-space positional gradient norm.
    pub grad_accum: Vec<f64>,
    /// Number of views that contributed to `grad_accum`.
    pub grad_count: Vec<u32>,
    pub next_id: u64,
}

/// Parameters of one Gaussian in exposed (constrained) form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: Quat,
    pub color: Vec3,
    pub opacity: f64,
}

impl GaussianCloud {
    pub fn empty() -> Self {
        GaussianCloud {
            means: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            colors: Vec::new(),
            opacity_logits: Vec::new(),
            ids: Vec::new(),
            grad_accum: Vec::new(),
            grad_count: Vec::new(),
            next_id: 0,
        }
    }

    pub fn from_splats(splats: &[Splat]) -> Result<Self> {
        if splats.is_empty() {
            return Err(Error::invalid("a cloud needs at least one Gaussian"));
        }
        let mut cloud = Self::empty();
        for s in splats {
            cloud.push(s);
        }
        Ok(cloud)
    }

    /// Appends a Gaussian with a fresh identity and zeroed statistics.
    pub fn push(&mut self, s: &Splat) {
        self.means.push(s.mean);
        self.log_scales.push(s.scale.map(f64::ln));
        self.rotations.push(s.rotation.normalize());
        self.colors.push(s.color);
        self.opacity_logits.push(math::logit(s.opacity));
        self.ids.push(self.next_id);
        self.next_id += 1;
        self.grad_accum.push(0.0);
        self.grad_count.push(0);
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        math::sigmoid(self.opacity_logits[i])
    }

    pub fn set_opacity(&mut self, i: usize, p: f64) {
        self.opacity_logits[i] = math::logit(p);
    }

    pub fn rotation_matrix(&self, i: usize) -> Mat3 {
        math::rotation(&self.rotations[i])
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        math::covariance_from(&self.rotation_matrix(i), &self.scale(i))
    }

    pub fn splat(&self, i: usize) -> Splat {
        Splat {
            mean: self.means[i],
            scale: self.scale(i),
            rotation: self.rotations[i],
            color: self.colors[i],
            opacity: self.opacity(i),
        }
    }

    /// Mean accumulated screen-space gradient per observation.
    pub fn mean_grad(&self, i: usize) -> f64 {
        match self.grad_count[i] {
            0 => 0.0,
            c => self.grad_accum[i] / c as f64,
        }
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|g| *g = 0.0);
        self.grad_count.iter_mut().for_each(|c| *c = 0);
    }

    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.norm();
            if n > 0.0 && n.is_finite() {
                *q /= n;
            } else {
                *q = IDENTITY_QUAT;
            }
        }
    }

    /// Keeps the rows whose `keep` flag is set, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filter(&mut self.means, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.colors, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.ids, keep);
        filter(&mut self.grad_accum, keep);
        filter(&mut self.grad_count, keep);
    }

    /// Checks that every per-Gaussian array has length `N ≥ 1` and every
    /// stored value is finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::invalid("cloud is empty"));
        }
        let lens = [
            ("log_scales", self.log_scales.len()),
            ("rotations", self.rotations.len()),
            ("colors", self.colors.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("ids", self.ids.len()),
            ("grad_accum", self.grad_accum.len()),
            ("grad_count", self.grad_count.len()),
        ];
        for (what, len) in lens {
            if len != n {
                return Err(Error::Shape {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        let finite = self.means.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.colors.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("cloud parameters".into()));
        }
        Ok(())
    }
}

/// Samples `n` Gaussians uniformly inside the ball of radius `extent`.
///
/// Scales are isotropic and equal to the mean nearest-neighbour distance of
/// the sampled centers, clamped to `[1e-4, 0.1]·extent`.
pub fn init_cloud(n: usize, extent: f64, seed: u64) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::invalid("init_cloud needs n >= 1"));
    }
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::invalid(format!("extent must be positive, got {extent}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Vec::with_capacity(n);
    while centers.len() < n {
        let p = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if p.norm_squared() <= 1.0 {
            centers.push(p * extent);
        }
    }
    let colors: Vec<Vec3> = (0..n)
        .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
        .collect();

    let scale = if n > 1 {
        let grid = HashGrid::build(&centers, None);
        let total: f64 = centers
            .iter()
            .enumerate()
            .map(|(i, c)| grid.nearest_excluding(c, i).map(|(_, d2)| d2.sqrt()).unwrap_or(0.0))
            .sum();
        total / n as f64
    } else {
        0.1 * extent
    }
    .clamp(1e-4 * extent, 0.1 * extent);

    let mut cloud = GaussianCloud::empty();
    for (mean, color) in centers.into_iter().zip(colors) {
        cloud.push(&Splat {
            mean,
            scale: Vector3::repeat(scale),
            rotation: IDENTITY_QUAT,
            color,
            opacity: INIT_OPACITY,
        });
    }
    Ok(cloud)
}

/// A cloud rotated rigidly about the origin by `q`.
pub fn rotate_cloud(cloud: &GaussianCloud, q: &Quat) -> GaussianCloud {
    let r: Matrix3<f64> = math::rotation(q);
    let mut out = cloud.clone();
    for i in 0..out.len() {
        out.means[i] = r * out.means[i];
        out.rotations[i] = math::quat_mul(q, &out.rotations[i]).normalize();
    }
    out
}
