//! Finite-difference oracles and random scene generators shared by the
//! integration tests. Nothing here calls the analytic backward code.
#![allow(dead_code)]

use mvgs_core::math::{self, Quat, Vec3};
use mvgs_core::{Camera, GaussianCloud, ParamGradients, Splat};
use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Means,
    LogScales,
    Rotations,
    Colors,
    Opacity,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::Means,
        Group::LogScales,
        Group::Rotations,
        Group::Colors,
        Group::Opacity,
    ];

    pub fn width(self) -> usize {
        match self {
            Group::Rotations => 4,
            Group::Opacity => 1,
            _ => 3,
        }
    }
}

pub fn param_mut(cloud: &mut GaussianCloud, g: Group, i: usize, k: usize) -> &mut f64 {
    match g {
        Group::Means => &mut cloud.means[i][k],
        Group::LogScales => &mut cloud.log_scales[i][k],
        Group::Rotations => &mut cloud.rotations[i][k],
        Group::Colors => &mut cloud.colors[i][k],
        Group::Opacity => &mut cloud.opacity_logits[i],
    }
}

pub fn grad_of(grads: &ParamGradients, g: Group, i: usize, k: usize) -> f64 {
    match g {
        Group::Means => grads.means[i][k],
        Group::LogScales => grads.log_scales[i][k],
        Group::Rotations => grads.rotations[i][k],
        Group::Colors => grads.colors[i][k],
        Group::Opacity => grads.opacity_logits[i],
    }
}

/// Central difference of `f` with respect to one stored parameter.
pub fn central_diff(
    cloud: &GaussianCloud,
    g: Group,
    i: usize,
    k: usize,
    h: f64,
    f: &dyn Fn(&GaussianCloud) -> f64,
) -> f64 {
    let mut plus = cloud.clone();
    *param_mut(&mut plus, g, i, k) += h;
    let mut minus = cloud.clone();
    *param_mut(&mut minus, g, i, k) -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative disagreement; components far below the group's largest gradient
/// are measured against a small fraction of that magnitude instead.
pub fn rel_err(analytic: f64, numeric: f64, group_scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6 * group_scale).max(1e-12);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: Group,
    pub worst: f64,
    pub checked: usize,
}

/// Compares `analytic(g, i, k)` against central differences for every
/// parameter in `groups`, returning the worst relative error per group.
pub fn check_groups(
    cloud: &GaussianCloud,
    groups: &[Group],
    h: f64,
    f: &dyn Fn(&GaussianCloud) -> f64,
    analytic: &dyn Fn(Group, usize, usize) -> f64,
) -> Vec<GroupReport> {
    groups
        .iter()
        .map(|&g| {
            let mut pairs = Vec::new();
            for i in 0..cloud.len() {
                for k in 0..g.width() {
                    pairs.push((analytic(g, i, k), central_diff(cloud, g, i, k, h, f)));
                }
            }
            let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
            let worst = pairs
                .iter()
                .map(|&(a, n)| rel_err(a, n, scale))
                .fold(0.0, f64::max);
            GroupReport {
                group: g,
                worst,
                checked: pairs.len(),
            }
        })
        .collect()
}

pub fn axis_camera(w: usize, h: usize, f: f64) -> Camera {
    Camera::new(
        f,
        f,
        w as f64 / 2.0,
        h as f64 / 2.0,
        Matrix3::identity(),
        Vec3::zeros(),
        w,
        h,
        0.1,
        100.0,
    )
    .unwrap()
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q.normalize();
        }
    }
}

/// Gaussians that are large on screen relative to a 16×16 axis camera with
/// focal 20, so that every pixel lies well inside each footprint and no small
/// perturbation crosses the contribution cutoff or early termination.
/// Depths are stratified so no perturbation can reorder the depth sort.
pub fn smooth_scene(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depths: Vec<f64> = (0..n)
        .map(|i| 3.0 + 2.0 * (i as f64 + rng.random_range(0.1..0.9)) / n as f64)
        .collect();
    depths.shuffle(&mut rng);
    let splats: Vec<Splat> = depths
        .into_iter()
        .map(|z| Splat {
            mean: Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), z),
            scale: Vec3::new(
                rng.random_range(1.5..3.0),
                rng.random_range(1.5..3.0),
                rng.random_range(1.5..3.0),
            ),
            rotation: random_quat(&mut rng),
            color: Vec3::new(rng.random(), rng.random(), rng.random()),
            opacity: rng.random_range(0.1..0.5),
        })
        .collect();
    GaussianCloud::from_splats(&splats).unwrap()
}

/// General random scene in front of an axis camera.
pub fn random_scene(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats: Vec<Splat> = (0..n)
        .map(|_| Splat {
            mean: Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            ),
            scale: Vec3::new(
                rng.random_range(0.02..0.4),
                rng.random_range(0.02..0.4),
                rng.random_range(0.02..0.4),
            ),
            rotation: random_quat(&mut rng),
            color: Vec3::new(rng.random(), rng.random(), rng.random()),
            opacity: rng.random_range(0.05..0.99),
        })
        .collect();
    GaussianCloud::from_splats(&splats).unwrap()
}

pub fn random_image(seed: u64, n: usize) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

pub fn random_vec(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Fibonacci-sphere directions.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vec3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

/// Rotation taking +z to the unit vector `n`.
pub fn quat_z_to(n: &Vec3) -> Quat {
    let z = Vec3::z();
    let axis = z.cross(n);
    if axis.norm() < 1e-12 {
        return if n[2] > 0.0 { Quat::new(1.0, 0.0, 0.0, 0.0) } else { Quat::new(0.0, 1.0, 0.0, 0.0) };
    }
    math::quat_from_axis_angle(&axis, n[2].clamp(-1.0, 1.0).acos())
}

/// Opaque discs tangent to a sphere.
pub fn sphere_of_gaussians(n: usize, center: Vec3, radius: f64, disc: f64, opacity: f64) -> GaussianCloud {
    let splats: Vec<Splat> = fibonacci_sphere(n)
        .into_iter()
        .map(|d| Splat {
            mean: center + d * radius,
            scale: Vec3::new(disc, disc, disc * 0.1),
            rotation: quat_z_to(&d),
            color: Vec3::repeat(0.5),
            opacity,
        })
        .collect();
    GaussianCloud::from_splats(&splats).unwrap()
}
