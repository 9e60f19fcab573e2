mod common;

use common::*;
use mvgs_core::cloud::rotate_cloud;
use mvgs_core::math::{self, Vec3, IDENTITY_QUAT};
use mvgs_core::regularizers::*;
use mvgs_core::surface::SurfaceCloud;
use mvgs_core::{GaussianCloud, Splat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Anisotropic Gaussians with a clearly separated smallest scale, and
/// surface points scattered around them.
fn flatten_instance(seed: u64, n: usize, m: usize) -> (GaussianCloud, SurfaceCloud) {
    let mut r = rng(seed);
    let splats: Vec<Splat> = (0..n)
        .map(|_| {
            let mut s = [r.random_range(0.02..0.04), r.random_range(0.08..0.12), r.random_range(0.15..0.2)];
            s.rotate_left(r.random_range(0..3));
            Splat {
                mean: Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)),
                scale: Vec3::new(s[0], s[1], s[2]),
                rotation: random_quat(&mut r),
                color: Vec3::repeat(0.5),
                opacity: r.random_range(0.2..0.95),
            }
        })
        .collect();
    let cloud = GaussianCloud::from_splats(&splats).unwrap();
    let points: Vec<Vec3> = (0..m)
        .map(|_| {
            let g = r.random_range(0..n);
            cloud.means[g] + Vec3::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), r.random_range(-0.1..0.1))
        })
        .collect();
    (cloud, SurfaceCloud::new(points, 0).unwrap())
}

#[test]
fn match_at_own_center_with_unit_opacity() {
    let splat = |m: Vec3, o: f64| Splat {
        mean: m,
        scale: Vec3::repeat(0.1),
        rotation: IDENTITY_QUAT,
        color: Vec3::zeros(),
        opacity: o,
    };
    let cloud = GaussianCloud::from_splats(&[
        splat(Vec3::new(5.0, 0.0, 0.0), 0.9),
        splat(Vec3::new(0.0, 0.0, 0.0), 1.0 - 1e-12),
        splat(Vec3::new(0.0, 5.0, 0.0), 0.9),
    ])
    .unwrap();
    let m = match_influential_gaussian(&Vec3::zeros(), &cloud, &[0, 1, 2]).unwrap();
    assert_eq!(m.gaussian, 1);
    assert!((m.influence - 1.0).abs() < 1e-9);
}

#[test]
fn match_prefers_opacity_at_equal_distance() {
    let splat = |m: Vec3, o: f64| Splat {
        mean: m,
        scale: Vec3::repeat(0.3),
        rotation: IDENTITY_QUAT,
        color: Vec3::zeros(),
        opacity: o,
    };
    let cloud =
        GaussianCloud::from_splats(&[splat(Vec3::new(0.2, 0.0, 0.0), 0.5), splat(Vec3::new(-0.2, 0.0, 0.0), 0.9)])
            .unwrap();
    assert_eq!(match_influential_gaussian(&Vec3::zeros(), &cloud, &[0, 1]).unwrap().gaussian, 1);
    // Equal influence: lowest id wins.
    let tie = GaussianCloud::from_splats(&[splat(Vec3::new(0.2, 0.0, 0.0), 0.7), splat(Vec3::new(-0.2, 0.0, 0.0), 0.7)])
        .unwrap();
    assert_eq!(match_influential_gaussian(&Vec3::zeros(), &tie, &[1, 0]).unwrap().gaussian, 0);
    assert!(match_influential_gaussian(&Vec3::zeros(), &tie, &[]).is_err());
    assert!(match_influential_gaussian(&Vec3::zeros(), &GaussianCloud::empty(), &[0]).is_err());
}

#[test]
fn candidate_match_agrees_with_exhaustive_argmax() {
    for seed in 0..10 {
        let (cloud, _) = flatten_instance(seed, 50, 1);
        let grid = mvgs_core::spatial::HashGrid::build(&cloud.means, None);
        let all: Vec<usize> = (0..cloud.len()).collect();
        let mut r = rng(seed + 1000);
        for _ in 0..100 {
            let x = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            // Oracle: exhaustive argmax of opacity-weighted density.
            let oracle = (0..cloud.len())
                .map(|g| {
                    let d = x - cloud.means[g];
                    let inv = cloud.covariance(g).try_inverse().unwrap();
                    (g, cloud.opacity(g) * (-0.5 * d.dot(&(inv * d))).exp())
                })
                .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
                .0;
            let cands: Vec<usize> = grid.knn(&x, MATCH_CANDIDATES).into_iter().map(|c| c.0).collect();
            assert_eq!(match_influential_gaussian(&x, &cloud, &all).unwrap().gaussian, oracle);
            if cands.contains(&oracle) {
                assert_eq!(match_influential_gaussian(&x, &cloud, &cands).unwrap().gaussian, oracle);
            }
        }
    }
}

#[test]
fn flatten_term_examples() {
    let q = math::quat_from_axis_angle(&Vec3::new(1.0, 2.0, 0.5), 0.7);
    let s = Vec3::new(0.3, 0.05, 0.2);
    let cloud = GaussianCloud::from_splats(&[Splat {
        mean: Vec3::new(0.1, 0.2, 0.3),
        scale: s,
        rotation: q,
        color: Vec3::zeros(),
        opacity: 0.8,
    }])
    .unwrap();
    let v = math::rotation(&q).column(1).into_owned();
    let u = math::rotation(&q).column(0).into_owned();
    let mu = cloud.means[0];
    // In the plane orthogonal to v.
    let on_plane = SurfaceCloud::new(vec![mu + u * 0.02], 0).unwrap();
    let l = flatten_loss(&cloud, &on_plane, 10, &mut rng(0)).unwrap();
    assert!(l.loss.abs() < 1e-20);
    let d = 0.013;
    let off = SurfaceCloud::new(vec![mu + v * d], 0).unwrap();
    let l = flatten_loss(&cloud, &off, 10, &mut rng(0)).unwrap();
    assert!((l.loss - d * d / (0.05 * 0.05)).abs() < 1e-12);

    let empty = SurfaceCloud::new(vec![], 0).unwrap();
    let l = flatten_loss(&cloud, &empty, 10, &mut rng(0)).unwrap();
    assert!(l.empty_surface && l.loss == 0.0);
}

fn flatten_fd(seed: u64) {
    let (cloud, surface) = flatten_instance(seed, 30, 120);
    let out = flatten_loss(&cloud, &surface, 1 << 20, &mut rng(0)).unwrap();
    assert_eq!(out.samples, 120);
    let f = |c: &GaussianCloud| flatten_loss(c, &surface, 1 << 20, &mut rng(0)).unwrap().loss;
    let analytic = |g: Group, i: usize, k: usize| match g {
        Group::Means => out.grads.means[i][k],
        Group::LogScales => out.grads.log_scales[i][k],
        Group::Rotations => out.grads.rotations[i][k],
        _ => unreachable!(),
    };
    for r in check_groups(&cloud, &[Group::Means, Group::LogScales, Group::Rotations], 1e-5, &f, &analytic) {
        assert!(r.worst < 1e-3, "seed {seed}: {:?} worst {:e}", r.group, r.worst);
    }
}

#[test]
fn flatten_gradients_match_finite_differences() {
    for seed in 0..3 {
        flatten_fd(seed);
    }
}

#[test]
fn flatten_rotation_invariant() {
    for seed in 0..3 {
        let (cloud, surface) = flatten_instance(seed, 40, 200);
        let q = math::quat_from_axis_angle(&Vec3::new(0.3, -1.0, 0.4), 1.3);
        let r = math::rotation(&q);
        let rc = rotate_cloud(&cloud, &q);
        let rs = SurfaceCloud::new(surface.points.iter().map(|p| r * p).collect(), 0).unwrap();
        let a = flatten_loss(&cloud, &surface, 1 << 20, &mut rng(0)).unwrap().loss;
        let b = flatten_loss(&rc, &rs, 1 << 20, &mut rng(0)).unwrap().loss;
        assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn proximity_examples() {
    let mu = Vec3::new(0.3, -0.2, 0.5);
    let p = Vec3::new(1.0, 1.0, 1.0);
    let cloud = GaussianCloud::from_splats(&[Splat {
        mean: mu,
        scale: Vec3::repeat(0.1),
        rotation: IDENTITY_QUAT,
        color: Vec3::zeros(),
        opacity: 0.5,
    }])
    .unwrap();
    let one = SurfaceCloud::new(vec![p], 0).unwrap();
    let l = proximity_loss(&cloud, &one, 0.01, (10, 10), &mut rng(0)).unwrap();
    assert!((l.loss - (p - mu).norm_squared()).abs() < 1e-12);
    assert_eq!(soft_assignment(&mu, &[p], 0.01), vec![1.0]);

    let coincident = SurfaceCloud::new(vec![mu, Vec3::new(0.5, 0.0, 0.5), Vec3::new(0.0, 0.3, 0.1)], 0).unwrap();
    let l = proximity_loss(&cloud, &coincident, 1e-4, (10, 10), &mut rng(0)).unwrap();
    assert!(l.loss < 1e-12);

    assert!(proximity_loss(&cloud, &one, 0.0, (1, 1), &mut rng(0)).is_err());
    assert!(proximity_loss(&cloud, &one, -1.0, (1, 1), &mut rng(0)).is_err());
}

fn proximity_instance(seed: u64) -> (GaussianCloud, SurfaceCloud) {
    let mut r = rng(seed);
    let splats: Vec<Splat> = (0..5)
        .map(|_| Splat {
            mean: Vec3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)),
            scale: Vec3::repeat(0.1),
            rotation: IDENTITY_QUAT,
            color: Vec3::zeros(),
            opacity: 0.5,
        })
        .collect();
    let points = (0..20)
        .map(|_| Vec3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(-0.2..0.2)))
        .collect();
    (GaussianCloud::from_splats(&splats).unwrap(), SurfaceCloud::new(points, 0).unwrap())
}

#[test]
fn proximity_gradients_match_finite_differences() {
    for seed in 0..3 {
        let (cloud, surface) = proximity_instance(seed);
        let out = proximity_loss(&cloud, &surface, 0.01, (100, 100), &mut rng(0)).unwrap();
        let f = |c: &GaussianCloud| proximity_loss(c, &surface, 0.01, (100, 100), &mut rng(0)).unwrap().loss;
        let r = &check_groups(&cloud, &[Group::Means], 1e-5, &f, &|_, i, k| out.grads.means[i][k])[0];
        assert!(r.worst < 1e-3, "seed {seed}: worst {:e}", r.worst);
    }
}

#[test]
fn soft_assignment_normalized() {
    let mut r = rng(4);
    for _ in 0..50 {
        let mu = Vec3::new(r.random(), r.random(), r.random());
        let pts: Vec<Vec3> = (0..30).map(|_| Vec3::new(r.random(), r.random(), r.random()) * 3.0).collect();
        let tau = r.random_range(1e-4..1.0);
        let a = soft_assignment(&mu, &pts, tau);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn proximity_translation_invariant() {
    for seed in 0..3 {
        let (mut cloud, surface) = proximity_instance(seed);
        let a = proximity_loss(&cloud, &surface, 0.01, (100, 100), &mut rng(0)).unwrap().loss;
        let t = Vec3::new(3.0, -7.5, 1.25);
        cloud.means.iter_mut().for_each(|m| *m += t);
        let moved = SurfaceCloud::new(surface.points.iter().map(|p| p + t).collect(), 0).unwrap();
        let b = proximity_loss(&cloud, &moved, 0.01, (100, 100), &mut rng(0)).unwrap().loss;
        assert!((a - b).abs() <= 1e-6 * a, "{a} vs {b}");
    }
}

#[test]
fn combine_stationary_example() {
    let c = combine_losses([1.0, 1.0, 1.0], &LossWeights::default()).unwrap();
    assert_eq!(c.total, 1.5);
    assert_eq!(c.d_eta, [0.0; 3]);
    assert_eq!(c.scales, [0.5; 3]);
}

#[test]
fn combine_zero_loss_gradient_is_half() {
    let w = LossWeights { eta: [0.3, -1.2, 2.0] };
    let c = combine_losses([0.7, 0.0, 0.2], &w).unwrap();
    assert_eq!(c.d_eta[1], 0.5);
    assert!(combine_losses([-1.0, 0.0, 0.0], &w).is_err());
    assert!(combine_losses([f64::NAN, 0.0, 0.0], &w).is_err());
}

#[test]
fn combine_gradients_match_finite_differences() {
    let mut r = rng(8);
    for _ in 0..5 {
        let losses = [r.random_range(0.0..5.0), r.random_range(0.0..5.0), r.random_range(0.0..5.0)];
        let w = LossWeights { eta: [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)] };
        let c = combine_losses(losses, &w).unwrap();
        for k in 0..3 {
            let h = 1e-5;
            let mut p = w;
            p.eta[k] += h;
            let mut m = w;
            m.eta[k] -= h;
            let fd = (combine_losses(losses, &p).unwrap().total - combine_losses(losses, &m).unwrap().total) / (2.0 * h);
            assert!(rel_err(c.d_eta[k], fd, 1.0) < 1e-6);
        }
        // The loss-gradient factor is the partial derivative with respect to each loss.
        for k in 0..3 {
            let mut lp = losses;
            lp[k] += 1e-5;
            let fd = (combine_losses(lp, &w).unwrap().total - c.total) / 1e-5;
            assert!((fd - c.scales[k]).abs() < 1e-6);
        }
    }
}

#[test]
fn combine_descent_reaches_closed_form_stationary_point() {
    let losses = [2.0, 8.0, 0.5];
    let mut w = LossWeights::default();
    for _ in 0..10_000 {
        let c = combine_losses(losses, &w).unwrap();
        for k in 0..3 {
            w.eta[k] -= 0.5 * c.d_eta[k];
        }
    }
    let wk = w.weights();
    for k in 0..3 {
        assert!((wk[k] * wk[k] - losses[k]).abs() < 1e-4);
    }
}
