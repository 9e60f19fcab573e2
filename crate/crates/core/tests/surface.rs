mod common;

use common::*;
use mvgs_core::math::{Vec3, IDENTITY_QUAT};
use mvgs_core::surface::*;
use mvgs_core::{Camera, GaussianCloud, SceneConfig, Splat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn points_cloud(means: &[Vec3]) -> GaussianCloud {
    let splats: Vec<Splat> = means
        .iter()
        .map(|m| Splat {
            mean: *m,
            scale: Vec3::repeat(0.05),
            rotation: IDENTITY_QUAT,
            color: Vec3::zeros(),
            opacity: 0.5,
        })
        .collect();
    GaussianCloud::from_splats(&splats).unwrap()
}

fn random_points(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn brute_dist(p: &Vec3, pts: &[Vec3]) -> f64 {
    pts.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn principal_point_backprojects_along_axis() {
    let cam = axis_camera(16, 16, 20.0);
    let mut depth = vec![0.0; 256];
    // Principal point on the center of pixel (7, 7).
    let cam = Camera::new(20.0, 20.0, 7.5, 7.5, cam.rot, cam.trans, 16, 16, 0.01, 100.0).unwrap();
    depth[7 * 16 + 7] = 2.0;
    let pts = backproject(&depth, &cam).unwrap();
    assert_eq!(pts.len(), 1);
    let p_cam = cam.to_camera(&pts[0]);
    assert!((p_cam - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
}

#[test]
fn backproject_inverts_projection() {
    let scene = SceneConfig {
        image_width: 100,
        image_height: 100,
        ..SceneConfig::default()
    };
    let mut r = rng(1);
    let mut checked = 0;
    while checked < 10_000 {
        let cam = scene
            .orbit_camera(r.random_range(0.0..360.0), r.random_range(-10.0..45.0))
            .unwrap();
        let p = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let (u, v, d) = cam.project(&p);
        // Round trip through a pixel whose center is exactly the projection.
        let (ui, vi) = ((u - 0.5).round(), (v - 0.5).round());
        if ui < 0.0 || vi < 0.0 || ui >= 100.0 || vi >= 100.0 || d <= 0.0 {
            continue;
        }
        let shifted = Camera::new(
            cam.fx,
            cam.fy,
            cam.cx + (ui + 0.5 - u),
            cam.cy + (vi + 0.5 - v),
            cam.rot,
            cam.trans,
            100,
            100,
            0.01,
            100.0,
        )
        .unwrap();
        let mut depth = vec![0.0; 10_000];
        depth[vi as usize * 100 + ui as usize] = d;
        let back = backproject(&depth, &shifted).unwrap();
        assert_eq!(back.len(), 1);
        assert!((back[0] - p).norm() < 1e-5, "{} vs {}", back[0], p);
        checked += 1;
    }
}

#[test]
fn synthetic_sphere_depth_backprojects_onto_sphere() {
    let scene = SceneConfig::default();
    let cam = scene.orbit_camera(30.0, 20.0).unwrap();
    let (center, radius) = (Vec3::new(0.1, -0.05, 0.0), 0.7);
    let quant = 1e-3;
    let c = cam.to_camera(&center);
    let mut depth = vec![0.0; cam.pixel_count()];
    for v in 0..cam.height {
        for u in 0..cam.width {
            let dir = Vec3::new((u as f64 + 0.5 - cam.cx) / cam.fx, (v as f64 + 0.5 - cam.cy) / cam.fy, 1.0);
            // Ray x = t·dir; z-depth equals t because dir_z = 1.
            let a = dir.norm_squared();
            let b = -2.0 * dir.dot(&c);
            let disc = b * b - 4.0 * a * (c.norm_squared() - radius * radius);
            if disc < 0.0 {
                continue;
            }
            let t = (-b - disc.sqrt()) / (2.0 * a);
            depth[v * cam.width + u] = (t / quant).round() * quant;
        }
    }
    let pts = backproject(&depth, &cam).unwrap();
    assert!(pts.len() > 500);
    for p in &pts {
        assert!(((p - center).norm() - radius).abs() < 2.0 * quant);
    }
}

#[test]
fn backproject_checks_shape() {
    let cam = axis_camera(8, 8, 10.0);
    assert!(backproject(&[1.0; 10], &cam).is_err());
}

#[test]
fn sphere_of_gaussians_surface_hugs_sphere() {
    let scene = SceneConfig::default();
    let cloud = sphere_of_gaussians(4000, Vec3::zeros(), 1.0, 0.05, 0.99);
    let params = SurfaceParams::default();
    let cams = surface_cameras(8, &scene, &mut rng(3)).unwrap();
    let s = build_surface(&cloud, &cams, &params, &scene, 0).unwrap();
    assert!(s.len() > 1000, "{} points", s.len());
    let near = s.points.iter().filter(|p| (p.norm() - 1.0).abs() < 0.05).count();
    assert!(near as f64 >= 0.95 * s.len() as f64, "{near} of {}", s.len());
    assert!(!s.empty_warning);
}

#[test]
fn empty_render_gives_empty_surface() {
    let scene = SceneConfig::default();
    let cams = surface_cameras(4, &scene, &mut rng(3)).unwrap();
    let s = build_surface(&GaussianCloud::empty(), &cams, &SurfaceParams::default(), &scene, 7).unwrap();
    assert!(s.is_empty() && s.empty_warning);
    assert_eq!(s.step, 7);
}

#[test]
fn huge_voxel_gives_centroid() {
    let mut r = rng(5);
    let pts = random_points(&mut r, 500);
    let out = voxel_downsample(&pts, 10.0);
    assert_eq!(out.len(), 1);
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    assert!((out[0] - centroid).norm() < 1e-12);
}

#[test]
fn voxel_outputs_stay_inside_occupied_voxels() {
    let mut r = rng(6);
    let pts = random_points(&mut r, 2000);
    let voxel = 0.2;
    let out = voxel_downsample(&pts, voxel);
    assert!(out.len() <= pts.len());
    let lo = pts.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let key = |p: &Vec3| ((p - lo) / voxel).map(|x| x.floor() as i64);
    let occupied: std::collections::HashSet<_> = pts.iter().map(|p| key(p)).collect();
    assert_eq!(out.len(), occupied.len());
    for p in &out {
        assert!(occupied.contains(&key(p)));
    }
}

#[test]
fn isolated_outlier_is_removed() {
    let mut pts: Vec<Vec3> = (0..5)
        .flat_map(|i| (0..5).map(move |j| Vec3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0)))
        .collect();
    pts.push(Vec3::new(3.0, 3.0, 3.0));
    let kept = remove_low_density_points(&pts, 3, 0.02);
    assert_eq!(kept.len(), 25);
    assert!(kept.iter().all(|p| p.norm() < 1.0));
}

#[test]
fn distance_examples() {
    let surface = SurfaceCloud::new(vec![Vec3::zeros()], 0).unwrap();
    let cloud = points_cloud(&[Vec3::new(3.0, 4.0, 0.0), Vec3::zeros()]);
    assert_eq!(gaussian_surface_distance(&cloud, &surface).unwrap(), vec![5.0, 0.0]);
    let empty = SurfaceCloud::new(vec![], 0).unwrap();
    assert!(gaussian_surface_distance(&cloud, &empty).is_err());
    assert!(surface_prune(&cloud, &empty, PruneMode::Epsilon { eps: 1.0 }).is_err());
}

#[test]
fn distances_match_brute_force() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let means = random_points(&mut r, 300);
        let mut pts = random_points(&mut r, 800);
        pts.iter_mut().for_each(|p| *p *= 0.5);
        let surface = SurfaceCloud::new(pts.clone(), 0).unwrap();
        let d = gaussian_surface_distance(&points_cloud(&means), &surface).unwrap();
        for (m, dg) in means.iter().zip(d) {
            assert_eq!(dg, brute_dist(m, &pts));
        }
    }
}

/// Sorting oracle for the k nearest centers of `p`, ties broken by index.
fn brute_knn(p: &Vec3, means: &[Vec3], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..means.len()).collect();
    idx.sort_by(|&a, &b| (p - means[a]).norm_squared().total_cmp(&(p - means[b]).norm_squared()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[test]
fn prune_modes_match_brute_force() {
    for seed in 0..20 {
        let mut r = rng(100 + seed);
        let n = r.random_range(50..500);
        let m = r.random_range(10..1000);
        let means = random_points(&mut r, n);
        let pts: Vec<Vec3> = random_points(&mut r, m).into_iter().map(|p| p * 0.6).collect();
        let cloud = points_cloud(&means);
        let surface = SurfaceCloud::new(pts.clone(), 0).unwrap();
        let dists: Vec<f64> = means.iter().map(|q| brute_dist(q, &pts)).collect();

        let knn = surface_prune(&cloud, &surface, PruneMode::Knn { k: 5 }).unwrap();
        let mut keep = vec![false; n];
        for p in &pts {
            for i in brute_knn(p, &means, 5) {
                keep[i] = true;
            }
            assert!(!knn.prune[brute_knn(p, &means, 1)[0]]);
        }
        assert_eq!(knn.prune, keep.iter().map(|k| !k).collect::<Vec<_>>(), "seed {seed}");

        let eps = 0.3;
        let e = surface_prune(&cloud, &surface, PruneMode::Epsilon { eps }).unwrap();
        if !e.guard_triggered {
            assert_eq!(e.prune, dists.iter().map(|d| *d > eps).collect::<Vec<_>>());
        }

        let pc = surface_prune(&cloud, &surface, PruneMode::Percentile { p: 75.0 }).unwrap();
        let mut sorted = dists.clone();
        sorted.sort_by(f64::total_cmp);
        let pos = 0.75 * (n - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        let thresh = sorted[lo] + frac * (sorted[(lo + 1).min(n - 1)] - sorted[lo]);
        assert_eq!(pc.prune, dists.iter().map(|d| *d > thresh).collect::<Vec<_>>());

        // Deterministic.
        assert_eq!(surface_prune(&cloud, &surface, PruneMode::Knn { k: 5 }).unwrap(), knn);
    }
}

#[test]
fn knn_two_points_keeps_at_most_ten() {
    let mut r = rng(9);
    let means = random_points(&mut r, 20);
    let pts = vec![Vec3::new(0.2, 0.1, 0.0), Vec3::new(-0.4, 0.3, 0.5)];
    let mask = surface_prune(&points_cloud(&means), &SurfaceCloud::new(pts.clone(), 0).unwrap(), PruneMode::Knn { k: 5 })
        .unwrap();
    let survivors: Vec<usize> = (0..20).filter(|&i| !mask.prune[i]).collect();
    assert!(survivors.len() <= 10);
    for s in survivors {
        assert!(pts.iter().any(|p| brute_knn(p, &means, 5).contains(&s)));
    }
}

#[test]
fn percentile_ninety_prunes_ten_largest() {
    let mut r = rng(10);
    let means = random_points(&mut r, 100);
    let surface = SurfaceCloud::new(vec![Vec3::new(0.01, 0.02, 0.03)], 0).unwrap();
    let mask = surface_prune(&points_cloud(&means), &surface, PruneMode::Percentile { p: 90.0 }).unwrap();
    assert_eq!(mask.pruned(), 10);
    let mut order: Vec<usize> = (0..100).collect();
    order.sort_by(|&a, &b| brute_dist(&means[b], &surface.points).total_cmp(&brute_dist(&means[a], &surface.points)));
    for &i in &order[..10] {
        assert!(mask.prune[i]);
    }
}

#[test]
fn epsilon_above_all_distances_prunes_nothing() {
    let mut r = rng(11);
    let means = random_points(&mut r, 50);
    let surface = SurfaceCloud::new(random_points(&mut r, 50), 0).unwrap();
    let mask = surface_prune(&points_cloud(&means), &surface, PruneMode::Epsilon { eps: 100.0 }).unwrap();
    assert_eq!(mask.pruned(), 0);
    assert!(!mask.guard_triggered);
}

#[test]
fn guard_keeps_closest_gaussian() {
    let means = vec![Vec3::new(5.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 9.0, 0.0)];
    let surface = SurfaceCloud::new(vec![Vec3::zeros()], 0).unwrap();
    let mask = surface_prune(&points_cloud(&means), &surface, PruneMode::Epsilon { eps: 0.5 }).unwrap();
    assert!(mask.guard_triggered);
    assert_eq!(mask.prune, vec![true, false, true]);
}

#[test]
fn invalid_prune_parameters() {
    let cloud = points_cloud(&[Vec3::zeros()]);
    let surface = SurfaceCloud::new(vec![Vec3::zeros()], 0).unwrap();
    for mode in [
        PruneMode::Knn { k: 0 },
        PruneMode::Percentile { p: 0.0 },
        PruneMode::Percentile { p: 100.0 },
        PruneMode::Epsilon { eps: 0.0 },
        PruneMode::Epsilon { eps: f64::NAN },
    ] {
        assert!(surface_prune(&cloud, &surface, mode).is_err(), "{mode:?}");
    }
}

#[test]
fn ascii_round_trip() {
    let mut r = rng(12);
    let s = SurfaceCloud::new(random_points(&mut r, 40), 3).unwrap();
    let mut buf = Vec::new();
    s.write_ascii(&mut buf).unwrap();
    let back = SurfaceCloud::read_ascii(&buf[..], 3).unwrap();
    assert_eq!(back, s);
    let err = SurfaceCloud::read_ascii(&b"1 2 3\n4 5\n"[..], 0).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}
