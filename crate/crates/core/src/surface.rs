//! Pseudo-surface reconstruction from rendered depth and surface-based pruning.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, SceneConfig};
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::render;
use crate::spatial::{self, HashGrid};

/// Backprojected, filtered and voxel-downsampled surface samples.
#[derive(Debug, Clone)]
pub struct SurfaceCloud {
    pub points: Vec<Vec3>,
    /// Training step at which the surface was built.
    pub step: u64,
    /// Set when no valid depth survived and the surface is empty.
    pub empty_warning: bool,
    index: HashGrid,
}

impl PartialEq for SurfaceCloud {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.step == other.step && self.empty_warning == other.empty_warning
    }
}

impl SurfaceCloud {
    pub fn new(points: Vec<Vec3>, step: u64) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("surface points".into()));
        }
        let index = HashGrid::build(&points, None);
        let empty_warning = points.is_empty();
        Ok(SurfaceCloud {
            points,
            step,
            empty_warning,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest surface point to `q` as `(index, distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.index.nearest(q).map(|(i, d2)| (i, d2.sqrt()))
    }

    /// One `x y z` triple per line.
    pub fn write_ascii(&self, mut w: impl Write) -> io::Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        Ok(())
    }

    pub fn read_ascii(r: impl BufRead, step: u64) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(format!("line {}", lineno + 1), format!("{e}")))?;
            if vals.len() != 3 {
                return Err(Error::parse(
                    format!("line {}", lineno + 1),
                    format!("expected 3 coordinates, got {}", vals.len()),
                ));
            }
            points.push(Vec3::new(vals[0], vals[1], vals[2]));
        }
        SurfaceCloud::new(points, step)
    }
}

/// World points of every pixel with positive depth:
/// `P = R⁻¹(K⁻¹ (u+½, v+½, 1)ᵀ d − t)`.
pub fn backproject(depth: &[f64], camera: &Camera) -> Result<Vec<Vec3>> {
    if depth.len() != camera.pixel_count() {
        return Err(Error::Shape {
            what: "depth map vs camera pixels",
            expected: camera.pixel_count(),
            actual: depth.len(),
        });
    }
    let rt = camera.rot.transpose();
    let mut out = Vec::new();
    for v in 0..camera.height {
        for u in 0..camera.width {
            let d = depth[v * camera.width + u];
            if !(d > 0.0) {
                continue;
            }
            let ray = Vec3::new(
                (u as f64 + 0.5 - camera.cx) / camera.fx,
                (v as f64 + 0.5 - camera.cy) / camera.fy,
                1.0,
            );
            out.push(rt * (ray * d - camera.trans));
        }
    }
    Ok(out)
}

/// Parameters of [`build_surface`]. Unset lengths derive from the scene extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceParams {
    pub n_views: usize,
    /// Defaults to `0.01 · scene_extent`.
    pub voxel_size: Option<f64>,
    pub density_min_neighbors: usize,
    /// Defaults to `2 · voxel_size`.
    pub density_radius: Option<f64>,
    /// Also backproject the training views of the current step.
    pub include_training_views: bool,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        SurfaceParams {
            n_views: 8,
            voxel_size: None,
            density_min_neighbors: 4,
            density_radius: None,
            include_training_views: true,
        }
    }
}

impl SurfaceParams {
    pub fn voxel(&self, scene: &SceneConfig) -> f64 {
        self.voxel_size.unwrap_or(0.01 * scene.scene_extent)
    }

    pub fn radius(&self, scene: &SceneConfig) -> f64 {
        self.density_radius.unwrap_or(2.0 * self.voxel(scene))
    }
}

/// `n_views` orbit cameras with evenly spread azimuths (random phase) and
/// independent random elevations from the scene's interval.
pub fn surface_cameras(n_views: usize, scene: &SceneConfig, rng: &mut impl Rng) -> Result<Vec<Camera>> {
    if n_views == 0 {
        return Err(Error::invalid("surface needs at least one view"));
    }
    let phase: f64 = rng.random_range(0.0..360.0);
    (0..n_views)
        .map(|k| {
            let az = phase + 360.0 * k as f64 / n_views as f64;
            let el = if scene.elevation_max_deg > scene.elevation_min_deg {
                rng.random_range(scene.elevation_min_deg..scene.elevation_max_deg)
            } else {
                scene.elevation_min_deg
            };
            scene.orbit_camera(az, el)
        })
        .collect()
}

/// Drops points with fewer than `min_neighbors` other points within `radius`.
pub fn remove_low_density_points(points: &[Vec3], min_neighbors: usize, radius: f64) -> Vec<Vec3> {
    if min_neighbors == 0 || points.is_empty() {
        return points.to_vec();
    }
    let grid = HashGrid::build(points, Some(radius.max(1e-12)));
    let keep: Vec<bool> = (0..points.len())
        .into_par_iter()
        .map(|i| grid.count_within(&points[i], radius, Some(i)) >= min_neighbors)
        .collect();
    points
        .iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect()
}

/// Replaces the points of each occupied voxel by their centroid. Voxels are
/// anchored at the bounding-box minimum; output is in voxel-key order.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    if points.is_empty() {
        return Vec::new();
    }
    let (lo, _) = spatial::bounds(points);
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in points {
        let r = (p - lo) / voxel;
        let key = (r[0].floor() as i64, r[1].floor() as i64, r[2].floor() as i64);
        let e = cells.entry(key).or_insert((Vec3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    cells.into_values().map(|(s, n)| s / n as f64).collect()
}

/// Renders depth from every camera, backprojects, concatenates, removes
/// low-density points, and voxel-downsamples.
pub fn build_surface(
    cloud: &GaussianCloud,
    cameras: &[Camera],
    params: &SurfaceParams,
    scene: &SceneConfig,
    step: u64,
) -> Result<SurfaceCloud> {
    if cameras.is_empty() {
        return Err(Error::invalid("surface needs at least one view"));
    }
    let mut all = Vec::new();
    for cam in cameras {
        let out = render(cloud, cam, Vec3::zeros())?;
        all.extend(backproject(&out.depth, cam)?);
    }
    let dense = remove_low_density_points(&all, params.density_min_neighbors, params.radius(scene));
    let points = voxel_downsample(&dense, params.voxel(scene));
    if points.is_empty() {
        log::warn!("build_surface: no valid depth in {} views, surface is empty", cameras.len());
    }
    SurfaceCloud::new(points, step)
}

/// `D_g = min_i ‖μ_g − P_i‖` for every Gaussian.
pub fn gaussian_surface_distance(cloud: &GaussianCloud, surface: &SurfaceCloud) -> Result<Vec<f64>> {
    if surface.is_empty() {
        return Err(Error::invalid("surface is empty"));
    }
    Ok(cloud
        .means
        .par_iter()
        .map(|m| surface.nearest(m).expect("non-empty").1)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", deny_unknown_fields)]
pub enum PruneMode {
    /// Keep the union of every surface point's `k` nearest Gaussian centers.
    Knn { k: usize },
    /// Prune `D_g` above the `p`-th percentile (linear interpolation).
    Percentile { p: f64 },
    /// Prune `D_g > eps`.
    Epsilon { eps: f64 },
}

impl PruneMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PruneMode::Knn { k } if k == 0 => Err(Error::invalid("knn prune needs k >= 1")),
            PruneMode::Percentile { p } if !(p > 0.0 && p < 100.0) => {
                Err(Error::invalid(format!("percentile must lie in (0, 100), got {p}")))
            }
            PruneMode::Epsilon { eps } if !(eps > 0.0) => {
                Err(Error::invalid(format!("epsilon must be positive, got {eps}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    /// `true` marks a Gaussian to remove.
    pub prune: Vec<bool>,
    /// Set when the mask would have emptied the cloud and the Gaussian closest
    /// to the surface was retained instead.
    pub guard_triggered: bool,
}

impl PruneMask {
    pub fn pruned(&self) -> usize {
        self.prune.iter().filter(|p| **p).count()
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn surface_prune(cloud: &GaussianCloud, surface: &SurfaceCloud, mode: PruneMode) -> Result<PruneMask> {
    mode.validate()?;
    if surface.is_empty() {
        return Err(Error::invalid("surface is empty"));
    }
    let n = cloud.len();
    let dists = gaussian_surface_distance(cloud, surface)?;
    let mut prune = match mode {
        PruneMode::Knn { k } => {
            let grid = HashGrid::build(&cloud.means, None);
            let hits: Vec<Vec<(usize, f64)>> =
                surface.points.par_iter().map(|p| grid.knn(p, k)).collect();
            let mut prune = vec![true; n];
            for (i, _) in hits.into_iter().flatten() {
                prune[i] = false;
            }
            prune
        }
        PruneMode::Percentile { p } => {
            let mut sorted = dists.clone();
            sorted.sort_by(f64::total_cmp);
            let thresh = quantile_sorted(&sorted, p / 100.0);
            dists.iter().map(|d| *d > thresh).collect()
        }
        PruneMode::Epsilon { eps } => dists.iter().map(|d| *d > eps).collect(),
    };
    let mut guard_triggered = false;
    if prune.iter().all(|p| *p) {
        let keep = (0..n)
            .min_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(cloud.ids[a].cmp(&cloud.ids[b])))
            .expect("non-empty cloud");
        prune[keep] = false;
        guard_triggered = true;
        log::warn!("surface_prune: mask would empty the cloud; kept the closest Gaussian");
    }
    Ok(PruneMask {
        prune,
        guard_triggered,
    })
}
