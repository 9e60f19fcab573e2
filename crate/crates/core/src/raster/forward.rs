use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::Result;
use crate::math::Vec3;

use super::project::project;
use super::{
    Contribution, Projected2DGaussian, RenderOutput, TileRecord, ALPHA_MAX, ALPHA_MIN,
    DEPTH_ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN,
};

/// Influence `σ·exp(−½ dᵀ Q d)` of a projected Gaussian at a pixel center,
/// clamped to `ALPHA_MAX`. Returns `(alpha, unclamped σ·G, d)`.
#[inline]
pub(crate) fn influence(g: &Projected2DGaussian, px: usize, py: usize) -> (f64, f64, [f64; 2]) {
    let dx = px as f64 + 0.5 - g.mean2d[0];
    let dy = py as f64 + 0.5 - g.mean2d[1];
    let q = &g.conic;
    let power = -0.5 * (q[(0, 0)] * dx * dx + 2.0 * q[(0, 1)] * dx * dy + q[(1, 1)] * dy * dy);
    let raw = g.opacity * power.exp();
    (raw.min(ALPHA_MAX), raw, [dx, dy])
}

#[inline]
pub(crate) fn covers(g: &Projected2DGaussian, px: usize, py: usize) -> bool {
    px >= g.bounds[0] && px <= g.bounds[1] && py >= g.bounds[2] && py <= g.bounds[3]
}

/// Renders color, z-depth and accumulated alpha of one view.
///
/// Gaussians are composited front to back in ascending `(z, id)` order; only
/// influences above `1/255` contribute.
pub fn render(cloud: &GaussianCloud, camera: &Camera, background: Vec3) -> Result<RenderOutput> {
    camera.validate()?;
    let mut projected = project(cloud, camera);
    projected.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.id.cmp(&b.id)));

    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, g) in projected.iter().enumerate() {
        let [x0, x1, y0, y1] = g.bounds;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let tiles: Vec<TileRecord> = lists
        .into_par_iter()
        .enumerate()
        .map(|(t, list)| {
            let x0 = (t % tiles_x) * TILE_SIZE;
            let y0 = (t / tiles_x) * TILE_SIZE;
            let x1 = (x0 + TILE_SIZE).min(w);
            let y1 = (y0 + TILE_SIZE).min(h);
            let mut ranges = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut entries = Vec::new();
            for py in y0..y1 {
                for px in x0..x1 {
                    let start = entries.len() as u32;
                    let mut t = 1.0;
                    for (slot, &k) in list.iter().enumerate() {
                        let g = &projected[k as usize];
                        if !covers(g, px, py) {
                            continue;
                        }
                        let (alpha, _, _) = influence(g, px, py);
                        if !(alpha > ALPHA_MIN) {
                            continue;
                        }
                        let next = t * (1.0 - alpha);
                        if next < TRANSMITTANCE_MIN {
                            break;
                        }
                        entries.push(Contribution {
                            slot: slot as u32,
                            alpha,
                            transmittance: t,
                        });
                        t = next;
                    }
                    ranges.push((start, entries.len() as u32));
                }
            }
            TileRecord {
                x0,
                y0,
                x1,
                list,
                ranges,
                entries,
            }
        })
        .collect();

    let mut color = vec![Vec3::zeros(); w * h];
    let mut depth = vec![0.0; w * h];
    let mut alpha = vec![0.0; w * h];
    for tile in &tiles {
        let tw = tile.x1 - tile.x0;
        for (local, &(s, e)) in tile.ranges.iter().enumerate() {
            let px = tile.x0 + local % tw;
            let py = tile.y0 + local / tw;
            let mut c = Vec3::zeros();
            let mut d = 0.0;
            let mut t = 1.0;
            for entry in &tile.entries[s as usize..e as usize] {
                let g = &projected[tile.list[entry.slot as usize] as usize];
                let wgt = entry.alpha * entry.transmittance;
                c += g.color * wgt;
                d += g.z * wgt;
                t *= 1.0 - entry.alpha;
            }
            let idx = py * w + px;
            let a = 1.0 - t;
            color[idx] = c + background * t;
            alpha[idx] = a;
            depth[idx] = if a >= DEPTH_ALPHA_MIN { d / a } else { 0.0 };
        }
    }

    Ok(RenderOutput {
        width: w,
        height: h,
        color,
        depth,
        alpha,
        background,
        projected,
        tiles,
        tiles_x,
        cloud_len: cloud.len(),
    })
}
