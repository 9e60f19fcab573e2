use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::{self, Vec3};

use super::forward::influence;
use super::{ParamGradients, RenderOutput, DEPTH_ALPHA_MIN};

/// Adjoint of one projected Gaussian's screen-space quantities.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    mean: Vector2<f64>,
    /// Full-matrix gradient entries `(Q00, Q01 = Q10, Q11)` of the conic.
    conic: [f64; 3],
    opacity: f64,
    color: Vec3,
    z: f64,
}

/// Exact adjoint of [`render`](super::render) for upstream gradients on color
/// and (optionally) depth.
///
/// The chain runs through the compositing recurrence, the screen-space
/// influence, the perspective projection, `Σ = R S² Rᵀ`, and the log-scale,
/// logit-opacity and normalized-quaternion parameterizations.
pub fn render_backward(
    cloud: &GaussianCloud,
    camera: &Camera,
    out: &RenderOutput,
    d_color: &[Vec3],
    d_depth: Option<&[f64]>,
) -> Result<ParamGradients> {
    let npix = out.width * out.height;
    if out.width != camera.width || out.height != camera.height {
        return Err(Error::Shape {
            what: "render output vs camera pixels",
            expected: camera.pixel_count(),
            actual: npix,
        });
    }
    if out.cloud_len != cloud.len() {
        return Err(Error::Shape {
            what: "render output vs cloud size",
            expected: cloud.len(),
            actual: out.cloud_len,
        });
    }
    if d_color.len() != npix {
        return Err(Error::Shape {
            what: "dL/dcolor",
            expected: npix,
            actual: d_color.len(),
        });
    }
    if let Some(dd) = d_depth {
        if dd.len() != npix {
            return Err(Error::Shape {
                what: "dL/ddepth",
                expected: npix,
                actual: dd.len(),
            });
        }
    }

    let w = out.width;
    let bg = out.background;
    let partials: Vec<Vec<Grad2D>> = out
        .tiles
        .par_iter()
        .map(|tile| {
            let mut acc = vec![Grad2D::default(); tile.list.len()];
            let tw = tile.x1 - tile.x0;
            for (local, &(s, e)) in tile.ranges.iter().enumerate() {
                let (s, e) = (s as usize, e as usize);
                if s == e {
                    continue;
                }
                let px = tile.x0 + local % tw;
                let py = tile.y0 + local / tw;
                let idx = py * w + px;
                let gc = d_color[idx];
                let (gd, a_tot) = match d_depth {
                    Some(dd) if out.alpha[idx] >= DEPTH_ALPHA_MIN => (dd[idx], out.alpha[idx]),
                    _ => (0.0, 1.0),
                };
                if gc == Vec3::zeros() && gd == 0.0 {
                    continue;
                }
                let depth_num = out.depth[idx] * a_tot;
                let entries = &tile.entries[s..e];
                // Suffix accumulators for the composite behind the current entry.
                let mut behind_color = bg;
                let mut behind_depth = 0.0;
                let mut behind_trans = 1.0;
                for c in entries.iter().rev() {
                    let g = &out.projected[tile.list[c.slot as usize] as usize];
                    let t = c.transmittance;
                    let a = c.alpha;
                    let wgt = a * t;
                    let slot = &mut acc[c.slot as usize];

                    let mut g_alpha = gc.dot(&(g.color - behind_color)) * t;
                    slot.color += gc * wgt;
                    if gd != 0.0 {
                        let d_num = t * (g.z - behind_depth);
                        let d_den = t * behind_trans;
                        g_alpha += gd * (d_num / a_tot - depth_num * d_den / (a_tot * a_tot));
                        slot.z += gd * wgt / a_tot;
                    }

                    let (_, raw, [dx, dy]) = influence(g, px, py);
                    if raw < super::ALPHA_MAX {
                        // alpha = σ·exp(power)
                        let g_power = g_alpha * a;
                        slot.opacity += g_alpha * a / g.opacity;
                        let q = &g.conic;
                        slot.mean += Vector2::new(
                            q[(0, 0)] * dx + q[(0, 1)] * dy,
                            q[(0, 1)] * dx + q[(1, 1)] * dy,
                        ) * g_power;
                        slot.conic[0] += -0.5 * dx * dx * g_power;
                        slot.conic[1] += -0.5 * dx * dy * g_power;
                        slot.conic[2] += -0.5 * dy * dy * g_power;
                    }

                    behind_color = g.color * a + behind_color * (1.0 - a);
                    behind_depth = g.z * a + behind_depth * (1.0 - a);
                    behind_trans *= 1.0 - a;
                }
            }
            acc
        })
        .collect();

    // Fixed tile order keeps the reduction independent of thread scheduling.
    let mut per_proj = vec![Grad2D::default(); out.projected.len()];
    for (tile, part) in out.tiles.iter().zip(&partials) {
        for (slot, g) in part.iter().enumerate() {
            let dst = &mut per_proj[tile.list[slot] as usize];
            dst.mean += g.mean;
            for k in 0..3 {
                dst.conic[k] += g.conic[k];
            }
            dst.opacity += g.opacity;
            dst.color += g.color;
            dst.z += g.z;
        }
    }

    let lifted: Vec<_> = out
        .projected
        .par_iter()
        .zip(per_proj.par_iter())
        .map(|(g, d)| {
            let i = g.source;
            let (fx, fy) = (camera.fx, camera.fy);
            let [x, y, z] = [g.p_cam[0], g.p_cam[1], g.p_cam[2]];

            let d_conic = Matrix2::new(d.conic[0], d.conic[1], d.conic[1], d.conic[2]);
            let d_cov2 = -(g.conic * d_conic * g.conic);
            let d_cov3 = g.jw.transpose() * d_cov2 * g.jw;
            let d_jw = 2.0 * d_cov2 * g.jw * g.cov3d;
            let d_j = d_jw * camera.rot.transpose();

            let mut dp = Vector3::new(
                d.mean[0] * fx / z,
                d.mean[1] * fy / z,
                -d.mean[0] * fx * x / (z * z) - d.mean[1] * fy * y / (z * z),
            );
            dp[0] += d_j[(0, 2)] * (-fx / (z * z));
            dp[1] += d_j[(1, 2)] * (-fy / (z * z));
            dp[2] += d_j[(0, 0)] * (-fx / (z * z))
                + d_j[(0, 2)] * (2.0 * fx * x / (z * z * z))
                + d_j[(1, 1)] * (-fy / (z * z))
                + d_j[(1, 2)] * (2.0 * fy * y / (z * z * z));
            dp[2] += d.z;
            let d_mean = camera.rot.transpose() * dp;

            let rot = cloud.rotation_matrix(i);
            let scale = cloud.scale(i);
            let (d_scale, d_rot) = math::covariance_vjp(&rot, &scale, &d_cov3);
            let d_log_scale = d_scale.component_mul(&scale);
            let d_quat = math::rotation_vjp(&cloud.rotations[i], &d_rot);
            let sig = g.opacity;
            let d_logit = d.opacity * sig * (1.0 - sig);
            let ndc = Vector2::new(d.mean[0] * 0.5 * camera.width as f64, d.mean[1] * 0.5 * camera.height as f64);
            (i, d_mean, d_log_scale, d_quat, d.color, d_logit, ndc.norm())
        })
        .collect();

    let mut grads = ParamGradients::zeros(cloud.len());
    for (i, dm, ds, dq, dc, dl, sg) in lifted {
        grads.means[i] += dm;
        grads.log_scales[i] += ds;
        grads.rotations[i] += dq;
        grads.colors[i] += dc;
        grads.opacity_logits[i] += dl;
        grads.screen_grad_norm[i] += sg;
        grads.visible_count[i] += 1;
    }
    Ok(grads)
}
