//! Differentiable tile-based splatting: projection, front-to-back compositing
//! of color, z-depth and alpha, and the exact adjoint of all of it.

mod backward;
mod forward;
mod project;

pub use backward::render_backward;
pub use forward::render;
pub use project::{project, Projected2DGaussian};

use crate::math::{Quat, Vec3};

pub const TILE_SIZE: usize = 16;
/// Low-pass dilation added to the diagonal of every 2D covariance (pixel²).
pub const DILATION: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
/// Contributions must exceed this influence.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Compositing stops before transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Pixels with accumulated alpha below this report depth 0.
pub const DEPTH_ALPHA_MIN: f64 = 0.5;

/// One blended Gaussian at one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Contribution {
    /// Position in the tile's depth-sorted list.
    pub slot: u32,
    pub alpha: f64,
    /// Transmittance in front of this Gaussian.
    pub transmittance: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TileRecord {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    /// Indices into the depth-sorted projected list.
    pub list: Vec<u32>,
    /// Per pixel (row-major within the tile): `[start, end)` into `entries`.
    pub ranges: Vec<(u32, u32)>,
    pub entries: Vec<Contribution>,
}

/// Forward render of one view plus everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Row-major `H×W` RGB.
    pub color: Vec<Vec3>,
    /// Row-major `H×W` z-depth, 0 where invalid.
    pub depth: Vec<f64>,
    /// Row-major `H×W` accumulated opacity.
    pub alpha: Vec<f64>,
    pub background: Vec3,
    /// Depth-sorted by `(z, id)`.
    pub(crate) projected: Vec<Projected2DGaussian>,
    pub(crate) tiles: Vec<TileRecord>,
    pub(crate) tiles_x: usize,
    pub(crate) cloud_len: usize,
}

impl RenderOutput {
    fn tile_of(&self, x: usize, y: usize) -> (&TileRecord, usize) {
        let tile = &self.tiles[(y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE];
        let local = (y - tile.y0) * (tile.x1 - tile.x0) + (x - tile.x0);
        (tile, local)
    }

    /// Front-to-back contributors of pixel `(x, y)` as
    /// `(cloud index, alpha, blending weight)`.
    pub fn contributors(&self, x: usize, y: usize) -> Vec<(usize, f64, f64)> {
        let (tile, local) = self.tile_of(x, y);
        let (s, e) = tile.ranges[local];
        tile.entries[s as usize..e as usize]
            .iter()
            .map(|c| {
                let g = &self.projected[tile.list[c.slot as usize] as usize];
                (g.source, c.alpha, c.alpha * c.transmittance)
            })
            .collect()
    }

    /// Final transmittance `Π(1 − αⱼ)` of pixel `(x, y)`.
    pub fn transmittance(&self, x: usize, y: usize) -> f64 {
        let (tile, local) = self.tile_of(x, y);
        let (s, e) = tile.ranges[local];
        tile.entries[s as usize..e as usize]
            .iter()
            .fold(1.0, |t, c| t * (1.0 - c.alpha))
    }

    pub fn projected(&self) -> &[Projected2DGaussian] {
        &self.projected
    }
}

/// Gradients with respect to the stored (unconstrained) cloud parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub means: Vec<Vec3>,
    /// With respect to log-scales.
    pub log_scales: Vec<Vec3>,
    /// With respect to the raw quaternion components `(w, x, y, z)`.
    pub rotations: Vec<Quat>,
    pub colors: Vec<Vec3>,
    /// With respect to opacity logits.
    pub opacity_logits: Vec<f64>,
    /// Norm of the gradient with respect to the projected center, in NDC
    /// units (pixel gradient times half the image size), summed over views.
    pub screen_grad_norm: Vec<f64>,
    /// Number of views in which each Gaussian was projected.
    pub visible_count: Vec<u32>,
}

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        ParamGradients {
            means: vec![Vec3::zeros(); n],
            log_scales: vec![Vec3::zeros(); n],
            rotations: vec![Quat::zeros(); n],
            colors: vec![Vec3::zeros(); n],
            opacity_logits: vec![0.0; n],
            screen_grad_norm: vec![0.0; n],
            visible_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// `self += scale · other` on the parameter gradients; screen statistics
    /// are summed unscaled.
    pub fn add_scaled(&mut self, other: &ParamGradients, scale: f64) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.means[i] += other.means[i] * scale;
            self.log_scales[i] += other.log_scales[i] * scale;
            self.rotations[i] += other.rotations[i] * scale;
            self.colors[i] += other.colors[i] * scale;
            self.opacity_logits[i] += other.opacity_logits[i] * scale;
            self.screen_grad_norm[i] += other.screen_grad_norm[i];
            self.visible_count[i] += other.visible_count[i];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.means.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.colors.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite())
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.len() {
            s += self.means[i].norm_squared()
                + self.log_scales[i].norm_squared()
                + self.rotations[i].norm_squared()
                + self.colors[i].norm_squared()
                + self.opacity_logits[i].powi(2);
        }
        s.sqrt()
    }
}
