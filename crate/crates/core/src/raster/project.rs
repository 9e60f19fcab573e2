use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::math::{Mat3, Vec3};

use super::{ALPHA_MIN, DILATION};

/// Screen-space form of one Gaussian.
#[derive(Debug, Clone)]
pub struct Projected2DGaussian {
    /// Index into the source cloud.
    pub source: usize,
    pub id: u64,
    /// Continuous pixel coordinates.
    pub mean2d: Vector2<f64>,
    /// Dilated 2D covariance (pixel²).
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space depth.
    pub z: f64,
    pub p_cam: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    /// Inclusive pixel bounds `[x0, x1] × [y0, y1]` of the region where the
    /// influence can exceed the contribution cutoff.
    pub bounds: [usize; 4],
    /// Jacobian of the perspective map times the camera rotation.
    pub(crate) jw: Matrix2x3<f64>,
    /// World-space covariance.
    pub(crate) cov3d: Mat3,
}

/// Projects every Gaussian inside the clip range whose footprint touches the
/// image. Output keeps cloud order.
///
/// `cov2d = J W Σ Wᵀ Jᵀ + 0.3·I`, with `W` the camera rotation and `J` the
/// Jacobian of the perspective map at the camera-space center.
pub fn project(cloud: &GaussianCloud, camera: &Camera) -> Vec<Projected2DGaussian> {
    (0..cloud.len())
        .filter_map(|i| project_one(cloud, camera, i))
        .collect()
}

pub(crate) fn project_one(
    cloud: &GaussianCloud,
    camera: &Camera,
    i: usize,
) -> Option<Projected2DGaussian> {
    let p = camera.to_camera(&cloud.means[i]);
    let z = p[2];
    if !(z > camera.near && z < camera.far) {
        return None;
    }
    let opacity = cloud.opacity(i);
    // σ·G can only exceed the cutoff if σ does.
    if !(opacity > ALPHA_MIN) {
        return None;
    }
    let (fx, fy) = (camera.fx, camera.fy);
    let j = Matrix2x3::new(
        fx / z,
        0.0,
        -fx * p[0] / (z * z),
        0.0,
        fy / z,
        -fy * p[1] / (z * z),
    );
    let jw = j * camera.rot;
    let cov3d = cloud.covariance(i);
    let cov2d = jw * cov3d * jw.transpose() + Matrix2::identity() * DILATION;
    let det = cov2d.determinant();
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let mean2d = Vector2::new(fx * p[0] / z + camera.cx, fy * p[1] / z + camera.cy);

    // The influence exceeds ALPHA_MIN only where the Mahalanobis radius m
    // satisfies m² < 2 ln(σ / ALPHA_MIN); bound that ellipse by its major axis.
    let half_tr = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lam_max = half_tr + (half_tr * half_tr - det).max(0.0).sqrt();
    let m2 = 2.0 * (opacity / ALPHA_MIN).ln();
    let radius = (m2 * lam_max).sqrt();
    let x0 = (mean2d[0] - radius - 0.5).ceil();
    let x1 = (mean2d[0] + radius - 0.5).floor();
    let y0 = (mean2d[1] - radius - 0.5).ceil();
    let y1 = (mean2d[1] + radius - 0.5).floor();
    let (w, h) = (camera.width as f64, camera.height as f64);
    if !(x1 >= 0.0 && y1 >= 0.0 && x0 <= w - 1.0 && y0 <= h - 1.0) {
        return None;
    }
    let bounds = [
        x0.max(0.0) as usize,
        x1.min(w - 1.0) as usize,
        y0.max(0.0) as usize,
        y1.min(h - 1.0) as usize,
    ];
    Some(Projected2DGaussian {
        source: i,
        id: cloud.ids[i],
        mean2d,
        cov2d,
        conic,
        z,
        p_cam: p,
        opacity,
        color: cloud.colors[i],
        bounds,
        jw,
        cov3d,
    })
}
