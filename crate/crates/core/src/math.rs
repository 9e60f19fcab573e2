//! Quaternion and covariance helpers shared by the renderer and the regularizers.
//!
//! Quaternions are `(w, x, y, z)` with the Hamilton product. Rotation matrices are
//! always built from the normalized quaternion, and the vector-Jacobian products
//! below differentiate through that normalization.

use nalgebra::{Matrix3, Vector3, Vector4};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
/// `(w, x, y, z)`.
pub type Quat = Vector4<f64>;

pub const IDENTITY_QUAT: Quat = Vector4::new(1.0, 0.0, 0.0, 0.0);

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion (no normalization).
pub fn rotation_of_unit(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix of `q / |q|`.
pub fn rotation(q: &Quat) -> Mat3 {
    rotation_of_unit(&(q / q.norm()))
}

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion through `R(q / |q|)`.
pub fn rotation_vjp(q: &Quat, g: &Mat3) -> Quat {
    let n = q.norm();
    let u = q / n;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let dw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let du = Vector4::new(dw, dx, dy, dz);
    (du - u * u.dot(&du)) / n
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    Vector4::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

/// Unit quaternion for a rotation of `angle` radians about `axis`.
pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let a = axis.normalize() * (0.5 * angle).sin();
    Vector4::new((0.5 * angle).cos(), a[0], a[1], a[2])
}

/// `R diag(s²) Rᵀ`.
pub fn covariance_from(rot: &Mat3, scales: &Vec3) -> Mat3 {
    let m = rot * Matrix3::from_diagonal(scales);
    m * m.transpose()
}

/// Pulls `dL/dΣ` back to linear scales and the rotation matrix for
/// `Σ = R diag(s²) Rᵀ`. Returns `(dL/ds, dL/dR)`.
pub fn covariance_vjp(rot: &Mat3, scales: &Vec3, g: &Mat3) -> (Vec3, Mat3) {
    let gs = g + g.transpose();
    let s2 = scales.component_mul(scales);
    let d_rot = gs * rot * Matrix3::from_diagonal(&s2);
    let core = rot.transpose() * g * rot;
    let d_scales = Vector3::new(
        2.0 * scales[0] * core[(0, 0)],
        2.0 * scales[1] * core[(1, 1)],
        2.0 * scales[2] * core[(2, 2)],
    );
    (d_scales, d_rot)
}

/// Index of the smallest component; ties resolve to the lowest index.
pub fn argmin3(v: &Vec3) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}
