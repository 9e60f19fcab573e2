//! Pinhole cameras and the scene-level sampling configuration.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// Pinhole camera with OpenCV axes: +x right, +y down, +z forward.
///
/// Pixel `(u, v)` covers `[u, u+1) × [v, v+1)`; its center is at `(u+0.5, v+0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rot: Mat3,
    /// World-to-camera translation: `p_cam = rot · p_world + trans`.
    pub trans: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rot: Mat3,
        trans: Vec3,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            rot,
            trans,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "clip range must satisfy 0 < near < far (near = {}, far = {})",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        let ortho = (self.rot.transpose() * self.rot - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-6) {
            return Err(Error::invalid(format!("camera rotation is not orthonormal ({ortho:e})")));
        }
        Ok(())
    }

    /// Camera at spherical position `(azimuth, elevation, radius)` around the
    /// origin, looking at the origin, with world +z up. `fov_deg` is the
    /// horizontal field of view.
    #[allow(clippy::too_many_arguments)]
    pub fn orbit(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        fov_deg: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if !(elevation_deg.abs() < 90.0) {
            return Err(Error::invalid(format!("elevation {elevation_deg} outside (-90, 90)")));
        }
        if !(radius > 0.0) || !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid("orbit radius and fov must be positive"));
        }
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
        let forward = (-position).normalize();
        let right = forward.cross(&Vector3::z()).normalize();
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let trans = -(rot * position);
        let f = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        Camera::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            rot,
            trans,
            width,
            height,
            near,
            far,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn intrinsics(&self) -> Mat3 {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rot.transpose() * self.trans)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    /// Continuous pixel coordinates and z-depth of a world point.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let c = self.to_camera(p);
        (self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy, c[2])
    }

    /// Camera-to-world rigid transform as a 4×4 matrix.
    pub fn camera_to_world(&self) -> Matrix4<f64> {
        let rt = self.rot.transpose();
        let c = self.center();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        m
    }
}

/// Background color used when compositing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum BackgroundPolicy {
    Fixed { rgb: [f64; 3] },
    RandomPerStep,
}

/// Scene-level sampling ranges shared by training, surface building and
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Radius of the initialization sphere.
    pub scene_extent: f64,
    pub background: BackgroundPolicy,
    /// Orbit radius as a multiple of `scene_extent`.
    pub camera_radius_factor: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub fov_deg: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            scene_extent: 1.0,
            background: BackgroundPolicy::RandomPerStep,
            camera_radius_factor: 2.5,
            elevation_min_deg: -10.0,
            elevation_max_deg: 45.0,
            fov_deg: 40.0,
            image_width: 64,
            image_height: 64,
            near: 0.01,
            far: 100.0,
        }
    }
}

impl SceneConfig {
    pub fn camera_radius(&self) -> f64 {
        self.camera_radius_factor * self.scene_extent
    }

    pub fn orbit_camera(&self, azimuth_deg: f64, elevation_deg: f64) -> Result<Camera> {
        Camera::orbit(
            azimuth_deg,
            elevation_deg,
            self.camera_radius(),
            self.fov_deg,
            self.image_width,
            self.image_height,
            self.near,
            self.far,
        )
    }

    /// Range checks; errors name the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.scene_extent > 0.0) {
            return Err(("scene_extent", "must be > 0".into()));
        }
        if !(self.elevation_min_deg > -90.0) {
            return Err(("elevation_min_deg", "must be > -90".into()));
        }
        if !(self.elevation_max_deg < 90.0) {
            return Err(("elevation_max_deg", "must be < 90".into()));
        }
        if !(self.elevation_min_deg <= self.elevation_max_deg) {
            return Err(("elevation_min_deg", "must be <= elevation_max_deg".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(("fov_deg", "must lie in (0, 180)".into()));
        }
        if !(self.camera_radius_factor > 0.0) {
            return Err(("camera_radius_factor", "must be > 0".into()));
        }
        if self.image_width == 0 {
            return Err(("image_width", "must be >= 1".into()));
        }
        if self.image_height == 0 {
            return Err(("image_height", "must be >= 1".into()));
        }
        if !(self.near > 0.0) {
            return Err(("near", "must be > 0".into()));
        }
        if !(self.far > self.near) {
            return Err(("far", "must be > near".into()));
        }
        if let BackgroundPolicy::Fixed { rgb } = self.background {
            if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(("background", "rgb components must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
