//! Ground-truth images for photometric guidance: ray-traced analytic shapes
//! with procedural albedo, or a reference splat cloud.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::render;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Axis along world z.
    Torus { major: f64, minor: f64 },
}

impl Shape {
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents: h } => Vec3::from(h).norm(),
            Shape::Torus { major, minor } => major + minor,
        }
    }

    fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents: h } => {
                let q = p.abs() - Vec3::from(h);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Shape::Torus { major, minor } => {
                let a = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (a * a + p[2] * p[2]).sqrt() - minor
            }
        }
    }

    /// First hit distance along `o + t·d` (`d` unit), if any.
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => {
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t > 0.0).then_some(t)
            }
            Shape::Box { half_extents: h } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let inv = 1.0 / d[k];
                    let (a, b) = ((-h[k] - o[k]) * inv, (h[k] - o[k]) * inv);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 <= t1 && t0 > 0.0).then_some(t0)
            }
            Shape::Torus { .. } => {
                // Sphere tracing from the bounding sphere entry.
                let r = self.bounding_radius();
                let b = o.dot(d);
                let disc = b * b - (o.norm_squared() - r * r);
                if disc < 0.0 {
                    return None;
                }
                let (mut t, t_end) = ((-b - disc.sqrt()).max(0.0), -b + disc.sqrt());
                for _ in 0..512 {
                    let dist = self.sdf(&(o + d * t));
                    if dist < 1e-7 {
                        return Some(t);
                    }
                    t += dist;
                    if t > t_end {
                        return None;
                    }
                }
                None
            }
        }
    }
}

/// Smooth procedural albedo `0.5 + a·(sin, sin, cos)` of the object-space point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Texture {
    pub frequency: f64,
    pub amplitude: f64,
}

impl Default for Texture {
    fn default() -> Self {
        Texture {
            frequency: 3.0,
            amplitude: 0.4,
        }
    }
}

impl Texture {
    pub fn albedo(&self, p: &Vec3) -> Vec3 {
        let f = self.frequency;
        let a = self.amplitude;
        Vec3::new(
            0.5 + a * (f * p[0] + 0.3).sin(),
            0.5 + a * (f * p[1] + 1.1).sin(),
            0.5 + a * (f * p[2] - 0.7).cos(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticScene {
    pub shape: Shape,
    #[serde(default)]
    pub center: [f64; 3],
    #[serde(default)]
    pub texture: Texture,
    /// Samples per pixel along each axis.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
}

fn default_supersample() -> usize {
    3
}

impl AnalyticScene {
    pub fn textured_sphere(radius: f64) -> Self {
        AnalyticScene {
            shape: Shape::Sphere { radius },
            center: [0.0; 3],
            texture: Texture::default(),
            supersample: default_supersample(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let ok = match self.shape {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            Shape::Torus { major, minor } => major > 0.0 && minor > 0.0 && minor < major,
        };
        if !ok {
            return Err(("shape", "dimensions must be positive (torus: minor < major)".into()));
        }
        if self.supersample == 0 {
            return Err(("supersample", "must be >= 1".into()));
        }
        Ok(())
    }

    /// Ray-traced image over `background`; pixels average `supersample²`
    /// stratified rays.
    pub fn render(&self, camera: &Camera, background: Vec3) -> Result<Vec<Vec3>> {
        let c = Vec3::from(self.center);
        let o = camera.center() - c;
        if o.norm() <= self.shape.bounding_radius() {
            return Err(Error::Guidance(format!(
                "camera at distance {:.4} lies inside the target's bounding sphere (radius {:.4})",
                o.norm(),
                self.shape.bounding_radius()
            )));
        }
        let rt = camera.rot.transpose();
        let ss = self.supersample;
        let w = camera.width;
        Ok((0..camera.pixel_count())
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w) as f64, (i / w) as f64);
                let mut acc = Vec3::zeros();
                for sy in 0..ss {
                    for sx in 0..ss {
                        let px = u + (sx as f64 + 0.5) / ss as f64;
                        let py = v + (sy as f64 + 0.5) / ss as f64;
                        let dir = rt * Vec3::new((px - camera.cx) / camera.fx, (py - camera.cy) / camera.fy, 1.0);
                        let dir = dir.normalize();
                        acc += match self.shape.intersect(&o, &dir) {
                            Some(t) => self.texture.albedo(&(o + dir * t)),
                            None => background,
                        };
                    }
                }
                acc / (ss * ss) as f64
            })
            .collect())
    }
}

/// What the photometric oracle compares against.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetScene {
    Analytic(AnalyticScene),
    /// A reference cloud rendered with the same rasterizer.
    Cloud(GaussianCloud),
}

impl TargetScene {
    pub fn render(&self, camera: &Camera, background: Vec3) -> Result<Vec<Vec3>> {
        match self {
            TargetScene::Analytic(s) => s.render(camera, background),
            TargetScene::Cloud(c) => Ok(render(c, camera, background)?.color),
        }
    }
}
