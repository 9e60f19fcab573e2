//! Image-space guidance: a contract between the trainer and whatever scores
//! the rendered views, with a photometric oracle and a remote client.

pub mod photometric;
pub mod protocol;
pub mod remote;
pub mod target;

use crate::camera::Camera;
use crate::error::Result;
use crate::math::Vec3;

pub use photometric::{psnr, PhotometricGuidance};
pub use remote::RemoteGuidance;
pub use target::{AnalyticScene, Shape, TargetScene, Texture};

/// One rendered view handed to guidance.
#[derive(Debug, Clone, Copy)]
pub struct GuidanceView<'a> {
    pub camera: &'a Camera,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    /// Row-major `height × width` RGB.
    pub image: &'a [Vec3],
    /// Background the image was composited over.
    pub background: Vec3,
}

/// Opaque conditioning passed through to guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceContext {
    pub prompt: String,
    pub negative_prompt: String,
    pub guidance_scale: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Per-request seed; the trainer derives it from the run seed and step.
    pub seed: u64,
}

impl Default for GuidanceContext {
    fn default() -> Self {
        GuidanceContext {
            prompt: String::new(),
            negative_prompt: String::new(),
            guidance_scale: 50.0,
            t_min: 0.02,
            t_max: 0.98,
            seed: 0,
        }
    }
}

/// Scalar guidance loss and its gradient with respect to every view's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceOutput {
    pub loss: f64,
    pub grads: Vec<Vec<Vec3>>,
}

pub trait Guidance: Send {
    fn evaluate(&mut self, views: &[GuidanceView<'_>], ctx: &GuidanceContext) -> Result<GuidanceOutput>;
}

impl<G: Guidance + ?Sized> Guidance for Box<G> {
    fn evaluate(&mut self, views: &[GuidanceView<'_>], ctx: &GuidanceContext) -> Result<GuidanceOutput> {
        (**self).evaluate(views, ctx)
    }
}
