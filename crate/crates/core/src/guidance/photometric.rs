//! Mean-squared-error guidance against known target images.

use super::{Guidance, GuidanceContext, GuidanceOutput, GuidanceView, TargetScene};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// `L = mean((I − T)²)` over every view, pixel and channel, with
/// `dL/dI = 2(I − T)/count`.
#[derive(Debug, Clone)]
pub struct PhotometricGuidance {
    pub target: TargetScene,
}

impl PhotometricGuidance {
    pub fn new(target: TargetScene) -> Self {
        PhotometricGuidance { target }
    }
}

/// Loss and gradient of the mean squared error between image sets.
pub fn mse_against(images: &[&[Vec3]], targets: &[Vec<Vec3>]) -> Result<GuidanceOutput> {
    let count: usize = images.iter().map(|i| i.len() * 3).sum();
    if count == 0 {
        return Err(Error::invalid("no pixels to compare"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(images.len());
    for (img, tgt) in images.iter().zip(targets) {
        if img.len() != tgt.len() {
            return Err(Error::Shape {
                what: "target image",
                expected: img.len(),
                actual: tgt.len(),
            });
        }
        let mut g = Vec::with_capacity(img.len());
        for (a, b) in img.iter().zip(tgt) {
            let d = a - b;
            loss += d.norm_squared();
            g.push(d * (2.0 / count as f64));
        }
        grads.push(g);
    }
    Ok(GuidanceOutput {
        loss: loss / count as f64,
        grads,
    })
}

impl Guidance for PhotometricGuidance {
    fn evaluate(&mut self, views: &[GuidanceView<'_>], _ctx: &GuidanceContext) -> Result<GuidanceOutput> {
        let targets = views
            .iter()
            .map(|v| self.target.render(v.camera, v.background))
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<&[Vec3]> = views.iter().map(|v| v.image).collect();
        mse_against(&images, &targets)
    }
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`; `+∞` for identical images.
pub fn psnr(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            what: "psnr images",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / (3 * a.len()) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}
