//! Composite reconstruction objective: L1 + perceptual + depth distortion +
//! normal consistency, with gradients with respect to the render.

mod ssim;

pub use ssim::{ssim, ssim_with_grad};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::render::{depth_distortion_image, normal_consistency, Camera, RenderGrads, RenderOutput};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_perc: f64,
    pub lambda_d: f64,
    pub lambda_n: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_perc: 0.2,
            lambda_d: 100.0,
            lambda_n: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_perc", self.lambda_perc),
            ("lambda_d", self.lambda_d),
            ("lambda_n", self.lambda_n),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and ≥ 0"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub l1: T,
    pub perceptual: T,
    pub depth_distortion: T,
    pub normal_consistency: T,
    pub total: T,
}

fn check_mask<T: Real>(pred: &Image<T>, mask: Option<&[bool]>) -> Result<()> {
    if let Some(m) = mask {
        if m.len() != pred.height * pred.width {
            return Err(invalid("mask", "does not match the image size"));
        }
    }
    Ok(())
}

/// Mean absolute error over the (masked) pixels and all channels.
pub fn l1_loss<T: Real>(pred: &Image<T>, target: &Image<T>, mask: Option<&[bool]>) -> Result<(T, Image<T>)> {
    pred.ensure_same_shape(target, "L1 operands")?;
    check_mask(pred, mask)?;
    let c = pred.channels;
    let keep = |p: usize| mask.is_none_or(|m| m[p]);
    let pixels = (0..pred.height * pred.width).filter(|&p| keep(p)).count();
    let mut grad = Image::zeros(pred.height, pred.width, c);
    if pixels == 0 {
        return Ok((T::zero(), grad));
    }
    let inv = T::one() / T::from_usize_exact(pixels * c);
    let mut loss = T::zero();
    for p in (0..pred.height * pred.width).filter(|&p| keep(p)) {
        for k in p * c..(p + 1) * c {
            let d = pred.data[k] - target.data[k];
            loss += d.abs();
            grad.data[k] = if d > T::zero() {
                inv
            } else if d < T::zero() {
                -inv
            } else {
                T::zero()
            };
        }
    }
    Ok((loss * inv, grad))
}

/// Pluggable perceptual term: value and gradient with respect to `pred`.
pub trait PerceptualLoss<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, pred: &Image<T>, target: &Image<T>) -> Result<(T, Image<T>)>;
}

/// `1 − SSIM` with an 11×11 Gaussian window (σ = 1.5).
#[derive(Clone, Copy, Debug, Default)]
pub struct SsimLoss;

impl<T: Real> PerceptualLoss<T> for SsimLoss {
    fn name(&self) -> &str {
        "ssim"
    }

    fn evaluate(&self, pred: &Image<T>, target: &Image<T>) -> Result<(T, Image<T>)> {
        let (s, g) = ssim_with_grad(pred, target, true)?;
        let mut g = g.expect("gradient requested");
        for v in &mut g.data {
            *v = -*v;
        }
        Ok((T::one() - s, g))
    }
}

/// Evaluates every term on one render and returns the upstream gradients for
/// the rasterizer backward pass.
pub fn total_loss<T: Real>(
    render: &RenderOutput<T>,
    cam: &Camera<T>,
    target: &Image<T>,
    mask: Option<&[bool]>,
    weights: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<(LossReport<T>, RenderGrads<T>)> {
    weights.validate()?;
    let (h, w) = (render.height(), render.width());
    let mut grads = RenderGrads::zeros(h, w);
    let (l1, g_l1) = l1_loss(&render.rgb, target, mask)?;
    grads.rgb = g_l1;
    let lp = T::lit(weights.lambda_perc);
    let perc = if weights.lambda_perc > 0.0 {
        let (v, g) = perceptual.evaluate(&render.rgb, target)?;
        for (d, s) in grads.rgb.data.iter_mut().zip(&g.data) {
            *d += lp * *s;
        }
        v
    } else {
        T::zero()
    };
    let ld = T::lit(weights.lambda_d);
    let dd = depth_distortion_image(render);
    if weights.lambda_d > 0.0 {
        grads.distortion = dd.pixel_weights.iter().map(|v| *v * ld).collect();
    }
    let ln = T::lit(weights.lambda_n);
    let nc = normal_consistency(render, cam);
    if weights.lambda_n > 0.0 {
        grads.consistency = nc.targets.iter().map(|(wt, n)| (*wt * ln, *n)).collect();
        for (d, g) in grads.depth.data.iter_mut().zip(&nc.depth_grad.data) {
            *d += ln * *g;
        }
    }
    let report = LossReport {
        l1,
        perceptual: perc,
        depth_distortion: dd.loss,
        normal_consistency: nc.loss,
        total: l1 + lp * perc + ld * dd.loss + ln * nc.loss,
    };
    Ok((report, grads))
}
