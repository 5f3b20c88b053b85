//! Two-stage test-time adaptation: fine-tune the prior on a few real frames,
//! render novel conditions, clean them with an enhancer, then fine-tune on the
//! union of real and generated supervision.

mod enhancer;

pub use enhancer::{EnhanceRequest, Enhancer, IdentityEnhancer, OracleEnhancer};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::avatar::{AvatarModel, View};
use crate::error::{contract, invalid, Error, Result};
use crate::image::Image;
use crate::linalg;
use crate::objectives::{LossWeights, PerceptualLoss};
use crate::prior::{optimize, AdamConfig, PriorWeights, TrainOutcome, UVInputMaps};
use crate::render::{Camera, RenderOutput};
use crate::rig::DrivingSignal;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    pub n_real: usize,
    pub n_gen: usize,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    /// Test-time learning rate as a fraction of the prior's base rate.
    pub lr_ratio: f64,
    pub base_adam: AdamConfig,
    pub loss: LossWeights,
    /// Probability of drawing a real item in stage 2; `None` = proportional.
    pub real_fraction: Option<f64>,
    /// Parameter-group prefixes held fixed during adaptation.
    pub freeze: Vec<String>,
    pub yaw_range: f64,
    pub pitch_range: f64,
    /// Camera distance from the head origin for novel views (meters).
    pub view_radius: f64,
    /// Radius of the expression-coefficient ball.
    pub expr_scale: f64,
    /// Bound on each jaw axis-angle component (radians).
    pub jaw_scale: f64,
    /// Parallel enhancer calls per batch.
    pub enhancer_concurrency: usize,
    pub seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            n_real: 3,
            n_gen: 24,
            stage1_steps: 300,
            stage2_steps: 300,
            lr_ratio: 0.05,
            base_adam: AdamConfig::default(),
            loss: LossWeights::default(),
            real_fraction: None,
            freeze: Vec::new(),
            yaw_range: 0.8,
            pitch_range: 0.3,
            view_radius: 0.6,
            expr_scale: 1.0,
            jaw_scale: 0.15,
            enhancer_concurrency: 1,
            seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 {
            return Err(invalid("n_real", "must be at least 1"));
        }
        if !(self.lr_ratio > 0.0 && self.lr_ratio.is_finite()) {
            return Err(invalid("lr_ratio", "must be positive"));
        }
        if let Some(f) = self.real_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("real_fraction", "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("yaw_range", self.yaw_range),
            ("pitch_range", self.pitch_range),
            ("expr_scale", self.expr_scale),
            ("jaw_scale", self.jaw_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be finite and ≥ 0"));
            }
        }
        if !(self.view_radius > 0.0) {
            return Err(invalid("view_radius", "must be positive"));
        }
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.base_adam.lr * self.lr_ratio,
            ..self.base_adam
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Real,
    Generated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisionItem<T> {
    pub image: Image<T>,
    pub camera: Camera<T>,
    pub driving: DrivingSignal<T>,
    pub mask: Option<Vec<bool>>,
    pub provenance: Provenance,
}

impl<T: Real> SupervisionItem<T> {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate(T::lit(1e-4))?;
        self.driving.validate()?;
        if !self.image.all_finite() || self.image.channels != 3 {
            return Err(contract("supervision image must be finite RGB"));
        }
        if self.image.height != self.camera.height || self.image.width != self.camera.width {
            return Err(contract("supervision image does not match its camera"));
        }
        Ok(())
    }

    fn view<'a>(&'a self, maps: &'a UVInputMaps<T>) -> View<'a, T> {
        View {
            maps,
            driving: &self.driving,
            camera: &self.camera,
            target: &self.image,
            mask: self.mask.as_deref(),
        }
    }
}

/// Stage 1: fine-tune on the real frames at `lr_ratio ×` the base rate.
pub fn adapt_stage1<T: Real>(
    model: &AvatarModel<T>,
    weights: &PriorWeights<T>,
    maps: &UVInputMaps<T>,
    real: &[SupervisionItem<T>],
    cfg: &AdaptationConfig,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if real.is_empty() {
        return Err(contract("stage 1 needs at least one real item"));
    }
    for item in real {
        item.validate()?;
    }
    optimize(
        model,
        weights,
        cfg.stage1_steps,
        1,
        cfg.adam(),
        cfg.freeze.clone(),
        &cfg.loss,
        perceptual,
        cfg.seed,
        |rng| real[rng.random_range(0..real.len())].view(maps),
    )
}

/// Seeded novel cameras on a view sphere around the head origin, with
/// expressions drawn uniformly from a ball and small random jaw poses.
pub fn sample_novel_conditions<T: Real>(
    cfg: &AdaptationConfig,
    template: &Camera<T>,
    expr_dim: usize,
    count: usize,
) -> Result<Vec<(Camera<T>, DrivingSignal<T>)>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e6f_7665_6c00);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let yaw = if cfg.yaw_range > 0.0 { rng.random_range(-cfg.yaw_range..=cfg.yaw_range) } else { 0.0 };
        let pitch = if cfg.pitch_range > 0.0 { rng.random_range(-cfg.pitch_range..=cfg.pitch_range) } else { 0.0 };
        let r = cfg.view_radius;
        let eye = [r * pitch.cos() * yaw.sin(), r * pitch.sin(), r * pitch.cos() * yaw.cos()];
        let mut cam = Camera::look_at(
            eye.map(T::lit),
            [T::zero(); 3],
            [T::zero(), T::one(), T::zero()],
            template.width,
            template.height,
            template.fx,
            template.near,
            template.far,
        );
        cam.fy = template.fy;
        cam.cx = template.cx;
        cam.cy = template.cy;
        let mut d = DrivingSignal::zeros(expr_dim);
        if expr_dim > 0 && cfg.expr_scale > 0.0 {
            let dir: Vec<f64> = (0..expr_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let radius = cfg.expr_scale * rng.random::<f64>().powf(1.0 / expr_dim as f64);
            d.psi = dir.iter().map(|v| T::lit(v / norm * radius)).collect();
        }
        if cfg.jaw_scale > 0.0 {
            // jaw opens about the x axis only
            d.jaw[0] = T::lit(rng.random_range(0.0..=cfg.jaw_scale));
        }
        out.push((cam, d));
    }
    Ok(out)
}

/// Renders each condition with the adapted prior and enhances it against the
/// reference image. Failed calls are skipped; more than half failing aborts.
pub fn generate_supervision<T: Real>(
    model: &AvatarModel<T>,
    weights: &PriorWeights<T>,
    maps: &UVInputMaps<T>,
    conditions: &[(Camera<T>, DrivingSignal<T>)],
    enhancer: &dyn Enhancer<T>,
    reference: &Image<T>,
    concurrency: usize,
) -> Result<Vec<SupervisionItem<T>>> {
    let mut renders = Vec::with_capacity(conditions.len());
    for (cam, d) in conditions {
        renders.push(model.render(weights, maps, d, cam)?.render.rgb);
    }
    let call = |i: usize| -> Result<Image<T>> {
        let (cam, d) = &conditions[i];
        let out = enhancer.enhance(&EnhanceRequest {
            degraded: &renders[i],
            reference,
            camera: cam,
            driving: d,
        })?;
        if !out.same_shape(&renders[i]) {
            return Err(Error::Enhancer(format!(
                "{} returned {}×{}×{} for a {}×{}×{} input",
                enhancer.name(),
                out.height,
                out.width,
                out.channels,
                renders[i].height,
                renders[i].width,
                renders[i].channels
            )));
        }
        if !out.all_finite() {
            return Err(Error::Enhancer(format!("{} returned non-finite pixels", enhancer.name())));
        }
        Ok(out)
    };
    let mut results: Vec<Result<Image<T>>> = Vec::with_capacity(conditions.len());
    let batch = concurrency.max(1);
    for start in (0..conditions.len()).step_by(batch) {
        let end = (start + batch).min(conditions.len());
        if end - start == 1 {
            results.push(call(start));
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = (start..end).map(|i| s.spawn(move || call(i))).collect();
            for h in handles {
                results.push(h.join().unwrap_or_else(|_| Err(Error::Enhancer("enhancer call panicked".into()))));
            }
        });
    }
    let mut items = Vec::with_capacity(conditions.len());
    let mut failures = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(image) => items.push(SupervisionItem {
                image,
                camera: conditions[i].0.clone(),
                driving: conditions[i].1.clone(),
                mask: None,
                provenance: Provenance::Generated,
            }),
            Err(e) => {
                warn!("condition {i}: enhancer failed, skipping: {e}");
                failures += 1;
            }
        }
    }
    if failures * 2 > conditions.len() {
        return Err(Error::Enhancer(format!(
            "{failures} of {} enhancer calls failed",
            conditions.len()
        )));
    }
    Ok(items)
}

/// Stage 2: continue on real ∪ generated, drawing a real item with
/// probability `n_real/(n_real+n_gen)` unless overridden.
pub fn adapt_stage2<T: Real>(
    model: &AvatarModel<T>,
    weights: &PriorWeights<T>,
    maps: &UVInputMaps<T>,
    real: &[SupervisionItem<T>],
    generated: &[SupervisionItem<T>],
    cfg: &AdaptationConfig,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if real.is_empty() && generated.is_empty() {
        return Err(contract("stage 2 needs at least one item"));
    }
    for item in real.iter().chain(generated) {
        item.validate()?;
    }
    let p_real = cfg
        .real_fraction
        .unwrap_or(real.len() as f64 / (real.len() + generated.len()) as f64);
    optimize(
        model,
        weights,
        cfg.stage2_steps,
        1,
        cfg.adam(),
        cfg.freeze.clone(),
        &cfg.loss,
        perceptual,
        cfg.seed,
        |rng| {
            let use_real = if real.is_empty() {
                false
            } else if generated.is_empty() {
                true
            } else {
                rng.random_bool(p_real)
            };
            let set = if use_real { real } else { generated };
            set[rng.random_range(0..set.len())].view(maps)
        },
    )
}

/// Feed-forward render of the adapted avatar.
pub fn animate<T: Real>(
    model: &AvatarModel<T>,
    weights: &PriorWeights<T>,
    maps: &UVInputMaps<T>,
    d: &DrivingSignal<T>,
    cam: &Camera<T>,
) -> Result<RenderOutput<T>> {
    Ok(model.render(weights, maps, d, cam)?.render)
}

/// Unit direction from the head origin to a camera; used for view statistics.
pub fn view_direction<T: Real>(cam: &Camera<T>) -> linalg::Vec3<T> {
    linalg::normalize(cam.position(), T::lit(1e-12)).unwrap_or([T::zero(), T::zero(), T::one()])
}
