use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, PriorWeights, UVInputMaps};
use crate::avatar::{AvatarModel, View};
use crate::error::{contract, Error, Result};
use crate::image::Image;
use crate::objectives::{LossReport, LossWeights, PerceptualLoss};
use crate::render::Camera;
use crate::rig::DrivingSignal;
use crate::scalar::Real;

/// One (identity, frame, view) training sample.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    /// Index into the identity map list passed alongside.
    pub identity: usize,
    pub driving: DrivingSignal<T>,
    pub camera: Camera<T>,
    pub target: Image<T>,
    pub mask: Option<Vec<bool>>,
}

impl<T: Real> TrainSample<T> {
    pub fn view<'a>(&'a self, maps: &'a [UVInputMaps<T>]) -> View<'a, T> {
        View {
            maps: &maps[self.identity],
            driving: &self.driving,
            camera: &self.camera,
            target: &self.target,
            mask: self.mask.as_deref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Views averaged per optimizer step.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 1,
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub weights: PriorWeights<T>,
    /// Mean batch loss per step, before that step's update.
    pub loss_curve: Vec<LossReport<T>>,
}

/// Generic Adam loop: `draw` picks the views of each step from the seeded RNG.
#[allow(clippy::too_many_arguments)]
pub fn optimize<'a, T: Real, F>(
    model: &AvatarModel<T>,
    init: &PriorWeights<T>,
    steps: usize,
    batch_size: usize,
    adam: AdamConfig,
    frozen: Vec<String>,
    loss: &LossWeights,
    perceptual: &dyn PerceptualLoss<T>,
    seed: u64,
    mut draw: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&mut ChaCha8Rng) -> View<'a, T>,
    T: 'a,
{
    if batch_size == 0 {
        return Err(contract("batch size must be positive"));
    }
    loss.validate()?;
    let mut weights = init.clone();
    let mut optimizer = Adam::new(adam, &weights).with_frozen(frozen);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(steps);
    let inv = T::one() / T::from_usize_exact(batch_size);
    for step in 0..steps {
        let mut total: Option<PriorWeights<T>> = None;
        let mut report = LossReport {
            l1: T::zero(),
            perceptual: T::zero(),
            depth_distortion: T::zero(),
            normal_consistency: T::zero(),
            total: T::zero(),
        };
        for _ in 0..batch_size {
            let view = draw(&mut rng);
            let (r, g) = model.loss_and_grad(&weights, &view, loss, perceptual)?;
            if !r.total.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("loss {r:?}"),
                });
            }
            report.l1 += r.l1 * inv;
            report.perceptual += r.perceptual * inv;
            report.depth_distortion += r.depth_distortion * inv;
            report.normal_consistency += r.normal_consistency * inv;
            report.total += r.total * inv;
            match total.as_mut() {
                None => total = Some(g),
                Some(t) => t.add_assign(&g)?,
            }
        }
        let mut g = total.expect("batch is nonempty");
        if batch_size > 1 {
            g.scale(inv);
        }
        optimizer.step(&mut weights, &g).map_err(|e| match e {
            Error::NonFinite { detail, .. } => Error::NonFinite { step, detail },
            other => other,
        })?;
        if step % 100 == 0 {
            debug!("step {step}: loss {:.6}", report.total.to_f64_lossy());
        }
        curve.push(report);
    }
    Ok(TrainOutcome {
        weights,
        loss_curve: curve,
    })
}

/// Fits the prior on samples drawn uniformly over (identity, frame, view).
pub fn train_prior<T: Real>(
    model: &AvatarModel<T>,
    init: &PriorWeights<T>,
    maps: &[UVInputMaps<T>],
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    perceptual: &dyn PerceptualLoss<T>,
) -> Result<TrainOutcome<T>> {
    if samples.is_empty() {
        return Err(contract("training set is empty"));
    }
    if let Some(s) = samples.iter().find(|s| s.identity >= maps.len()) {
        return Err(contract(format!("sample refers to missing identity {}", s.identity)));
    }
    optimize(
        model,
        init,
        cfg.steps,
        cfg.batch_size,
        cfg.adam,
        Vec::new(),
        &cfg.loss,
        perceptual,
        cfg.seed,
        |rng| samples[rng.random_range(0..samples.len())].view(maps),
    )
}

/// Raw map a texture-faithful decoder should emit: colors reproduce the input
/// texture, disks are opaque, unrotated, texel-sized and sit on their anchors.
pub fn template_targets<T: Real>(maps: &UVInputMaps<T>, scale_raw: f64, opacity_raw: f64) -> Vec<T> {
    use crate::gaussian_map::{CHANNELS, COLOR, OPACITY, ROTATION, SCALE};
    let n = maps.height * maps.width;
    let mut out = vec![T::zero(); n * CHANNELS];
    for i in 0..n {
        if !maps.mask[i] {
            continue;
        }
        let t = &mut out[i * CHANNELS..(i + 1) * CHANNELS];
        for k in 0..3 {
            let c = maps.tex[i * 3 + k].to_f64_lossy().clamp(0.02, 0.98);
            t[COLOR + k] = T::lit((c / (1.0 - c)).ln());
        }
        t[ROTATION] = T::one();
        t[SCALE] = T::lit(scale_raw);
        t[SCALE + 1] = T::lit(scale_raw);
        t[OPACITY] = T::lit(opacity_raw);
    }
    out
}

/// Map-space regression: mean squared error between the predicted raw map and
/// `targets[identity]` over valid texels, under driving signals drawn by `driving`.
/// Cheap (no rendering); used to warm-start decoders.
#[allow(clippy::too_many_arguments)]
pub fn fit_map_targets<T: Real, F>(
    init: &PriorWeights<T>,
    maps: &[UVInputMaps<T>],
    stats: &super::GeometryStats<T>,
    targets: &[Vec<T>],
    steps: usize,
    adam: AdamConfig,
    seed: u64,
    mut driving: F,
) -> Result<TrainOutcome<T>>
where
    F: FnMut(&mut ChaCha8Rng) -> DrivingSignal<T>,
{
    use crate::gaussian_map::CHANNELS;
    if maps.is_empty() || maps.len() != targets.len() {
        return Err(contract("need one target map per identity"));
    }
    let mut weights = init.clone();
    let mut optimizer = Adam::new(adam, &weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curve = Vec::with_capacity(steps);
    for step in 0..steps {
        let id = rng.random_range(0..maps.len());
        let d = driving(&mut rng);
        let (map, cache) = super::predict_with_cache(&maps[id], &d, &weights, stats)?;
        let target = &targets[id];
        if target.len() != map.raw.len() {
            return Err(contract("target map size does not match the UV layout"));
        }
        let valid = map.valid_count().max(1);
        let inv = T::one() / T::from_usize_exact(valid * CHANNELS);
        let mut loss = T::zero();
        let mut g = vec![T::zero(); map.raw.len()];
        for (i, &m) in map.mask.iter().enumerate() {
            if !m {
                continue;
            }
            for c in i * CHANNELS..(i + 1) * CHANNELS {
                let r = map.raw[c] - target[c];
                loss += r * r * inv;
                g[c] = T::lit(2.0) * r * inv;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "map regression loss".into(),
            });
        }
        let grads = super::predict_backward(&cache, &weights, &g)?;
        optimizer.step(&mut weights, &grads)?;
        curve.push(LossReport {
            l1: loss,
            perceptual: T::zero(),
            depth_distortion: T::zero(),
            normal_consistency: T::zero(),
            total: loss,
        });
    }
    Ok(TrainOutcome {
        weights,
        loss_curve: curve,
    })
}
