//! Synthetic oracle benchmark: a procedural head rig, procedural identity
//! textures, and oracle avatars defined by known prior weights. Every target
//! image is a render of an oracle, so recovery is measurable exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use surfel_core::avatar::AvatarModel;
use surfel_core::gaussian_map::{io::to_bytes as gmap_bytes, ActivationConfig, GaussianMap};
use surfel_core::prior::{
    compute_geometry_stats, fit_map_targets, io::to_bytes as mgpw_bytes, predict_gaussian_map, template_targets,
    AdamConfig, GeometryStats, PriorConfig, PriorWeights, UVInputMaps,
};
use surfel_core::render::{Camera, RasterConfig};
use surfel_core::rig::{self, fixture::head_rig_with, texel_anchors, DrivingSignal, TemplateRig};
use surfel_core::Image;

use crate::dataset::{DatasetFile, FrameRecord, StatsRecord};
use crate::error::{WbResult, WorkbenchError};
use crate::fsutil::write_atomic;
use crate::imageio::write_png;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub resolution: usize,
    pub uv_size: usize,
    pub texture_size: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    /// Identities in the prior-training corpus (the test identity is extra).
    pub corpus_identities: usize,
    pub corpus_views: usize,
    pub expr_dim: usize,
    pub prior: PriorConfig,
    /// Focal length in pixels per pixel of resolution.
    pub focal_ratio: f64,
    pub camera_radius: f64,
    pub train_yaw: f64,
    pub train_pitch: f64,
    /// Held-out yaw magnitudes are drawn from `[train_yaw, heldout_yaw]`.
    pub heldout_yaw: f64,
    pub heldout_pitch: f64,
    pub expr_scale: f64,
    pub jaw_scale: f64,
    /// Std of the identity-specific perturbation of the decoder output layer.
    pub oracle_perturbation: f64,
    pub base_fit_steps: usize,
    pub base_fit_lr: f64,
    pub template_scale: f64,
    pub template_opacity: f64,
    pub background: [f64; 3],
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            uv_size: 64,
            texture_size: 128,
            n_train: 16,
            n_heldout: 8,
            corpus_identities: 4,
            corpus_views: 12,
            expr_dim: rig::DEFAULT_EXPRESSION_DIM,
            prior: PriorConfig::default(),
            focal_ratio: 1.95,
            camera_radius: 0.6,
            train_yaw: 0.3,
            train_pitch: 0.15,
            heldout_yaw: 0.8,
            heldout_pitch: 0.3,
            expr_scale: 1.0,
            jaw_scale: 0.15,
            oracle_perturbation: 0.01,
            base_fit_steps: 400,
            base_fit_lr: 3e-3,
            template_scale: -0.2,
            template_opacity: 4.0,
            background: [1.0, 1.0, 1.0],
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> WbResult<()> {
        let bad = |m: &str| Err(WorkbenchError::Config(format!("bench: {m}")));
        if self.resolution < 16 || self.uv_size < 4 || self.texture_size < 4 {
            return bad("resolution, uv_size and texture_size are too small");
        }
        if self.n_train == 0 || self.corpus_identities == 0 || self.corpus_views == 0 {
            return bad("n_train, corpus_identities and corpus_views must be positive");
        }
        if self.prior.expr_dim != self.expr_dim {
            return bad("prior.expr_dim must equal expr_dim");
        }
        if !(self.camera_radius > 0.2 && self.focal_ratio > 0.0) {
            return bad("camera_radius must exceed 0.2 and focal_ratio be positive");
        }
        Ok(())
    }

    pub fn camera(&self, yaw: f64, pitch: f64) -> Camera<f64> {
        let r = self.camera_radius;
        let eye = [r * pitch.cos() * yaw.sin(), r * pitch.sin(), r * pitch.cos() * yaw.cos()];
        Camera::look_at(
            eye,
            [0.0; 3],
            [0.0, 1.0, 0.0],
            self.resolution,
            self.resolution,
            self.focal_ratio * self.resolution as f64,
            // the clip range dataset.json implies, so stored frames reload exactly
            crate::dataset::NEAR,
            crate::dataset::FAR,
        )
    }
}

/// One rendered frame of an oracle avatar.
#[derive(Clone, Debug)]
pub struct BenchFrame {
    pub camera: Camera<f64>,
    pub driving: DrivingSignal<f64>,
    /// 8-bit quantized render.
    pub image: Image<f64>,
}

#[derive(Clone, Debug)]
pub struct Identity {
    /// 8-bit quantized UV texture.
    pub texture: Image<f64>,
    pub maps: UVInputMaps<f64>,
    pub weights: PriorWeights<f64>,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub config: BenchConfig,
    pub seed: u64,
    pub model: AvatarModel<f64>,
    pub corpus: Vec<Identity>,
    pub corpus_frames: Vec<Vec<BenchFrame>>,
    /// The identity to be reconstructed.
    pub oracle: Identity,
    /// The oracle's map under the zero driving signal.
    pub oracle_map: GaussianMap<f64>,
    pub train: Vec<BenchFrame>,
    pub heldout: Vec<BenchFrame>,
}

fn smooth(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t)
}

fn random_color(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| rng.random_range(lo[k]..=hi[k]))
}

/// Procedural UV texture laid out on the fixture rig's charts: the head chart
/// on `v ∈ [0, 0.75]` (front at `u = 0.5`) and the two eyeball charts below.
pub fn procedural_texture(rng: &mut ChaCha8Rng, size: usize) -> Image<f64> {
    let skin = random_color(rng, [0.55, 0.35, 0.25], [0.95, 0.8, 0.7]);
    let hair = random_color(rng, [0.05, 0.03, 0.02], [0.6, 0.45, 0.3]);
    let lips = random_color(rng, [0.55, 0.15, 0.15], [0.85, 0.4, 0.4]);
    let iris = random_color(rng, [0.1, 0.1, 0.05], [0.4, 0.6, 0.8]);
    let hairline = rng.random_range(0.2..0.32);
    let brow = rng.random_range(0.008..0.02);
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..10)
        .map(|_| {
            let c = [rng.random_range(0.2..0.8), rng.random_range(0.05..0.7)];
            let r = rng.random_range(0.02..0.08);
            let tint = [0, 1, 2].map(|_| rng.random_range(-0.12..0.12));
            (c, r, tint)
        })
        .collect();
    let mut img = Image::zeros(size, size, 3);
    for row in 0..size {
        for col in 0..size {
            let u = (col as f64 + 0.5) / size as f64;
            let v = (row as f64 + 0.5) / size as f64;
            let c = if v < 0.75 {
                let vh = v / 0.75;
                let du = u - 0.5;
                let mut c = skin;
                for (p, r, tint) in &blobs {
                    let d2 = (u - p[0]).powi(2) + (vh - p[1]).powi(2);
                    let w = (-d2 / (2.0 * r * r)).exp();
                    c = [0, 1, 2].map(|k| c[k] + tint[k] * w);
                }
                // brows above the eyes, lips below the nose
                let brow_w = (-((vh - 0.385).powi(2)) / (2.0 * brow * brow)).exp()
                    * smooth(0.025, 0.04, du.abs())
                    * (1.0 - smooth(0.085, 0.1, du.abs()));
                c = mix(c, hair, 0.85 * brow_w);
                let lip_w = (-((vh - 0.655).powi(2)) / (2.0 * 0.012f64.powi(2))).exp() * (1.0 - smooth(0.025, 0.04, du.abs()));
                c = mix(c, lips, lip_w);
                let scalp = 1.0 - smooth(hairline - 0.03, hairline + 0.03, vh);
                let back = smooth(0.22, 0.28, du.abs()) * (1.0 - smooth(0.75, 0.85, vh));
                mix(c, hair, scalp.max(back))
            } else if (0.8..0.98).contains(&v) {
                let lu = if u < 0.5 { (u - 0.05) / 0.4 } else { (u - 0.55) / 0.4 };
                let lv = (v - 0.8) / 0.18;
                let d = ((lu - 0.5).powi(2) + (lv - 0.5).powi(2)).sqrt();
                let white = [0.92, 0.9, 0.88];
                let c = mix(white, iris, 1.0 - smooth(0.09, 0.12, d));
                mix(c, [0.03; 3], 1.0 - smooth(0.035, 0.05, d))
            } else {
                [0.5; 3]
            };
            for k in 0..3 {
                img.set(row, col, k, c[k].clamp(0.0, 1.0));
            }
        }
    }
    img.quantized()
}

fn random_driving(
    rng: &mut ChaCha8Rng,
    expr_dim: usize,
    expr_scale: f64,
    jaw_scale: f64,
) -> DrivingSignal<f64> {
    let mut d = DrivingSignal::zeros(expr_dim);
    if expr_dim > 0 && expr_scale > 0.0 {
        let dir: Vec<f64> = (0..expr_dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let radius = expr_scale * rng.random::<f64>().powf(1.0 / expr_dim as f64);
        d.psi = dir.iter().map(|v| v / norm * radius).collect();
    }
    if jaw_scale > 0.0 {
        d.jaw[0] = rng.random_range(0.0..=jaw_scale);
    }
    for k in 0..6 {
        d.eyes[k] = rng.random_range(-0.1..0.1);
    }
    for k in 0..3 {
        d.neck[k] = rng.random_range(-0.03..0.03);
    }
    d
}

/// Adds the identity-specific perturbation to the decoder output layer.
fn perturb(base: &PriorWeights<f64>, rng: &mut ChaCha8Rng, std: f64) -> WbResult<PriorWeights<f64>> {
    let mut w = base.clone();
    for name in ["dec.out.w", "dec.out.b"] {
        let g = w
            .group_mut(name)
            .ok_or_else(|| WorkbenchError::Validation(format!("missing weight group {name}")))?;
        for v in &mut g.data {
            let n: f64 = StandardNormal.sample(rng);
            *v += std * n;
        }
    }
    // round to the persisted precision so re-rendering a stored oracle is exact
    Ok(w.cast::<f32>().cast::<f64>())
}

fn render_frame(
    model: &AvatarModel<f64>,
    id: &Identity,
    camera: Camera<f64>,
    driving: DrivingSignal<f64>,
) -> WbResult<BenchFrame> {
    let image = model.render(&id.weights, &id.maps, &driving, &camera)?.render.rgb.quantized();
    Ok(BenchFrame { camera, driving, image })
}

/// Shared texture-faithful decoder every oracle perturbs.
fn base_weights(cfg: &BenchConfig, seed: u64, maps: &[UVInputMaps<f64>], stats: &GeometryStats<f64>) -> WbResult<PriorWeights<f64>> {
    let init = PriorWeights::init(cfg.prior.clone(), seed ^ 0xba5e)?;
    let targets: Vec<Vec<f64>> = maps
        .iter()
        .map(|m| template_targets(m, cfg.template_scale, cfg.template_opacity))
        .collect();
    let adam = AdamConfig {
        lr: cfg.base_fit_lr,
        ..AdamConfig::default()
    };
    let (e, j) = (cfg.expr_scale, cfg.jaw_scale);
    let out = fit_map_targets(&init, maps, stats, &targets, cfg.base_fit_steps, adam, seed ^ 0xf17, |rng| {
        random_driving(rng, cfg.expr_dim, e, j)
    })?;
    Ok(out.weights)
}

pub fn make_synthetic_benchmark(seed: u64, cfg: &BenchConfig) -> WbResult<Benchmark> {
    cfg.validate()?;
    let rig: TemplateRig<f64> = head_rig_with(seed, cfg.expr_dim, 16, 24);
    let anchors = texel_anchors(&rig, cfg.uv_size, cfg.uv_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut identity_inputs = Vec::with_capacity(cfg.corpus_identities + 1);
    for _ in 0..=cfg.corpus_identities {
        let texture = procedural_texture(&mut rng, cfg.texture_size);
        let maps = UVInputMaps::from_rig(&rig, &anchors, &texture)?;
        identity_inputs.push((texture, maps));
    }
    let corpus_maps: Vec<&UVInputMaps<f64>> = identity_inputs[..cfg.corpus_identities].iter().map(|(_, m)| m).collect();
    let stats = compute_geometry_stats(&corpus_maps)?;
    let model = AvatarModel {
        rig,
        anchors,
        stats,
        activation: ActivationConfig::default(),
        raster: RasterConfig::default(),
        background: cfg.background,
    };
    let owned_maps: Vec<UVInputMaps<f64>> = corpus_maps.iter().map(|m| (*m).clone()).collect();
    let base = base_weights(cfg, seed, &owned_maps, &model.stats)?;

    let mut identities = Vec::with_capacity(identity_inputs.len());
    for (texture, maps) in identity_inputs {
        let weights = perturb(&base, &mut rng, cfg.oracle_perturbation)?;
        identities.push(Identity { texture, maps, weights });
    }
    let oracle = identities.pop().expect("at least one identity");

    let mut corpus_frames = Vec::with_capacity(identities.len());
    for id in &identities {
        let mut frames = Vec::with_capacity(cfg.corpus_views);
        for _ in 0..cfg.corpus_views {
            let yaw = rng.random_range(-cfg.heldout_yaw..=cfg.heldout_yaw);
            let pitch = rng.random_range(-cfg.heldout_pitch..=cfg.heldout_pitch);
            let d = random_driving(&mut rng, cfg.expr_dim, cfg.expr_scale, cfg.jaw_scale);
            frames.push(render_frame(&model, id, cfg.camera(yaw, pitch), d)?);
        }
        corpus_frames.push(frames);
    }

    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        // the first frame is frontal at rest so the enhancer reference is clean
        let (yaw, pitch, d) = if i == 0 {
            (0.0, 0.0, DrivingSignal::zeros(cfg.expr_dim))
        } else {
            (
                rng.random_range(-cfg.train_yaw..=cfg.train_yaw),
                rng.random_range(-cfg.train_pitch..=cfg.train_pitch),
                random_driving(&mut rng, cfg.expr_dim, cfg.expr_scale * 0.5, cfg.jaw_scale),
            )
        };
        train.push(render_frame(&model, &oracle, cfg.camera(yaw, pitch), d)?);
    }
    let mut heldout = Vec::with_capacity(cfg.n_heldout);
    for _ in 0..cfg.n_heldout {
        let mag = rng.random_range(cfg.train_yaw.min(cfg.heldout_yaw)..=cfg.heldout_yaw);
        let yaw = if rng.random_bool(0.5) { mag } else { -mag };
        let pitch = rng.random_range(-cfg.heldout_pitch..=cfg.heldout_pitch);
        let d = random_driving(&mut rng, cfg.expr_dim, cfg.expr_scale, cfg.jaw_scale);
        heldout.push(render_frame(&model, &oracle, cfg.camera(yaw, pitch), d)?);
    }
    let oracle_map = predict_gaussian_map(&oracle.maps, &DrivingSignal::zeros(cfg.expr_dim), &oracle.weights, &model.stats)?;
    Ok(Benchmark {
        config: cfg.clone(),
        seed,
        model,
        corpus: identities,
        corpus_frames,
        oracle,
        oracle_map,
        train,
        heldout,
    })
}

pub const RIG_OBJ: &str = "rig.obj";
pub const TEXTURE_PNG: &str = "texture.png";

fn write_identity_dataset(
    dir: &Path,
    bench: &Benchmark,
    frames: &[BenchFrame],
    texture: &Image<f64>,
    rig_rel: &str,
) -> WbResult<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    write_png(texture, &dir.join(TEXTURE_PNG))?;
    let mut records = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let rel = format!("images/{i:04}.png");
        write_png(&f.image, &dir.join(&rel))?;
        records.push(FrameRecord::new(rel, None, &f.camera, &f.driving));
    }
    let file = DatasetFile {
        frames: records,
        rig: rig_rel.to_string(),
        background: bench.model.background.to_vec(),
        texture: Some(TEXTURE_PNG.to_string()),
        geometry_stats: Some(StatsRecord::from(&bench.model.stats)),
    };
    file.save(&dir.join(crate::dataset::DATASET_JSON))
}

/// On-disk layout under `root`:
/// `rig.obj`/`rig.json`, `corpus/id{k}/`, `train/`, `heldout/` (each a
/// dataset.json root), `oracle.gmap`, `oracle.mgpw` and `bench.json`.
pub fn write_benchmark(bench: &Benchmark, root: &Path) -> WbResult<()> {
    std::fs::create_dir_all(root)?;
    write_atomic(&root.join(RIG_OBJ), rig::io::write_obj(&bench.model.rig).as_bytes())?;
    let side = serde_json::to_vec_pretty(&rig::io::sidecar(&bench.model.rig))
        .map_err(|e| WorkbenchError::Format(e.to_string()))?;
    write_atomic(&rig::io::sidecar_path(&root.join(RIG_OBJ)), &side)?;
    for (k, (id, frames)) in bench.corpus.iter().zip(&bench.corpus_frames).enumerate() {
        write_identity_dataset(&root.join(format!("corpus/id{k}")), bench, frames, &id.texture, "../../rig.obj")?;
    }
    write_identity_dataset(&root.join("train"), bench, &bench.train, &bench.oracle.texture, "../rig.obj")?;
    write_identity_dataset(&root.join("heldout"), bench, &bench.heldout, &bench.oracle.texture, "../rig.obj")?;
    write_atomic(&root.join("oracle.gmap"), &gmap_bytes(&bench.oracle_map))?;
    write_atomic(&root.join("oracle.mgpw"), &mgpw_bytes(&bench.oracle.weights))?;
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        config: &'a BenchConfig,
        corpus: Vec<String>,
    }
    let manifest = Manifest {
        seed: bench.seed,
        config: &bench.config,
        corpus: (0..bench.corpus.len()).map(|k| format!("corpus/id{k}")).collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| WorkbenchError::Format(e.to_string()))?;
    write_atomic(&root.join("bench.json"), &json)
}
