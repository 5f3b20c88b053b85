//! The pipeline stages behind each CLI subcommand. Every stage reads the run
//! config, takes the output-directory lock and writes artifacts atomically.

use std::path::{Path, PathBuf};
use std::time::Duration;

use log::info;
use rand::Rng;
use serde::Serialize;
use surfel_core::adaptation::{
    self, adapt_stage1, adapt_stage2, generate_supervision, sample_novel_conditions, Enhancer, IdentityEnhancer,
    OracleEnhancer, Provenance, SupervisionItem,
};
use surfel_core::avatar::AvatarModel;
use surfel_core::gaussian_map::{decode_surfels, io::to_bytes as gmap_bytes, GaussianMap};
use surfel_core::objectives::{LossReport, SsimLoss};
use surfel_core::prior::{
    compute_geometry_stats, fit_map_targets, io::read_weights, io::to_bytes as mgpw_bytes, predict_gaussian_map,
    template_targets, train_prior as fit_prior, AdamConfig, GeometryStats, PriorWeights, TrainSample, UVInputMaps,
};
use surfel_core::rig::{DrivingSignal, TemplateRig};

use crate::bench::{make_synthetic_benchmark, write_benchmark};
use crate::config::{EnhancerKind, RunConfig};
use crate::dataset::{AvatarDataset, DatasetFile, FrameRecord, StatsRecord, DATASET_JSON};
use crate::error::{WbResult, WorkbenchError};
use crate::fsutil::{write_atomic, DirLock};
use crate::imageio::write_png;
use crate::metrics::{frame_metrics, write_csv, MetricRow};
use crate::ply::export_ply;
use crate::remote::RemoteEnhancer;

pub const PRIOR: &str = "prior.mgpw";
pub const STATS: &str = "stats.json";
pub const INIT_GMAP: &str = "init.gmap";
pub const STAGE1: &str = "stage1.mgpw";
pub const STAGE1_GMAP: &str = "stage1.gmap";
pub const STAGE2: &str = "stage2.mgpw";
pub const STAGE2_GMAP: &str = "stage2.gmap";
pub const GENERATED: &str = "generated";

fn format_err(e: serde_json::Error) -> WorkbenchError {
    WorkbenchError::Format(e.to_string())
}

fn read_mgpw(path: &Path) -> WbResult<PriorWeights<f64>> {
    let bytes = std::fs::read(path).map_err(|e| WorkbenchError::missing(path, e))?;
    Ok(read_weights::<f32, _>(&bytes[..])?.cast::<f64>())
}

fn write_mgpw(w: &PriorWeights<f64>, path: &Path) -> WbResult<()> {
    write_atomic(path, &mgpw_bytes(w))
}

fn write_gmap(m: &GaussianMap<f64>, path: &Path) -> WbResult<()> {
    write_atomic(path, &gmap_bytes(m))
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    l1: f64,
    perceptual: f64,
    depth_distortion: f64,
    normal_consistency: f64,
    total: f64,
}

fn write_loss_curve(curve: &[LossReport<f64>], path: &Path) -> WbResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (step, r) in curve.iter().enumerate() {
        w.serialize(LossRow {
            step,
            l1: r.l1,
            perceptual: r.perceptual,
            depth_distortion: r.depth_distortion,
            normal_consistency: r.normal_consistency,
            total: r.total,
        })
        .map_err(|e| WorkbenchError::Format(e.to_string()))?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| WorkbenchError::Format(e.to_string()))?)
}

fn model_for(cfg: &RunConfig, rig: TemplateRig<f64>, stats: GeometryStats<f64>, background: [f64; 3]) -> WbResult<AvatarModel<f64>> {
    let anchors = surfel_core::rig::texel_anchors(&rig, cfg.data.uv_size, cfg.data.uv_size)?;
    Ok(AvatarModel {
        rig,
        anchors,
        stats,
        activation: cfg.render.activation,
        raster: cfg.render.raster.clone(),
        background,
    })
}

fn read_stats(path: &Path) -> WbResult<GeometryStats<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| WorkbenchError::missing(path, e))?;
    let s: StatsRecord = serde_json::from_str(&text).map_err(|e| WorkbenchError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(GeometryStats::new(s.mean, s.std)?)
}

/// The subject being reconstructed: its dataset, rig, UV maps and model.
pub struct Subject {
    pub dataset: AvatarDataset,
    pub maps: UVInputMaps<f64>,
    pub model: AvatarModel<f64>,
}

impl Subject {
    /// Uses the geometry statistics the prior was trained with.
    pub fn load(cfg: &RunConfig, root: &Path) -> WbResult<Self> {
        let dataset = AvatarDataset::load(root)?;
        let rig = dataset.rig()?;
        let maps = dataset.input_maps(&rig, cfg.data.uv_size)?;
        let stats = read_stats(&cfg.output_dir.join(STATS))?;
        let model = model_for(cfg, rig, stats, dataset.background)?;
        Ok(Self { dataset, maps, model })
    }

    pub fn items(&self, count: usize, provenance: Provenance) -> WbResult<Vec<SupervisionItem<f64>>> {
        if count > self.dataset.len() {
            return Err(WorkbenchError::Validation(format!(
                "need {count} frames, dataset has {}",
                self.dataset.len()
            )));
        }
        (0..count)
            .map(|i| {
                Ok(SupervisionItem {
                    image: self.dataset.image(i)?,
                    camera: self.dataset.cameras[i].clone(),
                    driving: self.dataset.driving[i].clone(),
                    mask: self.dataset.mask(i)?,
                    provenance,
                })
            })
            .collect()
    }
}

/// Resolves a weights argument: a stage name or a path.
pub fn weights_path(cfg: &RunConfig, name: &str) -> PathBuf {
    match name {
        "prior" => cfg.output_dir.join(PRIOR),
        "stage1" => cfg.output_dir.join(STAGE1),
        "stage2" => cfg.output_dir.join(STAGE2),
        other => PathBuf::from(other),
    }
}

/// Resolves a split argument: `train`, `heldout`, or a dataset path.
pub fn split_path(cfg: &RunConfig, name: &str) -> PathBuf {
    match name {
        "train" => cfg.data.train.clone(),
        "heldout" => cfg.data.heldout.clone(),
        other => PathBuf::from(other),
    }
}

pub fn make_bench(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.data.bench_dir)?;
    let bench = make_synthetic_benchmark(cfg.seed, &cfg.bench)?;
    write_benchmark(&bench, &cfg.data.bench_dir)?;
    info!(
        "benchmark: {} corpus identities, {} train and {} held-out frames in {}",
        bench.corpus.len(),
        bench.train.len(),
        bench.heldout.len(),
        cfg.data.bench_dir.display()
    );
    Ok(())
}

pub fn train_prior(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    if cfg.data.corpus.is_empty() {
        return Err(WorkbenchError::Config("data.corpus is empty".into()));
    }
    let datasets = cfg
        .data
        .corpus
        .iter()
        .map(|p| AvatarDataset::load(p))
        .collect::<WbResult<Vec<_>>>()?;
    let rig = datasets[0].rig()?;
    let maps = datasets
        .iter()
        .map(|d| d.input_maps(&rig, cfg.data.uv_size))
        .collect::<WbResult<Vec<_>>>()?;
    let stats = compute_geometry_stats(&maps.iter().collect::<Vec<_>>())?;
    let model = model_for(cfg, rig, stats.clone(), datasets[0].background)?;
    let mut samples = Vec::new();
    for (k, d) in datasets.iter().enumerate() {
        for i in 0..d.len() {
            samples.push(TrainSample {
                identity: k,
                driving: d.driving[i].clone(),
                camera: d.cameras[i].clone(),
                target: d.image(i)?,
                mask: d.mask(i)?,
            });
        }
    }
    let pt = &cfg.prior_training;
    let mut weights = PriorWeights::init(cfg.prior.clone(), pt.init_seed)?;
    if pt.warm_start_steps > 0 {
        let targets: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| template_targets(m, pt.template_scale, pt.template_opacity))
            .collect();
        let adam = AdamConfig {
            lr: pt.warm_start_lr,
            ..pt.train.adam
        };
        let drivings: Vec<&DrivingSignal<f64>> = samples.iter().map(|s| &s.driving).collect();
        let warm = fit_map_targets(&weights, &maps, &stats, &targets, pt.warm_start_steps, adam, pt.train.seed, |rng| {
            drivings[rng.random_range(0..drivings.len())].clone()
        })?;
        info!(
            "warm start: map loss {:.6} after {} steps",
            warm.loss_curve.last().map_or(0.0, |r| r.total),
            pt.warm_start_steps
        );
        weights = warm.weights;
    }
    let out = fit_prior(&model, &weights, &maps, &samples, &pt.train, &SsimLoss)?;
    write_mgpw(&out.weights, &cfg.output_dir.join(PRIOR))?;
    write_atomic(
        &cfg.output_dir.join(STATS),
        &serde_json::to_vec_pretty(&StatsRecord::from(&stats)).map_err(format_err)?,
    )?;
    write_loss_curve(&out.loss_curve, &cfg.output_dir.join("prior_loss.csv"))
}

/// Feed-forward map of the subject from the prior, at the rest pose.
pub fn init(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &cfg.data.train)?;
    let w = read_mgpw(&cfg.output_dir.join(PRIOR))?;
    let map = predict_gaussian_map(&s.maps, &DrivingSignal::zeros(s.dataset.expr_dim()), &w, &s.model.stats)?;
    write_gmap(&map, &cfg.output_dir.join(INIT_GMAP))
}

fn rest_map(s: &Subject, w: &PriorWeights<f64>) -> WbResult<GaussianMap<f64>> {
    Ok(predict_gaussian_map(&s.maps, &DrivingSignal::zeros(s.dataset.expr_dim()), w, &s.model.stats)?)
}

pub fn adapt1(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &cfg.data.train)?;
    let w = read_mgpw(&cfg.output_dir.join(PRIOR))?;
    let real = s.items(cfg.adaptation.n_real, Provenance::Real)?;
    let out = adapt_stage1(&s.model, &w, &s.maps, &real, &cfg.adaptation, &SsimLoss)?;
    write_mgpw(&out.weights, &cfg.output_dir.join(STAGE1))?;
    write_gmap(&rest_map(&s, &out.weights)?, &cfg.output_dir.join(STAGE1_GMAP))?;
    write_loss_curve(&out.loss_curve, &cfg.output_dir.join("stage1_loss.csv"))
}

fn build_enhancer(cfg: &RunConfig, s: &Subject) -> WbResult<Box<dyn Enhancer<f64>>> {
    Ok(match cfg.enhancer.kind {
        EnhancerKind::Identity => Box::new(IdentityEnhancer),
        EnhancerKind::Remote => Box::new(RemoteEnhancer::new(&cfg.enhancer.url, Duration::from_secs_f64(cfg.enhancer.timeout_s))),
        EnhancerKind::Oracle => {
            let weights = read_mgpw(&cfg.data.bench_dir.join("oracle.mgpw"))?;
            let stats = s
                .dataset
                .stats()?
                .ok_or_else(|| WorkbenchError::Validation("oracle enhancer needs geometry_stats in the subject dataset".into()))?;
            let mut model = s.model.clone();
            model.stats = stats;
            Box::new(OracleEnhancer {
                model,
                weights,
                maps: s.maps.clone(),
            })
        }
    })
}

/// Absolute form of a dataset-relative path, for datasets written elsewhere.
fn absolute(root: &Path, rel: &str) -> WbResult<String> {
    let p = root.join(rel);
    Ok(std::fs::canonicalize(&p)
        .map_err(|e| WorkbenchError::missing(&p, e))?
        .to_string_lossy()
        .into_owned())
}

pub fn gen_supervision(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &cfg.data.train)?;
    let w = read_mgpw(&cfg.output_dir.join(STAGE1))?;
    let conditions = sample_novel_conditions(
        &cfg.adaptation,
        &s.dataset.cameras[0],
        s.dataset.expr_dim(),
        cfg.adaptation.n_gen,
    )?;
    let enhancer = build_enhancer(cfg, &s)?;
    let reference = s.dataset.image(0)?;
    let items = generate_supervision(
        &s.model,
        &w,
        &s.maps,
        &conditions,
        enhancer.as_ref(),
        &reference,
        cfg.adaptation.enhancer_concurrency,
    )?;
    let dir = cfg.output_dir.join(GENERATED);
    std::fs::create_dir_all(dir.join("images"))?;
    let mut frames = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let rel = format!("images/{i:04}.png");
        write_png(&item.image, &dir.join(&rel))?;
        frames.push(FrameRecord::new(rel, None, &item.camera, &item.driving));
    }
    let file = DatasetFile {
        frames,
        rig: absolute(&s.dataset.root, &s.dataset.file.rig)?,
        background: s.dataset.file.background.clone(),
        texture: s.dataset.file.texture.as_deref().map(|t| absolute(&s.dataset.root, t)).transpose()?,
        geometry_stats: s.dataset.file.geometry_stats.clone(),
    };
    info!("generated {} of {} supervision items with {}", items.len(), conditions.len(), enhancer.name());
    file.save(&dir.join(DATASET_JSON))
}

pub fn adapt2(cfg: &RunConfig) -> WbResult<()> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &cfg.data.train)?;
    let w = read_mgpw(&cfg.output_dir.join(STAGE1))?;
    let real = s.items(cfg.adaptation.n_real, Provenance::Real)?;
    let generated = if cfg.adaptation.n_gen == 0 {
        Vec::new()
    } else {
        let g = AvatarDataset::load(&cfg.output_dir.join(GENERATED))?;
        (0..g.len())
            .map(|i| {
                Ok(SupervisionItem {
                    image: g.image(i)?,
                    camera: g.cameras[i].clone(),
                    driving: g.driving[i].clone(),
                    mask: None,
                    provenance: Provenance::Generated,
                })
            })
            .collect::<WbResult<Vec<_>>>()?
    };
    let out = adapt_stage2(&s.model, &w, &s.maps, &real, &generated, &cfg.adaptation, &SsimLoss)?;
    write_mgpw(&out.weights, &cfg.output_dir.join(STAGE2))?;
    write_gmap(&rest_map(&s, &out.weights)?, &cfg.output_dir.join(STAGE2_GMAP))?;
    write_loss_curve(&out.loss_curve, &cfg.output_dir.join("stage2_loss.csv"))
}

fn stem(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned())
}

/// Renders every frame of `split` with `weights` into `renders/<weights>_<split>/`.
pub fn render(cfg: &RunConfig, weights: &str, split: &str) -> WbResult<PathBuf> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &split_path(cfg, split))?;
    let w = read_mgpw(&weights_path(cfg, weights))?;
    let dir = cfg.output_dir.join("renders").join(format!("{}_{}", stem(weights), stem(split)));
    for i in 0..s.dataset.len() {
        let out = adaptation::animate(&s.model, &w, &s.maps, &s.dataset.driving[i], &s.dataset.cameras[i])?;
        write_png(&out.rgb, &dir.join(format!("{i:04}.png")))?;
    }
    Ok(dir)
}

/// Drives the avatar with every frame's signal of `split` seen from the
/// camera of frame `camera`.
pub fn animate(cfg: &RunConfig, weights: &str, split: &str, camera: usize) -> WbResult<PathBuf> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &split_path(cfg, split))?;
    let w = read_mgpw(&weights_path(cfg, weights))?;
    let cam = s
        .dataset
        .cameras
        .get(camera)
        .ok_or_else(|| WorkbenchError::Validation(format!("no camera {camera} in {split}")))?;
    let dir = cfg.output_dir.join("animation").join(stem(weights));
    for (i, d) in s.dataset.driving.iter().enumerate() {
        let out = adaptation::animate(&s.model, &w, &s.maps, d, cam)?;
        write_png(&out.rgb, &dir.join(format!("{i:04}.png")))?;
    }
    Ok(dir)
}

pub fn eval_path(cfg: &RunConfig, weights: &str, split: &str) -> PathBuf {
    cfg.output_dir.join(format!("eval_{}_{}.csv", stem(weights), stem(split)))
}

/// Metrics of `weights` on the first `limit` frames of `split` (all if `None`).
pub fn eval(cfg: &RunConfig, weights: &str, split: &str, limit: Option<usize>) -> WbResult<Vec<MetricRow>> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &split_path(cfg, split))?;
    let w = read_mgpw(&weights_path(cfg, weights))?;
    let n = limit.map_or(s.dataset.len(), |l| l.min(s.dataset.len()));
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let out = adaptation::animate(&s.model, &w, &s.maps, &s.dataset.driving[i], &s.dataset.cameras[i])?;
        rows.push(frame_metrics(s.dataset.file.frames[i].image.clone(), &out.rgb, &s.dataset.image(i)?)?);
    }
    write_csv(&rows, &eval_path(cfg, weights, split))?;
    Ok(rows)
}

/// World-space surfels of `frame` (rest pose when `None`) as PLY.
pub fn export(cfg: &RunConfig, weights: &str, frame: Option<usize>, path: Option<&Path>) -> WbResult<PathBuf> {
    let _lock = DirLock::acquire(&cfg.output_dir)?;
    let s = Subject::load(cfg, &cfg.data.train)?;
    let w = read_mgpw(&weights_path(cfg, weights))?;
    let d = match frame {
        Some(i) => s
            .dataset
            .driving
            .get(i)
            .cloned()
            .ok_or_else(|| WorkbenchError::Validation(format!("no frame {i}")))?,
        None => DrivingSignal::zeros(s.dataset.expr_dim()),
    };
    let map = predict_gaussian_map(&s.maps, &d, &w, &s.model.stats)?;
    let surfels = decode_surfels(&map, &s.model.frames(&d)?, &s.model.activation)?;
    let out = path.map_or_else(|| cfg.output_dir.join(format!("{}.ply", stem(weights))), Path::to_path_buf);
    export_ply(&surfels, &out)?;
    Ok(out)
}
