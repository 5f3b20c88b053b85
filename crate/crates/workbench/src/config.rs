//! `RunConfig`: one strict TOML file drives every pipeline stage. Every key is
//! required except `adaptation.real_fraction`; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfel_core::adaptation::AdaptationConfig;
use surfel_core::gaussian_map::ActivationConfig;
use surfel_core::prior::{PriorConfig, TrainConfig};
use surfel_core::render::RasterConfig;

use crate::bench::BenchConfig;
use crate::error::{WbResult, WorkbenchError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Where `make-bench` writes and the dataset paths below usually point.
    pub bench_dir: PathBuf,
    /// Prior-training identities, one dataset root each.
    pub corpus: Vec<PathBuf>,
    /// The subject's frames; stage 1 uses the first `adaptation.n_real`.
    pub train: PathBuf,
    pub heldout: PathBuf,
    pub uv_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorTrainingConfig {
    /// Map-space regression onto the texture-faithful template before any
    /// rendering; zero disables it.
    pub warm_start_steps: usize,
    pub warm_start_lr: f64,
    pub template_scale: f64,
    pub template_opacity: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnhancerKind {
    Identity,
    /// Ground-truth renders of the benchmark oracle (`bench_dir/oracle.mgpw`).
    Oracle,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnhancerConfig {
    pub kind: EnhancerKind,
    pub url: String,
    pub timeout_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub raster: RasterConfig,
    pub activation: ActivationConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 = all cores. `SURFEL_THREADS` overrides.
    pub threads: usize,
    pub data: DataConfig,
    pub bench: BenchConfig,
    pub prior: PriorConfig,
    pub prior_training: PriorTrainingConfig,
    pub adaptation: AdaptationConfig,
    pub enhancer: EnhancerConfig,
    pub render: RenderConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> WbResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| WorkbenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> WbResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkbenchError::MissingFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.bench_dir);
        fix(&mut self.data.train);
        fix(&mut self.data.heldout);
        self.data.corpus.iter_mut().for_each(fix);
    }

    pub fn to_toml(&self) -> WbResult<String> {
        toml::to_string(self).map_err(|e| WorkbenchError::Config(e.to_string()))
    }

    pub fn validate(&self) -> WbResult<()> {
        let cfg = |e: surfel_core::Error| WorkbenchError::Config(e.to_string());
        self.adaptation.validate().map_err(cfg)?;
        self.prior_training.train.loss.validate().map_err(cfg)?;
        self.bench.validate()?;
        if self.prior.expr_dim != self.bench.expr_dim {
            return Err(WorkbenchError::Config("prior.expr_dim must equal bench.expr_dim".into()));
        }
        if self.data.uv_size < 2 {
            return Err(WorkbenchError::Config("data.uv_size must be at least 2".into()));
        }
        if !(self.enhancer.timeout_s > 0.0) {
            return Err(WorkbenchError::Config("enhancer.timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// The synthetic-benchmark run: paths point into `bench_dir`, and the
    /// regularizer weights are scaled for metric depth at head distance.
    pub fn benchmark_default() -> Self {
        let bench = BenchConfig::default();
        let loss = surfel_core::objectives::LossWeights {
            lambda_perc: 0.2,
            lambda_d: 0.1,
            lambda_n: 0.001,
        };
        let base_adam = surfel_core::prior::AdamConfig::default();
        let bench_dir = PathBuf::from("bench");
        Self {
            seed: 7,
            output_dir: PathBuf::from("run"),
            threads: 0,
            data: DataConfig {
                corpus: (0..bench.corpus_identities).map(|k| bench_dir.join(format!("corpus/id{k}"))).collect(),
                train: bench_dir.join("train"),
                heldout: bench_dir.join("heldout"),
                bench_dir,
                uv_size: bench.uv_size,
            },
            prior: bench.prior.clone(),
            prior_training: PriorTrainingConfig {
                warm_start_steps: 300,
                warm_start_lr: 3e-3,
                template_scale: bench.template_scale,
                template_opacity: bench.template_opacity,
                init_seed: 99,
                train: TrainConfig {
                    steps: 200,
                    batch_size: 1,
                    adam: base_adam,
                    loss: loss.clone(),
                    seed: 1,
                },
            },
            adaptation: AdaptationConfig {
                stage1_steps: 500,
                stage2_steps: 800,
                base_adam,
                loss,
                ..AdaptationConfig::default()
            },
            enhancer: EnhancerConfig {
                kind: EnhancerKind::Oracle,
                url: "http://127.0.0.1:8080".into(),
                timeout_s: crate::remote::DEFAULT_TIMEOUT_S,
            },
            render: RenderConfig {
                raster: RasterConfig::default(),
                activation: ActivationConfig::default(),
            },
            bench,
        }
    }
}
