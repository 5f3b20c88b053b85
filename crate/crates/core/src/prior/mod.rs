//! FiLM-conditioned per-texel decoder from UV input maps and a driving signal
//! to the raw Gaussian map.
//!
//! The driving signal is split into its six groups, each projected to a small
//! latent through `tanh`, and the concatenated latents are mapped linearly to
//! the embedding `e`. Every hidden layer of the texel MLP is modulated by
//! `γ_l(e) ⊙ a + β_l(e)` before its SiLU.

mod adam;
mod decoder;
pub mod io;
mod maps;
mod train;

pub use adam::{Adam, AdamConfig};
pub use decoder::{
    decode_texels, encode_driving, encode_driving_backward, film_modulate, predict_backward, predict_backward_into,
    predict_gaussian_map, predict_with_cache, texel_inputs, Embedding, PredictCache,
};
pub use maps::{compute_geometry_stats, GeometryStats, UVInputMaps};
pub use train::{fit_map_targets, optimize, template_targets, train_prior, TrainConfig, TrainOutcome, TrainSample};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::gaussian_map::{CHANNELS, OPACITY, ROTATION};
use crate::rig::DEFAULT_EXPRESSION_DIM;
use crate::scalar::Real;

/// Texel input width: texture (3) + standardized geometry (3) + uv (2).
pub const INPUT_DIM: usize = 8;
pub const GROUP_NAMES: [&str; 6] = ["psi", "jaw", "eyes", "neck", "glob", "t"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub expr_dim: usize,
    pub group_latent: usize,
    pub embed_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            expr_dim: DEFAULT_EXPRESSION_DIM,
            group_latent: 16,
            embed_dim: 128,
            hidden_width: 64,
            hidden_layers: 3,
        }
    }
}

impl PriorConfig {
    pub fn group_dims(&self) -> [usize; 6] {
        [self.expr_dim, 3, 6, 3, 3, 3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_latent == 0 || self.embed_dim == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(contract("prior layer sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    pub name: String,
    /// Row-major; matrices are `[out, in]`.
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct HiddenLayer {
    pub dense: Linear,
    pub gamma: Linear,
    pub beta: Linear,
}

/// Group indices of each layer, derived from the config.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub encoders: [Linear; 6],
    pub aggregate: Linear,
    pub hidden: Vec<HiddenLayer>,
    pub output: Linear,
}

impl Layout {
    fn new(cfg: &PriorConfig) -> Self {
        let mut next = 0;
        let mut linear = || {
            let l = Linear { w: next, b: next + 1 };
            next += 2;
            l
        };
        let encoders = [(); 6].map(|_| linear());
        let aggregate = linear();
        let hidden = (0..cfg.hidden_layers)
            .map(|_| HiddenLayer {
                dense: linear(),
                gamma: linear(),
                beta: linear(),
            })
            .collect();
        let output = linear();
        Self {
            encoders,
            aggregate,
            hidden,
            output,
        }
    }
}

/// Weights of the driving encoder and texel decoder, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorWeights<T> {
    pub config: PriorConfig,
    pub groups: Vec<ParamGroup<T>>,
    pub(crate) layout: Layout,
}

fn group_shapes(cfg: &PriorConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut linear = |name: String, rows: usize, cols: usize| {
        out.push((format!("{name}.w"), vec![rows, cols]));
        out.push((format!("{name}.b"), vec![rows]));
    };
    for (name, dim) in GROUP_NAMES.iter().zip(cfg.group_dims()) {
        linear(format!("enc.{name}"), cfg.group_latent, dim);
    }
    linear("enc.agg".into(), cfg.embed_dim, 6 * cfg.group_latent);
    for l in 0..cfg.hidden_layers {
        let fan_in = if l == 0 { INPUT_DIM } else { cfg.hidden_width };
        linear(format!("dec.{l}"), cfg.hidden_width, fan_in);
        linear(format!("film.{l}.gamma"), cfg.hidden_width, cfg.embed_dim);
        linear(format!("film.{l}.beta"), cfg.hidden_width, cfg.embed_dim);
    }
    linear("dec.out".into(), CHANNELS, cfg.hidden_width);
    out
}

impl<T: Real> PriorWeights<T> {
    /// All-zero weights with the layout of `config`.
    pub fn zeros(config: PriorConfig) -> Result<Self> {
        config.validate()?;
        let groups = group_shapes(&config)
            .into_iter()
            .map(|(name, shape)| ParamGroup {
                data: vec![T::zero(); shape.iter().product()],
                name,
                shape,
            })
            .collect();
        let layout = Layout::new(&config);
        Ok(Self { config, groups, layout })
    }

    /// Seeded initialization: scaled Gaussian weights, FiLM at identity
    /// modulation plus small noise, output biased toward opaque identity-rotated
    /// surfels.
    pub fn init(config: PriorConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0f64, 1.0).expect("unit normal");
        let layout = w.layout.clone();
        let mut fill = |g: &mut ParamGroup<T>, gain: f64| {
            let fan_in = g.shape[1] as f64;
            let s = gain / fan_in.sqrt();
            for v in &mut g.data {
                *v = T::lit(std_normal.sample(&mut rng) * s);
            }
        };
        for e in layout.encoders {
            fill(&mut w.groups[e.w], 1.0);
        }
        fill(&mut w.groups[layout.aggregate.w], 1.0);
        for h in &layout.hidden {
            fill(&mut w.groups[h.dense.w], 1.6);
            fill(&mut w.groups[h.gamma.w], 0.1);
            fill(&mut w.groups[h.beta.w], 0.1);
            w.groups[h.gamma.b].data.fill(T::one());
        }
        fill(&mut w.groups[layout.output.w], 0.1);
        let out_b = &mut w.groups[layout.output.b].data;
        out_b[ROTATION] = T::one();
        out_b[OPACITY] = T::lit(2.0);
        Ok(w)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for g in &mut z.groups {
            g.data.fill(T::zero());
        }
        z
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.data.len()).sum()
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup<T>> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn group_mut(&mut self, name: &str) -> Option<&mut ParamGroup<T>> {
        self.groups.iter_mut().find(|g| g.name == name)
    }

    pub(crate) fn data(&self, idx: usize) -> &[T] {
        &self.groups[idx].data
    }

    pub(crate) fn data_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.groups[idx].data
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.ensure_same_layout(other)?;
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.groups {
            for x in &mut g.data {
                *x *= s;
            }
        }
    }

    pub fn ensure_same_layout(&self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(contract("prior weights have different configs"));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.groups.iter().all(|g| g.data.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.groups
            .iter()
            .zip(&other.groups)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (*x - *y).abs()))
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> PriorWeights<U> {
        PriorWeights {
            config: self.config.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    shape: g.shape.clone(),
                    data: g.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    /// Rebuilds weights from named groups, checking names and shapes.
    pub fn from_groups(config: PriorConfig, groups: Vec<ParamGroup<T>>) -> Result<Self> {
        let expected = Self::zeros(config)?;
        if groups.len() != expected.groups.len() {
            return Err(contract(format!(
                "expected {} parameter groups, found {}",
                expected.groups.len(),
                groups.len()
            )));
        }
        for (g, e) in groups.iter().zip(&expected.groups) {
            if g.name != e.name || g.shape != e.shape || g.data.len() != e.data.len() {
                return Err(contract(format!("parameter group {} does not match {}", g.name, e.name)));
            }
        }
        Ok(Self {
            groups,
            ..expected
        })
    }
}
