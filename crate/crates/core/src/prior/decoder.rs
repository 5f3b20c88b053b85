use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use super::{GeometryStats, PriorWeights, UVInputMaps, INPUT_DIM};
use crate::error::{contract, Result};
use crate::gaussian_map::{GaussianMap, CHANNELS};
use crate::rig::{texel_center, DrivingSignal};
use crate::scalar::{sigmoid, Real};

/// Texels per work unit; fixed so reductions are independent of thread count.
const CHUNK: usize = 256;

fn mat<T>(data: &[T], rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), data).expect("parameter shape")
}

fn add_outer<T: Real>(dst: &mut [T], a: &[T], b: &[T]) {
    for (i, &ai) in a.iter().enumerate() {
        if ai == T::zero() {
            continue;
        }
        for (d, &bj) in dst[i * b.len()..(i + 1) * b.len()].iter_mut().zip(b) {
            *d += ai * bj;
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    pub value: Vec<T>,
    /// Concatenated group latents after `tanh`.
    latents: Vec<T>,
    /// Raw driving vector in group order.
    inputs: Vec<T>,
}

pub fn encode_driving<T: Real>(d: &DrivingSignal<T>, w: &PriorWeights<T>) -> Result<Embedding<T>> {
    let cfg = &w.config;
    if d.psi.len() != cfg.expr_dim {
        return Err(contract(format!(
            "driving signal has {} expression coefficients, prior expects {}",
            d.psi.len(),
            cfg.expr_dim
        )));
    }
    d.validate()?;
    let lat = cfg.group_latent;
    let mut latents = Vec::with_capacity(6 * lat);
    for (g, x) in d.groups().iter().enumerate() {
        let enc = w.layout.encoders[g];
        let pre = mat(w.data(enc.w), lat, x.len()).dot(&ArrayView1::from(*x)) + ArrayView1::from(w.data(enc.b));
        latents.extend(pre.iter().map(|v| v.tanh()));
    }
    let agg = w.layout.aggregate;
    let value = mat(w.data(agg.w), cfg.embed_dim, 6 * lat).dot(&ArrayView1::from(&latents[..]))
        + ArrayView1::from(w.data(agg.b));
    Ok(Embedding {
        value: value.to_vec(),
        latents,
        inputs: d.to_vec(),
    })
}

/// Accumulates encoder weight gradients into `grads`; returns `∂L/∂Θ`.
pub fn encode_driving_backward<T: Real>(
    emb: &Embedding<T>,
    w: &PriorWeights<T>,
    g_e: &[T],
    grads: &mut PriorWeights<T>,
) -> Vec<T> {
    let cfg = &w.config;
    let lat = cfg.group_latent;
    let agg = w.layout.aggregate;
    add_outer(grads.data_mut(agg.w), g_e, &emb.latents);
    add_into(grads.data_mut(agg.b), g_e);
    let g_z = mat(w.data(agg.w), cfg.embed_dim, 6 * lat).t().dot(&ArrayView1::from(g_e));
    let mut g_theta = Vec::with_capacity(emb.inputs.len());
    let mut offset = 0;
    for (g, dim) in cfg.group_dims().into_iter().enumerate() {
        let enc = w.layout.encoders[g];
        let x = &emb.inputs[offset..offset + dim];
        let g_pre: Vec<T> = (0..lat)
            .map(|i| {
                let z = emb.latents[g * lat + i];
                g_z[g * lat + i] * (T::one() - z * z)
            })
            .collect();
        add_outer(grads.data_mut(enc.w), &g_pre, x);
        add_into(grads.data_mut(enc.b), &g_pre);
        let g_x = mat(w.data(enc.w), lat, dim).t().dot(&ArrayView1::from(&g_pre[..]));
        g_theta.extend(g_x.iter().copied());
        offset += dim;
    }
    g_theta
}

/// `γ ⊙ x + β`.
pub fn film_modulate<T: Real>(x: &[T], gamma: &[T], beta: &[T]) -> Result<Vec<T>> {
    if x.len() != gamma.len() || x.len() != beta.len() {
        return Err(contract("FiLM operands differ in length"));
    }
    Ok(x.iter().zip(gamma).zip(beta).map(|((&x, &g), &b)| g * x + b).collect())
}

#[derive(Clone, Debug)]
struct ChunkCache<T> {
    input: Array2<T>,
    /// Dense pre-activations before modulation.
    pre: Vec<Array2<T>>,
    /// Modulated pre-activations.
    modulated: Vec<Array2<T>>,
    /// SiLU outputs.
    hidden: Vec<Array2<T>>,
}

/// Forward state retained for [`predict_backward`].
#[derive(Clone, Debug)]
pub struct PredictCache<T> {
    height: usize,
    width: usize,
    rows: Vec<usize>,
    embedding: Embedding<T>,
    gammas: Vec<Array1<T>>,
    chunks: Vec<ChunkCache<T>>,
}

impl<T: Real> PredictCache<T> {
    pub fn embedding(&self) -> &Embedding<T> {
        &self.embedding
    }
}

/// Valid texel indices and their decoder inputs `[tex, standardized geo, 2uv − 1]`.
pub fn texel_inputs<T: Real>(maps: &UVInputMaps<T>, stats: &GeometryStats<T>) -> (Vec<usize>, Vec<T>) {
    let geo = stats.standardize(&maps.geo, &maps.mask);
    let rows: Vec<usize> = (0..maps.mask.len()).filter(|&i| maps.mask[i]).collect();
    let mut x = Vec::with_capacity(rows.len() * INPUT_DIM);
    let two = T::lit(2.0);
    for &i in &rows {
        x.extend_from_slice(&maps.tex[i * 3..i * 3 + 3]);
        x.extend_from_slice(&geo[i * 3..i * 3 + 3]);
        let uv = texel_center::<T>(i / maps.width, i % maps.width, maps.height, maps.width);
        x.push(two * uv[0] - T::one());
        x.push(two * uv[1] - T::one());
    }
    (rows, x)
}

fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

fn film_params<T: Real>(emb: &Embedding<T>, w: &PriorWeights<T>) -> (Vec<Array1<T>>, Vec<Array1<T>>) {
    let cfg = &w.config;
    let e = ArrayView1::from(&emb.value[..]);
    let width = cfg.hidden_width;
    let mut gammas = Vec::with_capacity(cfg.hidden_layers);
    let mut betas = Vec::with_capacity(cfg.hidden_layers);
    for h in &w.layout.hidden {
        gammas.push(mat(w.data(h.gamma.w), width, cfg.embed_dim).dot(&e) + ArrayView1::from(w.data(h.gamma.b)));
        betas.push(mat(w.data(h.beta.w), width, cfg.embed_dim).dot(&e) + ArrayView1::from(w.data(h.beta.b)));
    }
    (gammas, betas)
}

/// Chunked MLP forward over `N × 8` input rows.
fn forward_rows<T: Real>(
    x: &Array2<T>,
    gammas: &[Array1<T>],
    betas: &[Array1<T>],
    w: &PriorWeights<T>,
) -> Vec<(ChunkCache<T>, Array2<T>)> {
    let cfg = &w.config;
    let width = cfg.hidden_width;
    let n = x.nrows();
    let out_w = mat(w.data(w.layout.output.w), CHANNELS, width);
    let out_b = ArrayView1::from(w.data(w.layout.output.b));
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n);
            let mut cache = ChunkCache {
                input: x.slice(s![start..end, ..]).to_owned(),
                pre: Vec::new(),
                modulated: Vec::new(),
                hidden: Vec::new(),
            };
            for (l, h) in w.layout.hidden.iter().enumerate() {
                let fan_in = if l == 0 { INPUT_DIM } else { width };
                let prev = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
                let pre = prev.dot(&mat(w.data(h.dense.w), width, fan_in).t()) + ArrayView1::from(w.data(h.dense.b));
                let modulated = &pre * &gammas[l] + &betas[l];
                let hidden = modulated.mapv(silu);
                cache.pre.push(pre);
                cache.modulated.push(modulated);
                cache.hidden.push(hidden);
            }
            let out = cache.hidden[cfg.hidden_layers - 1].dot(&out_w.t()) + out_b;
            (cache, out)
        })
        .collect()
}

/// Runs the texel decoder on explicit `N × 8` input rows; returns `N × 13`.
pub fn decode_texels<T: Real>(inputs: &[T], d: &DrivingSignal<T>, w: &PriorWeights<T>) -> Result<Vec<T>> {
    if inputs.len() % INPUT_DIM != 0 {
        return Err(contract("texel inputs must have 8 values per row"));
    }
    let emb = encode_driving(d, w)?;
    let (gammas, betas) = film_params(&emb, w);
    let x = Array2::from_shape_vec((inputs.len() / INPUT_DIM, INPUT_DIM), inputs.to_vec()).expect("input rows");
    let mut out = Vec::with_capacity(x.nrows() * CHANNELS);
    for (_, o) in forward_rows(&x, &gammas, &betas, w) {
        out.extend(o.iter().copied());
    }
    Ok(out)
}

pub fn predict_with_cache<T: Real>(
    maps: &UVInputMaps<T>,
    d: &DrivingSignal<T>,
    w: &PriorWeights<T>,
    stats: &GeometryStats<T>,
) -> Result<(GaussianMap<T>, PredictCache<T>)> {
    maps.validate()?;
    let embedding = encode_driving(d, w)?;
    let (gammas, betas) = film_params(&embedding, w);
    let (rows, x) = texel_inputs(maps, stats);
    let x = Array2::from_shape_vec((rows.len(), INPUT_DIM), x).expect("input rows");
    let results = forward_rows(&x, &gammas, &betas, w);
    let mut map = GaussianMap::zeros(maps.height, maps.width, maps.mask.clone())?;
    let mut chunks = Vec::with_capacity(results.len());
    let mut k = 0;
    for (cache, out) in results {
        for row in out.rows() {
            let texel = rows[k];
            map.raw[texel * CHANNELS..(texel + 1) * CHANNELS]
                .iter_mut()
                .zip(row.iter())
                .for_each(|(d, s)| *d = *s);
            k += 1;
        }
        chunks.push(cache);
    }
    Ok((
        map,
        PredictCache {
            height: maps.height,
            width: maps.width,
            rows,
            embedding,
            gammas,
            chunks,
        },
    ))
}

pub fn predict_gaussian_map<T: Real>(
    maps: &UVInputMaps<T>,
    d: &DrivingSignal<T>,
    w: &PriorWeights<T>,
    stats: &GeometryStats<T>,
) -> Result<GaussianMap<T>> {
    Ok(predict_with_cache(maps, d, w, stats)?.0)
}

struct ChunkGrads<T> {
    dense_w: Vec<Array2<T>>,
    dense_b: Vec<Array1<T>>,
    gamma: Vec<Array1<T>>,
    beta: Vec<Array1<T>>,
    out_w: Array2<T>,
    out_b: Array1<T>,
}

/// Weight gradients given `∂L/∂raw` over the full `H·W·13` map.
pub fn predict_backward<T: Real>(cache: &PredictCache<T>, w: &PriorWeights<T>, g_raw: &[T]) -> Result<PriorWeights<T>> {
    let mut grads = w.zeros_like();
    let g_theta = predict_backward_into(cache, w, g_raw, &mut grads)?;
    debug_assert!(g_theta.iter().all(|v| v.is_finite()));
    Ok(grads)
}

/// As [`predict_backward`], accumulating into `grads` and returning `∂L/∂Θ`.
pub fn predict_backward_into<T: Real>(
    cache: &PredictCache<T>,
    w: &PriorWeights<T>,
    g_raw: &[T],
    grads: &mut PriorWeights<T>,
) -> Result<Vec<T>> {
    if g_raw.len() != cache.height * cache.width * CHANNELS {
        return Err(contract("raw-map gradient does not match the predicted map"));
    }
    w.ensure_same_layout(grads)?;
    let cfg = &w.config;
    let width = cfg.hidden_width;
    let layers = cfg.hidden_layers;
    let out_w = mat(w.data(w.layout.output.w), CHANNELS, width);
    let mut starts = Vec::with_capacity(cache.chunks.len());
    let mut offset = 0;
    for c in &cache.chunks {
        starts.push(offset);
        offset += c.input.nrows();
    }
    let partials: Vec<ChunkGrads<T>> = cache
        .chunks
        .par_iter()
        .zip(&starts)
        .map(|(c, &start)| {
            let n = c.input.nrows();
            let mut g_out = Array2::zeros((n, CHANNELS));
            for (r, mut row) in g_out.rows_mut().into_iter().enumerate() {
                let texel = cache.rows[start + r];
                for (d, s) in row.iter_mut().zip(&g_raw[texel * CHANNELS..(texel + 1) * CHANNELS]) {
                    *d = *s;
                }
            }
            let mut cg = ChunkGrads {
                dense_w: vec![Array2::zeros((0, 0)); layers],
                dense_b: vec![Array1::zeros(0); layers],
                gamma: vec![Array1::zeros(0); layers],
                beta: vec![Array1::zeros(0); layers],
                out_w: g_out.t().dot(&c.hidden[layers - 1]),
                out_b: g_out.sum_axis(Axis(0)),
            };
            let mut g_h = g_out.dot(&out_w);
            for l in (0..layers).rev() {
                let g_m = &g_h * &c.modulated[l].mapv(silu_grad);
                cg.gamma[l] = (&g_m * &c.pre[l]).sum_axis(Axis(0));
                cg.beta[l] = g_m.sum_axis(Axis(0));
                let g_a = &g_m * &cache.gammas[l];
                let prev = if l == 0 { &c.input } else { &c.hidden[l - 1] };
                cg.dense_w[l] = g_a.t().dot(prev);
                cg.dense_b[l] = g_a.sum_axis(Axis(0));
                if l > 0 {
                    let h = &w.layout.hidden[l];
                    g_h = g_a.dot(&mat(w.data(h.dense.w), width, width));
                }
            }
            cg
        })
        .collect();

    let mut g_gamma = vec![Array1::<T>::zeros(width); layers];
    let mut g_beta = vec![Array1::<T>::zeros(width); layers];
    for cg in &partials {
        add_into(grads.data_mut(w.layout.output.w), cg.out_w.as_slice().expect("contiguous"));
        add_into(grads.data_mut(w.layout.output.b), cg.out_b.as_slice().expect("contiguous"));
        for l in 0..layers {
            let h = w.layout.hidden[l];
            add_into(grads.data_mut(h.dense.w), cg.dense_w[l].as_slice().expect("contiguous"));
            add_into(grads.data_mut(h.dense.b), cg.dense_b[l].as_slice().expect("contiguous"));
            g_gamma[l] += &cg.gamma[l];
            g_beta[l] += &cg.beta[l];
        }
    }
    let e = &cache.embedding.value;
    let mut g_e = Array1::<T>::zeros(cfg.embed_dim);
    for l in 0..layers {
        let h = w.layout.hidden[l];
        let (gg, gb) = (g_gamma[l].as_slice().expect("contiguous"), g_beta[l].as_slice().expect("contiguous"));
        add_outer(grads.data_mut(h.gamma.w), gg, e);
        add_into(grads.data_mut(h.gamma.b), gg);
        add_outer(grads.data_mut(h.beta.w), gb, e);
        add_into(grads.data_mut(h.beta.b), gb);
        g_e += &mat(w.data(h.gamma.w), width, cfg.embed_dim).t().dot(&g_gamma[l]);
        g_e += &mat(w.data(h.beta.w), width, cfg.embed_dim).t().dot(&g_beta[l]);
    }
    Ok(encode_driving_backward(
        &cache.embedding,
        w,
        g_e.as_slice().expect("contiguous"),
        grads,
    ))
}
