//! The 13-channel UV-aligned Gaussian parameter map and its decoding into
//! world-space 2D surfels.
//!
//! Raw channel layout per texel: `[δx(3), c(3), q(4), s(2), o(1)]`.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::linalg::{self, Quat, Vec3};
use crate::render::GradientBuffer;
use crate::rig::SurfaceFrames;
use crate::scalar::{sigmoid, Real};

pub const CHANNELS: usize = 13;
pub const OFFSET: usize = 0;
pub const COLOR: usize = 3;
pub const ROTATION: usize = 6;
pub const SCALE: usize = 10;
pub const OPACITY: usize = 12;

pub const SCALE_CLAMP: (f64, f64) = (-6.0, 3.0);
pub const QUAT_FALLBACK_NORM: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationConfig {
    /// Bound on each tangent-frame offset component (meters).
    pub max_offset: f64,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self { max_offset: 0.02 }
    }
}

/// Raw per-texel parameters on an `H × W` grid, plus the validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMap<T> {
    pub height: usize,
    pub width: usize,
    /// `H·W·13`, row-major texels.
    pub raw: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> GaussianMap<T> {
    pub fn zeros(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(contract("mask length does not match map resolution"));
        }
        Ok(Self {
            height,
            width,
            raw: vec![T::zero(); height * width * CHANNELS],
            mask,
        })
    }

    pub fn texel(&self, i: usize) -> &[T] {
        &self.raw[i * CHANNELS..(i + 1) * CHANNELS]
    }

    pub fn texel_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.raw[i * CHANNELS..(i + 1) * CHANNELS]
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.raw
            .iter()
            .zip(&other.raw)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn cast<U: Real>(&self) -> GaussianMap<U> {
        GaussianMap {
            height: self.height,
            width: self.width,
            raw: self
                .raw
                .iter()
                .map(|&x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Activated parameters of one texel, still in its tangent frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Activated<T> {
    pub offset: Vec3<T>,
    pub color: Vec3<T>,
    pub rotation: Quat<T>,
    pub scales: [T; 2],
    pub opacity: T,
}

/// Maps a raw 13-vector to bounded, valid surfel parameters.
pub fn activate<T: Real>(raw: &[T], texel_extent: T, cfg: &ActivationConfig) -> Activated<T> {
    debug_assert_eq!(raw.len(), CHANNELS);
    let bound = T::lit(cfg.max_offset);
    let offset = [0, 1, 2].map(|k| bound * raw[OFFSET + k].tanh());
    let color = [0, 1, 2].map(|k| sigmoid(raw[COLOR + k]));
    let q = [raw[ROTATION], raw[ROTATION + 1], raw[ROTATION + 2], raw[ROTATION + 3]];
    let n = linalg::quat_norm(q);
    let rotation = if n < T::lit(QUAT_FALLBACK_NORM) {
        linalg::quat_identity()
    } else {
        q.map(|c| c / n)
    };
    let (lo, hi) = (T::lit(SCALE_CLAMP.0), T::lit(SCALE_CLAMP.1));
    let scales = [0, 1].map(|k| texel_extent * raw[SCALE + k].max(lo).min(hi).exp());
    Activated {
        offset,
        color,
        rotation,
        scales,
        opacity: sigmoid(raw[OPACITY]),
    }
}

/// World-space 2D Gaussian disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Surfel<T> {
    pub center: Vec3<T>,
    /// Unit quaternion of the disk frame: columns of its matrix are the two
    /// tangent axes and the normal.
    pub rotation: Quat<T>,
    pub scales: [T; 2],
    pub color: Vec3<T>,
    pub opacity: T,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfelSet<T> {
    pub surfels: Vec<Surfel<T>>,
    /// Source texel (row-major index) of each surfel.
    pub texels: Vec<usize>,
}

impl<T: Real> SurfelSet<T> {
    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn push(&mut self, s: Surfel<T>, texel: usize) {
        self.surfels.push(s);
        self.texels.push(texel);
    }
}

fn check_layout<T: Real>(map: &GaussianMap<T>, frames: &SurfaceFrames<T>) -> Result<()> {
    if map.height != frames.height || map.width != frames.width {
        return Err(contract(format!(
            "map {}×{} vs frames {}×{}",
            map.height, map.width, frames.height, frames.width
        )));
    }
    if map.raw.len() != map.height * map.width * CHANNELS || map.mask.len() != map.height * map.width {
        return Err(contract("map buffers do not match its resolution"));
    }
    if map
        .mask
        .iter()
        .zip(&frames.frames)
        .any(|(&m, f)| m != f.is_some())
    {
        return Err(contract("map mask does not match the surface frame validity"));
    }
    Ok(())
}

/// Decodes every valid texel into a world-space surfel, row-major.
pub fn decode_surfels<T: Real>(
    map: &GaussianMap<T>,
    frames: &SurfaceFrames<T>,
    cfg: &ActivationConfig,
) -> Result<SurfelSet<T>> {
    check_layout(map, frames)?;
    let mut set = SurfelSet::default();
    for (i, frame) in frames.frames.iter().enumerate() {
        let Some(f) = frame else { continue };
        let a = activate(map.texel(i), f.extent, cfg);
        let mut center = f.position;
        linalg::axpy(&mut center, a.offset[0], f.t_u);
        linalg::axpy(&mut center, a.offset[1], f.t_v);
        linalg::axpy(&mut center, a.offset[2], f.normal);
        let frame_q = linalg::matrix_to_quat(&f.matrix());
        set.push(
            Surfel {
                center,
                rotation: linalg::quat_mul(frame_q, a.rotation),
                scales: a.scales,
                color: a.color,
                opacity: a.opacity,
            },
            i,
        );
    }
    Ok(set)
}

/// Pulls surfel gradients back to the raw map channels (`H·W·13`, zero on
/// invalid texels).
pub fn decode_backward<T: Real>(
    map: &GaussianMap<T>,
    frames: &SurfaceFrames<T>,
    cfg: &ActivationConfig,
    surfels: &SurfelSet<T>,
    grads: &GradientBuffer<T>,
) -> Result<Vec<T>> {
    check_layout(map, frames)?;
    if grads.len() != surfels.len() {
        return Err(contract("gradient buffer does not match the surfel set"));
    }
    let mut out = vec![T::zero(); map.raw.len()];
    let bound = T::lit(cfg.max_offset);
    let (lo, hi) = (T::lit(SCALE_CLAMP.0), T::lit(SCALE_CLAMP.1));
    for (k, &texel) in surfels.texels.iter().enumerate() {
        let f = frames.frames[texel]
            .as_ref()
            .ok_or_else(|| contract("surfel refers to an invalid texel"))?;
        let raw = map.texel(texel);
        let g = &grads.surfels[k];
        let dst = &mut out[texel * CHANNELS..(texel + 1) * CHANNELS];

        // center = anchor + F · (bound · tanh(raw))
        let local = linalg::mat_t_vec(&f.matrix(), g.center);
        for c in 0..3 {
            let t = raw[OFFSET + c].tanh();
            dst[OFFSET + c] = local[c] * bound * (T::one() - t * t);
        }
        for c in 0..3 {
            let s = sigmoid(raw[COLOR + c]);
            dst[COLOR + c] = g.color[c] * s * (T::one() - s);
        }
        let q = [raw[ROTATION], raw[ROTATION + 1], raw[ROTATION + 2], raw[ROTATION + 3]];
        let (unit, n) = linalg::quat_normalize(q);
        if n >= T::lit(QUAT_FALLBACK_NORM) {
            let frame_q = linalg::matrix_to_quat(&f.matrix());
            let g_local = linalg::quat_mul_backward_rhs(frame_q, g.rotation);
            let g_raw = linalg::quat_normalize_backward(unit, n, g_local);
            dst[ROTATION..ROTATION + 4].copy_from_slice(&g_raw);
        }
        for c in 0..2 {
            let r = raw[SCALE + c];
            if r > lo && r < hi {
                dst[SCALE + c] = g.scales[c] * f.extent * r.exp();
            }
        }
        let o = sigmoid(raw[OPACITY]);
        dst[OPACITY] = g.opacity * o * (T::one() - o);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::SurfelGrad;
    use crate::rig::{fixture, surface_frames, texel_anchors};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_raw_activation_identities() {
        let a = activate(&[0.0_f64; CHANNELS], 0.01, &ActivationConfig::default());
        assert_eq!(a.opacity, 0.5);
        assert_eq!(a.color, [0.5; 3]);
        assert_eq!(a.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(a.scales, [0.01, 0.01]);
        assert_eq!(a.offset, [0.0; 3]);
    }

    #[test]
    fn opacity_saturates_below_one() {
        let mut raw = [0.0_f64; CHANNELS];
        raw[OPACITY] = 20.0;
        let o = activate(&raw, 1.0, &ActivationConfig::default()).opacity;
        assert!(o < 1.0 && 1.0 - o < 1e-8);
    }

    #[test]
    fn activation_matches_scalar_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ActivationConfig { max_offset: 0.03 };
        for _ in 0..100 {
            let raw: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(-8.0..8.0)).collect();
            let ext = rng.random_range(0.001..0.05);
            let a = activate(&raw, ext, &cfg);
            for k in 0..3 {
                assert!((a.offset[k] - 0.03 * raw[k].tanh()).abs() < 1e-15);
                assert!((a.color[k] - 1.0 / (1.0 + (-raw[3 + k]).exp())).abs() < 1e-15);
            }
            let n = (raw[6..10].iter().map(|x| x * x).sum::<f64>()).sqrt();
            for k in 0..4 {
                assert!((a.rotation[k] - raw[6 + k] / n).abs() < 1e-15);
            }
            for k in 0..2 {
                let expected = ext * raw[10 + k].clamp(-6.0, 3.0).exp();
                assert!((a.scales[k] - expected).abs() < 1e-15 * expected.max(1.0));
            }
            assert!((a.opacity - 1.0 / (1.0 + (-raw[12]).exp())).abs() < 1e-15);
        }
    }

    fn fixture_setup(h: usize) -> (SurfaceFrames<f64>, GaussianMap<f64>) {
        let rig = fixture::head_rig_with::<f64>(0, 4, 6, 8);
        let anchors = texel_anchors(&rig, h, h).unwrap();
        let frames = surface_frames(&rig, rig.vertices(), &anchors).unwrap();
        let map = GaussianMap::zeros(h, h, frames.mask()).unwrap();
        (frames, map)
    }

    #[test]
    fn zero_offset_sits_on_anchor_with_surface_frame() {
        let (frames, mut map) = fixture_setup(8);
        for i in 0..map.height * map.width {
            map.texel_mut(i)[ROTATION] = 1.0;
        }
        let set = decode_surfels(&map, &frames, &ActivationConfig::default()).unwrap();
        assert_eq!(set.len(), map.valid_count());
        for (s, &t) in set.surfels.iter().zip(&set.texels) {
            let f = frames.frames[t].unwrap();
            assert_eq!(s.center, f.position);
            let m = linalg::quat_to_matrix(s.rotation);
            for r in 0..3 {
                assert!((m[r][0] - f.t_u[r]).abs() < 1e-12);
                assert!((m[r][2] - f.normal[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normal_offset_moves_along_normal() {
        let (frames, mut map) = fixture_setup(8);
        let eps = 1e-3;
        let cfg = ActivationConfig::default();
        for i in 0..map.height * map.width {
            map.texel_mut(i)[OFFSET + 2] = (eps / cfg.max_offset).atanh();
        }
        let set = decode_surfels(&map, &frames, &cfg).unwrap();
        for (s, &t) in set.surfels.iter().zip(&set.texels) {
            let f = frames.frames[t].unwrap();
            let d = linalg::sub(s.center, f.position);
            for k in 0..3 {
                assert!((d[k] - eps * f.normal[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_mismatch_is_rejected() {
        let (frames, mut map) = fixture_setup(8);
        let first_valid = map.mask.iter().position(|&m| m).unwrap();
        map.mask[first_valid] = false;
        assert!(matches!(
            decode_surfels(&map, &frames, &ActivationConfig::default()),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn decode_backward_matches_finite_differences() {
        let (frames, mut map) = fixture_setup(4);
        let cfg = ActivationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for v in map.raw.iter_mut() {
            *v = rng.random_range(-1.5..1.5);
        }
        let set = decode_surfels(&map, &frames, &cfg).unwrap();
        let mut grads = GradientBuffer::zeros(set.len());
        for g in grads.surfels.iter_mut() {
            *g = SurfelGrad {
                center: [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)),
                rotation: [0, 1, 2, 3].map(|_| rng.random_range(-1.0..1.0)),
                scales: [0, 1].map(|_| rng.random_range(-1.0..1.0)),
                color: [0, 1, 2].map(|_| rng.random_range(-1.0..1.0)),
                opacity: rng.random_range(-1.0..1.0),
            };
        }
        let objective = |m: &GaussianMap<f64>| {
            let s = decode_surfels(m, &frames, &cfg).unwrap();
            let mut acc = 0.0;
            for (x, g) in s.surfels.iter().zip(&grads.surfels) {
                acc += linalg::dot(x.center, g.center) + linalg::dot(x.color, g.color) + x.opacity * g.opacity;
                acc += x.scales[0] * g.scales[0] + x.scales[1] * g.scales[1];
                acc += (0..4).map(|k| x.rotation[k] * g.rotation[k]).sum::<f64>();
            }
            acc
        };
        let analytic = decode_backward(&map, &frames, &cfg, &set, &grads).unwrap();
        let h = 1e-5;
        for i in 0..map.raw.len() {
            let mut plus = map.clone();
            let mut minus = map.clone();
            plus.raw[i] += h;
            minus.raw[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-3 || (fd - analytic[i]).abs() < 1e-9, "raw {i}: fd {fd} vs {}", analytic[i]);
        }
    }
}
