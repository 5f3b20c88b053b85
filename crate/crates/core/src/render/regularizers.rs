use super::{Camera, Record, RenderOutput};
use crate::image::Image;
use crate::linalg::{self, Vec3};
use crate::scalar::Real;

/// `Σ_{i<j} ω_i ω_j |z_i − z_j|` over depth-sorted records, in linear time.
pub fn depth_distortion<T: Real>(records: &[Record<T>]) -> T {
    let mut w_before = T::zero();
    let mut wz_before = T::zero();
    let mut total = T::zero();
    for r in records {
        total += r.weight * (r.z * w_before - wz_before);
        w_before += r.weight;
        wz_before += r.weight * r.z;
    }
    total
}

#[derive(Clone, Debug)]
pub struct DepthDistortion<T> {
    /// Mean over covered pixels.
    pub loss: T,
    pub covered: usize,
    /// `∂loss/∂(per-pixel distortion)`, ready for the backward pass.
    pub pixel_weights: Vec<T>,
}

pub fn depth_distortion_image<T: Real>(out: &RenderOutput<T>) -> DepthDistortion<T> {
    let n = out.height() * out.width();
    let covered = out.alpha.data.iter().filter(|&&a| a > T::zero()).count();
    let mut pixel_weights = vec![T::zero(); n];
    let mut loss = T::zero();
    if covered > 0 {
        let inv = T::one() / T::from_usize_exact(covered);
        for (p, w) in pixel_weights.iter_mut().enumerate() {
            if out.alpha.data[p] > T::zero() {
                *w = inv;
                loss += depth_distortion(out.pixel_records(p)) * inv;
            }
        }
    }
    DepthDistortion {
        loss,
        covered,
        pixel_weights,
    }
}

/// Camera-facing normals from central differences of back-projected depth.
/// `None` where the pixel is on the border or any 4-neighbor is uncovered.
pub fn depth_normals<T: Real>(out: &RenderOutput<T>, cam: &Camera<T>) -> Vec<Option<Vec3<T>>> {
    let (h, w) = (out.height(), out.width());
    let mut normals = vec![None; h * w];
    for row in 1..h.saturating_sub(1) {
        for col in 1..w.saturating_sub(1) {
            if let Some(st) = Stencil::new(out, cam, row, col) {
                normals[row * w + col] = Some(st.normal);
            }
        }
    }
    normals
}

struct Stencil<T> {
    a: Vec3<T>,
    b: Vec3<T>,
    c: Vec3<T>,
    c_len: T,
    sign: T,
    normal: Vec3<T>,
    rays: [Vec3<T>; 4],
}

impl<T: Real> Stencil<T> {
    /// Neighbors in order `[x+1, x−1, y+1, y−1]`.
    fn neighbors(w: usize, row: usize, col: usize) -> [usize; 4] {
        let p = row * w + col;
        [p + 1, p - 1, p + w, p - w]
    }

    fn new(out: &RenderOutput<T>, cam: &Camera<T>, row: usize, col: usize) -> Option<Self> {
        let w = out.width();
        let p = row * w + col;
        let nb = Self::neighbors(w, row, col);
        if out.alpha.data[p] <= T::zero() || nb.iter().any(|&q| out.alpha.data[q] <= T::zero()) {
            return None;
        }
        let half = T::lit(0.5);
        let c = |dc: i64, dr: i64| {
            let x = T::from_usize_exact(col) + half + T::lit(dc as f64);
            let y = T::from_usize_exact(row) + half + T::lit(dr as f64);
            cam.ray(x, y)
        };
        let rays = [c(1, 0), c(-1, 0), c(0, 1), c(0, -1)];
        let pt = |k: usize| linalg::scale(rays[k], out.depth.data[nb[k]]);
        let a = linalg::sub(pt(0), pt(1));
        let b = linalg::sub(pt(2), pt(3));
        let cr = linalg::cross(a, b);
        let c_len = linalg::norm(cr);
        if !(c_len > T::lit(1e-20)) {
            return None;
        }
        let mut n = linalg::scale(cr, T::one() / c_len);
        let center = c(0, 0);
        let sign = if linalg::dot(n, center) > T::zero() { -T::one() } else { T::one() };
        n = linalg::scale(n, sign);
        Some(Self {
            a,
            b,
            c: cr,
            c_len,
            sign,
            normal: n,
            rays,
        })
    }

    /// Depth gradients of the four neighbors given `∂L/∂N`.
    fn backward(&self, g_n: Vec3<T>) -> [T; 4] {
        let g_n = linalg::scale(g_n, self.sign);
        let nh = linalg::scale(self.c, T::one() / self.c_len);
        let g_c = linalg::scale(
            linalg::sub(g_n, linalg::scale(nh, linalg::dot(nh, g_n))),
            T::one() / self.c_len,
        );
        let g_a = linalg::cross(self.b, g_c);
        let g_b = linalg::cross(g_c, self.a);
        [
            linalg::dot(g_a, self.rays[0]),
            -linalg::dot(g_a, self.rays[1]),
            linalg::dot(g_b, self.rays[2]),
            -linalg::dot(g_b, self.rays[3]),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct NormalConsistency<T> {
    /// Mean of `Σ_i ω_i (1 − n_iᵀ N)` over valid pixels.
    pub loss: T,
    pub valid: usize,
    /// Per-pixel `(weight, N)` for the surfel-normal path.
    pub targets: Vec<(T, Vec3<T>)>,
    /// `∂loss/∂depth` through the depth-derived normals.
    pub depth_grad: Image<T>,
}

/// Normal consistency between rendered surfel normals and depth normals.
pub fn normal_consistency<T: Real>(out: &RenderOutput<T>, cam: &Camera<T>) -> NormalConsistency<T> {
    let (h, w) = (out.height(), out.width());
    let zero = T::zero();
    let mut stencils = Vec::new();
    for row in 1..h.saturating_sub(1) {
        for col in 1..w.saturating_sub(1) {
            if let Some(st) = Stencil::new(out, cam, row, col) {
                stencils.push((row, col, st));
            }
        }
    }
    let mut targets = vec![(zero, [zero; 3]); h * w];
    let mut depth_grad = Image::zeros(h, w, 1);
    let valid = stencils.len();
    let mut loss = zero;
    if valid == 0 {
        return NormalConsistency {
            loss,
            valid,
            targets,
            depth_grad,
        };
    }
    let inv = T::one() / T::from_usize_exact(valid);
    for (row, col, st) in &stencils {
        let p = row * w + col;
        let recs = out.pixel_records(p);
        let mut n_sum = [zero; 3];
        let mut a_sum = zero;
        for r in recs {
            linalg::axpy(&mut n_sum, r.weight, r.normal);
            a_sum += r.weight;
        }
        loss += (a_sum - linalg::dot(n_sum, st.normal)) * inv;
        targets[p] = (inv, st.normal);
        let g = st.backward(linalg::scale(n_sum, -inv));
        for (q, gq) in Stencil::<T>::neighbors(w, *row, *col).iter().zip(g) {
            depth_grad.data[*q] += gq;
        }
    }
    NormalConsistency {
        loss,
        valid,
        targets,
        depth_grad,
    }
}
