use crate::error::{invalid, Result};
use crate::image::Image;
use crate::scalar::Real;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel<T: Real>() -> [T; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    std::array::from_fn(|i| T::lit(raw[i] / sum))
}

/// Valid-mode separable Gaussian correlation of one `h × w` plane.
fn blur<T: Real>(x: &[T], h: usize, w: usize, k: &[T; WINDOW]) -> Vec<T> {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![T::zero(); h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut s = T::zero();
            for (j, &kj) in k.iter().enumerate() {
                s += kj * x[r * w + c + j];
            }
            tmp[r * ow + c] = s;
        }
    }
    let mut out = vec![T::zero(); oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut s = T::zero();
            for (i, &ki) in k.iter().enumerate() {
                s += ki * tmp[(r + i) * ow + c];
            }
            out[r * ow + c] = s;
        }
    }
    out
}

/// Adjoint of [`blur`]: spreads an output-sized map back onto the input grid.
fn blur_adjoint<T: Real>(g: &[T], h: usize, w: usize, k: &[T; WINDOW]) -> Vec<T> {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![T::zero(); h * ow];
    for r in 0..oh {
        for c in 0..ow {
            let v = g[r * ow + c];
            for (i, &ki) in k.iter().enumerate() {
                tmp[(r + i) * ow + c] += ki * v;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for r in 0..h {
        for c in 0..ow {
            let v = tmp[r * ow + c];
            for (j, &kj) in k.iter().enumerate() {
                out[r * w + c + j] += kj * v;
            }
        }
    }
    out
}

fn plane<T: Real>(img: &Image<T>, ch: usize) -> Vec<T> {
    img.data.iter().skip(ch).step_by(img.channels).copied().collect()
}

fn check<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    a.ensure_same_shape(b, "SSIM operands")?;
    if a.height < WINDOW || a.width < WINDOW {
        return Err(invalid(
            "image",
            format!("SSIM needs at least {WINDOW}×{WINDOW}, got {}×{}", a.height, a.width),
        ));
    }
    Ok(())
}

/// Mean SSIM over valid windows and channels and, optionally, its gradient
/// with respect to `a`.
pub fn ssim_with_grad<T: Real>(a: &Image<T>, b: &Image<T>, want_grad: bool) -> Result<(T, Option<Image<T>>)> {
    check(a, b)?;
    let (h, w) = (a.height, a.width);
    let k = kernel::<T>();
    let n_win = (h + 1 - WINDOW) * (w + 1 - WINDOW);
    let count = T::from_usize_exact(n_win * a.channels);
    let (c1, c2) = (T::lit(C1), T::lit(C2));
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut grad = want_grad.then(|| Image::zeros(h, w, a.channels));
    for ch in 0..a.channels {
        let x = plane(a, ch);
        let y = plane(b, ch);
        let xx: Vec<T> = x.iter().map(|v| *v * *v).collect();
        let yy: Vec<T> = y.iter().map(|v| *v * *v).collect();
        let xy: Vec<T> = x.iter().zip(&y).map(|(p, q)| *p * *q).collect();
        let mx = blur(&x, h, w, &k);
        let my = blur(&y, h, w, &k);
        let sxx = blur(&xx, h, w, &k);
        let syy = blur(&yy, h, w, &k);
        let sxy = blur(&xy, h, w, &k);
        let mut gp = vec![T::zero(); n_win];
        let mut gq = vec![T::zero(); n_win];
        let mut gr = vec![T::zero(); n_win];
        for i in 0..n_win {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            let n1 = two * ux * uy + c1;
            let n2 = two * cxy + c2;
            let d1 = ux * ux + uy * uy + c1;
            let d2 = vx + vy + c2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                let s_mu = two * uy * n2 / (d1 * d2) - s * two * ux / d1;
                let s_var = -s / d2;
                let s_cov = two * n1 / (d1 * d2);
                gp[i] = s_mu - two * s_var * ux - s_cov * uy;
                gq[i] = two * s_var;
                gr[i] = s_cov;
            }
        }
        if let Some(g) = grad.as_mut() {
            let p = blur_adjoint(&gp, h, w, &k);
            let q = blur_adjoint(&gq, h, w, &k);
            let r = blur_adjoint(&gr, h, w, &k);
            for i in 0..h * w {
                g.data[i * a.channels + ch] = (p[i] + q[i] * x[i] + r[i] * y[i]) / count;
            }
        }
    }
    Ok((total / count, grad))
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    Ok(ssim_with_grad(a, b, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_is_the_transpose() {
        let (h, w) = (14, 13);
        let k = kernel::<f64>();
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 11) as f64 / 7.0).collect();
        let oh = (h + 1 - WINDOW) * (w + 1 - WINDOW);
        let g: Vec<f64> = (0..oh).map(|i| ((i * 13) % 5) as f64 - 2.0).collect();
        let lhs: f64 = blur(&x, h, w, &k).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = blur_adjoint(&g, h, w, &k).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn kernel_sums_to_one() {
        let s: f64 = kernel::<f64>().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }
}
