use std::cmp::Ordering;

use rayon::prelude::*;

use super::{Camera, GradientBuffer, RasterConfig, Record, RenderOutput, SurfelGrad};
use crate::error::{contract, Result};
use crate::gaussian_map::{Surfel, SurfelSet};
use crate::image::Image;
use crate::linalg::{self, Quat, Vec3};
use crate::scalar::Real;

/// Camera-space quantities of one surfel shared by all pixels.
#[derive(Clone, Copy, Debug)]
struct Projected<T> {
    pc: Vec3<T>,
    au: Vec3<T>,
    av: Vec3<T>,
    n: Vec3<T>,
    unit_q: Quat<T>,
    q_norm: T,
    mu: Option<[T; 2]>,
    usable: bool,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]`; `None` = never visible.
    bbox: Option<[usize; 4]>,
}

#[derive(Clone, Copy, Debug)]
struct Hit<T> {
    alpha: T,
    z: T,
    normal: Vec3<T>,
}

struct Params<T> {
    alpha_max: T,
    alpha_min: T,
    inv_sigma2: T,
    min_t: T,
    depth_eps: T,
}

impl<T: Real> Params<T> {
    fn new(cfg: &RasterConfig) -> Self {
        Self {
            alpha_max: T::lit(cfg.alpha_max),
            alpha_min: T::lit(cfg.alpha_min),
            inv_sigma2: T::one() / T::lit(cfg.lowpass_sigma * cfg.lowpass_sigma),
            min_t: T::lit(cfg.min_transmittance),
            depth_eps: T::lit(cfg.depth_eps),
        }
    }
}

const PARALLEL_EPS: f64 = 1e-12;

fn project<T: Real>(s: &Surfel<T>, cam: &Camera<T>, cfg: &RasterConfig) -> Projected<T> {
    let (unit_q, q_norm) = linalg::quat_normalize(s.rotation);
    let rot = linalg::quat_to_matrix(unit_q);
    let pc = cam.world_to_camera(s.center);
    let au = linalg::mat_vec(&cam.rotation, linalg::column(&rot, 0));
    let av = linalg::mat_vec(&cam.rotation, linalg::column(&rot, 1));
    let n = linalg::mat_vec(&cam.rotation, linalg::column(&rot, 2));
    let tiny = T::lit(1e-12);
    let mu = (pc[2] > tiny).then(|| [cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy]);
    let mut p = Projected {
        pc,
        au,
        av,
        n,
        unit_q,
        q_norm,
        mu,
        usable: false,
        bbox: None,
    };
    let alpha_min = T::lit(cfg.alpha_min);
    let usable = q_norm > tiny
        && s.opacity >= alpha_min
        && s.scales.iter().all(|&x| x > T::zero() && x.is_finite())
        && s.center.iter().all(|x| x.is_finite());
    if !usable {
        return p;
    }
    p.usable = true;
    // alpha ≥ alpha_min ⇔ Gaussian exponent ≤ ρ²
    let rho = (T::lit(2.0) * (s.opacity / alpha_min).ln()).max(T::zero()).sqrt();
    let w = T::from_usize_exact(cam.width);
    let h = T::from_usize_exact(cam.height);
    let mut lo = [T::infinity(); 2];
    let mut hi = [T::neg_infinity(); 2];
    let mut full = false;
    for (su, sv) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
        let mut c = pc;
        linalg::axpy(&mut c, T::lit(su) * rho * s.scales[0], au);
        linalg::axpy(&mut c, T::lit(sv) * rho * s.scales[1], av);
        if c[2] <= tiny {
            full = true;
            break;
        }
        let x = cam.fx * c[0] / c[2] + cam.cx;
        let y = cam.fy * c[1] / c[2] + cam.cy;
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    }
    if full {
        lo = [T::zero(), T::zero()];
        hi = [w, h];
    }
    if let Some(m) = mu {
        let r = rho * T::lit(cfg.lowpass_sigma);
        lo = [lo[0].min(m[0] - r), lo[1].min(m[1] - r)];
        hi = [hi[0].max(m[0] + r), hi[1].max(m[1] + r)];
    }
    // pixel centers at index + ½, one pixel of slack for rounding
    let to_px = |v: T, max: usize| -> i64 {
        let v = v.max(T::lit(-2.0)).min(T::from_usize_exact(max + 2));
        v.to_i64().unwrap_or(0)
    };
    let x0 = (to_px((lo[0] - T::lit(0.5)).floor(), cam.width) - 1).max(0);
    let x1 = (to_px((hi[0] - T::lit(0.5)).ceil(), cam.width) + 1).min(cam.width as i64 - 1);
    let y0 = (to_px((lo[1] - T::lit(0.5)).floor(), cam.height) - 1).max(0);
    let y1 = (to_px((hi[1] - T::lit(0.5)).ceil(), cam.height) + 1).min(cam.height as i64 - 1);
    if x0 <= x1 && y0 <= y1 {
        p.bbox = Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize]);
    }
    p
}

#[inline]
fn pixel_center<T: Real>(col: usize, row: usize) -> (T, T) {
    (
        T::from_usize_exact(col) + T::lit(0.5),
        T::from_usize_exact(row) + T::lit(0.5),
    )
}

#[inline]
fn intersect<T: Real>(
    pr: &Projected<T>,
    s: &Surfel<T>,
    cam: &Camera<T>,
    px: T,
    py: T,
    prm: &Params<T>,
) -> Option<Hit<T>> {
    let d = cam.ray(px, py);
    let m = linalg::dot(pr.n, d);
    if m.abs() < T::lit(PARALLEL_EPS) {
        return None;
    }
    let lambda = linalg::dot(pr.n, pr.pc) / m;
    if !(lambda > cam.near && lambda < cam.far) {
        return None;
    }
    let x = linalg::sub(linalg::scale(d, lambda), pr.pc);
    let u = linalg::dot(x, pr.au) / s.scales[0];
    let v = linalg::dot(x, pr.av) / s.scales[1];
    let mut r = u * u + v * v;
    if let Some(mu) = pr.mu {
        let (dx, dy) = (px - mu[0], py - mu[1]);
        r = r.min((dx * dx + dy * dy) * prm.inv_sigma2);
    }
    let g = (-T::lit(0.5) * r).exp();
    let alpha = (s.opacity * g).min(prm.alpha_max);
    if alpha < prm.alpha_min {
        return None;
    }
    let normal = if m > T::zero() { linalg::scale(pr.n, -T::one()) } else { pr.n };
    Some(Hit { alpha, z: lambda, normal })
}

/// Gradient of one hit's `(α, z, n, c)` with respect to the surfel parameters.
#[allow(clippy::too_many_arguments)]
fn intersect_backward<T: Real>(
    pr: &Projected<T>,
    s: &Surfel<T>,
    cam: &Camera<T>,
    px: T,
    py: T,
    prm: &Params<T>,
    g_alpha: T,
    g_z: T,
    g_normal: Vec3<T>,
    g_color: Vec3<T>,
    out: &mut SurfelGrad<T>,
) {
    let zero = T::zero();
    let two = T::lit(2.0);
    let d = cam.ray(px, py);
    let m = linalg::dot(pr.n, d);
    let lambda = linalg::dot(pr.n, pr.pc) / m;
    let x = linalg::sub(linalg::scale(d, lambda), pr.pc);
    let u = linalg::dot(x, pr.au) / s.scales[0];
    let v = linalg::dot(x, pr.av) / s.scales[1];
    let r3 = u * u + v * v;
    let mut r2 = T::infinity();
    let mut delta = [zero; 2];
    if let Some(mu) = pr.mu {
        delta = [px - mu[0], py - mu[1]];
        r2 = (delta[0] * delta[0] + delta[1] * delta[1]) * prm.inv_sigma2;
    }
    let use_3d = r3 <= r2;
    let r = if use_3d { r3 } else { r2 };
    let g = (-T::lit(0.5) * r).exp();
    let raw_alpha = s.opacity * g;

    for k in 0..3 {
        out.color[k] += g_color[k];
    }

    let mut g_pc = [zero; 3];
    let mut g_au = [zero; 3];
    let mut g_av = [zero; 3];
    let mut g_n = [zero; 3];

    if raw_alpha <= prm.alpha_max {
        out.opacity += g_alpha * g;
        let g_r = -T::lit(0.5) * g * g_alpha * s.opacity;
        if use_3d {
            let gu = two * u * g_r;
            let gv = two * v * g_r;
            let mut g_x = linalg::scale(pr.au, gu / s.scales[0]);
            linalg::axpy(&mut g_x, gv / s.scales[1], pr.av);
            linalg::axpy(&mut g_au, gu / s.scales[0], x);
            linalg::axpy(&mut g_av, gv / s.scales[1], x);
            out.scales[0] -= gu * u / s.scales[0];
            out.scales[1] -= gv * v / s.scales[1];
            // x = λ d − p_c
            let g_lambda = linalg::dot(g_x, d);
            linalg::axpy(&mut g_pc, -T::one(), g_x);
            // λ = (n·p_c)/(n·d)
            linalg::axpy(&mut g_pc, g_lambda / m, pr.n);
            linalg::axpy(&mut g_n, -g_lambda / m, x);
        } else {
            let pc = pr.pc;
            let gmx = -two * delta[0] * prm.inv_sigma2 * g_r;
            let gmy = -two * delta[1] * prm.inv_sigma2 * g_r;
            let iz = T::one() / pc[2];
            g_pc[0] += gmx * cam.fx * iz;
            g_pc[1] += gmy * cam.fy * iz;
            g_pc[2] -= (gmx * cam.fx * pc[0] + gmy * cam.fy * pc[1]) * iz * iz;
        }
    }

    // depth
    linalg::axpy(&mut g_pc, g_z / m, pr.n);
    linalg::axpy(&mut g_n, -g_z / m, x);
    // oriented normal
    let sign = if m > zero { -T::one() } else { T::one() };
    linalg::axpy(&mut g_n, sign, g_normal);

    let g_center = linalg::mat_t_vec(&cam.rotation, g_pc);
    for k in 0..3 {
        out.center[k] += g_center[k];
    }
    let c0 = linalg::mat_t_vec(&cam.rotation, g_au);
    let c1 = linalg::mat_t_vec(&cam.rotation, g_av);
    let c2 = linalg::mat_t_vec(&cam.rotation, g_n);
    let g_rot = linalg::from_columns(c0, c1, c2);
    let g_unit = linalg::quat_to_matrix_backward(pr.unit_q, &g_rot);
    let g_q = linalg::quat_normalize_backward(pr.unit_q, pr.q_norm, g_unit);
    for k in 0..4 {
        out.rotation[k] += g_q[k];
    }
}

/// Loss gradients flowing into a render.
#[derive(Clone, Debug)]
pub struct RenderGrads<T> {
    pub rgb: Image<T>,
    pub alpha: Image<T>,
    pub depth: Image<T>,
    pub normal: Image<T>,
    /// Per-pixel weight on `Σ_{i<j} ω_i ω_j |z_i − z_j|`.
    pub distortion: Vec<T>,
    /// Per-pixel `(weight, N)` on `Σ_i ω_i (1 − n_iᵀ N)` with `N` held fixed.
    pub consistency: Vec<(T, Vec3<T>)>,
}

impl<T: Real> RenderGrads<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            rgb: Image::zeros(height, width, 3),
            alpha: Image::zeros(height, width, 1),
            depth: Image::zeros(height, width, 1),
            normal: Image::zeros(height, width, 3),
            distortion: vec![T::zero(); height * width],
            consistency: vec![(T::zero(), [T::zero(); 3]); height * width],
        }
    }
}

struct PixelOut<T> {
    rgb: Vec3<T>,
    alpha: T,
    depth: T,
    normal: Vec3<T>,
    transmittance: T,
}

#[derive(Clone, Copy)]
struct Candidate<T> {
    z: T,
    id: u32,
    alpha: T,
    normal: Vec3<T>,
}

fn by_depth<T: Real>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    a.z.partial_cmp(&b.z).unwrap_or(Ordering::Equal).then(a.id.cmp(&b.id))
}

/// Composites sorted candidates; pushes the contributing records.
fn composite<T: Real>(
    hits: &[Candidate<T>],
    surfels: &[Surfel<T>],
    background: Vec3<T>,
    prm: &Params<T>,
    records: &mut Vec<Record<T>>,
) -> PixelOut<T> {
    let zero = T::zero();
    let mut t = T::one();
    let mut rgb = [zero; 3];
    let mut alpha = zero;
    let mut zsum = zero;
    let mut nsum = [zero; 3];
    for h in hits {
        let w = h.alpha * t;
        linalg::axpy(&mut rgb, w, surfels[h.id as usize].color);
        alpha += w;
        zsum += w * h.z;
        linalg::axpy(&mut nsum, w, h.normal);
        records.push(Record {
            surfel: h.id,
            alpha: h.alpha,
            weight: w,
            z: h.z,
            normal: h.normal,
        });
        t *= T::one() - h.alpha;
        if t < prm.min_t {
            break;
        }
    }
    linalg::axpy(&mut rgb, t, background);
    let normal = linalg::normalize(nsum, T::lit(1e-12)).unwrap_or([zero; 3]);
    PixelOut {
        rgb,
        alpha,
        depth: zsum / alpha.max(prm.depth_eps),
        normal,
        transmittance: t,
    }
}

struct TileOut<T> {
    pixels: Vec<(usize, PixelOut<T>)>,
    records: Vec<Record<T>>,
    lens: Vec<u32>,
}

fn validate_inputs<T: Real>(surfels: &SurfelSet<T>, cam: &Camera<T>, cfg: &RasterConfig) -> Result<()> {
    cam.validate(T::lit(1e-4))?;
    if cfg.tile_size == 0 {
        return Err(contract("tile size must be positive"));
    }
    if surfels.surfels.len() > u32::MAX as usize {
        return Err(contract("too many surfels"));
    }
    Ok(())
}

fn assemble<T: Real>(cam: &Camera<T>, background: Vec3<T>, n_surfels: usize, tiles: Vec<TileOut<T>>) -> RenderOutput<T> {
    let (h, w) = (cam.height, cam.width);
    let mut out = RenderOutput {
        rgb: Image::zeros(h, w, 3),
        alpha: Image::zeros(h, w, 1),
        depth: Image::zeros(h, w, 1),
        normal: Image::zeros(h, w, 3),
        final_transmittance: vec![T::one(); h * w],
        records: Vec::with_capacity(tiles.iter().map(|t| t.records.len()).sum()),
        ranges: vec![(0, 0); h * w],
        background,
        surfel_count: n_surfels,
    };
    for tile in tiles {
        let base = out.records.len() as u32;
        let mut offset = 0u32;
        for ((pixel, po), &len) in tile.pixels.iter().zip(&tile.lens) {
            out.rgb.data[pixel * 3..pixel * 3 + 3].copy_from_slice(&po.rgb);
            out.alpha.data[*pixel] = po.alpha;
            out.depth.data[*pixel] = po.depth;
            out.normal.data[pixel * 3..pixel * 3 + 3].copy_from_slice(&po.normal);
            out.final_transmittance[*pixel] = po.transmittance;
            out.ranges[*pixel] = (base + offset, len);
            offset += len;
        }
        out.records.extend(tile.records);
    }
    out
}

struct TileGrid {
    size: usize,
    nx: usize,
    ny: usize,
}

impl TileGrid {
    fn new(cam_w: usize, cam_h: usize, size: usize) -> Self {
        Self {
            size,
            nx: cam_w.div_ceil(size),
            ny: cam_h.div_ceil(size),
        }
    }

    fn pixel_bounds(&self, tile: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.nx, tile / self.nx);
        let x0 = tx * self.size;
        let y0 = ty * self.size;
        (x0, (x0 + self.size).min(w), y0, (y0 + self.size).min(h))
    }
}

/// Tiled forward pass.
pub fn rasterize<T: Real>(
    surfels: &SurfelSet<T>,
    cam: &Camera<T>,
    background: Vec3<T>,
    cfg: &RasterConfig,
) -> Result<RenderOutput<T>> {
    validate_inputs(surfels, cam, cfg)?;
    let prm = Params::new(cfg);
    let projected: Vec<Projected<T>> = surfels.surfels.iter().map(|s| project(s, cam, cfg)).collect();
    let grid = TileGrid::new(cam.width, cam.height, cfg.tile_size);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); grid.nx * grid.ny];
    for (id, p) in projected.iter().enumerate() {
        let Some([x0, x1, y0, y1]) = p.bbox else { continue };
        for ty in y0 / grid.size..=y1 / grid.size {
            for tx in x0 / grid.size..=x1 / grid.size {
                bins[ty * grid.nx + tx].push(id as u32);
            }
        }
    }
    let tiles: Vec<TileOut<T>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, ids)| {
            let (x0, x1, y0, y1) = grid.pixel_bounds(tile, cam.width, cam.height);
            let mut out = TileOut {
                pixels: Vec::with_capacity((x1 - x0) * (y1 - y0)),
                records: Vec::new(),
                lens: Vec::with_capacity((x1 - x0) * (y1 - y0)),
            };
            let mut hits: Vec<Candidate<T>> = Vec::new();
            for row in y0..y1 {
                for col in x0..x1 {
                    let (px, py) = pixel_center::<T>(col, row);
                    hits.clear();
                    for &id in ids {
                        let p = &projected[id as usize];
                        let [bx0, bx1, by0, by1] = p.bbox.expect("binned surfels have bounds");
                        if col < bx0 || col > bx1 || row < by0 || row > by1 {
                            continue;
                        }
                        if let Some(hit) = intersect(p, &surfels.surfels[id as usize], cam, px, py, &prm) {
                            hits.push(Candidate {
                                z: hit.z,
                                id,
                                alpha: hit.alpha,
                                normal: hit.normal,
                            });
                        }
                    }
                    hits.sort_by(by_depth);
                    let before = out.records.len();
                    let po = composite(&hits, &surfels.surfels, background, &prm, &mut out.records);
                    out.lens.push((out.records.len() - before) as u32);
                    out.pixels.push((row * cam.width + col, po));
                }
            }
            out
        })
        .collect();
    Ok(assemble(cam, background, surfels.len(), tiles))
}

/// Brute-force forward pass: every pixel against every surfel, no binning.
pub fn rasterize_reference<T: Real>(
    surfels: &SurfelSet<T>,
    cam: &Camera<T>,
    background: Vec3<T>,
    cfg: &RasterConfig,
) -> Result<RenderOutput<T>> {
    validate_inputs(surfels, cam, cfg)?;
    let prm = Params::new(cfg);
    let projected: Vec<Projected<T>> = surfels.surfels.iter().map(|s| project(s, cam, cfg)).collect();
    let mut tile = TileOut {
        pixels: Vec::new(),
        records: Vec::new(),
        lens: Vec::new(),
    };
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (px, py) = pixel_center::<T>(col, row);
            let mut hits: Vec<Candidate<T>> = surfels
                .surfels
                .iter()
                .zip(&projected)
                .enumerate()
                .filter(|(_, (_, p))| p.usable)
                .filter_map(|(id, (s, p))| {
                    let hit = intersect(p, s, cam, px, py, &prm)?;
                    Some(Candidate {
                        z: hit.z,
                        id: id as u32,
                        alpha: hit.alpha,
                        normal: hit.normal,
                    })
                })
                .collect();
            hits.sort_by(by_depth);
            let before = tile.records.len();
            let po = composite(&hits, &surfels.surfels, background, &prm, &mut tile.records);
            tile.lens.push((tile.records.len() - before) as u32);
            tile.pixels.push((row * cam.width + col, po));
        }
    }
    Ok(assemble(cam, background, surfels.len(), vec![tile]))
}

/// Analytic backward pass through the compositing equations (sort order fixed).
pub fn rasterize_backward<T: Real>(
    surfels: &SurfelSet<T>,
    cam: &Camera<T>,
    cfg: &RasterConfig,
    forward: &RenderOutput<T>,
    grads: &RenderGrads<T>,
) -> Result<GradientBuffer<T>> {
    let (h, w) = (cam.height, cam.width);
    if forward.surfel_count != surfels.len() || forward.height() != h || forward.width() != w {
        return Err(contract("forward render does not belong to these surfels and camera"));
    }
    if !grads.rgb.same_shape(&forward.rgb)
        || grads.alpha.data.len() != h * w
        || grads.depth.data.len() != h * w
        || grads.normal.data.len() != h * w * 3
        || grads.distortion.len() != h * w
        || grads.consistency.len() != h * w
    {
        return Err(contract("upstream gradient shapes do not match the render"));
    }
    let prm = Params::new(cfg);
    let projected: Vec<Projected<T>> = surfels.surfels.iter().map(|s| project(s, cam, cfg)).collect();
    let grid = TileGrid::new(w, h, cfg.tile_size.max(1));
    let zero = T::zero();
    let one = T::one();

    let tiles: Vec<(Vec<u32>, Vec<SurfelGrad<T>>)> = (0..grid.nx * grid.ny)
        .into_par_iter()
        .map(|tile| {
            let (x0, x1, y0, y1) = grid.pixel_bounds(tile, w, h);
            let mut ids: Vec<u32> = Vec::new();
            for row in y0..y1 {
                for col in x0..x1 {
                    ids.extend(forward.pixel_records(row * w + col).iter().map(|r| r.surfel));
                }
            }
            ids.sort_unstable();
            ids.dedup();
            let mut local = vec![SurfelGrad::zero(); ids.len()];
            let mut g_weight: Vec<T> = Vec::new();
            let mut g_z: Vec<T> = Vec::new();
            let mut g_n: Vec<Vec3<T>> = Vec::new();
            for row in y0..y1 {
                for col in x0..x1 {
                    let pixel = row * w + col;
                    let recs = forward.pixel_records(pixel);
                    if recs.is_empty() {
                        continue;
                    }
                    let g_rgb = [0, 1, 2].map(|c| grads.rgb.data[pixel * 3 + c]);
                    let g_a = grads.alpha.data[pixel];
                    let g_d = grads.depth.data[pixel];
                    let g_nmap = [0, 1, 2].map(|c| grads.normal.data[pixel * 3 + c]);
                    let w_dd = grads.distortion[pixel];
                    let (w_nc, n_target) = grads.consistency[pixel];
                    let t_fin = forward.final_transmittance[pixel];

                    let alpha_sum: T = recs.iter().map(|r| r.weight).sum();
                    let a_hat = alpha_sum.max(prm.depth_eps);
                    let z_sum: T = recs.iter().map(|r| r.weight * r.z).sum();
                    let mut n_sum = [zero; 3];
                    for r in recs {
                        linalg::axpy(&mut n_sum, r.weight, r.normal);
                    }
                    let n_len = linalg::norm(n_sum);
                    let g_nsum = if n_len > T::lit(1e-12) {
                        let nh = linalg::scale(n_sum, one / n_len);
                        let proj = linalg::dot(nh, g_nmap);
                        linalg::scale(linalg::sub(g_nmap, linalg::scale(nh, proj)), one / n_len)
                    } else {
                        [zero; 3]
                    };
                    let d_depth_d_w_shared = if alpha_sum >= prm.depth_eps {
                        z_sum / (a_hat * a_hat)
                    } else {
                        zero
                    };
                    let k_total = recs.len();
                    g_weight.clear();
                    g_z.clear();
                    g_n.clear();
                    let w_total = alpha_sum;
                    let mut w_before = zero;
                    let mut wz_before = zero;
                    for r in recs.iter() {
                        let c = surfels.surfels[r.surfel as usize].color;
                        let mut gw = linalg::dot(g_rgb, c) + g_a;
                        gw += g_d * (r.z / a_hat - d_depth_d_w_shared);
                        gw += linalg::dot(g_nsum, r.normal);
                        let mut gz = g_d * r.weight / a_hat;
                        let mut gn = linalg::scale(g_nsum, r.weight);
                        if w_dd != zero {
                            let w_after = w_total - w_before - r.weight;
                            let wz_after = z_sum - wz_before - r.weight * r.z;
                            let pair = r.z * w_before - wz_before + (wz_after - r.z * w_after);
                            gw += w_dd * pair;
                            gz += w_dd * r.weight * (w_before - w_after);
                        }
                        if w_nc != zero {
                            gw += w_nc * (one - linalg::dot(r.normal, n_target));
                            linalg::axpy(&mut gn, -w_nc * r.weight, n_target);
                        }
                        w_before += r.weight;
                        wz_before += r.weight * r.z;
                        g_weight.push(gw);
                        g_z.push(gz);
                        g_n.push(gn);
                    }
                    // ω_k = α_k T_k, T_fin = Π(1 − α_j): sweep from the back
                    let mut suffix = linalg::dot(g_rgb, forward.background) * t_fin;
                    let (px, py) = pixel_center::<T>(col, row);
                    for k in (0..k_total).rev() {
                        let r = &recs[k];
                        let t_k = if r.alpha > zero { r.weight / r.alpha } else { zero };
                        let g_alpha = g_weight[k] * t_k - suffix / (one - r.alpha);
                        suffix += g_weight[k] * r.weight;
                        let id = r.surfel as usize;
                        let slot = ids.binary_search(&r.surfel).expect("record id collected");
                        intersect_backward(
                            &projected[id],
                            &surfels.surfels[id],
                            cam,
                            px,
                            py,
                            &prm,
                            g_alpha,
                            g_z[k],
                            g_n[k],
                            linalg::scale(g_rgb, r.weight),
                            &mut local[slot],
                        );
                    }
                }
            }
            (ids, local)
        })
        .collect();

    let mut out = GradientBuffer::zeros(surfels.len());
    for (ids, local) in tiles {
        for (id, g) in ids.iter().zip(&local) {
            out.surfels[*id as usize].add_assign(g);
        }
    }
    Ok(out)
}
