//! Procedurally generated desk-scale head rig used as the test and benchmark
//! fixture: an ellipsoidal head chart plus two eyeball charts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Joint, JointName, TemplateRig, DEFAULT_EXPRESSION_DIM};
use crate::linalg;
use crate::scalar::Real;

pub const HEAD_RADII: [f64; 3] = [0.08, 0.11, 0.095];
pub const EYE_RADIUS: f64 = 0.012;
pub const EYE_CENTERS: [[f64; 3]; 2] = [[0.032, 0.025, 0.080], [-0.032, 0.025, 0.080]];

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    uvs: Vec<[[f64; 2]; 3]>,
}

impl MeshBuilder {
    /// Adds a lat-long ellipsoid; the front (+z) sits at u = 0.5 of its chart.
    fn add_ellipsoid(
        &mut self,
        center: [f64; 3],
        radii: [f64; 3],
        n_lat: usize,
        n_lon: usize,
        rect: [f64; 4],
    ) -> std::ops::Range<usize> {
        let start = self.vertices.len();
        let [u0, u1, v0, v1] = rect;
        let map_uv = |u: f64, v: f64| [u0 + u * (u1 - u0), v0 + v * (v1 - v0)];
        let point = |theta: f64, u: f64| {
            let phi = 2.0 * std::f64::consts::PI * (u - 0.5);
            [
                center[0] + radii[0] * theta.sin() * phi.sin(),
                center[1] + radii[1] * theta.cos(),
                center[2] + radii[2] * theta.sin() * phi.cos(),
            ]
        };
        let top = self.vertices.len();
        self.vertices.push([center[0], center[1] + radii[1], center[2]]);
        let ring = |i: usize, j: usize| top + 1 + (i - 1) * n_lon + (j % n_lon);
        for i in 1..n_lat {
            let theta = std::f64::consts::PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                self.vertices.push(point(theta, j as f64 / n_lon as f64));
            }
        }
        let bottom = self.vertices.len();
        self.vertices.push([center[0], center[1] - radii[1], center[2]]);
        let u = |j: usize| j as f64 / n_lon as f64;
        let v = |i: usize| i as f64 / n_lat as f64;
        for j in 0..n_lon {
            self.push_face(
                center,
                [top, ring(1, j), ring(1, j + 1)],
                [map_uv((j as f64 + 0.5) / n_lon as f64, 0.0), map_uv(u(j), v(1)), map_uv(u(j + 1), v(1))],
            );
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
                let (ua, ub) = (u(j), u(j + 1));
                let (va, vb) = (v(i), v(i + 1));
                self.push_face(center, [a, c, b], [map_uv(ua, va), map_uv(ua, vb), map_uv(ub, va)]);
                self.push_face(center, [b, c, d], [map_uv(ub, va), map_uv(ua, vb), map_uv(ub, vb)]);
            }
        }
        for j in 0..n_lon {
            self.push_face(
                center,
                [bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)],
                [
                    map_uv((j as f64 + 0.5) / n_lon as f64, 1.0),
                    map_uv(u(j + 1), v(n_lat - 1)),
                    map_uv(u(j), v(n_lat - 1)),
                ],
            );
        }
        start..self.vertices.len()
    }

    /// Pushes a face wound so that its normal points away from `center`.
    fn push_face(&mut self, center: [f64; 3], mut f: [usize; 3], mut uv: [[f64; 2]; 3]) {
        let p = f.map(|i| self.vertices[i]);
        let n = linalg::cross(linalg::sub(p[1], p[0]), linalg::sub(p[2], p[0]));
        let centroid = linalg::scale(linalg::add(linalg::add(p[0], p[1]), p[2]), 1.0 / 3.0);
        if linalg::dot(n, linalg::sub(centroid, center)) < 0.0 {
            f.swap(1, 2);
            uv.swap(1, 2);
        }
        self.faces.push(f);
        self.uvs.push(uv);
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// The fixture rig with the default expression dimension.
pub fn head_rig<T: Real>(seed: u64) -> TemplateRig<T> {
    head_rig_with(seed, DEFAULT_EXPRESSION_DIM, 16, 24)
}

/// Fixture rig with explicit expression dimension and head tessellation.
pub fn head_rig_with<T: Real>(seed: u64, num_expr: usize, n_lat: usize, n_lon: usize) -> TemplateRig<T> {
    let mut mesh = MeshBuilder::default();
    let head = mesh.add_ellipsoid([0.0; 3], HEAD_RADII, n_lat, n_lon, [0.0, 1.0, 0.0, 0.75]);
    let eye_l = mesh.add_ellipsoid(EYE_CENTERS[0], [EYE_RADIUS; 3], 6, 8, [0.05, 0.45, 0.8, 0.98]);
    let eye_r = mesh.add_ellipsoid(EYE_CENTERS[1], [EYE_RADIUS; 3], 6, 8, [0.55, 0.95, 0.8, 0.98]);

    let joints = vec![
        Joint { name: JointName::Glob, rest: [0.0, 0.0, 0.0], parent: None },
        Joint { name: JointName::Neck, rest: [0.0, -0.08, -0.01], parent: Some(0) },
        Joint { name: JointName::Jaw, rest: [0.0, -0.015, 0.0], parent: Some(1) },
        Joint { name: JointName::EyeL, rest: EYE_CENTERS[0], parent: Some(1) },
        Joint { name: JointName::EyeR, rest: EYE_CENTERS[1], parent: Some(1) },
    ];
    let nv = mesh.vertices.len();
    let nj = joints.len();
    let mut weights = vec![0.0; nv * nj];
    for vi in head.clone() {
        let [_, y, z] = mesh.vertices[vi];
        let neck = smoothstep(-0.05, -0.10, y);
        let jaw = smoothstep(-0.02, -0.05, y) * smoothstep(0.0, 0.04, z) * (1.0 - neck);
        let row = &mut weights[vi * nj..(vi + 1) * nj];
        row[1] = neck;
        row[2] = jaw;
        row[0] = 1.0 - neck - jaw;
    }
    for vi in eye_l.clone() {
        weights[vi * nj + 3] = 1.0;
    }
    for vi in eye_r.clone() {
        weights[vi * nj + 4] = 1.0;
    }

    // smooth, decaying expression fields on the front of the head; eyeballs stay rigid
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b1e0);
    let mut basis = vec![0.0; 3 * nv * num_expr];
    for k in 0..num_expr {
        let yaw: f64 = rng.random_range(-1.2..1.2);
        let pitch: f64 = rng.random_range(-0.9..0.6);
        let c = [
            HEAD_RADII[0] * pitch.cos() * yaw.sin(),
            HEAD_RADII[1] * pitch.sin(),
            HEAD_RADII[2] * pitch.cos() * yaw.cos(),
        ];
        let width: f64 = rng.random_range(0.015..0.04);
        let amp = 0.004 / (1.0 + k as f64 / 8.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let shear = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0];
        for vi in head.clone() {
            let p = mesh.vertices[vi];
            let d2 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>();
            let falloff = (-d2 / (2.0 * width * width)).exp();
            let n = linalg::normalize(
                [p[0] / HEAD_RADII[0].powi(2), p[1] / HEAD_RADII[1].powi(2), p[2] / HEAD_RADII[2].powi(2)],
                1e-12,
            )
            .unwrap_or([0.0, 0.0, 1.0]);
            for a in 0..3 {
                basis[(3 * vi + a) * num_expr + k] = amp * falloff * (n[a] + shear[a]);
            }
        }
    }

    let c = |x: f64| T::lit(x);
    TemplateRig::new(
        mesh.vertices.iter().map(|v| v.map(c)).collect(),
        mesh.faces,
        mesh.uvs.iter().map(|t| t.map(|p| p.map(c))).collect(),
        basis.into_iter().map(c).collect(),
        num_expr,
        joints
            .into_iter()
            .map(|j| Joint { name: j.name, rest: j.rest.map(c), parent: j.parent })
            .collect(),
        weights.into_iter().map(c).collect(),
    )
    .expect("fixture rig is well-formed")
}

/// A gently curved `n × n`-vertex patch facing +z, rigged to `glob` only, with
/// its UV chart on `[0, 0.75]²`. Small enough for exhaustive gradient checks.
pub fn patch_rig<T: Real>(seed: u64, num_expr: usize, n: usize) -> TemplateRig<T> {
    assert!(n >= 2, "patch needs at least 2×2 vertices");
    let half = 0.1;
    let mut vertices = Vec::with_capacity(n * n);
    let mut uv = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (fu, fv) = (c as f64 / (n - 1) as f64, r as f64 / (n - 1) as f64);
            let (x, y) = (-half + 2.0 * half * fu, half - 2.0 * half * fv);
            vertices.push([x, y, -2.0 * (x * x + y * y)]);
            uv.push([0.75 * fu, 0.75 * fv]);
        }
    }
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for r in 0..n - 1 {
        for c in 0..n - 1 {
            let (a, b, d, e) = (r * n + c, r * n + c + 1, (r + 1) * n + c, (r + 1) * n + c + 1);
            // y decreases with r, so (a, d, b) winds counter-clockwise seen from +z
            for f in [[a, d, b], [b, d, e]] {
                faces.push(f);
                uvs.push(f.map(|i| uv[i]));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a7c);
    let nv = vertices.len();
    let mut basis = vec![0.0; 3 * nv * num_expr];
    for v in basis.iter_mut() {
        *v = rng.random_range(-0.004..0.004);
    }
    let c = |x: f64| T::lit(x);
    TemplateRig::new(
        vertices.iter().map(|v| v.map(c)).collect(),
        faces,
        uvs.iter().map(|t| t.map(|p| p.map(c))).collect(),
        basis.into_iter().map(c).collect(),
        num_expr,
        vec![Joint { name: JointName::Glob, rest: [T::zero(); 3], parent: None }],
        vec![T::one(); nv],
    )
    .expect("patch rig is well-formed")
}
