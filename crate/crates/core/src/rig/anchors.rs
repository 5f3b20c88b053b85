use log::warn;

use super::TemplateRig;
use crate::error::{contract, Result};
use crate::linalg::{self, Vec3};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelAnchor<T> {
    pub face: usize,
    /// Barycentric weights of the texel center in the face's UV triangle.
    pub bary: Vec3<T>,
}

/// Surface home of every texel at a given UV resolution; `None` = outside every chart.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTable<T> {
    pub height: usize,
    pub width: usize,
    pub texels: Vec<Option<TexelAnchor<T>>>,
}

impl<T: Real> AnchorTable<T> {
    pub fn mask(&self) -> Vec<bool> {
        self.texels.iter().map(Option::is_some).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.texels.iter().filter(|t| t.is_some()).count()
    }
}

/// UV center of texel `(row, col)`.
#[inline]
pub fn texel_center<T: Real>(row: usize, col: usize, height: usize, width: usize) -> [T; 2] {
    [
        (T::from_usize_exact(col) + T::lit(0.5)) / T::from_usize_exact(width),
        (T::from_usize_exact(row) + T::lit(0.5)) / T::from_usize_exact(height),
    ]
}

#[inline]
fn edge<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Barycentric coordinates of `p` in the UV triangle, or `None` if outside
/// (boundary counts as inside) or degenerate.
pub fn uv_barycentric<T: Real>(tri: &[[T; 2]; 3], p: [T; 2]) -> Option<Vec3<T>> {
    let area = edge(tri[0], tri[1], tri[2]);
    if area == T::zero() {
        return None;
    }
    let w0 = edge(tri[1], tri[2], p) / area;
    let w1 = edge(tri[2], tri[0], p) / area;
    let w2 = edge(tri[0], tri[1], p) / area;
    if w0 < T::zero() || w1 < T::zero() || w2 < T::zero() {
        return None;
    }
    let s = w0 + w1 + w2;
    Some([w0 / s, w1 / s, w2 / s])
}

/// Assigns each texel center to the lowest-index UV triangle containing it.
pub fn texel_anchors<T: Real>(rig: &TemplateRig<T>, height: usize, width: usize) -> Result<AnchorTable<T>> {
    if height == 0 || width == 0 {
        return Err(contract("anchor resolution must be at least 1×1"));
    }
    let mut texels: Vec<Option<TexelAnchor<T>>> = vec![None; height * width];
    let mut overlaps = 0usize;
    let hf = T::from_usize_exact(height);
    let wf = T::from_usize_exact(width);
    for (face, tri) in rig.uv_coords().iter().enumerate() {
        let (mut umin, mut umax, mut vmin, mut vmax) = (T::one(), T::zero(), T::one(), T::zero());
        for c in tri {
            umin = umin.min(c[0]);
            umax = umax.max(c[0]);
            vmin = vmin.min(c[1]);
            vmax = vmax.max(c[1]);
        }
        // texel centers (col + 0.5)/W inside [umin, umax]
        // one texel of slack on each side; the barycentric test decides
        let to_range = |lo: T, hi: T, n: T, count: usize| {
            let first = (lo * n - T::lit(1.5)).ceil().max(T::zero());
            let last = (hi * n + T::lit(0.5)).floor();
            if last < T::zero() {
                return None;
            }
            let first = first.to_usize().unwrap_or(0);
            let last = last.to_usize().unwrap_or(0).min(count - 1);
            (first <= last).then_some((first, last))
        };
        let (Some((c0, c1)), Some((r0, r1))) = (to_range(umin, umax, wf, width), to_range(vmin, vmax, hf, height))
        else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let p = texel_center::<T>(row, col, height, width);
                if let Some(bary) = uv_barycentric(tri, p) {
                    let slot = &mut texels[row * width + col];
                    if slot.is_some() {
                        overlaps += 1;
                    } else {
                        *slot = Some(TexelAnchor { face, bary });
                    }
                }
            }
        }
    }
    if overlaps > 0 {
        warn!("{overlaps} texel centers fall in overlapping UV charts; lowest face index kept");
    }
    Ok(AnchorTable {
        height,
        width,
        texels,
    })
}

/// Tangent frame of one texel on the posed surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelFrame<T> {
    pub position: Vec3<T>,
    pub t_u: Vec3<T>,
    pub t_v: Vec3<T>,
    pub normal: Vec3<T>,
    pub face: usize,
    pub bary: Vec3<T>,
    /// World-space edge length of the texel footprint on its face.
    pub extent: T,
}

impl<T: Real> TexelFrame<T> {
    /// Frame as a rotation matrix with columns `[t_u, t_v, n]`.
    pub fn matrix(&self) -> linalg::Mat3<T> {
        linalg::from_columns(self.t_u, self.t_v, self.normal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceFrames<T> {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Option<TexelFrame<T>>>,
}

impl<T: Real> SurfaceFrames<T> {
    pub fn mask(&self) -> Vec<bool> {
        self.frames.iter().map(Option::is_some).collect()
    }
}

struct FaceBasis<T> {
    t_u: Vec3<T>,
    t_v: Vec3<T>,
    normal: Vec3<T>,
    extent: T,
}

fn face_basis<T: Real>(
    p: [Vec3<T>; 3],
    uv: &[[T; 2]; 3],
    height: usize,
    width: usize,
) -> Option<FaceBasis<T>> {
    let e1 = linalg::sub(p[1], p[0]);
    let e2 = linalg::sub(p[2], p[0]);
    let n_raw = linalg::cross(e1, e2);
    let eps = T::lit(1e-14);
    let normal = linalg::normalize(n_raw, eps)?;
    let (du1, dv1) = (uv[1][0] - uv[0][0], uv[1][1] - uv[0][1]);
    let (du2, dv2) = (uv[2][0] - uv[0][0], uv[2][1] - uv[0][1]);
    let det = du1 * dv2 - du2 * dv1;
    if det.abs() < T::lit(1e-18) {
        return None;
    }
    // dP/du and dP/dv from the UV parameterization of the face
    let dpdu = linalg::scale(linalg::sub(linalg::scale(e1, dv2), linalg::scale(e2, dv1)), T::one() / det);
    let dpdv = linalg::scale(linalg::sub(linalg::scale(e2, du1), linalg::scale(e1, du2)), T::one() / det);
    let tangent = linalg::sub(dpdu, linalg::scale(normal, linalg::dot(dpdu, normal)));
    let t_u = linalg::normalize(tangent, eps)?;
    let t_v = linalg::cross(normal, t_u);
    let extent = (linalg::norm(dpdu) / T::from_usize_exact(width) * linalg::norm(dpdv)
        / T::from_usize_exact(height))
    .sqrt();
    Some(FaceBasis {
        t_u,
        t_v,
        normal,
        extent,
    })
}

/// Per-texel surface frames on (posed) vertices.
pub fn surface_frames<T: Real>(
    rig: &TemplateRig<T>,
    vertices: &[Vec3<T>],
    anchors: &AnchorTable<T>,
) -> Result<SurfaceFrames<T>> {
    if vertices.len() != rig.num_vertices() {
        return Err(contract("vertex count does not match the rig"));
    }
    let faces = rig.faces();
    let bases: Vec<Option<FaceBasis<T>>> = faces
        .iter()
        .zip(rig.uv_coords())
        .map(|(f, uv)| {
            face_basis(
                [vertices[f[0]], vertices[f[1]], vertices[f[2]]],
                uv,
                anchors.height,
                anchors.width,
            )
        })
        .collect();
    let mut frames = Vec::with_capacity(anchors.texels.len());
    for texel in &anchors.texels {
        let frame = texel.and_then(|a| {
            let f = faces.get(a.face)?;
            let basis = bases[a.face].as_ref()?;
            let mut position = [T::zero(); 3];
            for k in 0..3 {
                linalg::axpy(&mut position, a.bary[k], vertices[f[k]]);
            }
            Some(TexelFrame {
                position,
                t_u: basis.t_u,
                t_v: basis.t_v,
                normal: basis.normal,
                face: a.face,
                bary: a.bary,
                extent: basis.extent,
            })
        });
        frames.push(frame);
    }
    Ok(SurfaceFrames {
        height: anchors.height,
        width: anchors.width,
        frames,
    })
}
