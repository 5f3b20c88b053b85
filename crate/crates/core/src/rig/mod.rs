//! Deformable template head rig: linear blendshapes, five-joint linear blend
//! skinning, and UV-texel anchoring onto the posed surface.

mod anchors;
pub mod fixture;
pub mod io;

pub use anchors::{
    surface_frames, texel_anchors, texel_center, uv_barycentric, AnchorTable, SurfaceFrames, TexelAnchor, TexelFrame,
};

use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::Real;

/// Default number of expression coefficients.
pub const DEFAULT_EXPRESSION_DIM: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum JointName {
    Glob,
    Neck,
    Jaw,
    EyeL,
    EyeR,
}

impl JointName {
    pub fn as_str(self) -> &'static str {
        match self {
            JointName::Glob => "glob",
            JointName::Neck => "neck",
            JointName::Jaw => "jaw",
            JointName::EyeL => "eyeL",
            JointName::EyeR => "eyeR",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint<T> {
    pub name: JointName,
    pub rest: Vec3<T>,
    /// Parent joint; `None` only for the root (`glob`). Parents precede children.
    pub parent: Option<usize>,
}

/// Head mesh with UV layout, expression basis and skinning rig.
#[derive(Clone, Debug)]
pub struct TemplateRig<T> {
    vertices: Vec<Vec3<T>>,
    faces: Vec<[usize; 3]>,
    uv_coords: Vec<[[T; 2]; 3]>,
    /// `3V × E`, row-major; row `3v + k` holds the k-th coordinate of vertex v.
    blendshape_basis: Vec<T>,
    num_expr: usize,
    joints: Vec<Joint<T>>,
    /// `V × J`, row-major.
    skin_weights: Vec<T>,
}

impl<T: Real> TemplateRig<T> {
    /// Validates and assembles a rig.
    pub fn new(
        vertices: Vec<Vec3<T>>,
        faces: Vec<[usize; 3]>,
        uv_coords: Vec<[[T; 2]; 3]>,
        blendshape_basis: Vec<T>,
        num_expr: usize,
        joints: Vec<Joint<T>>,
        skin_weights: Vec<T>,
    ) -> Result<Self> {
        let nv = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(invalid("rig", format!("face {f:?} indexes past {nv} vertices")));
        }
        if uv_coords.len() != faces.len() {
            return Err(invalid(
                "rig",
                format!("{} uv corner triples for {} faces", uv_coords.len(), faces.len()),
            ));
        }
        let unit = T::zero()..=T::one();
        if uv_coords
            .iter()
            .flatten()
            .flatten()
            .any(|c| !unit.contains(c))
        {
            return Err(invalid("rig", "uv coordinate outside [0,1]²"));
        }
        if blendshape_basis.len() != 3 * nv * num_expr {
            return Err(invalid(
                "rig",
                format!(
                    "blendshape basis has {} entries, expected 3·{nv}·{num_expr}",
                    blendshape_basis.len()
                ),
            ));
        }
        validate_joints(&joints)?;
        let nj = joints.len();
        if skin_weights.len() != nv * nj {
            return Err(invalid(
                "rig",
                format!("skin weights have {} entries, expected {nv}·{nj}", skin_weights.len()),
            ));
        }
        for (v, row) in skin_weights.chunks(nj).enumerate() {
            if row.iter().any(|&w| w < T::zero() || !w.is_finite()) {
                return Err(invalid("rig", format!("negative skin weight on vertex {v}")));
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > T::lit(1e-6) {
                return Err(invalid("rig", format!("skin weights of vertex {v} sum to {sum}")));
            }
        }
        if vertices.iter().flatten().any(|x| !x.is_finite())
            || blendshape_basis.iter().any(|x| !x.is_finite())
        {
            return Err(invalid("rig", "non-finite vertex or basis value"));
        }
        Ok(Self {
            vertices,
            faces,
            uv_coords,
            blendshape_basis,
            num_expr,
            joints,
            skin_weights,
        })
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uv_coords(&self) -> &[[[T; 2]; 3]] {
        &self.uv_coords
    }

    pub fn blendshape_basis(&self) -> &[T] {
        &self.blendshape_basis
    }

    pub fn num_expr(&self) -> usize {
        self.num_expr
    }

    pub fn joints(&self) -> &[Joint<T>] {
        &self.joints
    }

    pub fn skin_weights(&self) -> &[T] {
        &self.skin_weights
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cast<U: Real>(&self) -> TemplateRig<U> {
        let c = |x: T| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan);
        TemplateRig {
            vertices: self.vertices.iter().map(|v| v.map(c)).collect(),
            faces: self.faces.clone(),
            uv_coords: self.uv_coords.iter().map(|t| t.map(|p| p.map(c))).collect(),
            blendshape_basis: self.blendshape_basis.iter().map(|&x| c(x)).collect(),
            num_expr: self.num_expr,
            joints: self
                .joints
                .iter()
                .map(|j| Joint {
                    name: j.name,
                    rest: j.rest.map(c),
                    parent: j.parent,
                })
                .collect(),
            skin_weights: self.skin_weights.iter().map(|&x| c(x)).collect(),
        }
    }

    /// Fully deformed vertices: blendshapes followed by skinning.
    pub fn deform(&self, d: &DrivingSignal<T>) -> Result<Vec<Vec3<T>>> {
        let shaped = apply_blendshapes(self, &d.psi)?;
        pose_joints(&shaped, self, d)
    }
}

fn validate_joints<T: Real>(joints: &[Joint<T>]) -> Result<()> {
    let Some(root) = joints.first() else {
        return Err(invalid("rig", "no joints"));
    };
    if root.name != JointName::Glob || root.parent.is_some() {
        return Err(invalid("rig", "joint 0 must be the parentless glob joint"));
    }
    for (i, j) in joints.iter().enumerate().skip(1) {
        match j.parent {
            Some(p) if p < i => {}
            _ => {
                return Err(invalid(
                    "rig",
                    format!("joint {i} ({}) must have a preceding parent", j.name.as_str()),
                ))
            }
        }
        if joints[..i].iter().any(|o| o.name == j.name) {
            return Err(invalid("rig", format!("duplicate joint {}", j.name.as_str())));
        }
    }
    Ok(())
}

/// Expression code plus joint and global pose: Θ = [ψ, θ_jaw, θ_eyes, θ_neck, θ_glob, t].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingSignal<T> {
    pub psi: Vec<T>,
    pub jaw: [T; 3],
    pub eyes: [T; 6],
    pub neck: [T; 3],
    pub glob: [T; 3],
    pub t: [T; 3],
}

/// Width of every pose group after ψ, in declaration order.
pub const POSE_GROUP_DIMS: [usize; 5] = [3, 6, 3, 3, 3];

impl<T: Real> DrivingSignal<T> {
    pub fn zeros(num_expr: usize) -> Self {
        let z = T::zero();
        Self {
            psi: vec![z; num_expr],
            jaw: [z; 3],
            eyes: [z; 6],
            neck: [z; 3],
            glob: [z; 3],
            t: [z; 3],
        }
    }

    pub fn raw_dim(&self) -> usize {
        self.psi.len() + 18
    }

    /// Flattens in declaration order.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = self.psi.clone();
        v.extend_from_slice(&self.jaw);
        v.extend_from_slice(&self.eyes);
        v.extend_from_slice(&self.neck);
        v.extend_from_slice(&self.glob);
        v.extend_from_slice(&self.t);
        v
    }

    pub fn from_slice(values: &[T], num_expr: usize) -> Result<Self> {
        if values.len() != num_expr + 18 {
            return Err(contract(format!(
                "driving vector has {} entries, expected {}",
                values.len(),
                num_expr + 18
            )));
        }
        let (psi, rest) = values.split_at(num_expr);
        let arr3 = |s: &[T]| [s[0], s[1], s[2]];
        Ok(Self {
            psi: psi.to_vec(),
            jaw: arr3(&rest[0..3]),
            eyes: [rest[3], rest[4], rest[5], rest[6], rest[7], rest[8]],
            neck: arr3(&rest[9..12]),
            glob: arr3(&rest[12..15]),
            t: arr3(&rest[15..18]),
        })
    }

    /// The six groups (ψ, jaw, eyes, neck, glob, t) as slices.
    pub fn groups(&self) -> [&[T]; 6] {
        [&self.psi, &self.jaw, &self.eyes, &self.neck, &self.glob, &self.t]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(invalid("driving signal", "non-finite entry"))
        }
    }

    pub fn cast<U: Real>(&self) -> DrivingSignal<U> {
        let v: Vec<U> = self
            .to_vec()
            .into_iter()
            .map(|x| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan))
            .collect();
        DrivingSignal::from_slice(&v, self.psi.len()).expect("same layout")
    }

    fn rotation_for(&self, joint: JointName) -> Vec3<T> {
        match joint {
            JointName::Glob => self.glob,
            JointName::Neck => self.neck,
            JointName::Jaw => self.jaw,
            JointName::EyeL => [self.eyes[0], self.eyes[1], self.eyes[2]],
            JointName::EyeR => [self.eyes[3], self.eyes[4], self.eyes[5]],
        }
    }
}

/// Canonical vertices displaced by the expression basis.
pub fn apply_blendshapes<T: Real>(rig: &TemplateRig<T>, psi: &[T]) -> Result<Vec<Vec3<T>>> {
    let e = rig.num_expr;
    if psi.len() != e {
        return Err(contract(format!(
            "expression code has {} entries, basis has {e} columns",
            psi.len()
        )));
    }
    let out = rig
        .vertices
        .iter()
        .enumerate()
        .map(|(v, base)| {
            let mut p = *base;
            for (k, coord) in p.iter_mut().enumerate() {
                let row = &rig.blendshape_basis[(3 * v + k) * e..(3 * v + k + 1) * e];
                *coord += row.iter().zip(psi).fold(T::zero(), |acc, (&b, &w)| acc + b * w);
            }
            p
        })
        .collect();
    Ok(out)
}

/// Affine map `x ↦ M x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Affine<T> {
    pub linear: Mat3<T>,
    pub offset: Vec3<T>,
}

impl<T: Real> Affine<T> {
    pub fn apply(&self, x: Vec3<T>) -> Vec3<T> {
        linalg::add(linalg::mat_vec(&self.linear, x), self.offset)
    }

    fn then_inner(&self, inner: &Affine<T>) -> Affine<T> {
        // self ∘ inner
        Affine {
            linear: linalg::mat_mul(&self.linear, &inner.linear),
            offset: self.apply(inner.offset),
        }
    }
}

/// Per-joint skinning transforms mapping rest-pose points to posed points.
pub fn joint_transforms<T: Real>(rig: &TemplateRig<T>, d: &DrivingSignal<T>) -> Vec<Affine<T>> {
    let mut out: Vec<Affine<T>> = Vec::with_capacity(rig.joints.len());
    for joint in &rig.joints {
        let rot = linalg::axis_angle_to_matrix(d.rotation_for(joint.name));
        // local: x ↦ R (x − rest) + rest
        let local = Affine {
            linear: rot,
            offset: linalg::sub(joint.rest, linalg::mat_vec(&rot, joint.rest)),
        };
        let world = match joint.parent {
            Some(p) => out[p].then_inner(&local),
            None => Affine {
                linear: local.linear,
                offset: linalg::add(local.offset, d.t),
            },
        };
        out.push(world);
    }
    out
}

/// Linear blend skinning of `vertices` under the driving signal's joint poses.
pub fn pose_joints<T: Real>(
    vertices: &[Vec3<T>],
    rig: &TemplateRig<T>,
    d: &DrivingSignal<T>,
) -> Result<Vec<Vec3<T>>> {
    d.validate()?;
    if vertices.len() != rig.num_vertices() {
        return Err(contract(format!(
            "{} vertices for a rig with {}",
            vertices.len(),
            rig.num_vertices()
        )));
    }
    let transforms = joint_transforms(rig, d);
    let nj = transforms.len();
    let posed = vertices
        .iter()
        .zip(rig.skin_weights.chunks(nj))
        .map(|(&v, weights)| {
            let mut acc = [T::zero(); 3];
            for (tf, &w) in transforms.iter().zip(weights) {
                if w != T::zero() {
                    linalg::axpy(&mut acc, w, tf.apply(v));
                }
            }
            acc
        })
        .collect();
    Ok(posed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_joint_rig() -> TemplateRig<f64> {
        TemplateRig::new(
            vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
            vec![0.0; 9 * 2],
            2,
            vec![Joint {
                name: JointName::Glob,
                rest: [0.0; 3],
                parent: None,
            }],
            vec![1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn glob_quarter_turn_maps_x_to_y() {
        let rig = single_joint_rig();
        let mut d = DrivingSignal::zeros(2);
        d.glob = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let posed = pose_joints(rig.vertices(), &rig, &d).unwrap();
        let v = posed[0];
        assert!(v[0].abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12 && v[2].abs() < 1e-12);
    }

    #[test]
    fn translation_applies_after_global_rotation() {
        let rig = single_joint_rig();
        let mut d = DrivingSignal::zeros(2);
        d.glob = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        d.t = [0.0, 0.0, 5.0];
        let posed = pose_joints(rig.vertices(), &rig, &d).unwrap();
        assert!((posed[0][2] - 5.0).abs() < 1e-12 && (posed[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blendshape_dimension_mismatch_is_a_contract_error() {
        let rig = single_joint_rig();
        assert!(matches!(
            apply_blendshapes(&rig, &[1.0]),
            Err(crate::Error::Contract(_))
        ));
    }

    #[test]
    fn rejects_bad_skin_weights_and_indices() {
        let ok = single_joint_rig();
        let bad_face = TemplateRig::new(
            ok.vertices().to_vec(),
            vec![[0, 1, 3]],
            ok.uv_coords().to_vec(),
            vec![0.0; 18],
            2,
            ok.joints().to_vec(),
            vec![1.0; 3],
        );
        assert!(bad_face.is_err());
        let bad_weights = TemplateRig::new(
            ok.vertices().to_vec(),
            ok.faces().to_vec(),
            ok.uv_coords().to_vec(),
            vec![0.0; 18],
            2,
            ok.joints().to_vec(),
            vec![1.0, 0.9, 1.0],
        );
        assert!(bad_weights.is_err());
    }

    #[test]
    fn driving_signal_flat_layout() {
        let mut d = DrivingSignal::<f64>::zeros(4);
        d.psi = vec![1.0, 2.0, 3.0, 4.0];
        d.eyes[5] = 7.0;
        d.t[2] = -1.0;
        let flat = d.to_vec();
        assert_eq!(flat.len(), d.raw_dim());
        assert_eq!(flat[4 + 3 + 5], 7.0);
        assert_eq!(*flat.last().unwrap(), -1.0);
        assert_eq!(DrivingSignal::from_slice(&flat, 4).unwrap(), d);
    }

    proptest! {
        #[test]
        fn blendshapes_match_dense_loop(psi in proptest::collection::vec(-2.0f64..2.0, 100), seed in 0u64..1000) {
            let rig = fixture::head_rig::<f64>(seed);
            let fast = apply_blendshapes(&rig, &psi).unwrap();
            let e = rig.num_expr();
            for (v, p) in fast.iter().enumerate() {
                for k in 0..3 {
                    let mut s = rig.vertices()[v][k];
                    for (j, w) in psi.iter().enumerate() {
                        s += w * rig.blendshape_basis()[(3 * v + k) * e + j];
                    }
                    prop_assert!((s - p[k]).abs() < 1e-12);
                }
            }
        }
    }
}
