//! Rig persistence: an OBJ mesh with `vt` coordinates plus a JSON sidecar
//! holding the expression basis, joints and skin weights.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Joint, JointName, TemplateRig};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointRecord {
    pub name: JointName,
    pub rest: [f64; 3],
    pub parent: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigSidecar {
    pub num_expr: usize,
    /// `3V × E`, row-major.
    pub blendshape_basis: Vec<f64>,
    pub joints: Vec<JointRecord>,
    /// `V × J`, row-major.
    pub skin_weights: Vec<f64>,
}

pub struct ObjMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv_coords: Vec<[[f64; 2]; 3]>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("obj line {line}: {msg}"))
}

/// Parses triangle OBJ text; every face corner must carry a `vt` index.
pub fn parse_obj(text: &str) -> Result<ObjMesh> {
    let mut vertices = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut uv_coords = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xs: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(n + 1, e)))
                    .collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(parse_err(n + 1, "vertex needs 3 coordinates"));
                }
                vertices.push([xs[0], xs[1], xs[2]]);
            }
            Some("vt") => {
                let xs: Vec<f64> = it
                    .take(2)
                    .map(|t| t.parse::<f64>().map_err(|e| parse_err(n + 1, e)))
                    .collect::<Result<_>>()?;
                if xs.len() != 2 {
                    return Err(parse_err(n + 1, "texture coordinate needs u and v"));
                }
                texcoords.push([xs[0], xs[1]]);
            }
            Some("f") => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(parse_err(n + 1, "only triangles are supported"));
                }
                let mut f = [0usize; 3];
                let mut uv = [[0.0; 2]; 3];
                for (k, c) in corners.iter().enumerate() {
                    let mut parts = c.split('/');
                    let vi: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(n + 1, "bad vertex index"))?;
                    let ti: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(n + 1, "face corner lacks a vt index"))?;
                    if vi == 0 || ti == 0 || ti > texcoords.len() {
                        return Err(parse_err(n + 1, "index out of range"));
                    }
                    f[k] = vi - 1;
                    uv[k] = texcoords[ti - 1];
                }
                faces.push(f);
                uv_coords.push(uv);
            }
            _ => {}
        }
    }
    Ok(ObjMesh {
        vertices,
        faces,
        uv_coords,
    })
}

pub fn write_obj<T: Real>(rig: &TemplateRig<T>) -> String {
    let mut out = String::from("# surfel head rig\n");
    for v in rig.vertices() {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0].to_f64_lossy(), v[1].to_f64_lossy(), v[2].to_f64_lossy());
    }
    for tri in rig.uv_coords() {
        for c in tri {
            let _ = writeln!(out, "vt {:?} {:?}", c[0].to_f64_lossy(), c[1].to_f64_lossy());
        }
    }
    for (i, f) in rig.faces().iter().enumerate() {
        let t = 3 * i + 1;
        let _ = writeln!(out, "f {}/{} {}/{} {}/{}", f[0] + 1, t, f[1] + 1, t + 1, f[2] + 1, t + 2);
    }
    out
}

pub fn sidecar<T: Real>(rig: &TemplateRig<T>) -> RigSidecar {
    RigSidecar {
        num_expr: rig.num_expr(),
        blendshape_basis: rig.blendshape_basis().iter().map(|x| x.to_f64_lossy()).collect(),
        joints: rig
            .joints()
            .iter()
            .map(|j| JointRecord {
                name: j.name,
                rest: j.rest.map(|x| x.to_f64_lossy()),
                parent: j.parent,
            })
            .collect(),
        skin_weights: rig.skin_weights().iter().map(|x| x.to_f64_lossy()).collect(),
    }
}

pub fn assemble<T: Real>(mesh: ObjMesh, side: RigSidecar) -> Result<TemplateRig<T>> {
    let c = |x: f64| T::lit(x);
    TemplateRig::new(
        mesh.vertices.iter().map(|v| v.map(c)).collect(),
        mesh.faces,
        mesh.uv_coords.iter().map(|t| t.map(|p| p.map(c))).collect(),
        side.blendshape_basis.into_iter().map(c).collect(),
        side.num_expr,
        side.joints
            .into_iter()
            .map(|j| Joint {
                name: j.name,
                rest: j.rest.map(c),
                parent: j.parent,
            })
            .collect(),
        side.skin_weights.into_iter().map(c).collect(),
    )
}

/// Loads `mesh.obj` + its JSON sidecar.
pub fn load_rig<T: Real>(obj_path: &Path, sidecar_path: &Path) -> Result<TemplateRig<T>> {
    let mesh = parse_obj(&std::fs::read_to_string(obj_path)?)?;
    let side: RigSidecar = serde_json::from_slice(&std::fs::read(sidecar_path)?)?;
    assemble(mesh, side)
}

/// The sidecar path paired with an OBJ path (`x.obj` → `x.rig.json`).
pub fn sidecar_path(obj_path: &Path) -> std::path::PathBuf {
    obj_path.with_extension("rig.json")
}
