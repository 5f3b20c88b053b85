//! Binary little-endian PLY export of surfels in the layout common splat
//! viewers read. The third scale is a near-zero log-scale: a flattened disk.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use surfel_core::gaussian_map::SurfelSet;

use crate::error::{WbResult, WorkbenchError};
use crate::fsutil::write_atomic;

pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];
/// Zeroth-order spherical-harmonic constant viewers use: `rgb = ½ + C0·f_dc`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const FLAT_SCALE: f64 = 1e-6;

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

pub fn encode_ply(set: &SurfelSet<f64>) -> WbResult<Vec<u8>> {
    if set.is_empty() {
        return Err(WorkbenchError::Validation("cannot export an empty surfel set".into()));
    }
    let mut out = Vec::with_capacity(64 * set.len() + 512);
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", set.len())?;
    for p in PROPERTIES {
        writeln!(out, "property float {p}")?;
    }
    out.extend_from_slice(b"end_header\n");
    for s in &set.surfels {
        let mut row = Vec::with_capacity(14);
        row.extend(s.center);
        row.extend(s.color.map(|c| (c - 0.5) / SH_C0));
        row.push(logit(s.opacity));
        row.extend([s.scales[0].ln(), s.scales[1].ln(), FLAT_SCALE.ln()]);
        row.extend(s.rotation);
        for v in row {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(out)
}

pub fn export_ply(set: &SurfelSet<f64>, path: &Path) -> WbResult<()> {
    write_atomic(path, &encode_ply(set)?)
}

/// Parsed vertex table, one `PROPERTIES`-ordered row per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f32>>,
}

/// Reads the float-only binary little-endian subset written by [`encode_ply`].
pub fn parse_ply(bytes: &[u8]) -> WbResult<PlyTable> {
    let bad = |m: &str| WorkbenchError::Format(format!("PLY: {m}"));
    let mut cursor = std::io::Cursor::new(bytes);
    let mut line = String::new();
    let mut next = |c: &mut std::io::Cursor<&[u8]>| -> WbResult<String> {
        line.clear();
        if c.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next(&mut cursor)? != "ply" {
        return Err(bad("missing magic"));
    }
    if next(&mut cursor)? != "format binary_little_endian 1.0" {
        return Err(bad("unsupported format"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    loop {
        let l = next(&mut cursor)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("vertex count"))?),
            ["property", "float", name] => properties.push(name.to_string()),
            ["comment", ..] => {}
            _ => return Err(bad(&format!("unsupported header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = Vec::with_capacity(properties.len());
        for _ in 0..properties.len() {
            row.push(cursor.read_f32::<LittleEndian>().map_err(|_| bad("truncated body"))?);
        }
        rows.push(row);
    }
    let mut rest = Vec::new();
    cursor.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(PlyTable { properties, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use surfel_core::gaussian_map::Surfel;

    fn set(n: usize) -> SurfelSet<f64> {
        let mut s = SurfelSet::default();
        for i in 0..n {
            let f = i as f64;
            s.push(
                Surfel {
                    center: [0.01 * f, -0.02 * f, 0.5 + 0.001 * f],
                    rotation: [0.6, 0.8, 0.0, 0.0],
                    scales: [0.002 + 0.001 * f, 0.003],
                    color: [0.2, 0.5, 0.9],
                    opacity: 0.7,
                },
                i,
            );
        }
        s
    }

    #[test]
    fn header_counts_vertices_and_body_round_trips() {
        let s = set(5);
        let bytes = encode_ply(&s).unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]);
        assert!(text.contains("element vertex 5\n"));
        let t = parse_ply(&bytes).unwrap();
        assert_eq!(t.properties, PROPERTIES);
        assert_eq!(t.rows.len(), 5);
        for (row, sf) in t.rows.iter().zip(&s.surfels) {
            for k in 0..3 {
                let c = sf.center[k];
                assert!((row[k] as f64 - c).abs() <= f32::EPSILON as f64 * c.abs().max(1e-30));
                assert!((0.5 + SH_C0 * row[3 + k] as f64 - sf.color[k]).abs() < 1e-6);
            }
            assert!((1.0 / (1.0 + (-row[6] as f64).exp()) - 0.7).abs() < 1e-6);
            assert!((row[9] as f64 - FLAT_SCALE.ln()).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(encode_ply(&SurfelSet::default()).is_err());
    }
}
