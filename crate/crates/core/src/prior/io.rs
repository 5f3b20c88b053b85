use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ParamGroup, PriorConfig, PriorWeights};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"MGPW";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: PriorConfig,
    groups: Vec<GroupHeader>,
}

pub fn write_weights<T: Real, W: Write>(w: &PriorWeights<T>, mut out: W) -> Result<()> {
    let header = Header {
        config: w.config.clone(),
        groups: w
            .groups
            .iter()
            .map(|g| GroupHeader {
                name: g.name.clone(),
                shape: g.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(json.len() as u32)?;
    out.write_all(&json)?;
    for g in &w.groups {
        for v in &g.data {
            out.write_f32::<LittleEndian>(v.to_f32_lossy())?;
        }
    }
    Ok(())
}

pub fn to_bytes<T: Real>(w: &PriorWeights<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_weights(w, &mut buf).expect("writing to memory");
    buf
}

pub fn read_weights<T: Real, R: Read>(mut input: R) -> Result<PriorWeights<T>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| Error::Format("MGPW: truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("MGPW: bad magic".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("MGPW: unsupported version {version}")));
    }
    let len = input.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| Error::Format("MGPW: truncated config".into()))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::Format(format!("MGPW config: {e}")))?;
    let mut groups = Vec::with_capacity(header.groups.len());
    for g in header.groups {
        let n: usize = g.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = input
                .read_f32::<LittleEndian>()
                .map_err(|_| Error::Format(format!("MGPW: truncated group {}", g.name)))?;
            data.push(T::from_f32_lossless(v));
        }
        groups.push(ParamGroup {
            name: g.name,
            shape: g.shape,
            data,
        });
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Format("MGPW: trailing bytes".into()));
    }
    PriorWeights::from_groups(header.config, groups).map_err(|e| Error::Format(format!("MGPW: {e}")))
}
