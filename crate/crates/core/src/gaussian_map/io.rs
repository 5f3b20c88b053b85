//! `GMAP` binary persistence: magic, u32 version, u32 H, u32 W, then
//! `H·W·13` little-endian f32 raw values and `H·W` mask bytes.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{GaussianMap, CHANNELS};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"GMAP";
pub const VERSION: u32 = 1;

pub fn write_gmap<T: Real, W: Write>(map: &GaussianMap<T>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(map.height as u32)?;
    w.write_u32::<LittleEndian>(map.width as u32)?;
    for &v in &map.raw {
        w.write_f32::<LittleEndian>(v.to_f32_lossy())?;
    }
    let mask: Vec<u8> = map.mask.iter().map(|&m| m as u8).collect();
    w.write_all(&mask)?;
    Ok(())
}

pub fn read_gmap<T: Real, R: Read>(mut r: R) -> Result<GaussianMap<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a GMAP file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported GMAP version {version}")));
    }
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::Format("GMAP dimensions overflow".into()))?;
    let mut raw = vec![0f32; n * CHANNELS];
    r.read_f32_into::<LittleEndian>(&mut raw)?;
    let mut mask = vec![0u8; n];
    r.read_exact(&mut mask)?;
    if mask.iter().any(|&b| b > 1) {
        return Err(Error::Format("GMAP mask bytes must be 0 or 1".into()));
    }
    Ok(GaussianMap {
        height,
        width,
        raw: raw.into_iter().map(T::from_f32_lossless).collect(),
        mask: mask.into_iter().map(|b| b == 1).collect(),
    })
}

pub fn to_bytes<T: Real>(map: &GaussianMap<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + map.raw.len() * 4 + map.mask.len());
    write_gmap(map, &mut buf).expect("writing to memory");
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn gmap_round_trip_is_bit_exact(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let n = h * w;
            let mut s = seed | 1;
            let mut next = || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s };
            let raw: Vec<f32> = (0..n * CHANNELS).map(|_| f32::from_bits((next() as u32) & 0x7f7f_ffff)).collect();
            let mask: Vec<bool> = (0..n).map(|_| next() % 2 == 0).collect();
            let map = GaussianMap { height: h, width: w, raw, mask };
            let bytes = to_bytes(&map);
            prop_assert_eq!(bytes.len(), 16 + n * CHANNELS * 4 + n);
            let back: GaussianMap<f32> = read_gmap(bytes.as_slice()).unwrap();
            prop_assert_eq!(back.raw.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            map.raw.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(&back.mask, &map.mask);
            prop_assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let map = GaussianMap::<f32>::zeros(2, 2, vec![true; 4]).unwrap();
        let mut bytes = to_bytes(&map);
        assert!(read_gmap::<f32, _>(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read_gmap::<f32, _>(bytes.as_slice()), Err(Error::Format(_))));
    }
}
