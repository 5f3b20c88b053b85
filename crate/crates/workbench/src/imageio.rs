//! PNG (8-bit) and IMGF (raw f32) image persistence.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use surfel_core::{Image, Real};

use crate::error::{WorkbenchError, WbResult};
use crate::fsutil::write_atomic;

pub const IMGF_MAGIC: &[u8; 4] = b"IMGF";

fn to_u8<T: Real>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an RGB image, clamped to `[0,1]` and rounded to 8 bits.
pub fn encode_png<T: Real>(img: &Image<T>) -> WbResult<Vec<u8>> {
    if img.channels != 3 {
        return Err(WorkbenchError::Dimension(format!("PNG export needs 3 channels, got {}", img.channels)));
    }
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| WorkbenchError::Dimension("image buffer size".into()))?;
    let mut out = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)
        .map_err(|e| WorkbenchError::Format(format!("PNG encode: {e}")))?;
    Ok(out)
}

pub fn decode_png<T: Real>(bytes: &[u8]) -> WbResult<Image<T>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| WorkbenchError::Format(format!("PNG decode: {e}")))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image {
        height: h as usize,
        width: w as usize,
        channels: 3,
        data: img.into_raw().into_iter().map(|b| T::lit(b as f64 / 255.0)).collect(),
    })
}

pub fn write_png<T: Real>(img: &Image<T>, path: &Path) -> WbResult<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn read_png<T: Real>(path: &Path) -> WbResult<Image<T>> {
    let bytes = std::fs::read(path).map_err(|e| WorkbenchError::missing(path, e))?;
    decode_png(&bytes)
}

pub fn write_imgf_to<T: Real, W: Write>(img: &Image<T>, mut out: W) -> WbResult<()> {
    out.write_all(IMGF_MAGIC)?;
    for d in [img.height, img.width, img.channels] {
        out.write_u32::<LittleEndian>(d as u32)?;
    }
    for v in &img.data {
        out.write_f32::<LittleEndian>(v.to_f32_lossy())?;
    }
    Ok(())
}

pub fn read_imgf_from<T: Real, R: Read>(mut input: R) -> WbResult<Image<T>> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| WorkbenchError::Format("IMGF: truncated".into()))?;
    if &magic != IMGF_MAGIC {
        return Err(WorkbenchError::Format("IMGF: bad magic".into()));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = input
            .read_u32::<LittleEndian>()
            .map_err(|_| WorkbenchError::Format("IMGF: truncated header".into()))? as usize;
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = input
            .read_f32::<LittleEndian>()
            .map_err(|_| WorkbenchError::Format("IMGF: truncated data".into()))?;
        data.push(T::from_f32_lossless(v));
    }
    Ok(Image {
        height: dims[0],
        width: dims[1],
        channels: dims[2],
        data,
    })
}

pub fn write_imgf<T: Real>(img: &Image<T>, path: &Path) -> WbResult<()> {
    let mut buf = Vec::new();
    write_imgf_to(img, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn read_imgf<T: Real>(path: &Path) -> WbResult<Image<T>> {
    let bytes = std::fs::read(path).map_err(|e| WorkbenchError::missing(path, e))?;
    read_imgf_from(&bytes[..])
}

/// Reads by extension: `.png` or `.f32`.
pub fn read_image<T: Real>(path: &Path) -> WbResult<Image<T>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => read_imgf(path),
        _ => read_png(path),
    }
}

/// Foreground mask from a PNG: any channel above one half.
pub fn read_mask(path: &Path) -> WbResult<Vec<bool>> {
    let img: Image<f32> = read_png(path)?;
    Ok(img.data.chunks(3).map(|p| p.iter().any(|&v| v > 0.5)).collect())
}
