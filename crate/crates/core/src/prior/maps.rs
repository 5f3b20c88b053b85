use crate::error::{contract, Result};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::rig::{texel_center, AnchorTable, TemplateRig};
use crate::scalar::Real;

/// Per-texel decoder inputs: RGB texture and canonical surface position.
#[derive(Clone, Debug, PartialEq)]
pub struct UVInputMaps<T> {
    pub height: usize,
    pub width: usize,
    /// `H·W·3`, in `[0,1]`.
    pub tex: Vec<T>,
    /// `H·W·3`, canonical positions in meters.
    pub geo: Vec<T>,
    pub mask: Vec<bool>,
}

fn sample_bilinear<T: Real>(img: &Image<T>, uv: [T; 2]) -> Vec3<T> {
    let x = uv[0] * T::from_usize_exact(img.width) - T::lit(0.5);
    let y = uv[1] * T::from_usize_exact(img.height) - T::lit(0.5);
    let clamp = |v: T, n: usize| v.max(T::zero()).min(T::from_usize_exact(n - 1));
    let (x, y) = (clamp(x, img.width), clamp(y, img.height));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (c0, r0) = (x0.to_usize().unwrap_or(0), y0.to_usize().unwrap_or(0));
    let (c1, r1) = ((c0 + 1).min(img.width - 1), (r0 + 1).min(img.height - 1));
    let mut out = [T::zero(); 3];
    for (k, o) in out.iter_mut().enumerate() {
        let ch = k.min(img.channels - 1);
        let top = img.get(r0, c0, ch) * (T::one() - fx) + img.get(r0, c1, ch) * fx;
        let bottom = img.get(r1, c0, ch) * (T::one() - fx) + img.get(r1, c1, ch) * fx;
        *o = top * (T::one() - fy) + bottom * fy;
    }
    out
}

impl<T: Real> UVInputMaps<T> {
    /// Geometry from the canonical (undeformed) rig; texture sampled at texel
    /// centers.
    pub fn from_rig(rig: &TemplateRig<T>, anchors: &AnchorTable<T>, texture: &Image<T>) -> Result<Self> {
        if texture.height == 0 || texture.width == 0 || texture.channels == 0 {
            return Err(contract("texture is empty"));
        }
        let (h, w) = (anchors.height, anchors.width);
        let mut maps = Self {
            height: h,
            width: w,
            tex: vec![T::zero(); h * w * 3],
            geo: vec![T::zero(); h * w * 3],
            mask: anchors.mask(),
        };
        let verts = rig.vertices();
        let faces = rig.faces();
        for (i, texel) in anchors.texels.iter().enumerate() {
            let Some(a) = texel else { continue };
            let f = faces[a.face];
            let uv = texel_center::<T>(i / w, i % w, h, w);
            let c = sample_bilinear(texture, uv);
            for k in 0..3 {
                maps.tex[i * 3 + k] = c[k].max(T::zero()).min(T::one());
                maps.geo[i * 3 + k] = a.bary[0] * verts[f[0]][k] + a.bary[1] * verts[f[1]][k] + a.bary[2] * verts[f[2]][k];
            }
        }
        Ok(maps)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.tex.len() != n * 3 || self.geo.len() != n * 3 || self.mask.len() != n {
            return Err(contract("UV input map buffers do not match their resolution"));
        }
        for (i, &m) in self.mask.iter().enumerate() {
            let vals = self.tex[i * 3..i * 3 + 3].iter().chain(&self.geo[i * 3..i * 3 + 3]);
            if m {
                if vals.clone().any(|v| !v.is_finite()) {
                    return Err(contract("UV input maps contain non-finite values"));
                }
            } else if vals.clone().any(|&v| v != T::zero()) {
                return Err(contract("invalid texels of UV input maps must be zero"));
            }
        }
        Ok(())
    }

    pub fn texture_image(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data: self.tex.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryStats<T> {
    pub mean: Vec3<T>,
    pub std: Vec3<T>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl<T: Real> GeometryStats<T> {
    pub fn new(mean: Vec3<T>, std: Vec3<T>) -> Result<Self> {
        if std.iter().any(|&s| !(s >= T::lit(STD_FLOOR))) || mean.iter().any(|m| !m.is_finite()) {
            return Err(contract("geometry std must be ≥ 1e-8 and mean finite"));
        }
        Ok(Self { mean, std })
    }

    /// `(x − mean)/std` on valid texels; invalid texels stay zero.
    pub fn standardize(&self, geo: &[T], mask: &[bool]) -> Vec<T> {
        let mut out = vec![T::zero(); geo.len()];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for k in 0..3 {
                    out[i * 3 + k] = (geo[i * 3 + k] - self.mean[k]) / self.std[k];
                }
            }
        }
        out
    }

    pub fn unstandardize(&self, z: &[T], mask: &[bool]) -> Vec<T> {
        let mut out = vec![T::zero(); z.len()];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                for k in 0..3 {
                    out[i * 3 + k] = z[i * 3 + k] * self.std[k] + self.mean[k];
                }
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> GeometryStats<U> {
        GeometryStats {
            mean: self.mean.map(|v| U::lit(v.to_f64_lossy())),
            std: self.std.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Per-channel population mean and std over the valid texels of every map.
pub fn compute_geometry_stats<T: Real>(maps: &[&UVInputMaps<T>]) -> Result<GeometryStats<T>> {
    let mut n = 0usize;
    let mut sum = [0.0f64; 3];
    for m in maps {
        for (i, &valid) in m.mask.iter().enumerate() {
            if valid {
                n += 1;
                for k in 0..3 {
                    sum[k] += m.geo[i * 3 + k].to_f64_lossy();
                }
            }
        }
    }
    if n == 0 {
        return Err(contract("geometry statistics need at least one valid texel"));
    }
    let mean = sum.map(|s| s / n as f64);
    let mut var = [0.0f64; 3];
    for m in maps {
        for (i, &valid) in m.mask.iter().enumerate() {
            if valid {
                for k in 0..3 {
                    let d = m.geo[i * 3 + k].to_f64_lossy() - mean[k];
                    var[k] += d * d;
                }
            }
        }
    }
    let std = var.map(|v| (v / n as f64).sqrt().max(STD_FLOOR));
    GeometryStats::new(mean.map(T::lit), std.map(T::lit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maps(geo: Vec<f64>, mask: Vec<bool>) -> UVInputMaps<f64> {
        let n = mask.len();
        UVInputMaps {
            height: 1,
            width: n,
            tex: vec![0.0; n * 3],
            geo,
            mask,
        }
    }

    #[test]
    fn standardize_arithmetic() {
        let s = GeometryStats::<f64>::new([0.1, 0.0, 0.0], [0.2, 1.0, 1.0]).unwrap();
        let z = s.standardize(&[0.3, 0.0, 0.0, 5.0, 5.0, 5.0], &[true, false]);
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert_eq!(&z[3..], &[0.0; 3]);
        let mean_map = s.standardize(&[0.1, 0.0, 0.0], &[true]);
        assert_eq!(mean_map, vec![0.0; 3]);
    }

    #[test]
    fn two_map_stats_match_formula() {
        let a = maps(vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0], vec![true, false]);
        let b = maps(vec![3.0, 2.0, -1.0], vec![true]);
        let s = compute_geometry_stats(&[&a, &b]).unwrap();
        assert_eq!(s.mean, [2.0, 2.0, 1.0]);
        assert!((s.std[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.std[1], STD_FLOOR);
        assert!((s.std[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_maps_hit_the_floor_and_single_texel_works() {
        let a = maps(vec![0.5, 0.5, 0.5], vec![true]);
        let s = compute_geometry_stats(&[&a, &a.clone()]).unwrap();
        assert_eq!(s.std, [STD_FLOOR; 3]);
        assert_eq!(s.mean, [0.5; 3]);
    }

    #[test]
    fn empty_dataset_is_a_contract_error() {
        let a = maps(vec![0.0; 3], vec![false]);
        assert!(compute_geometry_stats::<f64>(&[]).is_err());
        assert!(compute_geometry_stats(&[&a]).is_err());
    }

    #[test]
    fn standardize_round_trips() {
        let s = GeometryStats::<f64>::new([0.01, -0.02, 0.03], [0.05, 0.07, 0.09]).unwrap();
        let geo = vec![0.11, 0.05, -0.07, 0.0, 0.0, 0.0, -0.04, 0.09, 0.02];
        let mask = vec![true, false, true];
        let back = s.unstandardize(&s.standardize(&geo, &mask), &mask);
        for (a, b) in back.iter().zip(&geo) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
