//! Differentiable 2D Gaussian surfel rasterizer.
//!
//! Each pixel casts a pinhole ray, intersects it with every candidate surfel
//! plane, evaluates the Gaussian in the surfel's scaled tangent coordinates
//! and composites the hits front to back. The tiled path bins surfels by the
//! exact footprint where their alpha can exceed the cull threshold, so it is
//! bit-identical to [`rasterize_reference`].

mod camera;
mod raster;
mod regularizers;

pub use camera::Camera;
pub use raster::{rasterize, rasterize_backward, rasterize_reference, RenderGrads};
pub use regularizers::{
    depth_distortion, depth_distortion_image, depth_normals, normal_consistency, DepthDistortion,
    NormalConsistency,
};

use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::linalg::{Quat, Vec3};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Upper clamp on per-hit alpha.
    pub alpha_max: f64,
    /// Hits with alpha below this are culled.
    pub alpha_min: f64,
    /// Screen-space low-pass radius in pixels.
    pub lowpass_sigma: f64,
    /// Compositing stops once transmittance falls below this (0 = never).
    pub min_transmittance: f64,
    /// Floor on alpha when normalizing the expected depth.
    pub depth_eps: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_max: 0.999,
            alpha_min: 1.0 / 255.0,
            lowpass_sigma: 0.5,
            min_transmittance: 1e-4,
            depth_eps: 1e-6,
        }
    }
}

/// One ray–surfel intersection that contributed to a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record<T> {
    pub surfel: u32,
    pub alpha: T,
    /// Blending weight `α_i T_i`.
    pub weight: T,
    /// Camera-space depth of the intersection.
    pub z: T,
    /// Camera-space unit normal, oriented toward the camera.
    pub normal: Vec3<T>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput<T> {
    pub rgb: Image<T>,
    pub alpha: Image<T>,
    pub depth: Image<T>,
    pub normal: Image<T>,
    pub final_transmittance: Vec<T>,
    /// Flat record storage; `ranges[pixel]` indexes into it.
    pub records: Vec<Record<T>>,
    pub ranges: Vec<(u32, u32)>,
    pub background: Vec3<T>,
    pub(crate) surfel_count: usize,
}

impl<T: Real> RenderOutput<T> {
    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn width(&self) -> usize {
        self.rgb.width
    }

    /// Records of the pixel at row-major index `pixel`, sorted by depth.
    pub fn pixel_records(&self, pixel: usize) -> &[Record<T>] {
        let (start, len) = self.ranges[pixel];
        &self.records[start as usize..(start + len) as usize]
    }
}

/// Per-surfel partial derivatives, laid out like the surfel set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SurfelGrad<T> {
    pub center: Vec3<T>,
    pub rotation: Quat<T>,
    pub scales: [T; 2],
    pub color: Vec3<T>,
    pub opacity: T,
}

impl<T: Real> SurfelGrad<T> {
    fn zero() -> Self {
        let z = T::zero();
        Self {
            center: [z; 3],
            rotation: [z; 4],
            scales: [z; 2],
            color: [z; 3],
            opacity: z,
        }
    }

    fn add_assign(&mut self, o: &Self) {
        for k in 0..3 {
            self.center[k] += o.center[k];
            self.color[k] += o.color[k];
        }
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.scales[0] += o.scales[0];
        self.scales[1] += o.scales[1];
        self.opacity += o.opacity;
    }

    pub fn is_zero(&self) -> bool {
        let z = T::zero();
        self.center.iter().chain(&self.rotation).chain(&self.scales).chain(&self.color).all(|&v| v == z)
            && self.opacity == z
    }

    pub fn is_finite(&self) -> bool {
        self.center
            .iter()
            .chain(&self.rotation)
            .chain(&self.scales)
            .chain(&self.color)
            .all(|v| v.is_finite())
            && self.opacity.is_finite()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer<T> {
    pub surfels: Vec<SurfelGrad<T>>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            surfels: vec![SurfelGrad::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }
}
