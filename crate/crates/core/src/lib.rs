//! Mesh-anchored 2D Gaussian surfel head avatars.
//!
//! The crate covers the template rig ([`rig`]), the UV-aligned Gaussian map
//! ([`gaussian_map`]), the FiLM-conditioned prior decoder ([`prior`]), the
//! differentiable surfel rasterizer ([`render`]), the training objective
//! ([`objectives`]) and two-stage test-time adaptation ([`adaptation`]).
//!
//! Every numeric type is generic over [`Real`]; the aliases below pin the two
//! precisions used in practice.

pub mod adaptation;
pub mod avatar;
pub mod error;
pub mod fixture;
pub mod gaussian_map;
pub mod image;
pub mod linalg;
pub mod objectives;
pub mod prior;
pub mod render;
pub mod rig;
pub mod scalar;

pub use error::{Error, Result};
pub use image::Image;
pub use scalar::Real;

pub type Rig32 = rig::TemplateRig<f32>;
pub type Rig64 = rig::TemplateRig<f64>;
pub type Driving32 = rig::DrivingSignal<f32>;
pub type Driving64 = rig::DrivingSignal<f64>;
pub type GaussianMap32 = gaussian_map::GaussianMap<f32>;
pub type GaussianMap64 = gaussian_map::GaussianMap<f64>;
pub type SurfelSet32 = gaussian_map::SurfelSet<f32>;
pub type SurfelSet64 = gaussian_map::SurfelSet<f64>;
pub type PriorWeights32 = prior::PriorWeights<f32>;
pub type PriorWeights64 = prior::PriorWeights<f64>;
pub type Camera32 = render::Camera<f32>;
pub type Camera64 = render::Camera<f64>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type AvatarModel64 = avatar::AvatarModel<f64>;
