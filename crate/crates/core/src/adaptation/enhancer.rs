use crate::avatar::AvatarModel;
use crate::error::Result;
use crate::image::Image;
use crate::prior::{PriorWeights, UVInputMaps};
use crate::render::Camera;
use crate::rig::DrivingSignal;
use crate::scalar::Real;

/// One enhancement call. The condition is carried for implementations that
/// can use it; image-only enhancers ignore it.
#[derive(Clone, Copy, Debug)]
pub struct EnhanceRequest<'a, T> {
    pub degraded: &'a Image<T>,
    pub reference: &'a Image<T>,
    pub camera: &'a Camera<T>,
    pub driving: &'a DrivingSignal<T>,
}

/// Image-space cleanup of a degraded render, guided by a clean reference.
/// Output dimensions must equal the degraded input's.
pub trait Enhancer<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn deterministic(&self) -> bool {
        true
    }

    fn enhance(&self, req: &EnhanceRequest<'_, T>) -> Result<Image<T>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityEnhancer;

impl<T: Real> Enhancer<T> for IdentityEnhancer {
    fn name(&self) -> &str {
        "identity"
    }

    fn enhance(&self, req: &EnhanceRequest<'_, T>) -> Result<Image<T>> {
        Ok(req.degraded.clone())
    }
}

/// Test-only: returns the ground-truth render of a known avatar.
#[derive(Clone, Debug)]
pub struct OracleEnhancer<T> {
    pub model: AvatarModel<T>,
    pub weights: PriorWeights<T>,
    pub maps: UVInputMaps<T>,
}

impl<T: Real> Enhancer<T> for OracleEnhancer<T> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn enhance(&self, req: &EnhanceRequest<'_, T>) -> Result<Image<T>> {
        Ok(self
            .model
            .render(&self.weights, &self.maps, req.driving, req.camera)?
            .render
            .rgb)
    }
}
