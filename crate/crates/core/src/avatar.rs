//! The full differentiable chain shared by prior training and adaptation:
//! pose the rig, predict the raw map, decode surfels, rasterize, score.

use crate::error::Result;
use crate::gaussian_map::{decode_backward, decode_surfels, ActivationConfig, GaussianMap, SurfelSet};
use crate::image::Image;
use crate::linalg::Vec3;
use crate::objectives::{total_loss, LossReport, LossWeights, PerceptualLoss};
use crate::prior::{predict_backward, predict_with_cache, GeometryStats, PriorWeights, UVInputMaps};
use crate::render::{rasterize, rasterize_backward, Camera, RasterConfig, RenderOutput};
use crate::rig::{surface_frames, AnchorTable, DrivingSignal, SurfaceFrames, TemplateRig};
use crate::scalar::Real;

/// Rig, UV layout and fixed settings of one avatar family.
#[derive(Clone, Debug)]
pub struct AvatarModel<T> {
    pub rig: TemplateRig<T>,
    pub anchors: AnchorTable<T>,
    pub stats: GeometryStats<T>,
    pub activation: ActivationConfig,
    pub raster: RasterConfig,
    pub background: Vec3<T>,
}

/// One supervised view: target image under a driving signal and camera.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, T> {
    pub maps: &'a UVInputMaps<T>,
    pub driving: &'a DrivingSignal<T>,
    pub camera: &'a Camera<T>,
    pub target: &'a Image<T>,
    pub mask: Option<&'a [bool]>,
}

#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub map: GaussianMap<T>,
    pub frames: SurfaceFrames<T>,
    pub surfels: SurfelSet<T>,
    pub render: RenderOutput<T>,
}

impl<T: Real> AvatarModel<T> {
    pub fn frames(&self, d: &DrivingSignal<T>) -> Result<SurfaceFrames<T>> {
        let posed = self.rig.deform(d)?;
        surface_frames(&self.rig, &posed, &self.anchors)
    }

    pub fn render_map(&self, map: &GaussianMap<T>, d: &DrivingSignal<T>, cam: &Camera<T>) -> Result<Forward<T>> {
        let frames = self.frames(d)?;
        let surfels = decode_surfels(map, &frames, &self.activation)?;
        let render = rasterize(&surfels, cam, self.background, &self.raster)?;
        Ok(Forward {
            map: map.clone(),
            frames,
            surfels,
            render,
        })
    }

    /// Feed-forward prediction and render; no state is mutated.
    pub fn render(
        &self,
        weights: &PriorWeights<T>,
        maps: &UVInputMaps<T>,
        d: &DrivingSignal<T>,
        cam: &Camera<T>,
    ) -> Result<Forward<T>> {
        let (map, _) = predict_with_cache(maps, d, weights, &self.stats)?;
        self.render_map(&map, d, cam)
    }

    /// Loss on one view and its gradient with respect to every weight.
    pub fn loss_and_grad(
        &self,
        weights: &PriorWeights<T>,
        view: &View<'_, T>,
        loss: &LossWeights,
        perceptual: &dyn PerceptualLoss<T>,
    ) -> Result<(LossReport<T>, PriorWeights<T>)> {
        let (map, cache) = predict_with_cache(view.maps, view.driving, weights, &self.stats)?;
        let frames = self.frames(view.driving)?;
        let surfels = decode_surfels(&map, &frames, &self.activation)?;
        let render = rasterize(&surfels, view.camera, self.background, &self.raster)?;
        let (report, g_render) = total_loss(&render, view.camera, view.target, view.mask, loss, perceptual)?;
        let g_surfels = rasterize_backward(&surfels, view.camera, &self.raster, &render, &g_render)?;
        let g_raw = decode_backward(&map, &frames, &self.activation, &surfels, &g_surfels)?;
        let grads = predict_backward(&cache, weights, &g_raw)?;
        Ok((report, grads))
    }

    /// Loss only, for finite differences and validation.
    pub fn loss(
        &self,
        weights: &PriorWeights<T>,
        view: &View<'_, T>,
        loss: &LossWeights,
        perceptual: &dyn PerceptualLoss<T>,
    ) -> Result<LossReport<T>> {
        let fwd = self.render(weights, view.maps, view.driving, view.camera)?;
        Ok(total_loss(&fwd.render, view.camera, view.target, view.mask, loss, perceptual)?.0)
    }
}
