//! Small deterministic scenes for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::avatar::AvatarModel;
use crate::gaussian_map::ActivationConfig;
use crate::image::Image;
use crate::prior::{compute_geometry_stats, PriorConfig, UVInputMaps};
use crate::render::{Camera, RasterConfig};
use crate::rig::{fixture::patch_rig, texel_anchors, DrivingSignal};
use crate::scalar::Real;

pub fn tiny_prior_config(expr_dim: usize) -> PriorConfig {
    PriorConfig {
        expr_dim,
        group_latent: 2,
        embed_dim: 3,
        hidden_width: 4,
        hidden_layers: 2,
    }
}

pub fn random_driving<T: Real>(rng: &mut ChaCha8Rng, expr_dim: usize, scale: f64) -> DrivingSignal<T> {
    let mut v = |n: usize| -> Vec<T> { (0..n).map(|_| T::lit(rng.random_range(-scale..scale))).collect() };
    DrivingSignal {
        psi: v(expr_dim),
        jaw: v(3).try_into().expect("3"),
        eyes: v(6).try_into().expect("6"),
        neck: v(3).try_into().expect("3"),
        glob: v(3).try_into().expect("3"),
        t: v(3).into_iter().map(|x| x * T::lit(0.1)).collect::<Vec<T>>().try_into().expect("3"),
    }
}

/// A textured patch rig on a 4×4 UV map seen by a 16×16 camera.
pub struct PatchScene<T> {
    pub model: AvatarModel<T>,
    pub maps: UVInputMaps<T>,
    pub driving: DrivingSignal<T>,
    pub camera: Camera<T>,
    pub target: Image<T>,
}

pub fn patch_scene<T: Real>(seed: u64, expr_dim: usize) -> PatchScene<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = patch_rig::<T>(seed, expr_dim, 3);
    let anchors = texel_anchors(&rig, 4, 4).expect("4×4 anchors");
    let texture = Image {
        height: 4,
        width: 4,
        channels: 3,
        data: (0..48).map(|_| T::lit(rng.random_range(0.1..0.9))).collect(),
    };
    let maps = UVInputMaps::from_rig(&rig, &anchors, &texture).expect("maps");
    let stats = compute_geometry_stats(&[&maps]).expect("stats");
    let yaw: f64 = rng.random_range(-0.3..0.3);
    let eye = [0.45 * yaw.sin(), rng.random_range(-0.05..0.05), 0.45 * yaw.cos()];
    let camera = Camera::look_at(
        eye.map(T::lit),
        [T::zero(); 3],
        [T::zero(), T::one(), T::zero()],
        16,
        16,
        T::lit(50.0),
        T::lit(0.05),
        T::lit(10.0),
    );
    let driving = random_driving(&mut rng, expr_dim, 0.2);
    let target = Image {
        height: 16,
        width: 16,
        channels: 3,
        data: (0..16 * 16 * 3).map(|_| T::lit(rng.random_range(0.0..1.0))).collect(),
    };
    PatchScene {
        model: AvatarModel {
            rig,
            anchors,
            stats,
            activation: ActivationConfig::default(),
            raster: RasterConfig {
                min_transmittance: 0.0,
                ..RasterConfig::default()
            },
            background: [T::lit(0.1), T::lit(0.2), T::lit(0.3)],
        },
        maps,
        driving,
        camera,
        target,
    }
}
