use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfel_core::adaptation::{
    adapt_stage1, adapt_stage2, animate, generate_supervision, sample_novel_conditions, AdaptationConfig,
    EnhanceRequest, Enhancer, IdentityEnhancer, OracleEnhancer, Provenance, SupervisionItem,
};
use surfel_core::fixture::{patch_scene, tiny_prior_config, PatchScene};
use surfel_core::objectives::{LossWeights, SsimLoss};
use surfel_core::prior::{AdamConfig, PriorWeights};
use surfel_core::render::Camera;
use surfel_core::{Error, Image, Result};

const EXPR: usize = 3;

struct Setup {
    scene: PatchScene<f64>,
    start: PriorWeights<f64>,
    oracle: PriorWeights<f64>,
}

// The oracle is a perturbed copy of the start weights, so its renders are
// reachable targets.
fn setup(seed: u64) -> Setup {
    let scene = patch_scene::<f64>(seed, EXPR);
    let start = PriorWeights::init(tiny_prior_config(EXPR), seed).unwrap();
    let mut oracle = start.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for g in oracle.groups.iter_mut().filter(|g| g.name.starts_with("dec.out")) {
        for v in &mut g.data {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    Setup { scene, start, oracle }
}

fn oracle_item(s: &Setup, cam: &Camera<f64>) -> SupervisionItem<f64> {
    let sc = &s.scene;
    SupervisionItem {
        image: animate(&sc.model, &s.oracle, &sc.maps, &sc.driving, cam).unwrap().rgb,
        camera: cam.clone(),
        driving: sc.driving.clone(),
        mask: None,
        provenance: Provenance::Real,
    }
}

fn cfg(steps: usize) -> AdaptationConfig {
    AdaptationConfig {
        n_real: 1,
        stage1_steps: steps,
        stage2_steps: steps,
        lr_ratio: 1.0,
        base_adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        loss: LossWeights {
            lambda_perc: 0.2,
            lambda_d: 0.0,
            lambda_n: 0.0,
        },
        view_radius: 0.45,
        ..AdaptationConfig::default()
    }
}

#[test]
fn zero_steps_leave_weights_unchanged() {
    let s = setup(1);
    let item = oracle_item(&s, &s.scene.camera);
    let out = adapt_stage1(&s.scene.model, &s.start, &s.scene.maps, &[item], &cfg(0), &SsimLoss).unwrap();
    assert_eq!(out.weights, s.start);
    assert!(out.loss_curve.is_empty());
}

// Smoke run: 100 steps. Longer runs show sub-percent bumps once visibility
// changes start to matter.
#[test]
fn stage1_loss_trace_decreases_on_reachable_target() {
    let s = setup(2);
    let item = oracle_item(&s, &s.scene.camera);
    let c = AdaptationConfig {
        base_adam: AdamConfig {
            lr: 5e-4,
            ..AdamConfig::default()
        },
        ..cfg(100)
    };
    let out = adapt_stage1(&s.scene.model, &s.start, &s.scene.maps, &[item], &c, &SsimLoss).unwrap();
    let totals: Vec<f64> = out.loss_curve.iter().map(|r| r.total).collect();
    let windows: Vec<f64> = totals.windows(10).map(|c| c.iter().sum::<f64>() / 10.0).collect();
    for (i, w) in windows.windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "moving average rose at step {i}: {:?}", &windows[i..i + 2]);
    }
    assert!(windows[windows.len() - 1] < 0.6 * windows[0], "{windows:?}");
}

#[test]
fn stage2_without_generated_items_continues_stage1() {
    let s = setup(3);
    let item = oracle_item(&s, &s.scene.camera);
    let c = cfg(15);
    let s1 = adapt_stage1(&s.scene.model, &s.start, &s.scene.maps, &[item.clone()], &c, &SsimLoss).unwrap();
    let s2 = adapt_stage2(&s.scene.model, &s1.weights, &s.scene.maps, &[item.clone()], &[], &c, &SsimLoss).unwrap();
    let cont = adapt_stage1(&s.scene.model, &s1.weights, &s.scene.maps, &[item], &c, &SsimLoss).unwrap();
    assert_eq!(s2.weights, cont.weights);
}

#[test]
fn identity_enhancer_returns_the_raw_render() {
    let s = setup(4);
    let sc = &s.scene;
    let c = cfg(0);
    let conditions = sample_novel_conditions(&c, &sc.camera, EXPR, 4).unwrap();
    let reference = oracle_item(&s, &sc.camera).image;
    let items = generate_supervision(&sc.model, &s.start, &sc.maps, &conditions, &IdentityEnhancer, &reference, 2).unwrap();
    assert_eq!(items.len(), 4);
    for (item, (cam, d)) in items.iter().zip(&conditions) {
        assert_eq!(item.image, animate(&sc.model, &s.start, &sc.maps, d, cam).unwrap().rgb);
        assert_eq!(item.provenance, Provenance::Generated);
    }
}

#[test]
fn oracle_enhancer_returns_ground_truth() {
    let s = setup(5);
    let sc = &s.scene;
    let enhancer = OracleEnhancer {
        model: sc.model.clone(),
        weights: s.oracle.clone(),
        maps: sc.maps.clone(),
    };
    let conditions = sample_novel_conditions(&cfg(0), &sc.camera, EXPR, 3).unwrap();
    let items = generate_supervision(&sc.model, &s.start, &sc.maps, &conditions, &enhancer, &sc.target, 1).unwrap();
    for (item, (cam, d)) in items.iter().zip(&conditions) {
        assert_eq!(item.image, animate(&sc.model, &s.oracle, &sc.maps, d, cam).unwrap().rgb);
    }
}

#[test]
fn novel_conditions_are_seeded_and_bounded() {
    let c = AdaptationConfig {
        seed: 17,
        ..cfg(0)
    };
    let template = patch_scene::<f64>(6, EXPR).camera;
    let a = sample_novel_conditions(&c, &template, EXPR, 1000).unwrap();
    let b = sample_novel_conditions(&c, &template, EXPR, 1000).unwrap();
    assert_eq!(a, b);
    assert!(sample_novel_conditions(&c, &template, EXPR, 0).unwrap().is_empty());
    let other = sample_novel_conditions(&AdaptationConfig { seed: 18, ..c.clone() }, &template, EXPR, 10).unwrap();
    assert_ne!(a[..10], other[..]);
    let tol = 1e-9;
    for (cam, d) in &a {
        let p = cam.position();
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!((r - c.view_radius).abs() < 1e-9);
        let yaw = p[0].atan2(p[2]);
        let pitch = (p[1] / r).asin();
        assert!(yaw.abs() <= c.yaw_range + tol, "yaw {yaw}");
        assert!(pitch.abs() <= c.pitch_range + tol, "pitch {pitch}");
        let norm = d.psi.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= c.expr_scale + tol);
        assert!((0.0..=c.jaw_scale).contains(&d.jaw[0]));
        assert_eq!((cam.width, cam.height, cam.fx, cam.fy), (template.width, template.height, template.fx, template.fy));
    }
}

/// Succeeds on every `fail_every`-th call, fails otherwise.
struct Flaky {
    fail_every: usize,
    calls: std::sync::atomic::AtomicUsize,
}

impl Enhancer<f64> for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn enhance(&self, req: &EnhanceRequest<'_, f64>) -> Result<Image<f64>> {
        let i = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if i % self.fail_every != 0 {
            Err(Error::Enhancer(format!("call {i} refused")))
        } else {
            Ok(req.degraded.clone())
        }
    }
}

struct WrongShape;

impl Enhancer<f64> for WrongShape {
    fn name(&self) -> &str {
        "wrong-shape"
    }

    fn enhance(&self, _: &EnhanceRequest<'_, f64>) -> Result<Image<f64>> {
        Ok(Image::filled(2, 2, 3, 0.5))
    }
}

#[test]
fn failed_enhancer_calls_are_skipped_until_half_fail() {
    let s = setup(7);
    let sc = &s.scene;
    let conditions = sample_novel_conditions(&cfg(0), &sc.camera, EXPR, 6).unwrap();
    let half = Flaky {
        fail_every: 2,
        calls: Default::default(),
    };
    let items = generate_supervision(&sc.model, &s.start, &sc.maps, &conditions, &half, &sc.target, 1).unwrap();
    assert_eq!(items.len(), 3);
    assert_eq!(items[1].camera, conditions[2].0);
    let most = Flaky {
        fail_every: 3,
        calls: Default::default(),
    };
    let e = generate_supervision(&sc.model, &s.start, &sc.maps, &conditions, &most, &sc.target, 1).unwrap_err();
    assert!(matches!(e, Error::Enhancer(_)), "{e}");
    let e = generate_supervision(&sc.model, &s.start, &sc.maps, &conditions, &WrongShape, &sc.target, 3).unwrap_err();
    assert!(matches!(e, Error::Enhancer(_)), "{e}");
}

#[test]
fn animate_is_deterministic_and_sane_across_a_yaw_sweep() {
    let s = setup(8);
    let sc = &s.scene;
    for k in 0..8 {
        let yaw = -0.8 + 1.6 * k as f64 / 7.0;
        let cam = Camera::look_at(
            [0.45 * yaw.sin(), 0.02, 0.45 * yaw.cos()],
            [0.0; 3],
            [0.0, 1.0, 0.0],
            16,
            16,
            50.0,
            0.05,
            10.0,
        );
        let a = animate(&sc.model, &s.start, &sc.maps, &sc.driving, &cam).unwrap();
        let b = animate(&sc.model, &s.start, &sc.maps, &sc.driving, &cam).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert!(a.rgb.all_finite() && a.depth.all_finite() && a.normal.all_finite());
        assert!(a.alpha.data.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }
}

#[test]
fn stage_inputs_are_validated() {
    let s = setup(9);
    let sc = &s.scene;
    let e = adapt_stage1(&sc.model, &s.start, &sc.maps, &[], &cfg(1), &SsimLoss).unwrap_err();
    assert!(matches!(e, Error::Contract(_)), "{e}");
    let mut bad = oracle_item(&s, &sc.camera);
    bad.image = Image::filled(4, 4, 3, 0.0);
    assert!(adapt_stage1(&sc.model, &s.start, &sc.maps, &[bad], &cfg(1), &SsimLoss).is_err());
    let c = AdaptationConfig {
        real_fraction: Some(1.5),
        ..cfg(1)
    };
    let item = oracle_item(&s, &sc.camera);
    assert!(adapt_stage2(&sc.model, &s.start, &sc.maps, &[item], &[], &c, &SsimLoss).is_err());
}
