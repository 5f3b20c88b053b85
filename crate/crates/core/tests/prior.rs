use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surfel_core::avatar::View;
use surfel_core::fixture::{patch_scene, random_driving, tiny_prior_config};
use surfel_core::gaussian_map::CHANNELS;
use surfel_core::objectives::{LossWeights, SsimLoss};
use surfel_core::prior::{
    decode_texels, encode_driving, encode_driving_backward, film_modulate, predict_gaussian_map, texel_inputs,
    PriorConfig, PriorWeights, INPUT_DIM,
};

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

#[test]
fn zero_weights_give_zero_embedding_and_encoding_is_deterministic() {
    let cfg = PriorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = random_driving::<f64>(&mut rng, cfg.expr_dim, 0.5);
    let zero = PriorWeights::<f64>::zeros(cfg.clone()).unwrap();
    assert!(encode_driving(&d, &zero).unwrap().value.iter().all(|&v| v == 0.0));
    let w = PriorWeights::<f64>::init(cfg, 3).unwrap();
    let a = encode_driving(&d, &w).unwrap();
    assert_eq!(a.value.len(), 128);
    assert_eq!(a, encode_driving(&d, &w).unwrap());
}

#[test]
fn encoder_rejects_wrong_expression_dim() {
    let w = PriorWeights::<f64>::init(tiny_prior_config(4), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = random_driving::<f64>(&mut rng, 5, 0.1);
    assert!(encode_driving(&d, &w).is_err());
}

#[test]
fn embedding_gradient_wrt_driving_matches_finite_differences() {
    let cfg = PriorConfig {
        expr_dim: 7,
        ..tiny_prior_config(7)
    };
    let w = PriorWeights::<f64>::init(cfg.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_driving::<f64>(&mut rng, 7, 0.8);
    let emb = encode_driving(&d, &w).unwrap();
    let theta = d.to_vec();
    for out in 0..cfg.embed_dim {
        let mut g_e = vec![0.0; cfg.embed_dim];
        g_e[out] = 1.0;
        let mut sink = w.zeros_like();
        let g_theta = encode_driving_backward(&emb, &w, &g_e, &mut sink);
        for (i, &g) in g_theta.iter().enumerate() {
            let h = 1e-6;
            let mut p = theta.clone();
            p[i] += h;
            let mut m = theta.clone();
            m[i] -= h;
            let ep = encode_driving(&surfel_core::rig::DrivingSignal::from_slice(&p, 7).unwrap(), &w).unwrap();
            let em = encode_driving(&surfel_core::rig::DrivingSignal::from_slice(&m, 7).unwrap(), &w).unwrap();
            let fd = (ep.value[out] - em.value[out]) / (2.0 * h);
            assert!(rel_err(fd, g) < 1e-3, "out {out} θ{i}: fd {fd} vs {g}");
        }
    }
}

#[test]
fn film_identities() {
    let x = [0.3, -1.2, 4.0];
    assert_eq!(film_modulate(&x, &[1.0; 3], &[0.0; 3]).unwrap(), x.to_vec());
    assert_eq!(film_modulate(&x, &[0.0; 3], &[0.5, 0.6, 0.7]).unwrap(), vec![0.5, 0.6, 0.7]);
    assert_eq!(film_modulate(&x, &[2.0; 3], &[1.0; 3]).unwrap(), vec![1.6, -1.4, 9.0]);
    assert!(film_modulate(&x, &[1.0; 2], &[0.0; 3]).is_err());
}

#[test]
fn conditioning_pathway_is_live_unless_generators_are_zero() {
    let scene = patch_scene::<f64>(4, 6);
    let cfg = tiny_prior_config(6);
    let w = PriorWeights::<f64>::init(cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d2 = random_driving::<f64>(&mut rng, 6, 0.5);
    let a = predict_gaussian_map(&scene.maps, &scene.driving, &w, &scene.model.stats).unwrap();
    let b = predict_gaussian_map(&scene.maps, &d2, &w, &scene.model.stats).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
    assert_eq!((a.height, a.width, a.raw.len()), (4, 4, 4 * 4 * CHANNELS));
    let mut dead = w.clone();
    for g in &mut dead.groups {
        if g.name.starts_with("film.") && g.name.ends_with(".w") {
            g.data.fill(0.0);
        }
    }
    let a = predict_gaussian_map(&scene.maps, &scene.driving, &dead, &scene.model.stats).unwrap();
    let b = predict_gaussian_map(&scene.maps, &d2, &dead, &scene.model.stats).unwrap();
    assert_eq!(a.max_abs_diff(&b), 0.0);
    // invalid texels stay zero
    for (i, &m) in a.mask.iter().enumerate() {
        if !m {
            assert!(a.texel(i).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn decoder_is_permutation_equivariant_over_texels() {
    let cfg = PriorConfig::default();
    let w = PriorWeights::<f64>::init(cfg.clone(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = random_driving::<f64>(&mut rng, cfg.expr_dim, 0.5);
    let n = 600;
    let x: Vec<f64> = (0..n * INPUT_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let px: Vec<f64> = perm.iter().flat_map(|&p| x[p * INPUT_DIM..(p + 1) * INPUT_DIM].to_vec()).collect();
    let y = decode_texels(&x, &d, &w).unwrap();
    let py = decode_texels(&px, &d, &w).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        assert_eq!(&py[k * CHANNELS..(k + 1) * CHANNELS], &y[p * CHANNELS..(p + 1) * CHANNELS]);
    }
}

#[test]
fn predicted_map_matches_per_texel_decoding() {
    let scene = patch_scene::<f64>(12, 4);
    let w = PriorWeights::<f64>::init(tiny_prior_config(4), 13).unwrap();
    let map = predict_gaussian_map(&scene.maps, &scene.driving, &w, &scene.model.stats).unwrap();
    let (rows, x) = texel_inputs(&scene.maps, &scene.model.stats);
    let y = decode_texels(&x, &scene.driving, &w).unwrap();
    for (k, &t) in rows.iter().enumerate() {
        assert_eq!(map.texel(t), &y[k * CHANNELS..(k + 1) * CHANNELS]);
    }
}

/// Central differences of the full objective against every prior weight.
#[test]
fn end_to_end_weight_gradients_match_finite_differences() {
    let scene = patch_scene::<f64>(21, 4);
    let w = PriorWeights::<f64>::init(tiny_prior_config(4), 22).unwrap();
    let view = View {
        maps: &scene.maps,
        driving: &scene.driving,
        camera: &scene.camera,
        target: &scene.target,
        mask: None,
    };
    let lw = LossWeights::default();
    let (report, grads) = scene.model.loss_and_grad(&w, &view, &lw, &SsimLoss).unwrap();
    assert!(report.total > 0.0);
    let fwd = scene.model.render(&w, &scene.maps, &scene.driving, &scene.camera).unwrap();
    let covered = fwd.render.alpha.data.iter().filter(|&&a| a > 0.1).count();
    assert!(covered > 20, "patch covers only {covered} pixels");
    assert!(report.depth_distortion > 0.0 && report.normal_consistency > 0.0);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (gi, group) in w.groups.iter().enumerate() {
        for j in 0..group.data.len() {
            let mut p = w.clone();
            p.groups[gi].data[j] += h;
            let mut m = w.clone();
            m.groups[gi].data[j] -= h;
            let fp = scene.model.loss(&p, &view, &lw, &SsimLoss).unwrap().total;
            let fm = scene.model.loss(&m, &view, &lw, &SsimLoss).unwrap().total;
            let fd = (fp - fm) / (2.0 * h);
            let g = grads.groups[gi].data[j];
            let e = rel_err(fd, g);
            worst = worst.max(e);
            assert!(e < 1e-3, "{}[{j}]: fd {fd} vs analytic {g}", group.name);
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn zero_learning_rate_keeps_weights_bit_identical() {
    use surfel_core::prior::{Adam, AdamConfig};
    let scene = patch_scene::<f64>(30, 4);
    let mut w = PriorWeights::<f64>::init(tiny_prior_config(4), 31).unwrap();
    let before = w.clone();
    let view = View {
        maps: &scene.maps,
        driving: &scene.driving,
        camera: &scene.camera,
        target: &scene.target,
        mask: None,
    };
    let mut adam = Adam::new(
        AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        },
        &w,
    );
    for _ in 0..3 {
        let (_, g) = scene.model.loss_and_grad(&w, &view, &LossWeights::default(), &SsimLoss).unwrap();
        adam.step(&mut w, &g).unwrap();
    }
    assert_eq!(w, before);
}

fn smoke_sample(seed: u64) -> (surfel_core::fixture::PatchScene<f64>, PriorWeights<f64>, Vec<surfel_core::prior::TrainSample<f64>>) {
    let scene = patch_scene::<f64>(seed, 4);
    let init = PriorWeights::<f64>::init(tiny_prior_config(4), seed + 1).unwrap();
    // target: a render of a different random decoder, so it is reachable
    let other = PriorWeights::<f64>::init(tiny_prior_config(4), seed + 2).unwrap();
    let target = scene.model.render(&other, &scene.maps, &scene.driving, &scene.camera).unwrap().render.rgb;
    let sample = surfel_core::prior::TrainSample {
        identity: 0,
        driving: scene.driving.clone(),
        camera: scene.camera.clone(),
        target,
        mask: None,
    };
    (scene, init, vec![sample])
}

#[test]
fn two_hundred_steps_halve_the_loss_on_one_sample() {
    use surfel_core::prior::{train_prior, TrainConfig};
    let (scene, init, samples) = smoke_sample(40);
    let cfg = TrainConfig {
        steps: 200,
        ..TrainConfig::default()
    };
    let maps = [scene.maps.clone()];
    let out = train_prior(&scene.model, &init, &maps, &samples, &cfg, &SsimLoss).unwrap();
    let first = out.loss_curve[0].total;
    let view = samples[0].view(&maps);
    let (last, _) = scene.model.loss_and_grad(&out.weights, &view, &cfg.loss, &SsimLoss).unwrap();
    assert!(last.total <= 0.5 * first, "{first} -> {}", last.total);
}

#[test]
fn seeded_training_reruns_reproduce() {
    use surfel_core::prior::{train_prior, TrainConfig};
    let (scene, init, samples) = smoke_sample(41);
    let cfg = TrainConfig {
        steps: 30,
        seed: 5,
        ..TrainConfig::default()
    };
    let maps = [scene.maps.clone()];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = || pool.install(|| train_prior(&scene.model, &init, &maps, &samples, &cfg, &SsimLoss).unwrap());
    let (a, b) = (run(), run());
    let (la, lb) = (a.loss_curve.last().unwrap().total, b.loss_curve.last().unwrap().total);
    assert!((la - lb).abs() <= 1e-6);
    assert_eq!(a.weights, b.weights);
}
