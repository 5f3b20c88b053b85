mod common;

use std::path::Path;

use surfel_core::avatar::AvatarModel;
use surfel_core::gaussian_map::ActivationConfig;
use surfel_core::prior::io::read_weights;
use surfel_core::render::RasterConfig;
use surfel_core::rig::texel_anchors;
use surfel_workbench::bench::{make_synthetic_benchmark, BenchConfig};
use surfel_workbench::dataset::AvatarDataset;

/// Re-renders every frame of a split from what is on disk alone.
fn rerender_error(root: &Path, split: &str, uv: usize) -> (usize, f64) {
    let ds = AvatarDataset::load(&root.join(split)).unwrap();
    let rig = ds.rig().unwrap();
    let maps = ds.input_maps(&rig, uv).unwrap();
    let weights = read_weights::<f32, _>(&std::fs::read(root.join("oracle.mgpw")).unwrap()[..])
        .unwrap()
        .cast::<f64>();
    let model = AvatarModel {
        anchors: texel_anchors(&rig, uv, uv).unwrap(),
        rig,
        stats: ds.stats().unwrap().unwrap(),
        activation: ActivationConfig::default(),
        raster: RasterConfig::default(),
        background: ds.background,
    };
    let mut worst: f64 = 0.0;
    for i in 0..ds.len() {
        let out = model.render(&weights, &maps, &ds.driving[i], &ds.cameras[i]).unwrap().render.rgb;
        let stored = ds.image(i).unwrap();
        for (a, b) in out.data.iter().zip(&stored.data) {
            worst = worst.max((a - b).abs());
        }
    }
    (ds.len(), worst)
}

#[test]
fn default_config_echoes_split_sizes() {
    let cfg = BenchConfig::default();
    assert_eq!((cfg.n_train, cfg.n_heldout), (16, 8));
    assert_eq!((cfg.resolution, cfg.uv_size), (128, 64));
    let dir = tempfile::tempdir().unwrap();
    let bench = common::tiny_bench(1, dir.path());
    let tiny = common::tiny_bench_config();
    assert_eq!(bench.train.len(), tiny.n_train);
    assert_eq!(bench.heldout.len(), tiny.n_heldout);
    assert_eq!(AvatarDataset::load(&dir.path().join("train")).unwrap().len(), tiny.n_train);
    assert_eq!(AvatarDataset::load(&dir.path().join("heldout")).unwrap().len(), tiny.n_heldout);
    for k in 0..tiny.corpus_identities {
        let corpus = AvatarDataset::load(&dir.path().join(format!("corpus/id{k}"))).unwrap();
        assert_eq!(corpus.len(), tiny.corpus_views);
    }
}

#[test]
fn stored_oracle_re_renders_its_pngs() {
    let dir = tempfile::tempdir().unwrap();
    common::tiny_bench(2, dir.path());
    for split in ["train", "heldout"] {
        let (n, worst) = rerender_error(dir.path(), split, common::tiny_bench_config().uv_size);
        assert!(n > 0);
        assert!(worst <= 0.5 / 255.0 + 1e-9, "{split}: {worst}");
    }
}

#[test]
fn first_train_frame_is_frontal_at_rest() {
    let bench = make_synthetic_benchmark(4, &common::tiny_bench_config()).unwrap();
    let f = &bench.train[0];
    assert!(f.driving.to_vec().iter().all(|&v| v == 0.0));
    let p = f.camera.position();
    assert!(p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && p[2] > 0.0);
}

#[test]
fn seeds_select_the_oracle() {
    let cfg = common::tiny_bench_config();
    let a = make_synthetic_benchmark(10, &cfg).unwrap();
    let b = make_synthetic_benchmark(11, &cfg).unwrap();
    let again = make_synthetic_benchmark(10, &cfg).unwrap();
    assert_ne!(a.oracle.weights, b.oracle.weights);
    assert_ne!(a.oracle_map.raw, b.oracle_map.raw);
    assert_ne!(a.train[1].image, b.train[1].image);
    assert_eq!(a.oracle.weights, again.oracle.weights);
    assert_eq!(a.oracle_map, again.oracle_map);
    for (x, y) in a.heldout.iter().zip(&again.heldout) {
        assert_eq!(x.image, y.image);
    }
}

#[test]
fn bad_bench_configs_are_rejected() {
    let mut cfg = common::tiny_bench_config();
    cfg.expr_dim += 1;
    assert_eq!(make_synthetic_benchmark(0, &cfg).unwrap_err().exit_code(), 2);
    let cfg = BenchConfig {
        n_train: 0,
        ..common::tiny_bench_config()
    };
    assert!(make_synthetic_benchmark(0, &cfg).is_err());
}
