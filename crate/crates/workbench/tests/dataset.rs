mod common;

use std::path::Path;

use proptest::prelude::*;
use surfel_workbench::dataset::{AvatarDataset, CameraRecord, DatasetFile, DrivingRecord, FrameRecord, DATASET_JSON};
use surfel_workbench::WorkbenchError;

fn edit(root: &Path, f: impl FnOnce(&mut DatasetFile)) {
    let path = root.join(DATASET_JSON);
    let mut file = DatasetFile::parse(&std::fs::read_to_string(&path).unwrap(), &path).unwrap();
    f(&mut file);
    file.save(&path).unwrap();
}

fn fixture() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    common::tiny_bench(3, dir.path());
    let train = dir.path().join("train");
    (dir, train)
}

#[test]
fn three_frame_fixture_loads() {
    let (_dir, train) = fixture();
    let ds = AvatarDataset::load(&train).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.cameras.len(), 3);
    assert_eq!(ds.driving.len(), 3);
    assert_eq!(ds.expr_dim(), common::TINY_EXPR);
    for i in 0..3 {
        let img = ds.image(i).unwrap();
        assert_eq!((img.height, img.width, img.channels), (32, 32, 3));
        assert!(ds.mask(i).unwrap().is_none());
    }
    assert_eq!(ds.rig().unwrap().num_expr(), common::TINY_EXPR);
    assert!(ds.stats().unwrap().is_some());
    // the file itself is accepted too
    assert_eq!(AvatarDataset::load(&train.join(DATASET_JSON)).unwrap().file, ds.file);
}

#[test]
fn load_save_load_is_field_identical() {
    let (_dir, train) = fixture();
    let a = AvatarDataset::load(&train).unwrap();
    // same directory so relative paths still resolve
    a.save(&train.join("again.json")).unwrap();
    let b = AvatarDataset::load(&train.join("again.json")).unwrap();
    assert_eq!(a.file, b.file);
    assert_eq!(a.cameras, b.cameras);
    assert_eq!(a.driving, b.driving);
    assert_eq!(a.background, b.background);
}

#[test]
fn truncated_json_is_a_parse_error() {
    let (_dir, train) = fixture();
    let path = train.join(DATASET_JSON);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    let e = AvatarDataset::load(&train).unwrap_err();
    assert!(matches!(e, WorkbenchError::Json { .. }), "{e}");
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn unknown_keys_are_rejected() {
    let (_dir, train) = fixture();
    let path = train.join(DATASET_JSON);
    let text = std::fs::read_to_string(&path).unwrap().replacen('{', "{\"extra\": 1,", 1);
    std::fs::write(&path, text).unwrap();
    assert!(matches!(AvatarDataset::load(&train), Err(WorkbenchError::Json { .. })));
}

#[test]
fn non_orthonormal_camera_is_a_validation_error() {
    let (_dir, train) = fixture();
    edit(&train, |f| f.frames[1].camera.world_to_cam[0] *= 1.01);
    let e = AvatarDataset::load(&train).unwrap_err();
    assert!(matches!(e, WorkbenchError::Validation(_)), "{e}");
    assert!(e.to_string().contains("frame 1"), "{e}");
    assert_eq!(e.exit_code(), 6);
}

#[test]
fn slightly_perturbed_camera_within_tolerance_loads() {
    let (_dir, train) = fixture();
    edit(&train, |f| f.frames[0].camera.world_to_cam[0] += 1e-6);
    AvatarDataset::load(&train).unwrap();
}

#[test]
fn bad_bottom_row_is_a_validation_error() {
    let (_dir, train) = fixture();
    edit(&train, |f| f.frames[0].camera.world_to_cam[15] = 2.0);
    assert!(matches!(AvatarDataset::load(&train), Err(WorkbenchError::Validation(_))));
}

#[test]
fn missing_files_have_their_own_error() {
    let (_dir, train) = fixture();
    std::fs::remove_file(train.join("images/0002.png")).unwrap();
    let e = AvatarDataset::load(&train).unwrap_err();
    assert!(matches!(e, WorkbenchError::MissingFile { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
    let e = AvatarDataset::load(&train.join("nope")).unwrap_err();
    assert_eq!(e.exit_code(), 3);

    let (_dir, train) = fixture();
    edit(&train, |f| f.rig = "../missing.obj".into());
    assert!(matches!(AvatarDataset::load(&train), Err(WorkbenchError::MissingFile { .. })));
}

#[test]
fn dimension_mismatches_have_their_own_error() {
    let cases: [fn(&mut DatasetFile); 4] = [
        |f| f.frames[0].camera.world_to_cam.pop().map(drop).unwrap(),
        |f| f.frames[2].driving.jaw.truncate(2),
        |f| f.frames[1].driving.psi.push(0.0),
        |f| f.background.push(0.0),
    ];
    for (k, case) in cases.iter().enumerate() {
        let (_dir, train) = fixture();
        edit(&train, case);
        let e = AvatarDataset::load(&train).unwrap_err();
        assert!(matches!(e, WorkbenchError::Dimension(_)), "case {k}: {e}");
        assert_eq!(e.exit_code(), 5);
    }
    // image size disagreeing with its camera surfaces when the frame is read
    let (_dir, train) = fixture();
    edit(&train, |f| {
        f.frames[0].camera.w = 30;
        f.frames[0].camera.cx = 15.0;
    });
    let ds = AvatarDataset::load(&train).unwrap();
    assert!(matches!(ds.image(0), Err(WorkbenchError::Dimension(_))));
}

#[test]
fn rig_with_wrong_expression_count_is_a_dimension_error() {
    let (_dir, train) = fixture();
    edit(&train, |f| {
        for fr in &mut f.frames {
            fr.driving.psi.push(0.0);
        }
    });
    let ds = AvatarDataset::load(&train).unwrap();
    assert!(matches!(ds.rig(), Err(WorkbenchError::Dimension(_))));
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(1e-300), Just(-2.5e-8)]
}

fn vec_of(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(finite(), n)
}

prop_compose! {
    fn frame()(
        image in "[a-z]{1,8}\\.png",
        mask in proptest::option::of("[a-z]{1,8}\\.png"),
        k in vec_of(4),
        w in 1usize..4096,
        h in 1usize..4096,
        m in vec_of(16),
        psi in proptest::collection::vec(finite(), 0..12),
        pose in vec_of(18),
    ) -> FrameRecord {
        FrameRecord {
            image,
            mask,
            camera: CameraRecord { fx: k[0], fy: k[1], cx: k[2], cy: k[3], w, h, world_to_cam: m },
            driving: DrivingRecord {
                psi,
                jaw: pose[0..3].to_vec(),
                eyes: pose[3..9].to_vec(),
                neck: pose[9..12].to_vec(),
                glob: pose[12..15].to_vec(),
                t: pose[15..18].to_vec(),
            },
        }
    }
}

proptest! {
    #[test]
    fn dataset_json_round_trips(frames in proptest::collection::vec(frame(), 1..4), bg in vec_of(3), texture in proptest::option::of("[a-z]{1,6}\\.png")) {
        let file = DatasetFile { frames, rig: "rig.obj".into(), background: bg, texture, geometry_stats: None };
        let text = serde_json::to_string_pretty(&file).unwrap();
        let back = DatasetFile::parse(&text, Path::new("x.json")).unwrap();
        prop_assert_eq!(back, file);
    }
}
