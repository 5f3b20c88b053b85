//! `dataset.json`: frames with camera, driving signal and image paths, plus
//! the rig reference. Paths are relative to the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfel_core::prior::{GeometryStats, UVInputMaps};
use surfel_core::render::Camera;
use surfel_core::rig::{self, texel_anchors, DrivingSignal, TemplateRig, POSE_GROUP_DIMS};
use surfel_core::Image;

use crate::error::{WbResult, WorkbenchError};
use crate::fsutil::write_atomic;
use crate::imageio;

pub const DATASET_JSON: &str = "dataset.json";
pub const ORTHONORMAL_TOL: f64 = 1e-4;
/// Clip planes for ingested cameras; the interchange format carries none.
pub const NEAR: f64 = 0.01;
pub const FAR: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    /// Row-major 4×4.
    pub world_to_cam: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingRecord {
    pub psi: Vec<f64>,
    pub jaw: Vec<f64>,
    pub eyes: Vec<f64>,
    pub neck: Vec<f64>,
    pub glob: Vec<f64>,
    pub t: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub camera: CameraRecord,
    pub driving: DrivingRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsRecord {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl From<&GeometryStats<f64>> for StatsRecord {
    fn from(s: &GeometryStats<f64>) -> Self {
        Self { mean: s.mean, std: s.std }
    }
}

/// The serialized form, field for field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub frames: Vec<FrameRecord>,
    pub rig: String,
    pub background: Vec<f64>,
    /// UV texture of the tracked subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_stats: Option<StatsRecord>,
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera<f64>) -> Self {
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            w: cam.width,
            h: cam.height,
            world_to_cam: cam.world_to_cam_matrix().to_vec(),
        }
    }

    pub fn to_camera(&self) -> WbResult<Camera<f64>> {
        let m = &self.world_to_cam;
        if m.len() != 16 {
            return Err(WorkbenchError::Dimension(format!("world_to_cam has {} entries, expected 16", m.len())));
        }
        if m[12..].iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(&a, b)| (a - b).abs() > ORTHONORMAL_TOL) {
            return Err(WorkbenchError::Validation("world_to_cam bottom row must be [0, 0, 0, 1]".into()));
        }
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.w,
            height: self.h,
            rotation: [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            translation: [m[3], m[7], m[11]],
            near: NEAR,
            far: FAR,
        };
        cam.validate(ORTHONORMAL_TOL)
            .map_err(|e| WorkbenchError::Validation(e.to_string()))?;
        Ok(cam)
    }
}

impl DrivingRecord {
    pub fn from_driving(d: &DrivingSignal<f64>) -> Self {
        Self {
            psi: d.psi.clone(),
            jaw: d.jaw.to_vec(),
            eyes: d.eyes.to_vec(),
            neck: d.neck.to_vec(),
            glob: d.glob.to_vec(),
            t: d.t.to_vec(),
        }
    }

    pub fn to_driving(&self) -> WbResult<DrivingSignal<f64>> {
        let groups = [&self.jaw, &self.eyes, &self.neck, &self.glob, &self.t];
        for ((name, g), want) in ["jaw", "eyes", "neck", "glob", "t"].iter().zip(groups).zip(POSE_GROUP_DIMS) {
            if g.len() != want {
                return Err(WorkbenchError::Dimension(format!("driving.{name} has {} values, expected {want}", g.len())));
            }
        }
        let mut flat = self.psi.clone();
        for g in groups {
            flat.extend_from_slice(g);
        }
        let d = DrivingSignal::from_slice(&flat, self.psi.len())?;
        d.validate().map_err(|e| WorkbenchError::Validation(e.to_string()))?;
        Ok(d)
    }
}

impl FrameRecord {
    pub fn new(image: String, mask: Option<String>, cam: &Camera<f64>, d: &DrivingSignal<f64>) -> Self {
        Self {
            image,
            mask,
            camera: CameraRecord::from_camera(cam),
            driving: DrivingRecord::from_driving(d),
        }
    }
}

impl DatasetFile {
    pub fn parse(text: &str, path: &Path) -> WbResult<Self> {
        serde_json::from_str(text).map_err(|e| WorkbenchError::Json {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> WbResult<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| WorkbenchError::Format(e.to_string()))?;
        write_atomic(path, &json)
    }
}

/// A validated dataset; images are read on demand.
#[derive(Clone, Debug)]
pub struct AvatarDataset {
    pub root: PathBuf,
    pub file: DatasetFile,
    pub cameras: Vec<Camera<f64>>,
    pub driving: Vec<DrivingSignal<f64>>,
    pub background: [f64; 3],
}

fn require(path: &Path) -> WbResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(WorkbenchError::missing(path, "no such file"))
    }
}

impl AvatarDataset {
    /// `root` may be a directory holding `dataset.json` or the file itself.
    pub fn load(root: &Path) -> WbResult<Self> {
        let (dir, json) = if root.is_dir() {
            (root.to_path_buf(), root.join(DATASET_JSON))
        } else {
            (root.parent().unwrap_or(Path::new(".")).to_path_buf(), root.to_path_buf())
        };
        let text = std::fs::read_to_string(&json).map_err(|e| WorkbenchError::missing(&json, e))?;
        Self::from_file(dir, DatasetFile::parse(&text, &json)?)
    }

    pub fn from_file(root: PathBuf, file: DatasetFile) -> WbResult<Self> {
        if file.frames.is_empty() {
            return Err(WorkbenchError::Validation("dataset has no frames".into()));
        }
        let background: [f64; 3] = file
            .background
            .as_slice()
            .try_into()
            .map_err(|_| WorkbenchError::Dimension(format!("background has {} values, expected 3", file.background.len())))?;
        if background.iter().any(|v| !v.is_finite()) {
            return Err(WorkbenchError::Validation("background must be finite".into()));
        }
        let rig_path = root.join(&file.rig);
        require(&rig_path)?;
        require(&rig::io::sidecar_path(&rig_path))?;
        if let Some(t) = &file.texture {
            require(&root.join(t))?;
        }
        let mut cameras = Vec::with_capacity(file.frames.len());
        let mut driving = Vec::with_capacity(file.frames.len());
        let expr_dim = file.frames[0].driving.psi.len();
        for (i, f) in file.frames.iter().enumerate() {
            require(&root.join(&f.image))?;
            if let Some(m) = &f.mask {
                require(&root.join(m))?;
            }
            let cam = f
                .camera
                .to_camera()
                .map_err(|e| prefix(e, &format!("frame {i}: ")))?;
            let d = f.driving.to_driving().map_err(|e| prefix(e, &format!("frame {i}: ")))?;
            if d.psi.len() != expr_dim {
                return Err(WorkbenchError::Dimension(format!(
                    "frame {i}: psi has {} values, frame 0 has {expr_dim}",
                    d.psi.len()
                )));
            }
            cameras.push(cam);
            driving.push(d);
        }
        Ok(Self {
            root,
            file,
            cameras,
            driving,
            background,
        })
    }

    pub fn save(&self, path: &Path) -> WbResult<()> {
        self.file.save(path)
    }

    pub fn len(&self) -> usize {
        self.file.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.frames.is_empty()
    }

    pub fn expr_dim(&self) -> usize {
        self.driving[0].psi.len()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.file.frames[i].image)
    }

    /// Loads frame `i` and checks it against its camera.
    pub fn image(&self, i: usize) -> WbResult<Image<f64>> {
        let img = imageio::read_image(&self.image_path(i))?;
        let cam = &self.cameras[i];
        if img.height != cam.height || img.width != cam.width {
            return Err(WorkbenchError::Dimension(format!(
                "frame {i}: image is {}×{}, camera is {}×{}",
                img.height, img.width, cam.height, cam.width
            )));
        }
        Ok(img)
    }

    pub fn mask(&self, i: usize) -> WbResult<Option<Vec<bool>>> {
        let Some(m) = &self.file.frames[i].mask else { return Ok(None) };
        let mask = imageio::read_mask(&self.root.join(m))?;
        let cam = &self.cameras[i];
        if mask.len() != cam.height * cam.width {
            return Err(WorkbenchError::Dimension(format!("frame {i}: mask does not match the camera")));
        }
        Ok(Some(mask))
    }

    pub fn rig(&self) -> WbResult<TemplateRig<f64>> {
        let obj = self.root.join(&self.file.rig);
        let rig: TemplateRig<f64> = rig::io::load_rig(&obj, &rig::io::sidecar_path(&obj))?;
        if rig.num_expr() != self.expr_dim() {
            return Err(WorkbenchError::Dimension(format!(
                "rig has {} expression coefficients, driving signals have {}",
                rig.num_expr(),
                self.expr_dim()
            )));
        }
        Ok(rig)
    }

    pub fn texture(&self) -> WbResult<Image<f64>> {
        let t = self
            .file
            .texture
            .as_ref()
            .ok_or_else(|| WorkbenchError::Validation("dataset has no UV texture".into()))?;
        imageio::read_png(&self.root.join(t))
    }

    pub fn stats(&self) -> WbResult<Option<GeometryStats<f64>>> {
        self.file
            .geometry_stats
            .as_ref()
            .map(|s| GeometryStats::new(s.mean, s.std).map_err(WorkbenchError::from))
            .transpose()
    }

    /// UV input maps of this subject on an `n × n` layout.
    pub fn input_maps(&self, rig: &TemplateRig<f64>, uv_size: usize) -> WbResult<UVInputMaps<f64>> {
        let anchors = texel_anchors(rig, uv_size, uv_size)?;
        Ok(UVInputMaps::from_rig(rig, &anchors, &self.texture()?)?)
    }
}

fn prefix(e: WorkbenchError, p: &str) -> WorkbenchError {
    match e {
        WorkbenchError::Dimension(m) => WorkbenchError::Dimension(format!("{p}{m}")),
        WorkbenchError::Validation(m) => WorkbenchError::Validation(format!("{p}{m}")),
        other => other,
    }
}
