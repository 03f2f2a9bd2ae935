//! Synthetic articulated scenes rendered by analytic ray casting, with
//! ground truth for evaluation.

mod eval;
mod presets;
mod render;

pub use eval::{axis_line_distance, evaluate, Estimate, Metrics};
pub use presets::{preset, Preset, PresetRequest};
pub use render::Shape;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CameraIntrinsics, DepthImage, HandSide, KeypointFile, Mask};
use crate::io::{self, SequenceInput};
use crate::joint::{canonicalize, JointModel, Mat3, MotionSequence, RigidTransform, Vec3};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_OBJECT: u8 = 1;
pub const LABEL_HAND: u8 = 2;
pub const LABEL_NONE: u8 = 255;

/// Look-at camera in world coordinates. Image x points right, y down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookAt {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
}

impl LookAt {
    /// World-to-camera transform.
    pub fn world_to_camera(&self) -> Result<RigidTransform> {
        let f = (self.target - self.eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera eye and target coincide".into()))?;
        let r = f
            .cross(&self.up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidParameter("camera up is parallel to the view direction".into()))?;
        let d = f.cross(&r);
        let rotation = Mat3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        Ok(RigidTransform {
            rotation,
            translation: -(rotation * self.eye),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Gaussian depth noise in meters.
    pub depth_sigma: f64,
    /// Gaussian keypoint noise in pixels.
    pub hand_sigma_2d: f64,
    /// Probability that a joint is reported with zero confidence.
    pub dropout_rate: f64,
}

/// Hand rigidly attached to the moving part: joints are `contact + offset`,
/// and the optional palm shapes are rendered and labelled as hand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModel {
    pub contact: Vec3,
    pub joint_offsets: Vec<Vec3>,
    /// Confidence reported for each joint, one value per frame or a single
    /// value for all frames.
    #[serde(default = "default_confidence")]
    pub confidence: Vec<f64>,
    #[serde(default)]
    pub palm: Vec<Shape>,
    #[serde(default = "default_side")]
    pub side: HandSide,
}

fn default_confidence() -> Vec<f64> {
    vec![0.9]
}

fn default_side() -> HandSide {
    HandSide::Right
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Png,
    #[default]
    Dbin,
}

impl DepthFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DepthFormat::Png => "png",
            DepthFormat::Dbin => "dbin",
        }
    }
}

/// A complete scene description. Geometry and the joint are in world
/// coordinates; the object shapes are given at the first frame's pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub intrinsics: CameraIntrinsics,
    pub camera: LookAt,
    pub joint: JointModel,
    /// Physical displacement of each frame (meters or radians), first entry 0.
    pub motion_schedule: Vec<f64>,
    pub object: Vec<Shape>,
    #[serde(default)]
    pub background: Vec<Shape>,
    pub hand: HandModel,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub depth_format: DepthFormat,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.camera.world_to_camera()?;
        let n = self.motion_schedule.len();
        if n < 2 {
            return Err(Error::InvalidParameter("a scene needs at least 2 frames".into()));
        }
        if self.motion_schedule[0] != 0.0 || self.motion_schedule.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "motion_schedule must be finite and start at 0".into(),
            ));
        }
        if self.object.is_empty() {
            return Err(Error::InvalidParameter("the object needs at least one shape".into()));
        }
        let shapes = self.object.iter().chain(&self.background).chain(&self.hand.palm);
        if !shapes.clone().all(Shape::is_valid) {
            return Err(Error::InvalidParameter("shape dimensions must be positive".into()));
        }
        if self.hand.joint_offsets.is_empty() {
            return Err(Error::InvalidParameter("the hand needs at least one joint".into()));
        }
        let c = &self.hand.confidence;
        if !(c.len() == 1 || c.len() == n) || c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "hand confidence needs one value in [0, 1] or one per frame".into(),
            ));
        }
        let nm = &self.noise;
        if !(nm.depth_sigma >= 0.0 && nm.hand_sigma_2d >= 0.0 && (0.0..=1.0).contains(&nm.dropout_rate)) {
            return Err(Error::InvalidParameter("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth in the camera frame of the sequence, sign-canonical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub joint: JointModel,
    pub motions: MotionSequence,
    /// Directory of per-frame label images, relative to `truth.json`.
    pub labels: String,
}

/// A rendered scene.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub sequence: SequenceInput,
    /// Per-frame, per-pixel labels (`LABEL_*`).
    pub labels: Vec<Vec<u8>>,
    pub truth: GroundTruth,
    /// Noiseless camera-frame hand joints per frame.
    pub hand_joints: Vec<Vec<Vec3>>,
}

struct Posed {
    shapes: Vec<(Shape, u8)>,
}

impl Posed {
    fn cast(&self, dir: &Vec3) -> Option<(f64, u8)> {
        let origin = Vec3::zeros();
        self.shapes
            .iter()
            .filter_map(|(s, label)| s.intersect(&origin, dir).map(|t| (t, *label)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

fn render(intr: &CameraIntrinsics, posed: &Posed, sigma: f64, rng: &mut ChaCha8Rng) -> (DepthImage, Vec<u8>) {
    let (w, h) = (intr.width, intr.height);
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut depth = Vec::with_capacity(intr.pixel_count());
    let mut labels = Vec::with_capacity(intr.pixel_count());
    for v in 0..h {
        for u in 0..w {
            let dir = Vec3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
            match posed.cast(&dir) {
                Some((t, label)) => {
                    let d = if sigma > 0.0 { t + noise.sample(rng) } else { t };
                    depth.push(d.max(0.0) as f32);
                    labels.push(label);
                }
                None => {
                    depth.push(0.0);
                    labels.push(LABEL_NONE);
                }
            }
        }
    }
    (DepthImage { width: w, height: h, data: depth }, labels)
}

const KEYPOINT_STREAM: u64 = 1 << 32;

/// Renders the background, every frame, keypoints, person masks, labels and
/// ground truth. Deterministic for a given spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let intr = spec.intrinsics;
    let world_to_cam = spec.camera.world_to_camera()?;
    let to_cam = |s: &Shape| s.transformed(&world_to_cam);
    let background: Vec<(Shape, u8)> = spec.background.iter().map(|s| (to_cam(s), LABEL_BACKGROUND)).collect();
    let posed_at = |s: f64, with_hand: bool| {
        let physical = world_to_cam.compose(&spec.joint.transform(s));
        let mut shapes = background.clone();
        shapes.extend(spec.object.iter().map(|o| (o.transformed(&physical), LABEL_OBJECT)));
        if with_hand {
            shapes.extend(spec.hand.palm.iter().map(|o| (o.transformed(&physical), LABEL_HAND)));
        }
        Posed { shapes }
    };

    let n = spec.motion_schedule.len();
    let sigma = spec.noise.depth_sigma;
    let rendered: Vec<(DepthImage, Vec<u8>)> = (0..=n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64);
            let posed = if k == 0 {
                posed_at(0.0, false)
            } else {
                posed_at(spec.motion_schedule[k - 1], true)
            };
            render(&intr, &posed, sigma, &mut rng)
        })
        .collect();
    let mut rendered = rendered.into_iter();
    let (background_depth, _) = rendered.next().expect("background rendered");
    let (frames, labels): (Vec<DepthImage>, Vec<Vec<u8>>) = rendered.unzip();

    for (i, l) in labels.iter().enumerate() {
        if !l.contains(&LABEL_OBJECT) {
            return Err(Error::InvalidParameter(format!(
                "the object is outside the view in frame {i}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(KEYPOINT_STREAM);
    let kp_noise = Normal::new(0.0, spec.noise.hand_sigma_2d.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut keypoints = Vec::with_capacity(n);
    let mut hand_joints = Vec::with_capacity(n);
    for (i, &s) in spec.motion_schedule.iter().enumerate() {
        let physical = world_to_cam.compose(&spec.joint.transform(s));
        let base_conf = spec.hand.confidence[if spec.hand.confidence.len() == 1 { 0 } else { i }];
        let cam: Vec<Vec3> = spec
            .hand
            .joint_offsets
            .iter()
            .map(|o| physical.apply(&(spec.hand.contact + o)))
            .collect();
        let joints = cam
            .iter()
            .map(|p| {
                let (mut u, mut v) = intr.project(p).unwrap_or((-1.0, -1.0));
                if spec.noise.hand_sigma_2d > 0.0 {
                    u += kp_noise.sample(&mut rng);
                    v += kp_noise.sample(&mut rng);
                }
                let dropped = spec.noise.dropout_rate > 0.0 && rng.random::<f64>() < spec.noise.dropout_rate;
                let inside = u >= 0.0 && v >= 0.0 && u <= (intr.width - 1) as f64 && v <= (intr.height - 1) as f64;
                let conf = if dropped || !inside { 0.0 } else { base_conf };
                [u, v, conf]
            })
            .collect();
        keypoints.push(KeypointFile {
            frame: i,
            hand: spec.hand.side,
            joints,
        });
        hand_joints.push(cam);
    }

    let person_masks = labels
        .iter()
        .map(|l| Some(Mask {
            width: intr.width,
            height: intr.height,
            data: l.iter().map(|&x| x == LABEL_HAND).collect(),
        }))
        .collect();

    let cam_joint = joint_in_camera(&spec.joint, &world_to_cam)?;
    let motions = MotionSequence::new(spec.motion_schedule.iter().map(|s| -s).collect())?;
    let (joint, motions) = canonicalize(cam_joint, motions);
    Ok(SyntheticScene {
        sequence: SequenceInput {
            intrinsics: intr,
            background: background_depth,
            frames,
            keypoints,
            person_masks,
        },
        labels,
        truth: GroundTruth {
            joint,
            motions,
            labels: "labels".into(),
        },
        hand_joints,
    })
}

fn joint_in_camera(joint: &JointModel, world_to_cam: &RigidTransform) -> Result<JointModel> {
    match *joint {
        JointModel::Prismatic { direction } => JointModel::prismatic(world_to_cam.apply_vector(&direction)),
        JointModel::Revolute {
            axis_direction,
            axis_point,
        } => JointModel::revolute_through(
            world_to_cam.apply_vector(&axis_direction),
            world_to_cam.apply(&axis_point),
        ),
    }
}

/// Writes the scene in the sequence layout plus `labels/frame_NNNN.png`,
/// `truth.json` and `scene.json`.
pub fn write_scene(dir: &Path, spec: &SceneSpec, scene: &SyntheticScene) -> Result<()> {
    io::write_sequence(dir, &scene.sequence, spec.depth_format.extension())?;
    let labels_dir = dir.join(&scene.truth.labels);
    io::create_dir(&labels_dir)?;
    let (w, h) = (scene.sequence.intrinsics.width, scene.sequence.intrinsics.height);
    for (i, l) in scene.labels.iter().enumerate() {
        io::write_gray8(&labels_dir.join(format!("{}.png", io::frame_name(i))), w, h, l.clone())?;
    }
    io::write_json(&dir.join("truth.json"), &scene.truth)?;
    io::write_json(&dir.join("scene.json"), spec)
}

/// Reads a scene file: either a full [`SceneSpec`] or a [`PresetRequest`]
/// (recognised by its `preset` key).
pub fn load_scene_spec(path: &Path) -> Result<SceneSpec> {
    let value: serde_json::Value = io::read_json(path)?;
    let spec = if value.get("preset").is_some() {
        let req: PresetRequest = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        preset(&req)?
    } else {
        serde_json::from_value(value).map_err(|e| Error::json(path, e))?
    };
    spec.validate()?;
    Ok(spec)
}

/// Reads the label image of frame `frame` next to a `truth.json`.
pub fn read_labels(truth_path: &Path, truth: &GroundTruth, frame: usize) -> Result<Vec<u8>> {
    let dir = truth_path.parent().unwrap_or(Path::new("."));
    let path = dir.join(&truth.labels).join(format!("{}.png", io::frame_name(frame)));
    Ok(io::read_gray8(&path)?.2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_axes() {
        let cam = LookAt {
            eye: Vec3::new(0.0, -2.0, 1.0),
            target: Vec3::new(0.0, 0.0, 1.0),
            up: Vec3::z(),
        };
        let t = cam.world_to_camera().unwrap();
        assert!((t.apply(&Vec3::new(0.0, 0.0, 1.0)) - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        let right = t.apply(&Vec3::new(1.0, 0.0, 1.0));
        assert!(right.x > 0.99 && right.y.abs() < 1e-12);
        let above = t.apply(&Vec3::new(0.0, 0.0, 2.0));
        assert!(above.y < -0.99);
    }

    #[test]
    fn zero_motion_frames_equal_background_outside_hand() {
        let mut spec = preset(&PresetRequest::new(Preset::Drawer)).unwrap();
        spec.motion_schedule = vec![0.0; 3];
        let scene = generate_scene(&spec).unwrap();
        for (f, l) in scene.sequence.frames.iter().zip(&scene.labels) {
            for ((a, b), &lab) in f.data.iter().zip(&scene.sequence.background.data).zip(l) {
                if lab != LABEL_HAND {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn drawer_displacement_matches_projection() {
        let spec = preset(&PresetRequest::new(Preset::Drawer)).unwrap();
        let scene = generate_scene(&spec).unwrap();
        let intr = scene.sequence.intrinsics;
        let t = scene.truth.joint.direction();
        for i in 1..scene.sequence.frames.len() {
            let step = scene.truth.motions.as_slice()[i] - scene.truth.motions.as_slice()[i - 1];
            let (prev, cur) = (&scene.hand_joints[i - 1], &scene.hand_joints[i]);
            for (a, b) in prev.iter().zip(cur) {
                let expected = a - t * step;
                assert!((expected - b).norm() < 1e-12);
                let (ua, va) = intr.project(b).unwrap();
                let (ub, vb) = intr.project(&expected).unwrap();
                assert!((ua - ub).abs() < 1e-9 && (va - vb).abs() < 1e-9);
            }
            assert!((step.abs() - 0.3 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn door_contact_on_circle() {
        let spec = preset(&PresetRequest::new(Preset::Door)).unwrap();
        let scene = generate_scene(&spec).unwrap();
        let axis = scene.truth.joint.direction();
        let l = scene.truth.joint.axis_point().unwrap();
        let radius = |p: &Vec3| {
            let r = p - l;
            (r - axis * r.dot(&axis)).norm()
        };
        let r0 = radius(&scene.hand_joints[0][0]);
        for joints in &scene.hand_joints {
            assert!((radius(&joints[0]) - r0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let mut req = PresetRequest::new(Preset::Drawer);
        req.noise = NoiseModel {
            depth_sigma: 0.005,
            hand_sigma_2d: 3.0,
            dropout_rate: 0.1,
        };
        let spec = preset(&req).unwrap();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.sequence.frames, b.sequence.frames);
        assert_eq!(a.sequence.keypoints, b.sequence.keypoints);
        req.seed += 1;
        let c = generate_scene(&preset(&req).unwrap()).unwrap();
        assert_ne!(a.sequence.frames[1], c.sequence.frames[1]);
    }

    #[test]
    fn object_outside_view_is_an_error() {
        let mut spec = preset(&PresetRequest::new(Preset::Drawer)).unwrap();
        spec.camera.target = spec.camera.eye * 2.0 - spec.camera.target;
        assert!(matches!(generate_scene(&spec), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let good = preset(&PresetRequest::new(Preset::Door)).unwrap();
        let mut s = good.clone();
        s.motion_schedule[0] = 0.1;
        assert!(s.validate().is_err());
        let mut s = good.clone();
        s.object.push(Shape::Disk {
            center: Vec3::zeros(),
            normal: Vec3::z(),
            radius: -1.0,
        });
        assert!(s.validate().is_err());
        let mut s = good;
        s.noise.dropout_rate = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = preset(&PresetRequest::new(Preset::DoorFloor)).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
