use serde::{Deserialize, Serialize};

use super::{HandModel, LookAt, NoiseModel, SceneSpec, Shape};
use crate::error::{Error, Result};
use crate::ingest::{CameraIntrinsics, HandSide};
use crate::joint::{JointModel, Vec3};

/// Built-in scenes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// A drawer pulled 0.3 m out of a cabinet.
    Drawer,
    /// A door swung 60° in front of a wall, over a floor.
    Door,
    /// A door swung 60° over a floor disk centred on the hinge axis.
    DoorFloor,
    /// A plane larger than the view sliding 0.3 m within itself; the hand
    /// rests on it and is not rendered.
    FlatPanel,
}

/// A preset plus seed, noise and frame count, as accepted by the `synth`
/// command in place of a full [`SceneSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRequest {
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_frames")]
    pub frames: usize,
}

fn default_frames() -> usize {
    10
}

impl PresetRequest {
    pub fn new(preset: Preset) -> Self {
        PresetRequest {
            preset,
            seed: 0,
            noise: NoiseModel::default(),
            frames: default_frames(),
        }
    }
}

/// Gap between the closed position and the first frame of the drawer.
pub const DRAWER_AJAR: f64 = 0.04;

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 290.0,
        fy: 290.0,
        cx: 159.5,
        cy: 119.5,
        width: 320,
        height: 240,
    }
}

fn aabb(center: [f64; 3], half: [f64; 3]) -> Shape {
    Shape::Box {
        center: Vec3::from(center),
        rotation: Vec3::zeros(),
        half_extents: Vec3::from(half),
    }
}

/// 21 joint offsets spread over a palm face spanned by the half-axes `a`, `b`:
/// a wrist and five fingers of four joints.
fn palm_joints(a: Vec3, b: Vec3) -> Vec<Vec3> {
    let mut out = vec![b * -0.6];
    for f in 0..5 {
        let fa = -0.6 + 0.3 * f as f64;
        for k in 0..4 {
            let fb = -0.3 + 0.3 * k as f64;
            out.push(a * fa + b * fb);
        }
    }
    out
}

fn linear_schedule(total: f64, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|i| if i == 0 { 0.0 } else { total * i as f64 / (frames - 1) as f64 })
        .collect()
}

fn hand(contact: Vec3, a: Vec3, b: Vec3, palm: Vec<Shape>) -> HandModel {
    HandModel {
        contact,
        joint_offsets: palm_joints(a, b),
        confidence: vec![0.9],
        palm,
        side: HandSide::Right,
    }
}

/// Expands a preset into a full scene.
pub fn preset(req: &PresetRequest) -> Result<SceneSpec> {
    if req.frames < 2 {
        return Err(Error::InvalidParameter("a preset needs at least 2 frames".into()));
    }
    let n = req.frames;
    let floor = Shape::Rect {
        center: Vec3::zeros(),
        u: Vec3::new(3.0, 0.0, 0.0),
        v: Vec3::new(0.0, 3.0, 0.0),
    };
    let spec = match req.preset {
        Preset::Drawer => {
            let y0 = -DRAWER_AJAR;
            let palm_face = y0 - 0.09;
            SceneSpec {
                intrinsics: intrinsics(),
                camera: LookAt {
                    eye: Vec3::new(0.45, -1.25, 1.25),
                    target: Vec3::new(0.0, 0.0, 0.5),
                    up: Vec3::z(),
                },
                joint: JointModel::prismatic(Vec3::new(0.0, -1.0, 0.0))?,
                motion_schedule: linear_schedule(0.3, n),
                object: vec![
                    // front panel
                    aabb([0.0, y0 - 0.01, 0.575], [0.25, 0.01, 0.125]),
                    // body, inset from the front panel
                    aabb([0.0, y0 + 0.2, 0.565], [0.21, 0.2, 0.075]),
                    // handle bar
                    aabb([0.0, y0 - 0.035, 0.62], [0.08, 0.015, 0.012]),
                ],
                background: vec![
                    aabb([0.0, 0.25, 0.4], [0.4, 0.25, 0.4]),
                    floor,
                    Shape::Rect {
                        center: Vec3::new(0.0, 0.5, 1.5),
                        u: Vec3::new(3.0, 0.0, 0.0),
                        v: Vec3::new(0.0, 0.0, 1.5),
                    },
                ],
                hand: hand(
                    Vec3::new(0.0, palm_face, 0.62),
                    Vec3::new(0.045, 0.0, 0.0),
                    Vec3::new(0.0, 0.0, 0.055),
                    vec![aabb([0.0, y0 - 0.07, 0.62], [0.045, 0.02, 0.055])],
                ),
                noise: req.noise,
                seed: req.seed,
                depth_format: Default::default(),
            }
        }
        Preset::Door | Preset::DoorFloor => {
            let background = if req.preset == Preset::Door {
                vec![
                    floor,
                    Shape::Rect {
                        center: Vec3::new(0.0, 0.4, 1.5),
                        u: Vec3::new(3.0, 0.0, 0.0),
                        v: Vec3::new(0.0, 0.0, 1.5),
                    },
                ]
            } else {
                vec![Shape::Disk {
                    center: Vec3::zeros(),
                    normal: Vec3::z(),
                    radius: 1.2,
                }]
            };
            SceneSpec {
                intrinsics: intrinsics(),
                camera: LookAt {
                    eye: Vec3::new(-0.6, -1.7, 1.4),
                    target: Vec3::new(0.25, 0.0, 0.55),
                    up: Vec3::z(),
                },
                joint: JointModel::revolute(Vec3::z(), Vec3::zeros())?,
                motion_schedule: linear_schedule(-60f64.to_radians(), n),
                object: vec![
                    // door leaf, bottom edge 0.1 m above the floor
                    aabb([0.3, -0.01, 0.6], [0.3, 0.01, 0.5]),
                    // handle bar
                    aabb([0.52, -0.035, 0.6], [0.02, 0.015, 0.1]),
                ],
                background,
                hand: hand(
                    Vec3::new(0.52, -0.09, 0.6),
                    Vec3::new(0.035, 0.0, 0.0),
                    Vec3::new(0.0, 0.0, 0.06),
                    vec![aabb([0.52, -0.07, 0.6], [0.035, 0.02, 0.06])],
                ),
                noise: req.noise,
                seed: req.seed,
                depth_format: Default::default(),
            }
        }
        Preset::FlatPanel => SceneSpec {
            intrinsics: intrinsics(),
            camera: LookAt {
                eye: Vec3::new(0.0, 0.0, 1.0),
                target: Vec3::zeros(),
                up: Vec3::y(),
            },
            // diagonal to both image axes
            joint: JointModel::prismatic(Vec3::new(1.0, 1.0, 0.0).normalize())?,
            motion_schedule: linear_schedule(0.3, n),
            object: vec![aabb([0.0, 0.0, -0.01], [1.5, 1.5, 0.01])],
            background: Vec::new(),
            hand: hand(
                Vec3::new(-0.1, -0.1, 0.0),
                Vec3::new(0.045, 0.0, 0.0),
                Vec3::new(0.0, 0.055, 0.0),
                Vec::new(),
            ),
            noise: req.noise,
            seed: req.seed,
            depth_format: Default::default(),
        },
    };
    Ok(spec)
}
