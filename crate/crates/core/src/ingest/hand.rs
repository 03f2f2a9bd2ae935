use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, DepthImage};
use crate::joint::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

/// Per-frame keypoint file: `{"frame":i,"hand":"left"|"right","joints":[[u,v,conf],...]}`.
///
/// Any 2-D hand keypoint detector can be converted to this layout; joint order
/// must be the same in every frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFile {
    pub frame: usize,
    pub hand: HandSide,
    pub joints: Vec<[f64; 3]>,
}

/// Window radius and confidence floor for lifting 2-D joints onto the depth map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandDepthConfig {
    pub window_radius: usize,
    pub alpha_min: f64,
}

impl Default for HandDepthConfig {
    fn default() -> Self {
        HandDepthConfig {
            window_radius: 2,
            alpha_min: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandObservation {
    pub frame_index: usize,
    pub joints_2d: Vec<[f64; 2]>,
    /// Detector confidence per joint, in `[0, 1]`.
    pub confidences: Vec<f64>,
    pub centroid_3d: Option<Vec3>,
    /// Lifted joints, aligned with `joints_2d`; empty until computed.
    pub joints_3d: Vec<Option<Vec3>>,
}

impl HandObservation {
    pub fn empty(frame_index: usize) -> Self {
        HandObservation {
            frame_index,
            joints_2d: Vec::new(),
            confidences: Vec::new(),
            centroid_3d: None,
            joints_3d: Vec::new(),
        }
    }

    pub fn from_keypoints(file: &KeypointFile) -> Self {
        HandObservation {
            frame_index: file.frame,
            joints_2d: file.joints.iter().map(|j| [j[0], j[1]]).collect(),
            confidences: file.joints.iter().map(|j| j[2].clamp(0.0, 1.0)).collect(),
            centroid_3d: None,
            joints_3d: Vec::new(),
        }
    }

    /// Confidence of joint `l` if its 3-D position is known, else zero.
    pub fn lifted_confidence(&self, l: usize) -> f64 {
        match self.joints_3d.get(l) {
            Some(Some(_)) => self.confidences[l],
            _ => 0.0,
        }
    }
}

/// Lifts confident joints to 3-D with the median depth of a square window
/// around each joint and averages them into the hand centroid.
pub fn hand_centroid_3d(
    obs: &HandObservation,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    cfg: &HandDepthConfig,
) -> HandObservation {
    let r = cfg.window_radius as i64;
    let mut window = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
    let joints_3d: Vec<Option<Vec3>> = obs
        .joints_2d
        .iter()
        .zip(&obs.confidences)
        .map(|(&[u, v], &conf)| {
            if conf < cfg.alpha_min || !u.is_finite() || !v.is_finite() {
                return None;
            }
            let (pu, pv) = (u.round() as i64, v.round() as i64);
            if pu < 0 || pv < 0 || pu >= depth.width as i64 || pv >= depth.height as i64 {
                return None;
            }
            window.clear();
            for y in (pv - r).max(0)..=(pv + r).min(depth.height as i64 - 1) {
                for x in (pu - r).max(0)..=(pu + r).min(depth.width as i64 - 1) {
                    let d = depth.get(x as u32, y as u32);
                    if DepthImage::is_valid_depth(d) {
                        window.push(d as f64);
                    }
                }
            }
            let d = median(&mut window)?;
            Some(intr.backproject_pixel(u, v, d))
        })
        .collect();
    let lifted: Vec<Vec3> = joints_3d.iter().flatten().copied().collect();
    let centroid_3d = if lifted.is_empty() {
        None
    } else {
        Some(lifted.iter().sum::<Vec3>() / lifted.len() as f64)
    };
    HandObservation {
        centroid_3d,
        joints_3d,
        ..obs.clone()
    }
}

pub(crate) fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}
