use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{GroundTruth, LABEL_OBJECT};
use crate::error::{Error, Result};
use crate::joint::{undirected_angle, JointModel, MotionSequence, Vec3};

/// What the pipeline reports, in the terms needed for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub joint: JointModel,
    /// Motions of the kept frames relative to the first kept frame.
    pub motions: MotionSequence,
    /// Original index of each kept frame.
    pub frames: Vec<usize>,
    /// Pixels of the first kept frame labelled as the object.
    pub object_pixels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classification_correct: bool,
    /// Sign-invariant angle between estimated and true direction or axis.
    pub direction_error_deg: f64,
    /// Closest distance between the axis lines; revolute pairs only.
    pub axis_distance_m: Option<f64>,
    /// RMSE of the per-frame motions in meters or radians; matching types only.
    pub motion_rmse: Option<f64>,
    pub segmentation_iou: f64,
}

/// Closest distance between two lines given by a point and a unit direction.
pub fn axis_line_distance(l1: &Vec3, n1: &Vec3, l2: &Vec3, n2: &Vec3) -> f64 {
    let d = l2 - l1;
    let cross = n1.cross(n2);
    let s = cross.norm();
    if s < 1e-9 {
        (d - n1 * d.dot(n1)).norm()
    } else {
        d.dot(&cross).abs() / s
    }
}

/// Compares an estimate against ground truth. `reference_labels` are the
/// ground-truth labels of the estimate's first kept frame.
pub fn evaluate(estimate: &Estimate, truth: &GroundTruth, reference_labels: &[u8]) -> Result<Metrics> {
    let n_truth = truth.motions.len();
    if estimate.frames.len() != estimate.motions.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} motions for {} frames",
            estimate.motions.len(),
            estimate.frames.len()
        )));
    }
    if let Some(&bad) = estimate.frames.iter().find(|&&f| f >= n_truth) {
        return Err(Error::InvalidInput(format!(
            "estimate frame {bad} is beyond the {n_truth} ground-truth frames"
        )));
    }
    let et = estimate.joint.direction();
    let tt = truth.joint.direction();
    let classification_correct = estimate.joint.kind() == truth.joint.kind();
    let direction_error_deg = undirected_angle(&et, &tt).to_degrees();

    let axis_distance_m = match (estimate.joint.axis_point(), truth.joint.axis_point()) {
        (Some(le), Some(lt)) => Some(axis_line_distance(&le, &et, &lt, &tt)),
        _ => None,
    };

    let motion_rmse = classification_correct
        .then(|| {
            let sign = if et.dot(&tt) < 0.0 { -1.0 } else { 1.0 };
            let tm = truth.motions.as_slice();
            let base = estimate.frames.first().map_or(0.0, |&r| tm[r]);
            let sum: f64 = estimate
                .frames
                .iter()
                .zip(estimate.motions.as_slice())
                .map(|(&f, &m)| (sign * m - (tm[f] - base)).powi(2))
                .sum();
            (sum / estimate.frames.len().max(1) as f64).sqrt()
        });

    let truth_pixels: HashSet<u32> = reference_labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == LABEL_OBJECT)
        .map(|(i, _)| i as u32)
        .collect();
    let predicted: HashSet<u32> = estimate.object_pixels.iter().copied().collect();
    let inter = truth_pixels.intersection(&predicted).count();
    let union = truth_pixels.len() + predicted.len() - inter;
    let segmentation_iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };

    Ok(Metrics {
        classification_correct,
        direction_error_deg,
        axis_distance_m,
        motion_rmse,
        segmentation_iou,
    })
}
