//! Refinement on the segmented part with the hand as a soft constraint.
//!
//! The geometric term registers the segmented reference points to every
//! frame; the hand term ties the detected hand joints of each frame to their
//! positions in the reference frame, which keeps sliding along featureless
//! surfaces in check.

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentConfig;
use crate::error::{Error, Result};
use crate::ingest::{FrameCloud, HandObservation};
use crate::joint::{canonicalize, JointModel, MotionSequence, Vec3};
use crate::kdtree::KdTree;
use crate::segmentation::{segment, SegmentationConfig, SegmentationResult};
use crate::solver::{ArticulationState, IterationRecord, Matching, Problem, Term};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementConfig {
    /// Weight of the hand term.
    pub lambda: f64,
    /// Number of refine / re-segment rounds.
    pub loop_iterations: usize,
    /// Solver settings; the hand-distance weight constant is not used here.
    pub solver: AlignmentConfig,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            lambda: 0.01,
            loop_iterations: 2,
            solver: AlignmentConfig {
                // pairs farther apart than the re-segmentation threshold are
                // not part of the overlap
                max_corr_dist: 0.03,
                // sliding along featureless surfaces advances by about a
                // point spacing per correspondence update
                outer_iterations: 500,
                inner_iterations: 3,
                ..AlignmentConfig::default()
            },
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() || self.loop_iterations == 0 {
            return Err(Error::InvalidParameter(format!("invalid refinement config {self:?}")));
        }
        self.solver.validate()
    }
}

/// Points of `frame` whose image in the reference configuration lies within
/// `tau` of the reference object.
pub fn transfer_segmentation(
    reference_object: &KdTree,
    frame: &FrameCloud,
    joint: &JointModel,
    motion: f64,
    tau: f64,
) -> Vec<Vec3> {
    let tr = joint.transform(motion);
    let tau2 = tau * tau;
    frame
        .points
        .iter()
        .filter(|q| reference_object.nearest_within(&tr.apply(q), tau2).is_some())
        .copied()
        .collect()
}

/// `Σ_j Σ_k |p_k − T(m_j)·q_k|` with unit weights, pairing every reference
/// object point with its nearest segmented point of frame `j` (pairs farther
/// than `max_corr_dist` are dropped).
pub fn geometric_cost(
    reference_object: &[Vec3],
    segmented_frames: &[Vec<Vec3>],
    joint: &JointModel,
    motions: &MotionSequence,
    max_corr_dist: f64,
) -> f64 {
    let mut total = 0.0;
    for (j, seg) in segmented_frames.iter().enumerate().skip(1) {
        if seg.is_empty() {
            continue;
        }
        let tree = KdTree::new(seg);
        let inv = joint.transform(motions[j]).inverse();
        for p in reference_object {
            if let Some((_, d2)) = tree.nearest_within(&inv.apply(p), max_corr_dist * max_corr_dist) {
                total += d2.sqrt();
            }
        }
    }
    total
}

fn hand_terms(hands: &[HandObservation], weight: f64) -> Vec<Term> {
    let Some(h0) = hands.first() else {
        return Vec::new();
    };
    let mut terms = Vec::new();
    for (j, hj) in hands.iter().enumerate().skip(1) {
        for (l, (a, b)) in h0.joints_3d.iter().zip(&hj.joints_3d).enumerate() {
            if let (Some(q), Some(p)) = (a, b) {
                let w = weight * h0.confidences[l] * hj.confidences[l];
                if w > 0.0 {
                    terms.push(Term {
                        frame_a: j,
                        p: *p,
                        frame_b: 0,
                        q: *q,
                        weight: w,
                    });
                }
            }
        }
    }
    terms
}

/// `Σ_j Σ_l α_{0,l}·α_{j,l}·|h_{0,l} − T(m_j)·h_{j,l}|` over joints lifted in
/// both frames.
pub fn hand_cost(hands: &[HandObservation], joint: &JointModel, motions: &MotionSequence) -> f64 {
    hand_terms(hands, 1.0)
        .iter()
        .map(|t| t.weight * (t.q - joint.transform(motions[t.frame_a]).apply(&t.p)).norm())
        .sum()
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    pub joint: JointModel,
    pub motions: MotionSequence,
    /// Smoothed objective with the final correspondences.
    pub cost: f64,
    pub iterations: Vec<IterationRecord>,
    /// Segmented points per frame used for the geometric term.
    pub segmented_counts: Vec<usize>,
}

/// Minimizes `c_geo / n + λ·c_hand` from `init`, where `n` is the number of
/// reference object points. Frame `j`'s object points are those whose image
/// under the initial `T(m_j)` lies within `tau_transfer` of the reference
/// object.
pub fn refine(
    frames: &[FrameCloud],
    reference_object: &[Vec3],
    hands: &[HandObservation],
    init: (JointModel, MotionSequence),
    cfg: &RefinementConfig,
    tau_transfer: f64,
) -> Result<RefineResult> {
    cfg.validate()?;
    if reference_object.is_empty() {
        return Err(Error::EmptySegmentation("no segmented reference points".into()));
    }
    if hands.len() != frames.len() || init.1.len() != frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames, {} hand observations, {} motions",
            frames.len(),
            hands.len(),
            init.1.len()
        )));
    }
    let (joint, motions) = init;
    let reference_tree = KdTree::new(reference_object);
    let mut segmented: Vec<Vec<Vec3>> = vec![reference_object.to_vec()];
    segmented.extend(
        (1..frames.len()).map(|j| transfer_segmentation(&reference_tree, &frames[j], &joint, motions[j], tau_transfer)),
    );
    let trees: Vec<KdTree> = segmented.iter().map(|s| KdTree::new(s)).collect();
    let n = reference_object.len() as f64;
    let unit_weights: Vec<Vec<f64>> = segmented.iter().map(|s| vec![1.0; s.len()]).collect();
    let matchings = (1..frames.len())
        .filter(|&j| !segmented[j].is_empty())
        .map(|j| Matching {
            source_frame: 0,
            source: reference_object,
            source_weights: vec![1.0 / n; reference_object.len()],
            target_frame: j,
            target: &segmented[j],
            target_weights: &unit_weights[j],
            target_weight_max: 1.0,
            tree: &trees[j],
        })
        .collect();
    let problem = Problem {
        matchings,
        fixed: hand_terms(hands, cfg.lambda),
        max_corr_dist: cfg.solver.max_corr_dist,
    };
    let solution = problem.solve(ArticulationState::new(joint, motions), &cfg.solver.settings())?;
    let (joint, motions) = canonicalize(solution.state.joint, solution.state.motions);
    Ok(RefineResult {
        joint,
        motions,
        cost: solution.cost,
        iterations: solution.iterations,
        segmented_counts: segmented.iter().map(Vec::len).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct LoopResult {
    pub joint: JointModel,
    pub motions: MotionSequence,
    pub segmentation: SegmentationResult,
    /// `[min(−m), max(−m)]`: the observed range of physical motion.
    pub motion_range: [f64; 2],
    pub rounds: Vec<RefineResult>,
}

/// Alternates refinement and re-segmentation `loop_iterations` times.
///
/// Segmentation runs on `seg_frames` (which carry normals); refinement runs
/// on `fit_frames`. `reference_map[k]` is the `seg_frames[0]` point that
/// `fit_frames[0]` point `k` belongs to.
#[allow(clippy::too_many_arguments)]
pub fn run_refinement_loop(
    seg_frames: &[FrameCloud],
    fit_frames: &[FrameCloud],
    reference_map: &[usize],
    hands: &[HandObservation],
    init: (JointModel, MotionSequence),
    initial_segmentation: SegmentationResult,
    seg_cfg: &SegmentationConfig,
    ref_cfg: &RefinementConfig,
) -> Result<LoopResult> {
    ref_cfg.validate()?;
    if fit_frames.is_empty() || reference_map.len() != fit_frames[0].len() {
        return Err(Error::InvalidInput("reference map does not match the reference frame".into()));
    }
    let hand_0 = hands
        .first()
        .and_then(|h| h.centroid_3d)
        .ok_or_else(|| Error::InvalidInput("no hand in the reference frame".into()))?;
    let (mut joint, mut motions) = init;
    let mut segmentation = initial_segmentation;
    let mut rounds = Vec::with_capacity(ref_cfg.loop_iterations);
    for _ in 0..ref_cfg.loop_iterations {
        let object: Vec<Vec3> = fit_frames[0]
            .points
            .iter()
            .zip(reference_map)
            .filter(|(_, &c)| segmentation.reference_labels[c])
            .map(|(p, _)| *p)
            .collect();
        let round = refine(
            fit_frames,
            &object,
            hands,
            (joint, motions.clone()),
            ref_cfg,
            seg_cfg.tau_sym_refine,
        )?;
        joint = round.joint;
        motions = round.motions.clone();
        rounds.push(round);
        segmentation = segment(seg_frames, &joint, &motions, &hand_0, seg_cfg, seg_cfg.tau_sym_refine)?;
    }
    Ok(LoopResult {
        motion_range: motions.range(),
        joint,
        motions,
        segmentation,
        rounds,
    })
}

/// `c_geo / n + λ·c_hand` with fresh nearest-neighbor pairs, unsmoothed.
pub fn refinement_objective(
    reference_object: &[Vec3],
    segmented_frames: &[Vec<Vec3>],
    hands: &[HandObservation],
    joint: &JointModel,
    motions: &MotionSequence,
    cfg: &RefinementConfig,
) -> f64 {
    let n = reference_object.len().max(1) as f64;
    geometric_cost(reference_object, segmented_frames, joint, motions, cfg.solver.max_corr_dist) / n
        + cfg.lambda * hand_cost(hands, joint, motions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::undirected_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hands_on(joint: &JointModel, motions: &[f64], joints0: &[Vec3], conf: f64) -> Vec<HandObservation> {
        motions
            .iter()
            .enumerate()
            .map(|(f, &m)| {
                let tr = joint.transform(-m);
                let mut h = HandObservation::empty(f);
                h.confidences = vec![conf; joints0.len()];
                h.joints_2d = vec![[0.0, 0.0]; joints0.len()];
                h.joints_3d = joints0.iter().map(|p| Some(tr.apply(p))).collect();
                h.centroid_3d = Some(joints0.iter().map(|p| tr.apply(p)).sum::<Vec3>() / joints0.len() as f64);
                h
            })
            .collect()
    }

    #[test]
    fn hand_cost_examples() {
        let joint = JointModel::revolute_through(Vec3::y(), Vec3::new(0.3, 0.0, 1.5)).unwrap();
        let m = [0.0, -0.2, -0.4];
        let joints0 = [Vec3::new(0.0, 0.0, 1.2), Vec3::new(0.02, 0.01, 1.19)];
        let motions = MotionSequence::new(m.to_vec()).unwrap();
        let hands = hands_on(&joint, &m, &joints0, 1.0);
        assert!(hand_cost(&hands, &joint, &motions) < 1e-9);
        let zero = hands_on(&joint, &m, &joints0, 0.0);
        assert_eq!(hand_cost(&zero, &joint, &MotionSequence::zeros(3)), 0.0);
        let full = hand_cost(&hands, &joint, &MotionSequence::zeros(3));
        let half = hand_cost(&hands_on(&joint, &m, &joints0, 0.5), &joint, &MotionSequence::zeros(3));
        assert!((half - 0.25 * full).abs() < 1e-12 * full);
    }

    fn patch(seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..1500)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random_range(-0.2..0.2), rng.random_range(-0.15..0.15));
                Vec3::new(x, y, 1.0 + 0.02 * (9.0 * x).cos() * (11.0 * y).sin())
            })
            .collect()
    }

    #[test]
    fn geometric_cost_at_truth_and_perturbed() {
        let t = Vec3::new(0.2, 0.1, -1.0).normalize();
        let joint = JointModel::prismatic(t).unwrap();
        let obj = patch(1);
        let m = MotionSequence::new(vec![0.0, -0.05, -0.1]).unwrap();
        let seg: Vec<Vec<Vec3>> = (0..3)
            .map(|j| obj.iter().map(|p| joint.transform(-m[j]).apply(p)).collect())
            .collect();
        let at_truth = geometric_cost(&obj, &seg, &joint, &m, 0.1);
        assert!(at_truth < 1e-9 * obj.len() as f64);
        let off = MotionSequence::new(vec![0.0, -0.06, -0.1]).unwrap();
        assert!(geometric_cost(&obj, &seg, &joint, &off, 0.1) > at_truth);
        assert_eq!(geometric_cost(&obj, &seg[..1], &joint, &MotionSequence::zeros(1), 0.1), 0.0);
    }

    #[test]
    fn refine_recovers_revolute_and_never_increases() {
        let truth = JointModel::revolute_through(Vec3::new(0.05, 1.0, 0.02).normalize(), Vec3::new(0.25, 0.0, 1.1)).unwrap();
        let m: Vec<f64> = (0..5).map(|i| -0.1 * i as f64).collect();
        let obj = patch(2);
        let frames: Vec<FrameCloud> = m
            .iter()
            .map(|&mi| FrameCloud::from_points(obj.iter().map(|p| truth.transform(-mi).apply(p)).collect()))
            .collect();
        let hands = hands_on(&truth, &m, &[Vec3::new(-0.15, 0.0, 0.95), Vec3::new(-0.13, 0.02, 0.95)], 0.9);
        let init_joint = JointModel::revolute_through(Vec3::new(0.0, 1.0, 0.1).normalize(), Vec3::new(0.27, 0.0, 1.12)).unwrap();
        let init_m = MotionSequence::new(m.iter().map(|x| x * 0.95).collect()).unwrap();
        let res = refine(&frames, &obj, &hands, (init_joint, init_m), &RefinementConfig::default(), 0.03).unwrap();
        assert!(undirected_angle(&res.joint.direction(), &truth.direction()).to_degrees() < 0.1);
        let l = res.joint.axis_point().unwrap();
        let lt = truth.axis_point().unwrap();
        // distance between nearly parallel lines, measured at the true axis point
        let d = (lt - l) - (lt - l).dot(&res.joint.direction()) * res.joint.direction();
        assert!(d.norm() < 1e-3, "{}", d.norm());
        let mut last = f64::INFINITY;
        for it in &res.iterations {
            assert!(it.cost_before <= last && it.cost <= it.cost_before);
            last = it.cost;
        }
        assert!(res.cost <= last);
    }

    #[test]
    fn empty_reference_is_an_error() {
        let frames = vec![FrameCloud::default(); 2];
        let hands = vec![HandObservation::empty(0); 2];
        let init = (JointModel::prismatic(Vec3::x()).unwrap(), MotionSequence::zeros(2));
        assert!(matches!(
            refine(&frames, &[], &hands, init, &Default::default(), 0.03),
            Err(Error::EmptySegmentation(_))
        ));
    }
}
