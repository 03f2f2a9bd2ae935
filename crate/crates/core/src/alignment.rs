//! Hand-weighted constrained ICP over all frames of a sequence.
//!
//! Every frame is registered to the reference frame (and to its predecessor)
//! through the articulation model alone: the only free parameters are the
//! joint and one motion amount per frame. Point pairs near the hand count
//! more, because the hand is touching the moving part.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FrameCloud, HandObservation};
use crate::joint::{canonicalize, JointModel, MotionSequence, RigidTransform, Vec3};
use crate::kdtree::KdTree;
use crate::solver::{ArticulationState, IterationRecord, Matching, Problem, SolverSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePairPolicy {
    /// `(0, j)` for every `j > 0`.
    Star,
    /// Star plus consecutive pairs `(j−1, j)`.
    StarChain,
}

impl FramePairPolicy {
    pub fn pairs(&self, frames: usize) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = (1..frames).map(|j| (0, j)).collect();
        if *self == FramePairPolicy::StarChain {
            pairs.extend((2..frames).map(|j| (j - 1, j)));
        }
        pairs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    /// Softening constant of the hand-distance weight, meters.
    #[serde(rename = "c")]
    pub weight_softening: f64,
    pub max_corr_dist: f64,
    pub outer_iterations: usize,
    /// Damped Gauss-Newton steps per correspondence set.
    pub inner_iterations: usize,
    pub frame_pairs_policy: FramePairPolicy,
    pub param_tol: f64,
    pub cost_tol: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            weight_softening: 0.2,
            max_corr_dist: 0.10,
            outer_iterations: 30,
            inner_iterations: 10,
            frame_pairs_policy: FramePairPolicy::StarChain,
            param_tol: 1e-8,
            cost_tol: 1e-10,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_softening > 0.0) || !(self.max_corr_dist > 0.0) || self.outer_iterations == 0 {
            return Err(Error::InvalidParameter(format!("invalid alignment config {self:?}")));
        }
        if self.inner_iterations == 0 || !(self.param_tol >= 0.0) || !(self.cost_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid alignment config {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn settings(&self) -> SolverSettings {
        SolverSettings {
            outer_iterations: self.outer_iterations,
            inner_iterations: self.inner_iterations,
            param_tol: self.param_tol,
            cost_tol: self.cost_tol,
        }
    }
}

/// `(1 / (C + |p − h|))²` near a detected hand, 1 otherwise.
pub fn hand_weight(p: &Vec3, hand: Option<&Vec3>, c: f64) -> f64 {
    match hand {
        Some(h) => (1.0 / (c + (p - h).norm())).powi(2),
        None => 1.0,
    }
}

/// Largest value [`hand_weight`] can take for a frame.
pub(crate) fn max_hand_weight(hand: Option<&Vec3>, c: f64) -> f64 {
    if hand.is_some() {
        1.0 / (c * c)
    } else {
        1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    /// Product of the source and target hand weights.
    pub weight: f64,
}

/// Nearest transformed target point for every transformed source point;
/// pairs farther apart than `max_corr_dist` are dropped. Weights use the
/// untransformed points and each frame's own hand centroid.
pub fn find_correspondences(
    source: &FrameCloud,
    target: &FrameCloud,
    t_source: &RigidTransform,
    t_target: &RigidTransform,
    hand_source: Option<&Vec3>,
    hand_target: Option<&Vec3>,
    cfg: &AlignmentConfig,
) -> Result<Vec<Correspondence>> {
    if target.is_empty() {
        return Err(Error::InvalidInput(format!("frame {} has no points", target.frame_index)));
    }
    let tree = KdTree::new(&target.points);
    let rel = t_target.inverse().compose(t_source);
    let d2max = cfg.max_corr_dist * cfg.max_corr_dist;
    Ok(source
        .points
        .iter()
        .enumerate()
        .filter_map(|(k, p)| {
            let (t, _) = tree.nearest_within(&rel.apply(p), d2max)?;
            Some(Correspondence {
                source_index: k,
                target_index: t,
                weight: hand_weight(p, hand_source, cfg.weight_softening)
                    * hand_weight(&target.points[t], hand_target, cfg.weight_softening),
            })
        })
        .collect())
}

/// `Σ w·|T(m_i)·p − T(m_j)·q|` over the given correspondences (unsquared,
/// unsmoothed).
pub fn pairwise_error(
    source: &FrameCloud,
    target: &FrameCloud,
    correspondences: &[Correspondence],
    t_source: &RigidTransform,
    t_target: &RigidTransform,
) -> f64 {
    correspondences
        .iter()
        .map(|c| {
            c.weight * (t_source.apply(&source.points[c.source_index]) - t_target.apply(&target.points[c.target_index])).norm()
        })
        .sum()
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub joint: JointModel,
    pub motions: MotionSequence,
    /// Objective value with the final correspondences.
    pub final_cost: f64,
    pub iterations: Vec<IterationRecord>,
}

/// Jointly optimizes the joint and the motion amounts from `init`.
/// The returned joint is in canonical sign (motions summing to ≤ 0).
pub fn optimize_constrained_icp(
    frames: &[FrameCloud],
    hands: &[HandObservation],
    init: (JointModel, MotionSequence),
    cfg: &AlignmentConfig,
) -> Result<AlignmentResult> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::InvalidInput(format!("alignment needs 2 frames, got {}", frames.len())));
    }
    if hands.len() != frames.len() || init.1.len() != frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames, {} hand observations, {} motions",
            frames.len(),
            hands.len(),
            init.1.len()
        )));
    }
    let c = cfg.weight_softening;
    let weights: Vec<Vec<f64>> = frames
        .iter()
        .zip(hands)
        .map(|(f, h)| f.points.iter().map(|p| hand_weight(p, h.centroid_3d.as_ref(), c)).collect())
        .collect();
    let trees: Vec<KdTree> = frames.iter().map(|f| KdTree::new(&f.points)).collect();
    let matchings = cfg
        .frame_pairs_policy
        .pairs(frames.len())
        .into_iter()
        .map(|(i, j)| Matching {
            source_frame: i,
            source: &frames[i].points,
            source_weights: weights[i].clone(),
            target_frame: j,
            target: &frames[j].points,
            target_weights: &weights[j],
            target_weight_max: max_hand_weight(hands[j].centroid_3d.as_ref(), c),
            tree: &trees[j],
        })
        .collect();
    let problem = Problem {
        matchings,
        fixed: Vec::new(),
        max_corr_dist: cfg.max_corr_dist,
    };
    let solution = problem.solve(ArticulationState::new(init.0, init.1), &cfg.settings())?;
    let (joint, motions) = canonicalize(solution.state.joint, solution.state.motions);
    Ok(AlignmentResult {
        joint,
        motions,
        final_cost: solution.cost,
        iterations: solution.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::undirected_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_weight_examples() {
        let p = Vec3::new(0.3, -0.1, 1.2);
        assert!((hand_weight(&p, Some(&p), 0.2) - 25.0).abs() < 1e-12);
        assert_eq!(hand_weight(&p, None, 0.2), 1.0);
        let h = p + Vec3::new(0.0, 0.8, 0.0);
        assert!((hand_weight(&p, Some(&h), 0.2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_policies() {
        assert_eq!(FramePairPolicy::Star.pairs(3), vec![(0, 1), (0, 2)]);
        assert_eq!(FramePairPolicy::StarChain.pairs(4), vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
    }

    fn random_cloud(seed: u64, n: usize) -> FrameCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FrameCloud::from_points((0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect())
    }

    #[test]
    fn identical_clouds_match_themselves() {
        let cloud = random_cloud(1, 500);
        let id = RigidTransform::identity();
        let corr = find_correspondences(&cloud, &cloud, &id, &id, None, None, &Default::default()).unwrap();
        assert_eq!(corr.len(), 500);
        assert!(corr.iter().all(|c| c.source_index == c.target_index && c.weight == 1.0));
        assert_eq!(pairwise_error(&cloud, &cloud, &corr, &id, &id), 0.0);
    }

    #[test]
    fn far_source_has_no_correspondences() {
        let cloud = FrameCloud::from_points(vec![Vec3::zeros(), Vec3::new(0.01, 0.0, 0.0)]);
        let cfg = AlignmentConfig::default();
        let shift = RigidTransform {
            translation: Vec3::new(2.0 * cfg.max_corr_dist + 0.02, 0.0, 0.0),
            ..RigidTransform::identity()
        };
        let id = RigidTransform::identity();
        assert!(find_correspondences(&cloud, &cloud, &shift, &id, None, None, &cfg).unwrap().is_empty());
        assert!(find_correspondences(&cloud, &FrameCloud::default(), &id, &id, None, None, &cfg).is_err());
    }

    #[test]
    fn correspondences_equal_brute_force() {
        let source = random_cloud(2, 1000);
        let target = random_cloud(3, 1000);
        let cfg = AlignmentConfig {
            max_corr_dist: 10.0,
            ..Default::default()
        };
        let id = RigidTransform::identity();
        let corr = find_correspondences(&source, &target, &id, &id, None, None, &cfg).unwrap();
        for c in &corr {
            let p = source.points[c.source_index];
            let best = (0..target.len())
                .min_by(|&a, &b| {
                    (target.points[a] - p)
                        .norm_squared()
                        .total_cmp(&(target.points[b] - p).norm_squared())
                        .then(a.cmp(&b))
                })
                .unwrap();
            assert_eq!(c.target_index, best);
        }
    }

    #[test]
    fn doubling_weights_doubles_error() {
        let source = random_cloud(4, 200);
        let target = random_cloud(5, 200);
        let id = RigidTransform::identity();
        let corr = find_correspondences(&source, &target, &id, &id, None, None, &Default::default()).unwrap();
        let doubled: Vec<Correspondence> = corr
            .iter()
            .map(|c| Correspondence {
                weight: 2.0 * c.weight,
                ..*c
            })
            .collect();
        let e1 = pairwise_error(&source, &target, &corr, &id, &id);
        let e2 = pairwise_error(&source, &target, &doubled, &id, &id);
        assert_eq!(e2, 2.0 * e1);
    }

    /// Randomly sampled wavy face with two side walls, so that every
    /// direction of sliding is observable.
    fn box_frames(truth: &JointModel, motions: &[f64]) -> Vec<FrameCloud> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for _ in 0..900 {
            let (x, y): (f64, f64) = (rng.random_range(0.0..0.3), rng.random_range(0.0..0.3));
            pts.push(Vec3::new(x, y, 1.0 + 0.03 * (7.0 * x).sin() * (5.0 * y).cos()));
        }
        for _ in 0..300 {
            let (s, z): (f64, f64) = (rng.random_range(0.0..0.3), rng.random_range(1.0..1.1));
            pts.push(Vec3::new(s, 0.0, z));
            pts.push(Vec3::new(0.0, s, z));
        }
        motions
            .iter()
            .enumerate()
            .map(|(f, &m)| {
                // physical displacement -m maps frame-0 geometry into frame f
                let tr = truth.transform(-m);
                let mut c = FrameCloud::from_points(pts.iter().map(|p| tr.apply(p)).collect());
                c.frame_index = f;
                c
            })
            .collect()
    }

    #[test]
    fn recovers_prismatic_from_tilted_init() {
        let t = Vec3::new(1.0, 0.1, -0.2).normalize();
        let truth = JointModel::prismatic(t).unwrap();
        let motions = [0.0, -0.02, -0.04, -0.06];
        let frames = box_frames(&truth, &motions);
        let hands = vec![HandObservation::empty(0); frames.len()];
        let init_dir = (t + Vec3::new(0.0, 0.12, 0.05)).normalize();
        let init = (
            JointModel::prismatic(init_dir).unwrap(),
            MotionSequence::new(vec![0.0, -0.015, -0.035, -0.05]).unwrap(),
        );
        let res = optimize_constrained_icp(&frames, &hands, init, &Default::default()).unwrap();
        assert!(undirected_angle(&res.joint.direction(), &t).to_degrees() < 0.1);
        for (a, b) in res.motions.as_slice().iter().zip(motions) {
            assert!((a - b).abs() < 1e-4, "{:?}", res.motions);
        }
        let mut last = f64::INFINITY;
        for it in &res.iterations {
            assert!(it.cost_before <= last && it.cost <= it.cost_before);
            last = it.cost;
        }
        assert!(res.final_cost <= last);
    }

    #[test]
    fn too_few_correspondences_is_degenerate() {
        let a = FrameCloud::from_points(vec![Vec3::zeros(); 5]);
        let frames = vec![a.clone(), a];
        let hands = vec![HandObservation::empty(0); 2];
        let init = (JointModel::prismatic(Vec3::x()).unwrap(), MotionSequence::zeros(2));
        let err = optimize_constrained_icp(&frames, &hands, init, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
    }
}
