//! Moving-part segmentation.
//!
//! Once every frame is mapped back into the reference configuration with the
//! estimated joint, points of the moving part land on top of each other while
//! static points are displaced. Surfaces symmetric under the motion (a floor
//! under a door hinge, a plane parallel to a drawer's travel) overlap as well;
//! clustering and proximity to the hand separate them from the part.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FrameCloud;
use crate::joint::{undirected_angle, JointModel, MotionSequence, Vec3};
use crate::kdtree::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Overlap threshold of the first pass, meters.
    pub tau_sym_first: f64,
    /// Overlap threshold after refinement, meters.
    pub tau_sym_refine: f64,
    /// Largest angle between surface normal and line of sight, degrees.
    pub incidence_max: f64,
    pub cluster_tolerance: f64,
    pub min_cluster_size: usize,
    /// Largest cluster-to-hand distance for selection, meters.
    pub tau_hand: f64,
    /// Half-angle of the normal cone for confident points, degrees.
    pub normal_cone: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            tau_sym_first: 0.05,
            tau_sym_refine: 0.03,
            incidence_max: 70.0,
            cluster_tolerance: 0.03,
            min_cluster_size: 50,
            tau_hand: 0.15,
            normal_cone: 30.0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_sym_first > 0.0
            && self.tau_sym_refine > 0.0
            && self.incidence_max > 0.0
            && self.cluster_tolerance > 0.0
            && self.min_cluster_size > 0
            && self.tau_hand > 0.0
            && self.normal_cone > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid segmentation config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// The surface visibly moves along the joint.
    Confident,
    /// The surface maps onto itself under the motion.
    Ambiguous,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationResult {
    /// Per reference-frame point: part of the moving object.
    pub reference_labels: Vec<bool>,
    /// Indices of the object points in the reference frame.
    pub object_indices: Vec<usize>,
    pub object_cloud: FrameCloud,
    pub cluster_ids: Vec<usize>,
    pub confidence_flags: Vec<Confidence>,
    /// Overlap candidates before clustering.
    pub candidates: Vec<usize>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Points of frame 0 that every other frame, mapped into the frame-0
/// configuration, covers within `tau`. Per point, frames that would see it at
/// a grazing angle are skipped; at least ⌈(N−1)/2⌉ frames must remain, and
/// the median of their nearest-neighbor distances must be below `tau`.
/// The sensor sits at the camera origin in every frame.
pub fn extract_symmetric(
    frames: &[FrameCloud],
    joint: &JointModel,
    motions: &MotionSequence,
    cfg: &SegmentationConfig,
    tau: f64,
) -> Result<Vec<usize>> {
    cfg.validate()?;
    if frames.is_empty() || motions.len() != frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames but {} motions",
            frames.len(),
            motions.len()
        )));
    }
    let reference = &frames[0];
    let normals = reference
        .normals
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("reference frame has no normals".into()))?;
    let others = frames.len() - 1;
    if others == 0 {
        return Ok(Vec::new());
    }
    let required = others.div_ceil(2);
    let trees: Vec<KdTree> = frames[1..].iter().map(|f| KdTree::new(&f.points)).collect();
    let inverse: Vec<_> = (1..frames.len()).map(|j| joint.transform(motions[j]).inverse()).collect();
    let cos_max = cfg.incidence_max.to_radians().cos();
    let keep: Vec<bool> = reference
        .points
        .par_iter()
        .zip(normals.par_iter())
        .map(|(p, n)| {
            let mut dists = Vec::with_capacity(others);
            for (tree, inv) in trees.iter().zip(&inverse) {
                // the point as it sits in frame j
                let pj = inv.apply(p);
                let nj = inv.apply_vector(n);
                let view = -pj;
                let norm = view.norm();
                if norm == 0.0 || nj.dot(&view) < cos_max * norm {
                    continue;
                }
                if let Some((_, d2)) = tree.nearest(&pj) {
                    dists.push(d2.sqrt());
                }
            }
            dists.len() >= required && median(&mut dists) < tau
        })
        .collect();
    Ok((0..keep.len()).filter(|&i| keep[i]).collect())
}

/// Confident points are those whose surface moves out of itself: normals
/// within the cone around a prismatic direction, or at least `90° − cone`
/// away from a revolute axis.
pub fn classify_confidence(normals: &[Vec3], joint: &JointModel, cfg: &SegmentationConfig) -> Vec<Confidence> {
    let cone = cfg.normal_cone.to_radians();
    let dir = joint.direction();
    normals
        .iter()
        .map(|n| {
            let angle = undirected_angle(n, &dir);
            let confident = match joint {
                JointModel::Prismatic { .. } => angle <= cone,
                JointModel::Revolute { .. } => angle >= std::f64::consts::FRAC_PI_2 - cone,
            };
            if confident {
                Confidence::Confident
            } else {
                Confidence::Ambiguous
            }
        })
        .collect()
}

/// Euclidean clusters: connected components of the graph linking points
/// within `tolerance`. Components are ordered by their lowest point index
/// and smaller ones than `min_size` are dropped.
pub fn euclidean_clusters(points: &[Vec3], tolerance: f64, min_size: usize) -> Vec<Vec<usize>> {
    let tree = KdTree::new(points);
    let mut visited = vec![false; points.len()];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        queue.push_back(seed);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            tree.within_into(&points[i], tolerance, &mut nbrs);
            for &j in &nbrs {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if members.len() >= min_size {
            members.sort_unstable();
            clusters.push(members);
        }
    }
    clusters
}

/// Clusters the candidates and keeps the clusters that come within `tau_hand`
/// of the reference hand centroid.
pub fn cluster_and_select(
    reference: &FrameCloud,
    candidates: &[usize],
    confidence: &[Confidence],
    hand_0: &Vec3,
    cfg: &SegmentationConfig,
) -> Result<SegmentationResult> {
    cfg.validate()?;
    if confidence.len() != candidates.len() {
        return Err(Error::InvalidInput("one confidence flag per candidate required".into()));
    }
    if candidates.is_empty() {
        return Err(Error::EmptySegmentation("no overlap candidates".into()));
    }
    let pts: Vec<Vec3> = candidates.iter().map(|&i| reference.points[i]).collect();
    let clusters = euclidean_clusters(&pts, cfg.cluster_tolerance, cfg.min_cluster_size);
    let mut chosen: Vec<(usize, usize)> = Vec::new(); // (candidate position, cluster id)
    for (id, members) in clusters.iter().enumerate() {
        let closest = members
            .iter()
            .map(|&k| (pts[k] - hand_0).norm())
            .fold(f64::INFINITY, f64::min);
        if closest <= cfg.tau_hand {
            chosen.extend(members.iter().map(|&k| (k, id)));
        }
    }
    if chosen.is_empty() {
        return Err(Error::EmptySegmentation(format!(
            "none of {} clusters lies within {} m of the hand",
            clusters.len(),
            cfg.tau_hand
        )));
    }
    chosen.sort_unstable();
    let object_indices: Vec<usize> = chosen.iter().map(|&(k, _)| candidates[k]).collect();
    let mut reference_labels = vec![false; reference.len()];
    for &i in &object_indices {
        reference_labels[i] = true;
    }
    Ok(SegmentationResult {
        reference_labels,
        object_cloud: reference.select(&object_indices),
        cluster_ids: chosen.iter().map(|&(_, id)| id).collect(),
        confidence_flags: chosen.iter().map(|&(k, _)| confidence[k]).collect(),
        object_indices,
        candidates: candidates.to_vec(),
    })
}

/// Candidate extraction, confidence flags and hand-guided cluster selection.
pub fn segment(
    frames: &[FrameCloud],
    joint: &JointModel,
    motions: &MotionSequence,
    hand_0: &Vec3,
    cfg: &SegmentationConfig,
    tau: f64,
) -> Result<SegmentationResult> {
    let candidates = extract_symmetric(frames, joint, motions, cfg, tau)?;
    let normals = frames[0].normals.as_ref().expect("checked by extract_symmetric");
    let cand_normals: Vec<Vec3> = candidates.iter().map(|&i| normals[i]).collect();
    let confidence = classify_confidence(&cand_normals, joint, cfg);
    cluster_and_select(&frames[0], &candidates, &confidence, hand_0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(z: f64, n: usize, spacing: f64, offset: Vec3) -> Vec<Vec3> {
        (0..n * n)
            .map(|k| offset + Vec3::new((k % n) as f64 * spacing, (k / n) as f64 * spacing, z))
            .collect()
    }

    fn facing_camera(points: Vec<Vec3>) -> FrameCloud {
        let n = points.len();
        let mut c = FrameCloud::from_points(points);
        c.normals = Some(vec![-Vec3::z(); n]);
        c
    }

    #[test]
    fn static_frames_keep_every_visible_point() {
        let cloud = facing_camera(plane(1.0, 10, 0.01, Vec3::new(-0.05, -0.05, 0.0)));
        let frames = vec![cloud.clone(), cloud.clone(), cloud];
        let joint = JointModel::prismatic(Vec3::x()).unwrap();
        let c = extract_symmetric(&frames, &joint, &MotionSequence::zeros(3), &Default::default(), 0.05).unwrap();
        assert_eq!(c, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn moving_patch_separates_from_static_wall() {
        // object patch slides along x by 0.1 per frame over a static back wall
        let joint = JointModel::prismatic(Vec3::x()).unwrap();
        let object = plane(1.0, 10, 0.01, Vec3::new(-0.05, -0.05, 0.0));
        let wall = plane(1.5, 60, 0.01, Vec3::new(-0.3, -0.3, 0.0));
        let motions = MotionSequence::new(vec![0.0, -0.1, -0.2]).unwrap();
        let frames: Vec<FrameCloud> = (0..3)
            .map(|f| {
                let shift = Vec3::new(0.1 * f as f64, 0.0, 0.0);
                let pts: Vec<Vec3> = object.iter().map(|p| p + shift).chain(wall.iter().copied()).collect();
                facing_camera(pts)
            })
            .collect();
        let cfg = SegmentationConfig {
            min_cluster_size: 10,
            ..Default::default()
        };
        let cand = extract_symmetric(&frames, &joint, &motions, &cfg, 0.05).unwrap();
        assert!((0..100).all(|i| cand.contains(&i)));
        // the wall is uniform along x, so much of it overlaps too
        assert!(cand.len() > 100);
        let res = segment(&frames, &joint, &motions, &Vec3::new(0.0, 0.0, 0.95), &cfg, 0.05).unwrap();
        // the object and the overlapping wall are 0.5 m apart: separate clusters
        assert_eq!(res.object_indices, (0..100).collect::<Vec<_>>());
        assert!(res.confidence_flags.iter().all(|&c| c == Confidence::Ambiguous));
    }

    #[test]
    fn shrinking_tau_never_adds_candidates() {
        let joint = JointModel::prismatic(Vec3::new(1.0, 0.0, 0.3).normalize()).unwrap();
        let pts = plane(1.0, 20, 0.01, Vec3::new(-0.1, -0.1, 0.0));
        let frames: Vec<FrameCloud> = (0..4)
            .map(|f| facing_camera(pts.iter().map(|p| p + Vec3::new(0.013 * f as f64, 0.0, 0.0)).collect()))
            .collect();
        let m = MotionSequence::new(vec![0.0, -0.01, -0.02, -0.03]).unwrap();
        let cfg = SegmentationConfig::default();
        let wide = extract_symmetric(&frames, &joint, &m, &cfg, 0.05).unwrap();
        let narrow = extract_symmetric(&frames, &joint, &m, &cfg, 0.005).unwrap();
        assert!(narrow.iter().all(|i| wide.contains(i)));
        assert!(narrow.len() < wide.len());
    }

    #[test]
    fn grazing_frames_are_skipped() {
        // a plane seen edge-on in every other frame contributes nothing
        let mut cloud = facing_camera(plane(1.0, 5, 0.01, Vec3::zeros()));
        cloud.normals = Some(vec![Vec3::x(); 25]);
        let frames = vec![cloud.clone(), cloud.clone(), cloud];
        let joint = JointModel::prismatic(Vec3::x()).unwrap();
        let c = extract_symmetric(&frames, &joint, &MotionSequence::zeros(3), &Default::default(), 0.05).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn confidence_examples() {
        let cfg = SegmentationConfig::default();
        let drawer = JointModel::prismatic(Vec3::z()).unwrap();
        let flags = classify_confidence(&[-Vec3::z(), Vec3::y(), Vec3::new(0.0, 0.4, 1.0).normalize()], &drawer, &cfg);
        assert_eq!(flags, vec![Confidence::Confident, Confidence::Ambiguous, Confidence::Confident]);
        let door = JointModel::revolute_through(Vec3::y(), Vec3::zeros()).unwrap();
        let flags = classify_confidence(&[-Vec3::z(), Vec3::y(), -Vec3::y()], &door, &cfg);
        assert_eq!(flags, vec![Confidence::Confident, Confidence::Ambiguous, Confidence::Ambiguous]);
    }

    #[test]
    fn far_cluster_is_rejected() {
        let mut pts = plane(1.0, 10, 0.01, Vec3::zeros());
        pts.extend(plane(1.0, 10, 0.01, Vec3::new(1.2, 0.0, 0.0)));
        let reference = facing_camera(pts);
        let cand: Vec<usize> = (0..200).collect();
        let cfg = SegmentationConfig::default();
        let res = cluster_and_select(&reference, &cand, &[Confidence::Confident; 200], &Vec3::new(0.05, 0.05, 0.95), &cfg).unwrap();
        assert_eq!(res.object_indices, (0..100).collect::<Vec<_>>());
        assert!(res.cluster_ids.iter().all(|&c| c == 0));
        assert_eq!(res.reference_labels.iter().filter(|&&b| b).count(), 100);
        let err = cluster_and_select(&reference, &[], &[], &Vec3::zeros(), &cfg).unwrap_err();
        assert!(matches!(err, Error::EmptySegmentation(_)));
    }

    #[test]
    fn clusters_ignore_point_order() {
        let mut pts = plane(1.0, 8, 0.01, Vec3::zeros());
        pts.extend(plane(1.0, 8, 0.01, Vec3::new(0.5, 0.0, 0.0)));
        let a = euclidean_clusters(&pts, 0.015, 10);
        let reversed: Vec<Vec3> = pts.iter().rev().copied().collect();
        let b = euclidean_clusters(&reversed, 0.015, 10);
        let mut a_sets: Vec<Vec<Vec3>> = a.iter().map(|c| c.iter().map(|&i| pts[i]).collect()).collect();
        let mut b_sets: Vec<Vec<Vec3>> = b.iter().map(|c| c.iter().map(|&i| reversed[i]).collect()).collect();
        for s in a_sets.iter_mut().chain(b_sets.iter_mut()) {
            s.sort_by(|p, q| p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y)));
        }
        a_sets.sort_by(|p, q| p[0].x.total_cmp(&q[0].x));
        b_sets.sort_by(|p, q| p[0].x.total_cmp(&q[0].x));
        assert_eq!(a_sets, b_sets);
        assert_eq!(a.len(), 2);
    }
}
