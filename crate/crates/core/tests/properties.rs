//! Invariants checked over randomly generated inputs.

use proptest::prelude::*;

use articulation::alignment::{find_correspondences, hand_weight, pairwise_error, AlignmentConfig};
use articulation::ingest::{
    remove_static, voxel_downsample, CameraIntrinsics, DepthImage, FrameCloud, HandObservation,
};
use articulation::joint::{
    axis_point_from_circle, revolute_transform, rodrigues, JointModel, MotionSequence, RigidTransform, Vec3,
};
use articulation::refinement::hand_cost;
use articulation::segmentation::{cluster_and_select, extract_symmetric, Confidence, SegmentationConfig};
use articulation::trajectory::{classify_joint, fit_circle_ransac, initial_motions, RansacConfig};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn unit() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("not too short", |v| v.norm() > 0.1).prop_map(|v| v.normalize())
}

fn joint() -> impl Strategy<Value = JointModel> {
    prop_oneof![
        unit().prop_map(|d| JointModel::prismatic(d).unwrap()),
        (unit(), vec3(2.0)).prop_map(|(n, p)| JointModel::revolute_through(n, p).unwrap()),
    ]
}

fn close(a: &RigidTransform, b: &RigidTransform) -> bool {
    a.max_abs_diff(b) < 1e-9
}

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 200.0,
        fy: 210.0,
        cx: 31.5,
        cy: 23.5,
        width: 64,
        height: 48,
    }
}

/// Points on an arc of `sweep` radians about an arbitrary axis.
fn arc_points(center: Vec3, normal: Vec3, radius: f64, sweep: f64, n: usize) -> Vec<Vec3> {
    let u = normal.cross(&Vec3::new(0.3, -0.5, 0.8)).normalize();
    let v = normal.cross(&u);
    (0..n)
        .map(|i| {
            let a = sweep * i as f64 / (n - 1) as f64;
            center + radius * (a.cos() * u + a.sin() * v)
        })
        .collect()
}

proptest! {
    #[test]
    fn motion_and_its_negation_cancel(j in joint(), m in -3.0..3.0f64) {
        let t = j.transform(m).compose(&j.transform(-m));
        prop_assert!(close(&t, &RigidTransform::identity()));
    }

    #[test]
    fn revolute_angles_add(n in unit(), p in vec3(1.0), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let l = p - n * p.dot(&n);
        let ab = revolute_transform(&n, &l, a).unwrap().compose(&revolute_transform(&n, &l, b).unwrap());
        prop_assert!(close(&ab, &revolute_transform(&n, &l, a + b).unwrap()));
    }

    #[test]
    fn rodrigues_is_a_rotation(n in unit(), theta in -10.0..10.0f64) {
        let r = rodrigues(theta, &n).unwrap();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-12);
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_point_ignores_shifts_along_the_axis(c in vec3(2.0), n in unit(), s in -5.0..5.0f64) {
        let a = axis_point_from_circle(c, n);
        let b = axis_point_from_circle(c + s * n, n);
        prop_assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn project_then_backproject_is_identity(u in 0u32..64, v in 0u32..48, d in 0.2..6.0f64) {
        let intr = intrinsics();
        let p = intr.backproject_pixel(u as f64, v as f64, d);
        let (pu, pv) = intr.project(&p).unwrap();
        prop_assert!((pu - u as f64).abs() < 1e-9 && (pv - v as f64).abs() < 1e-9);
        prop_assert!((intr.backproject_pixel(pu, pv, p.z) - p).norm() < 1e-9);
    }

    #[test]
    fn voxel_downsample_is_idempotent(points in prop::collection::vec(vec3(0.5), 1..300), size in 0.01..0.2f64) {
        let once = voxel_downsample(&FrameCloud::from_points(points), size).unwrap();
        let twice = voxel_downsample(&once, size).unwrap();
        prop_assert_eq!(once.points, twice.points);
    }

    #[test]
    fn unchanged_frames_keep_nothing(data in prop::collection::vec(0.3..4.0f32, 64 * 48)) {
        let depth = DepthImage::new(64, 48, data).unwrap();
        prop_assert!(remove_static(&depth, &depth, 0.02).unwrap().is_empty());
    }

    #[test]
    fn classified_joints_are_well_formed(
        center in vec3(1.0), n in unit(), radius in 0.2..1.5f64, sweep_deg in 5.0..120.0f64,
    ) {
        let pts = arc_points(center, n, radius, sweep_deg.to_radians(), 10);
        let (j, _) = classify_joint(&pts, &RansacConfig::default(), 30f64.to_radians()).unwrap();
        prop_assert!((j.direction().norm() - 1.0).abs() < 1e-12);
        if let Some(l) = j.axis_point() {
            prop_assert!(l.dot(&j.direction()).abs() < 1e-9);
        }
    }

    #[test]
    fn circle_fit_follows_rigid_motion(
        center in vec3(1.0), n in unit(), radius in 0.2..1.5f64, sweep_deg in 40.0..300.0f64,
        axis in unit(), angle in -3.0..3.0f64, shift in vec3(2.0),
    ) {
        let pts = arc_points(center, n, radius, sweep_deg.to_radians(), 12);
        let r = rodrigues(angle, &axis).unwrap();
        let moved: Vec<Vec3> = pts.iter().map(|p| r * p + shift).collect();
        let cfg = RansacConfig::default();
        let a = fit_circle_ransac(&pts, &cfg).unwrap();
        let b = fit_circle_ransac(&moved, &cfg).unwrap();
        prop_assert!((r * a.center + shift - b.center).norm() < 1e-6);
        prop_assert!((a.radius - b.radius).abs() < 1e-6);
        prop_assert!((r * a.normal).cross(&b.normal).norm() < 1e-6);
    }

    #[test]
    fn prismatic_motions_ignore_translation(
        d in unit(), steps in prop::collection::vec(-0.1..0.1f64, 2..10), shift in vec3(3.0),
    ) {
        let j = JointModel::prismatic(d).unwrap();
        let mut acc = 0.0;
        let pts: Vec<Vec3> = steps.iter().map(|s| { acc += s; d * acc }).collect();
        let moved: Vec<Vec3> = pts.iter().map(|p| p + shift).collect();
        let a = initial_motions(&j, &pts);
        let b = initial_motions(&j, &moved);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn absent_hands_give_unit_weights(p in vec3(3.0), c in 0.01..1.0f64) {
        prop_assert_eq!(hand_weight(&p, None, c), 1.0);
    }

    #[test]
    fn pair_error_ignores_point_order(
        (points, order) in prop::collection::vec(vec3(0.5), 5..80).prop_flat_map(|pts| {
            let n = pts.len();
            (Just(pts), Just((0..n).collect::<Vec<usize>>()).prop_shuffle())
        }),
        j in joint(),
        m in -0.3..0.3f64,
    ) {
        let source = FrameCloud::from_points(points.clone());
        let target = FrameCloud::from_points(points.iter().map(|p| p + Vec3::new(0.01, 0.0, 0.0)).collect());
        let shuffled = FrameCloud::from_points(order.iter().map(|&i| points[i]).collect());
        let cfg = AlignmentConfig { max_corr_dist: 10.0, ..Default::default() };
        let (ts, tt) = (j.transform(0.0), j.transform(m));
        let hand = Vec3::new(0.1, 0.0, 0.0);
        let a = find_correspondences(&source, &target, &ts, &tt, Some(&hand), None, &cfg).unwrap();
        let b = find_correspondences(&shuffled, &target, &ts, &tt, Some(&hand), None, &cfg).unwrap();
        let ea = pairwise_error(&source, &target, &a, &ts, &tt);
        let eb = pairwise_error(&shuffled, &target, &b, &ts, &tt);
        prop_assert!((ea - eb).abs() <= 1e-9 * ea.max(1.0));
    }

    #[test]
    fn rigid_hands_cost_nothing(j in joint(), tail in prop::collection::vec(-0.5..0.5f64, 1..6), pts in prop::collection::vec(vec3(1.0), 1..21)) {
        let motions = MotionSequence::from_tail(&tail);
        let hands: Vec<HandObservation> = motions
            .as_slice()
            .iter()
            .enumerate()
            .map(|(f, &m)| {
                // frame-f joints map onto the frame-0 joints under T(m_f)
                let inv = j.transform(m).inverse();
                let mut h = HandObservation::empty(f);
                h.confidences = vec![0.9; pts.len()];
                h.joints_2d = vec![[0.0, 0.0]; pts.len()];
                h.joints_3d = pts.iter().map(|p| Some(inv.apply(p))).collect();
                h
            })
            .collect();
        prop_assert!(hand_cost(&hands, &j, &motions) < 1e-9);
    }
}

/// A grid plane at depth `z` facing the camera, normals toward the sensor.
fn facing_plane(n: usize, z: f64) -> FrameCloud {
    let pts: Vec<Vec3> = (0..n * n)
        .map(|k| Vec3::new((k % n) as f64 * 0.01 - 0.1, (k / n) as f64 * 0.01 - 0.1, z))
        .collect();
    let mut c = FrameCloud::from_points(pts);
    c.normals = Some(vec![-Vec3::z(); n * n]);
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smaller_tau_never_adds_candidates(
        tau in 0.005..0.1f64, shrink in 0.1..1.0f64, d in unit(), tail in prop::collection::vec(-0.05..0.05f64, 1..4),
    ) {
        let frames = vec![facing_plane(20, 1.0); tail.len() + 1];
        let j = JointModel::prismatic(d).unwrap();
        let m = MotionSequence::from_tail(&tail);
        let cfg = SegmentationConfig::default();
        let big = extract_symmetric(&frames, &j, &m, &cfg, tau).unwrap();
        let small = extract_symmetric(&frames, &j, &m, &cfg, tau * shrink).unwrap();
        prop_assert!(small.iter().all(|i| big.contains(i)));
    }

    #[test]
    fn identical_frames_are_all_candidates(frames_n in 2usize..5, j in joint()) {
        let frames = vec![facing_plane(15, 1.0); frames_n];
        let cands = extract_symmetric(&frames, &j, &MotionSequence::zeros(frames_n), &SegmentationConfig::default(), 0.001).unwrap();
        prop_assert_eq!(cands.len(), 15 * 15);
    }

    #[test]
    fn selection_ignores_candidate_order(order in Just((0..200).collect::<Vec<usize>>()).prop_shuffle()) {
        // two separated patches; the hand sits by the first
        let mut pts: Vec<Vec3> = facing_plane(10, 1.0).points;
        pts.extend(facing_plane(10, 1.0).points.iter().map(|p| p + Vec3::new(0.5, 0.0, 0.0)));
        let cloud = FrameCloud::from_points(pts);
        let cfg = SegmentationConfig::default();
        let hand = Vec3::new(-0.05, -0.05, 0.95);
        let flags = vec![Confidence::Confident; order.len()];
        let sorted: Vec<usize> = (0..cloud.len()).collect();
        let a = cluster_and_select(&cloud, &sorted, &flags, &hand, &cfg).unwrap();
        let b = cluster_and_select(&cloud, &order, &flags, &hand, &cfg).unwrap();
        prop_assert_eq!(&a.reference_labels, &b.reference_labels);
        prop_assert_eq!(a.object_indices.len(), 100);
    }
}
