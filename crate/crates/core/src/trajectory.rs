//! Joint type and initial parameters from the 3-D hand trajectory.
//!
//! A circle is fitted to the hand centroids with RANSAC followed by a
//! geometric least-squares refinement. If the angular span of the inliers is
//! below a threshold the motion is treated as a straight line (a line is a
//! piece of a very large circle, so inlier counts cannot tell them apart).

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{axis_point_from_circle, tangent_basis, JointModel, Mat3, MotionSequence, Vec3};
use crate::lm::{self, LeastSquares, LmSettings};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Point-to-model distance (meters) for a point to count as an inlier.
    pub inlier_threshold: f64,
    /// Minimum support; `None` means `max(3, ⌈n/2⌉)` clamped to `n`.
    pub min_inliers: Option<usize>,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 500,
            inlier_threshold: 0.01,
            min_inliers: None,
            seed: 0x5eed,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid RANSAC config {self:?}")));
        }
        Ok(())
    }

    fn required_inliers(&self, n: usize) -> usize {
        self.min_inliers.unwrap_or_else(|| 3.max(n.div_ceil(2))).min(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleFit {
    pub center: Vec3,
    pub radius: f64,
    pub normal: Vec3,
    pub inliers: Vec<usize>,
    /// Span of the smallest arc holding every inlier, radians.
    pub angular_range: f64,
}

impl CircleFit {
    pub fn distance(&self, p: &Vec3) -> f64 {
        circle_distance(p, &self.center, self.radius, &self.normal)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub point: Vec3,
    pub direction: Vec3,
    pub inliers: Vec<usize>,
    /// Length of the inlier projections onto the line, meters.
    pub extent: f64,
}

impl LineFit {
    pub fn distance(&self, p: &Vec3) -> f64 {
        let v = p - self.point;
        (v - v.dot(&self.direction) * self.direction).norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrajectoryFit {
    Circle(CircleFit),
    Line(LineFit),
}

/// JSON summary written next to the joint estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub angular_range_deg: Option<f64>,
    pub radius: Option<f64>,
    pub extent: Option<f64>,
    pub inliers: Vec<usize>,
}

impl TrajectoryFit {
    pub fn inliers(&self) -> &[usize] {
        match self {
            TrajectoryFit::Circle(c) => &c.inliers,
            TrajectoryFit::Line(l) => &l.inliers,
        }
    }

    pub fn summary(&self) -> FitSummary {
        match self {
            TrajectoryFit::Circle(c) => FitSummary {
                model: "circle".into(),
                angular_range_deg: Some(c.angular_range.to_degrees()),
                radius: Some(c.radius),
                extent: None,
                inliers: c.inliers.clone(),
            },
            TrajectoryFit::Line(l) => FitSummary {
                model: "line".into(),
                angular_range_deg: None,
                radius: None,
                extent: Some(l.extent),
                inliers: l.inliers.clone(),
            },
        }
    }
}

pub fn circle_distance(p: &Vec3, center: &Vec3, radius: f64, normal: &Vec3) -> f64 {
    let v = p - center;
    let z = v.dot(normal);
    let rho = (v - z * normal).norm();
    ((rho - radius).powi(2) + z * z).sqrt()
}

fn sample_distinct<const K: usize>(rng: &mut ChaCha8Rng, n: usize) -> [usize; K] {
    let mut out = [0usize; K];
    let mut k = 0;
    while k < K {
        let c = rng.random_range(0..n);
        if !out[..k].contains(&c) {
            out[k] = c;
            k += 1;
        }
    }
    out
}

/// RANSAC line with a total-least-squares refinement on the inliers.
pub fn fit_line_ransac(points: &[Vec3], cfg: &RansacConfig) -> Result<LineFit> {
    cfg.validate()?;
    let n = points.len();
    if n < 2 {
        return Err(Error::FitFailure(format!("line fit needs 2 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Vec<usize>)> = None;
    let count_inliers = |p0: &Vec3, d: &Vec3| -> Vec<usize> {
        (0..n)
            .filter(|&i| {
                let v = points[i] - p0;
                (v - v.dot(d) * d).norm() <= cfg.inlier_threshold
            })
            .collect()
    };
    for _ in 0..cfg.iterations {
        let [a, b] = sample_distinct::<2>(&mut rng, n);
        let Some(d) = (points[b] - points[a]).try_normalize(1e-12) else {
            continue;
        };
        let inl = count_inliers(&points[a], &d);
        if best.as_ref().is_none_or(|(c, _)| inl.len() > *c) {
            best = Some((inl.len(), inl));
        }
        if n == 2 {
            break;
        }
    }
    let Some((_, inliers)) = best else {
        return Err(Error::FitFailure("all line samples were degenerate".into()));
    };
    let (point, direction) = total_least_squares_line(points, &inliers);
    let mut inliers = count_inliers(&point, &direction);
    if inliers.len() < 2 {
        inliers = (0..n).collect();
    }
    if inliers.len() < cfg.required_inliers(n) {
        return Err(Error::FitFailure(format!(
            "line fit has {} inliers, {} required",
            inliers.len(),
            cfg.required_inliers(n)
        )));
    }
    let (point, mut direction) = total_least_squares_line(points, &inliers);
    let first = (points[inliers[0]] - point).dot(&direction);
    let last = (points[*inliers.last().unwrap()] - point).dot(&direction);
    if last < first {
        direction = -direction;
    }
    let proj: Vec<f64> = inliers.iter().map(|&i| (points[i] - point).dot(&direction)).collect();
    let extent = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - proj.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(LineFit {
        point,
        direction,
        inliers,
        extent,
    })
}

fn total_least_squares_line(points: &[Vec3], idx: &[usize]) -> (Vec3, Vec3) {
    let mean = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
    let mut scatter = Mat3::zeros();
    for &i in idx {
        let d = points[i] - mean;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let dir: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    (mean, dir.normalize())
}

/// Circle through three points, `None` when they are (nearly) collinear.
pub fn circumscribed_circle(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64, Vec3)> {
    let ab = b - a;
    let ac = c - a;
    let nrm = ab.cross(&ac);
    let n2 = nrm.norm_squared();
    if n2 <= 1e-12 * ab.norm_squared() * ac.norm_squared() || n2 == 0.0 {
        return None;
    }
    let center = a + (ac.norm_squared() * nrm.cross(&ab) + ab.norm_squared() * ac.cross(&nrm)) / (2.0 * n2);
    Some((center, (center - a).norm(), nrm / n2.sqrt()))
}

struct CircleProblem<'a> {
    points: &'a [Vec3],
    idx: &'a [usize],
    center: Vec3,
    radius: f64,
    normal: Vec3,
}

impl LeastSquares for CircleProblem<'_> {
    fn dof(&self) -> usize {
        6
    }

    // in-plane and off-plane components, whose squared sum is the squared
    // point-to-circle distance
    fn residuals(&self) -> DVector<f64> {
        let mut r = DVector::zeros(2 * self.idx.len());
        for (k, &i) in self.idx.iter().enumerate() {
            let v = self.points[i] - self.center;
            let z = v.dot(&self.normal);
            let rho = (v - z * self.normal).norm();
            r[2 * k] = rho - self.radius;
            r[2 * k + 1] = z;
        }
        r
    }

    fn retract(&self, d: &DVector<f64>) -> Self {
        let (u, w) = tangent_basis(&self.normal);
        CircleProblem {
            center: self.center + Vec3::new(d[0], d[1], d[2]),
            radius: self.radius + d[3],
            normal: (self.normal + u * d[4] + w * d[5]).normalize(),
            ..*self
        }
    }

    fn jacobian(&self) -> DMatrix<f64> {
        let (u, w) = tangent_basis(&self.normal);
        let mut jac = DMatrix::zeros(2 * self.idx.len(), 6);
        for (k, &i) in self.idx.iter().enumerate() {
            let v = self.points[i] - self.center;
            let z = v.dot(&self.normal);
            let inplane = v - z * self.normal;
            let rho = inplane.norm().max(1e-15);
            let e = inplane / rho;
            // d(rho)/dc = -e, dz/dc = -n
            for a in 0..3 {
                jac[(2 * k, a)] = -e[a];
                jac[(2 * k + 1, a)] = -self.normal[a];
            }
            jac[(2 * k, 3)] = -1.0;
            // normal perturbation n + t: dz = v·t, d(rho) = -(z/rho)(v·t)
            for (col, t) in [(4, u), (5, w)] {
                let vt = v.dot(&t);
                jac[(2 * k + 1, col)] = vt;
                jac[(2 * k, col)] = -z * vt / rho;
            }
        }
        jac
    }
}

/// RANSAC circle (3-point samples) refined by least squares on the exact
/// 3-D point-to-circle distance.
pub fn fit_circle_ransac(points: &[Vec3], cfg: &RansacConfig) -> Result<CircleFit> {
    cfg.validate()?;
    let n = points.len();
    if n < 3 {
        return Err(Error::FitFailure(format!("circle fit needs 3 points, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Vec3, f64, Vec3, usize)> = None;
    for _ in 0..cfg.iterations {
        let [a, b, c] = sample_distinct::<3>(&mut rng, n);
        let Some((center, radius, normal)) = circumscribed_circle(&points[a], &points[b], &points[c]) else {
            continue;
        };
        let count = points
            .iter()
            .filter(|p| circle_distance(p, &center, radius, &normal) <= cfg.inlier_threshold)
            .count();
        if best.is_none_or(|b| count > b.3) {
            best = Some((center, radius, normal, count));
        }
        if n == 3 {
            break;
        }
    }
    let Some((center, radius, normal, _)) = best else {
        return Err(Error::FitFailure("all circle samples were collinear".into()));
    };
    let inliers_of = |c: &Vec3, r: f64, nrm: &Vec3| -> Vec<usize> {
        (0..n)
            .filter(|&i| circle_distance(&points[i], c, r, nrm) <= cfg.inlier_threshold)
            .collect()
    };
    let inliers = inliers_of(&center, radius, &normal);
    let refined = lm::minimize(
        CircleProblem {
            points,
            idx: &inliers,
            center,
            radius,
            normal,
        },
        &LmSettings::default(),
    );
    let (mut center, mut radius, normal) = (refined.center, refined.radius, refined.normal);
    if radius < 0.0 {
        radius = -radius;
    }
    if !radius.is_finite() || radius == 0.0 {
        return Err(Error::FitFailure("circle refinement diverged".into()));
    }
    let mut inliers = inliers_of(&center, radius, &normal);
    if inliers.len() < cfg.required_inliers(n) {
        return Err(Error::FitFailure(format!(
            "circle fit has {} inliers, {} required",
            inliers.len(),
            cfg.required_inliers(n)
        )));
    }
    inliers.sort_unstable();
    // keep the center in the plane of the inliers' mean for a tidy output
    let mean = inliers.iter().map(|&i| points[i]).sum::<Vec3>() / inliers.len() as f64;
    center += normal * (mean - center).dot(&normal);
    let angular_range = arc_span(points, &inliers, &center, &normal);
    Ok(CircleFit {
        center,
        radius,
        normal,
        inliers,
        angular_range,
    })
}

/// Smallest arc containing all angular positions of `idx` around `center`.
fn arc_span(points: &[Vec3], idx: &[usize], center: &Vec3, normal: &Vec3) -> f64 {
    if idx.len() < 2 {
        return 0.0;
    }
    let (u, w) = tangent_basis(normal);
    let mut angles: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let v = points[i] - center;
            v.dot(&w).atan2(v.dot(&u))
        })
        .collect();
    angles.sort_unstable_by(f64::total_cmp);
    let mut largest_gap = angles[0] + TAU - angles[angles.len() - 1];
    for pair in angles.windows(2) {
        largest_gap = largest_gap.max(pair[1] - pair[0]);
    }
    (TAU - largest_gap).clamp(0.0, TAU)
}

/// Circle fit; arcs shorter than `angle_threshold` are re-fitted as a line
/// and reported as prismatic, longer ones as revolute about the circle axis.
pub fn classify_joint(points: &[Vec3], cfg: &RansacConfig, angle_threshold: f64) -> Result<(JointModel, TrajectoryFit)> {
    if points.len() < 3 {
        return Err(Error::FitFailure(format!(
            "joint classification needs 3 trajectory points, got {}",
            points.len()
        )));
    }
    let circle = match fit_circle_ransac(points, cfg) {
        Ok(c) => Some(c),
        // exactly collinear trajectories have no circle: the arc is empty
        Err(Error::FitFailure(msg)) if msg.contains("collinear") => None,
        Err(e) => return Err(e),
    };
    match circle {
        Some(c) if c.angular_range >= angle_threshold => {
            let joint = JointModel::revolute(c.normal, axis_point_from_circle(c.center, c.normal))?;
            Ok((joint, TrajectoryFit::Circle(c)))
        }
        _ => {
            let line = fit_line_ransac(points, cfg)?;
            Ok((JointModel::prismatic(line.direction)?, TrajectoryFit::Line(line)))
        }
    }
}

/// Motion amounts that map each hand centroid back onto the first one.
pub fn initial_motions(joint: &JointModel, hand_centroids: &[Vec3]) -> MotionSequence {
    let Some(h0) = hand_centroids.first() else {
        return MotionSequence::zeros(1);
    };
    match *joint {
        JointModel::Prismatic { direction } => MotionSequence::from_tail(
            &hand_centroids[1..]
                .iter()
                .map(|h| -(h - h0).dot(&direction))
                .collect::<Vec<_>>(),
        ),
        JointModel::Revolute {
            axis_direction: n,
            axis_point: l,
        } => {
            let planar = |h: &Vec3| {
                let v = h - l;
                v - v.dot(&n) * n
            };
            let mut prev = planar(h0);
            let mut total = 0.0;
            let mut tail = Vec::with_capacity(hand_centroids.len() - 1);
            for h in &hand_centroids[1..] {
                let cur = planar(h);
                // unwrapped: accumulate signed steps between consecutive frames
                total += n.dot(&prev.cross(&cur)).atan2(prev.dot(&cur));
                tail.push(-total);
                prev = cur;
            }
            MotionSequence::from_tail(&tail)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joint::rotation_about;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arc(center: Vec3, radius: f64, normal: Vec3, start: f64, span: f64, n: usize) -> Vec<Vec3> {
        let (u, w) = tangent_basis(&normal);
        (0..n)
            .map(|i| {
                let t = start + span * i as f64 / (n - 1) as f64;
                center + radius * (u * t.cos() + w * t.sin())
            })
            .collect()
    }

    #[test]
    fn collinear_line() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(0.01 * i as f64, 0.0, 1.0)).collect();
        let fit = fit_line_ransac(&pts, &RansacConfig::default()).unwrap();
        assert!((fit.direction - Vec3::x()).norm() < 1e-12);
        assert_eq!(fit.inliers.len(), 20);
        assert!((fit.extent - 0.19).abs() < 1e-12);
    }

    #[test]
    fn noisy_line_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let pts: Vec<Vec3> = (0..20)
            .map(|i| {
                Vec3::new(0.01 * i as f64, 0.0, 1.0)
                    + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
            })
            .collect();
        let fit = fit_line_ransac(&pts, &RansacConfig::default()).unwrap();
        assert!(fit.direction.dot(&Vec3::x()) > 1f64.to_radians().cos());
    }

    #[test]
    fn two_point_line() {
        let pts = [Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 3.0, 1.0)];
        let fit = fit_line_ransac(&pts, &RansacConfig::default()).unwrap();
        assert!((fit.direction - Vec3::y()).norm() < 1e-12);
        assert!(fit.distance(&pts[0]) < 1e-12 && fit.distance(&pts[1]) < 1e-12);
    }

    #[test]
    fn quarter_circle_recovered() {
        let normal = Vec3::new(0.2, -1.0, 0.3).normalize();
        let center = Vec3::new(0.3, -0.2, 1.5);
        let pts = arc(center, 0.4, normal, 0.3, FRAC_PI_2, 12);
        let fit = fit_circle_ransac(&pts, &RansacConfig::default()).unwrap();
        assert!((fit.center - center).norm() < 1e-6);
        assert!((fit.radius - 0.4).abs() < 1e-6);
        assert!(fit.normal.cross(&normal).norm() < 1e-6);
        assert!((fit.angular_range - FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn noisy_full_circle_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.002).unwrap();
        let pts: Vec<Vec3> = arc(Vec3::new(0.0, 0.0, 2.0), 0.5, Vec3::z(), 0.0, TAU * 0.98, 40)
            .into_iter()
            .map(|p| p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let fit = fit_circle_ransac(&pts, &RansacConfig::default()).unwrap();
        assert!((fit.radius - 0.5).abs() < 0.005, "{}", fit.radius);
    }

    #[test]
    fn three_points_interpolated() {
        let pts = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(-1.0, 0.0, 0.5)];
        let fit = fit_circle_ransac(&pts, &RansacConfig::default()).unwrap();
        for p in &pts {
            assert!(fit.distance(p) < 1e-12);
        }
    }

    #[test]
    fn collinear_circle_fails() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(fit_circle_ransac(&pts, &RansacConfig::default()), Err(Error::FitFailure(_))));
    }

    #[test]
    fn circle_fit_is_rigidly_invariant() {
        let normal = Vec3::new(0.0, 1.0, 0.2).normalize();
        let pts = arc(Vec3::new(0.1, 0.2, 1.0), 0.6, normal, 0.0, 1.2, 10);
        let rot = rotation_about(0.7, &Vec3::new(1.0, 2.0, 3.0).normalize());
        let shift = Vec3::new(0.5, -1.0, 2.0);
        let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + shift).collect();
        let a = fit_circle_ransac(&pts, &RansacConfig::default()).unwrap();
        let b = fit_circle_ransac(&moved, &RansacConfig::default()).unwrap();
        assert!((rot * a.center + shift - b.center).norm() < 1e-6);
        assert!((a.radius - b.radius).abs() < 1e-6);
        assert!((rot * a.normal).cross(&b.normal).norm() < 1e-6);
    }

    #[test]
    fn classification_examples() {
        let cfg = RansacConfig::default();
        let thr = 30f64.to_radians();
        let center = Vec3::new(0.2, 0.0, 1.5);
        let (j, _) = classify_joint(&arc(center, 0.5, Vec3::y(), 0.0, FRAC_PI_2, 10), &cfg, thr).unwrap();
        match j {
            JointModel::Revolute {
                axis_direction,
                axis_point,
            } => {
                assert!(axis_direction.cross(&Vec3::y()).norm() < 1e-9);
                assert!((axis_point - axis_point_from_circle(center, axis_direction)).norm() < 1e-9);
            }
            _ => panic!("expected revolute"),
        }
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(0.0, 0.0, 1.0 + 0.03 * i as f64)).collect();
        assert_eq!(classify_joint(&line, &cfg, thr).unwrap().0.kind(), crate::JointKind::Prismatic);
        let small = arc(center, 0.5, Vec3::y(), 0.0, 20f64.to_radians(), 10);
        assert_eq!(classify_joint(&small, &cfg, thr).unwrap().0.kind(), crate::JointKind::Prismatic);
    }

    #[test]
    fn initial_motion_examples() {
        let t = Vec3::new(1.0, 2.0, 2.0) / 3.0;
        let joint = JointModel::prismatic(t).unwrap();
        let h0 = Vec3::new(0.1, 0.2, 1.0);
        assert_eq!(initial_motions(&joint, &[h0; 5]).as_slice(), &[0.0; 5]);
        let hs: Vec<Vec3> = (0..5).map(|i| h0 + t * (0.1 * i as f64)).collect();
        for (i, m) in initial_motions(&joint, &hs).as_slice().iter().enumerate() {
            assert!((m + 0.1 * i as f64).abs() < 1e-12);
        }
        // invariant to a global shift
        let shifted: Vec<Vec3> = hs.iter().map(|h| h + Vec3::new(3.0, -1.0, 0.5)).collect();
        let a = initial_motions(&joint, &hs);
        let b = initial_motions(&joint, &shifted);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn revolute_initial_motions_unwrap() {
        let joint = JointModel::revolute_through(Vec3::y(), Vec3::new(0.3, 0.0, 1.5)).unwrap();
        let l = joint.axis_point().unwrap();
        let start = Vec3::new(0.8, -0.4, 1.5);
        // door opened by 200° in 10 steps: passes through ±π
        let hs: Vec<Vec3> = (0..11)
            .map(|i| rotation_about(200f64.to_radians() * i as f64 / 10.0, &Vec3::y()) * (start - l) + l)
            .collect();
        let m = initial_motions(&joint, &hs);
        assert!((m[10] + 200f64.to_radians()).abs() < 1e-9);
        assert!((m[5] + PI * 100.0 / 180.0).abs() < 1e-9);
    }
}
