//! Classifies hand trajectories as prismatic or revolute from the swept arc.
//!
//! `cargo run --example trajectory_classification`

use articulation::joint::Vec3;
use articulation::trajectory::{classify_joint, initial_motions, RansacConfig, TrajectoryFit};

fn arc(radius: f64, sweep_deg: f64, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let a = (sweep_deg * i as f64 / (n - 1) as f64).to_radians();
            Vec3::new(radius * a.cos(), radius * a.sin(), 0.4)
        })
        .collect()
}

fn main() -> articulation::Result<()> {
    let cfg = RansacConfig::default();
    for (radius, sweep) in [(0.5, 10.0), (0.5, 25.0), (0.5, 45.0), (0.8, 90.0)] {
        let points = arc(radius, sweep, 10);
        let (joint, fit) = classify_joint(&points, &cfg, 30f64.to_radians())?;
        let detail = match &fit {
            TrajectoryFit::Circle(c) => format!("radius {:.3} m, arc {:.1}°", c.radius, c.angular_range.to_degrees()),
            TrajectoryFit::Line(l) => format!("{} line inliers", l.inliers.len()),
        };
        let motions = initial_motions(&joint, &points);
        println!(
            "sweep {sweep:>4}°: {} ({detail}), last motion {:.3}",
            joint.kind(),
            motions[motions.len() - 1]
        );
    }
    Ok(())
}
