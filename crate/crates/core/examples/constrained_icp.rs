//! Registers all frames of a synthetic drawer under a prismatic constraint,
//! starting from the direction of the hand trajectory.
//!
//! `cargo run --release --example constrained_icp`

use articulation::alignment::{optimize_constrained_icp, AlignmentConfig};
use articulation::ingest::{backproject, hand_centroid_3d, remove_static, voxel_downsample, HandObservation};
use articulation::joint::{undirected_angle, Vec3};
use articulation::synth::{generate_scene, preset, NoiseModel, Preset, PresetRequest};
use articulation::trajectory::{classify_joint, initial_motions, RansacConfig};

fn main() -> articulation::Result<()> {
    let req = PresetRequest {
        noise: NoiseModel {
            depth_sigma: 0.003,
            hand_sigma_2d: 2.0,
            dropout_rate: 0.0,
        },
        ..PresetRequest::new(Preset::Drawer)
    };
    let scene = generate_scene(&preset(&req)?)?;
    let seq = &scene.sequence;

    let mut clouds = Vec::new();
    let mut hands = Vec::new();
    for (k, depth) in seq.frames.iter().enumerate() {
        let mut mask = remove_static(depth, &seq.background, 0.02)?;
        if let Some(person) = &seq.person_masks[k] {
            mask.subtract(person)?;
        }
        clouds.push(voxel_downsample(&backproject(depth, &seq.intrinsics, Some(&mask))?, 0.01)?);
        let obs = HandObservation::from_keypoints(&seq.keypoints[k]);
        hands.push(hand_centroid_3d(&obs, depth, &seq.intrinsics, &Default::default()));
    }
    let centroids: Vec<Vec3> = hands.iter().filter_map(|h| h.centroid_3d).collect();
    assert_eq!(centroids.len(), hands.len(), "the hand is visible in every frame");

    let truth = scene.truth.joint.direction();
    let (joint, _) = classify_joint(&centroids, &RansacConfig::default(), 30f64.to_radians())?;
    let motions = initial_motions(&joint, &centroids);
    println!(
        "hand trajectory: {} joint, {:.3}° from the true direction",
        joint.kind(),
        undirected_angle(&joint.direction(), &truth).to_degrees()
    );

    let out = optimize_constrained_icp(&clouds, &hands, (joint, motions), &AlignmentConfig::default())?;
    for it in &out.iterations {
        println!("iteration {:>2}: cost {:.6e} -> {:.6e}", it.iter, it.cost_before, it.cost);
    }
    println!(
        "aligned: {:.3}° from the true direction, final pull {:.4} m (true {:.4} m)",
        undirected_angle(&out.joint.direction(), &truth).to_degrees(),
        -out.motions[out.motions.len() - 1],
        -scene.truth.motions[scene.truth.motions.len() - 1]
    );
    Ok(())
}
