//! A featureless plane slides within itself, so its geometry cannot tell the
//! sliding direction apart from any other in-plane direction. Refinement
//! starts from a direction rotated 15° in the plane; the hand term pulls it
//! back, while without it (λ = 0) the direction stays off.
//!
//! `cargo run --release --example flat_panel_hand_constraint -- 0.01 3`
//! (λ, seed)

use articulation::ingest::{backproject, hand_centroid_3d, voxel_downsample, HandObservation};
use articulation::joint::{rodrigues, undirected_angle, JointModel, Vec3};
use articulation::refinement::{refine, RefinementConfig};
use articulation::synth::{generate_scene, preset, NoiseModel, Preset, PresetRequest};
use articulation::trajectory::initial_motions;

fn main() -> articulation::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lambda: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let req = PresetRequest {
        preset: Preset::FlatPanel,
        seed,
        noise: NoiseModel {
            depth_sigma: 0.005,
            hand_sigma_2d: 3.0,
            dropout_rate: 0.1,
        },
        frames: 10,
    };
    let scene = generate_scene(&preset(&req)?)?;
    let seq = &scene.sequence;
    // no hand is rendered here; the reference keeps 1 cm voxels and later
    // frames stay at full resolution
    let mut clouds = Vec::new();
    let mut hands = Vec::new();
    for (k, depth) in seq.frames.iter().enumerate() {
        let raw = backproject(depth, &seq.intrinsics, None)?;
        clouds.push(if k == 0 { voxel_downsample(&raw, 0.01)? } else { raw });
        let obs = HandObservation::from_keypoints(&seq.keypoints[k]);
        hands.push(hand_centroid_3d(&obs, depth, &seq.intrinsics, &Default::default()));
    }
    let truth = scene.truth.joint.direction();
    // the plane faces the camera, so its normal is the viewing axis
    let start = JointModel::prismatic(rodrigues(15f64.to_radians(), &Vec3::z())? * truth)?;
    let centroids: Vec<Vec3> = hands.iter().map(|h| h.centroid_3d.expect("hand visible")).collect();
    let motions = initial_motions(&start, &centroids);
    let cfg = RefinementConfig {
        lambda,
        ..Default::default()
    };
    let reference = clouds[0].points.clone();
    let out = refine(&clouds, &reference, &hands, (start, motions), &cfg, 0.03)?;
    println!(
        "λ = {lambda}: direction error {:.3}° after {} iterations (start 15°)",
        undirected_angle(&out.joint.direction(), &truth).to_degrees(),
        out.iterations.len()
    );
    Ok(())
}
