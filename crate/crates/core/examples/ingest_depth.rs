//! Writes a synthetic drawer sequence to disk, loads it back and turns one
//! frame into point clouds: static-background removal, back-projection,
//! voxel downsampling, normals and the 3-D hand centroid.
//!
//! `cargo run --release --example ingest_depth -- /tmp/drawer_seq`

use std::path::PathBuf;

use articulation::ingest::{
    backproject, estimate_normals, hand_centroid_3d, remove_static, voxel_downsample, HandObservation,
};
use articulation::io::load_sequence;
use articulation::synth::{generate_scene, preset, write_scene, Preset, PresetRequest};

fn main() -> articulation::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("articulation_drawer_seq"));
    let spec = preset(&PresetRequest::new(Preset::Drawer))?;
    let scene = generate_scene(&spec)?;
    write_scene(&dir, &spec, &scene)?;
    println!("wrote {}", dir.display());

    let seq = load_sequence(&dir)?;
    let k = seq.frames.len() - 1;
    let depth = &seq.frames[k];
    let mut mask = remove_static(depth, &seq.background, 0.02)?;
    if let Some(person) = &seq.person_masks[k] {
        mask.subtract(person)?;
    }
    let all = backproject(depth, &seq.intrinsics, None)?;
    let moving = backproject(depth, &seq.intrinsics, Some(&mask))?;
    let fine = voxel_downsample(&moving, 0.01)?;
    let with_normals = estimate_normals(&fine, 16)?;
    println!(
        "frame {k}: {} valid pixels, {} changed and not hand, {} after 1 cm voxels",
        all.len(),
        moving.len(),
        fine.len()
    );
    let normals = with_normals.normals.as_ref().expect("normals were estimated");
    println!("first normal {:?}", normals[0].as_slice());

    let obs = hand_centroid_3d(
        &HandObservation::from_keypoints(&seq.keypoints[k]),
        depth,
        &seq.intrinsics,
        &Default::default(),
    );
    let lifted = obs.joints_3d.iter().filter(|j| j.is_some()).count();
    match obs.centroid_3d {
        Some(c) => println!("hand centroid {:?} from {lifted} joints", c.as_slice()),
        None => println!("no hand in frame {k}"),
    }
    Ok(())
}
