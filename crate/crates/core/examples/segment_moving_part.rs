//! Segments the moving door leaf under its true articulation and writes the
//! labelled reference cloud as binary PLY.
//!
//! `cargo run --release --example segment_moving_part -- /tmp/door.ply`

use std::path::PathBuf;

use articulation::ingest::{backproject, estimate_normals, remove_static, voxel_downsample, Mask};
use articulation::pipeline::segmentation_ply;
use articulation::ply::write_ply;
use articulation::segmentation::{segment, Confidence, SegmentationConfig};
use articulation::synth::{generate_scene, preset, Preset, PresetRequest};

fn main() -> articulation::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("articulation_door.ply"));
    let scene = generate_scene(&preset(&PresetRequest::new(Preset::Door))?)?;
    let seq = &scene.sequence;
    // a pixel that changes in any frame is kept in all of them; in frame 0
    // the closed door still coincides with the background
    let mut moving = Mask::filled(seq.intrinsics.width, seq.intrinsics.height, false);
    for depth in &seq.frames {
        moving.union_with(&remove_static(depth, &seq.background, 0.02)?)?;
    }
    let mut clouds = Vec::new();
    for (k, depth) in seq.frames.iter().enumerate() {
        let mut mask = moving.clone();
        if let Some(person) = &seq.person_masks[k] {
            mask.subtract(person)?;
        }
        let fine = voxel_downsample(&backproject(depth, &seq.intrinsics, Some(&mask))?, 0.01)?;
        let fine = if k == 0 { estimate_normals(&fine, 16)? } else { fine };
        clouds.push(voxel_downsample(&fine, 0.02)?);
    }
    let hand_0 = scene.hand_joints[0].iter().sum::<articulation::joint::Vec3>() / scene.hand_joints[0].len() as f64;
    let cfg = SegmentationConfig::default();
    let seg = segment(
        &clouds,
        &scene.truth.joint,
        &scene.truth.motions,
        &hand_0,
        &cfg,
        cfg.tau_sym_first,
    )?;
    let ambiguous = seg.confidence_flags.iter().filter(|&&c| c == Confidence::Ambiguous).count();
    println!(
        "{} reference points, {} overlap candidates ({ambiguous} ambiguous), {} on the door",
        clouds[0].len(),
        seg.candidates.len(),
        seg.object_indices.len()
    );
    write_ply(&path, &segmentation_ply(&seg))?;
    println!("wrote {}", path.display());
    Ok(())
}
