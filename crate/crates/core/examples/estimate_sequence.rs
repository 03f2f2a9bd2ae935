//! End to end on files: renders a drawer or door sequence into a directory,
//! loads it, runs the full pipeline and writes `result.json`,
//! `segmentation.ply` and `labels.json` next to it.
//!
//! `cargo run --release --example estimate_sequence -- door /tmp/door_seq`

use std::path::PathBuf;

use articulation::io::load_sequence;
use articulation::pipeline::{run, write_outputs, PipelineConfig};
use articulation::synth::{generate_scene, preset, write_scene, Preset, PresetRequest};

fn main() -> articulation::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let which = match args.first().map(String::as_str) {
        Some("door") => Preset::Door,
        _ => Preset::Drawer,
    };
    let dir = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("articulation_{which:?}").to_lowercase()));
    let spec = preset(&PresetRequest::new(which))?;
    write_scene(&dir, &spec, &generate_scene(&spec)?)?;

    let seq = load_sequence(&dir)?;
    let out = run(&seq, &PipelineConfig::default())?;
    let result_dir = dir.join("result");
    write_outputs(&result_dir, &seq, &out, false)?;

    println!("joint: {:?}", out.joint);
    println!("motions: {:?}", out.motions.as_slice());
    println!("observed range: {:?}", out.motion_range);
    println!("{} object pixels in frame {}", out.object_pixels.len(), out.reference_frame());
    println!("outputs in {}", result_dir.display());
    Ok(())
}
