//! Renders a built-in scene, runs the pipeline on it and prints the metrics.
//!
//! `cargo run --release --example synth_eval -- door 0.005 3 0.1 7`
//! (preset, depth sigma in meters, keypoint sigma in pixels, dropout, seed)

use articulation::pipeline::{run, PipelineConfig};
use articulation::synth::{evaluate, generate_scene, preset, Estimate, NoiseModel, Preset, PresetRequest};

fn main() -> articulation::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let which = match args.first().map(String::as_str).unwrap_or("drawer") {
        "door" => Preset::Door,
        "door_floor" => Preset::DoorFloor,
        _ => Preset::Drawer,
    };
    let req = PresetRequest {
        preset: which,
        seed: arg(4, 0.0) as u64,
        noise: NoiseModel {
            depth_sigma: arg(1, 0.0),
            hand_sigma_2d: arg(2, 0.0),
            dropout_rate: arg(3, 0.0),
        },
        frames: 10,
    };
    let scene = generate_scene(&preset(&req)?)?;
    let out = run(&scene.sequence, &PipelineConfig::default())?;
    let estimate = Estimate {
        joint: out.joint,
        motions: out.motions.clone(),
        frames: out.frames.clone(),
        object_pixels: out.object_pixels.clone(),
    };
    let metrics = evaluate(&estimate, &scene.truth, &scene.labels[out.reference_frame()])?;
    println!("estimated joint: {:?}", out.joint);
    println!("true joint:      {:?}", scene.truth.joint);
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}
