//! Command line front end: `estimate`, `synth` and `eval`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use articulation::io::{load_sequence, read_json};
use articulation::pipeline::{self, LabelsFile, PipelineConfig, ResultFile};
use articulation::synth::{self, GroundTruth};
use articulation::{Error, Result};

/// Thread count for the parallel stages; defaults to all cores.
const THREADS_VAR: &str = "ARTICULATE_THREADS";

#[derive(Parser)]
#[command(name = "articulate", version, about = "Hand-guided articulation estimation from depth sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the joint, motions and object segmentation of a sequence directory.
    Estimate {
        dir: PathBuf,
        /// JSON pipeline configuration; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <dir>/result).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-iteration solver records to diagnostics.json.
        #[arg(long)]
        dump_diagnostics: bool,
    },
    /// Render a synthetic scene (full spec or {"preset": ...}) into a sequence directory.
    Synth {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a result with a synthetic ground truth and print metrics as JSON.
    Eval { result: PathBuf, truth: PathBuf },
}

fn estimate(dir: &Path, config: Option<&Path>, out: Option<&Path>, dump: bool) -> Result<()> {
    let cfg: PipelineConfig = match config {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    let seq = load_sequence(dir)?;
    let output = pipeline::run(&seq, &cfg)?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("result"));
    pipeline::write_outputs(&out_dir, &seq, &output, dump)?;
    info!(
        "{} joint, {} object pixels; wrote {}",
        output.joint.kind(),
        output.object_pixels.len(),
        out_dir.join(pipeline::RESULT_FILE).display()
    );
    Ok(())
}

fn synth_cmd(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = synth::load_scene_spec(spec_path)?;
    let scene = synth::generate_scene(&spec)?;
    synth::write_scene(out, &spec, &scene)?;
    info!("wrote {} frames to {}", scene.sequence.frames.len(), out.display());
    Ok(())
}

fn eval(result_path: &Path, truth_path: &Path) -> Result<()> {
    let result: ResultFile = read_json(result_path)?;
    let truth: GroundTruth = read_json(truth_path)?;
    let result_dir = result_path.parent().unwrap_or(Path::new("."));
    let labels: LabelsFile = read_json(&result_dir.join(&result.labels))?;
    let reference = synth::read_labels(truth_path, &truth, result.reference_frame)?;
    if reference.len() != labels.width as usize * labels.height as usize {
        return Err(Error::InvalidInput("result labels and ground-truth labels differ in size".into()));
    }
    let estimate = synth::Estimate {
        joint: result.joint,
        motions: result.motions,
        frames: result.frames,
        object_pixels: labels.object_pixels,
    };
    let metrics = synth::evaluate(&estimate, &truth, &reference)?;
    println!("{}", serde_json::to_string_pretty(&metrics).expect("metrics serialize"));
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParameter(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Estimate {
            dir,
            config,
            out,
            dump_diagnostics,
        } => estimate(dir, config.as_deref(), out.as_deref(), *dump_diagnostics),
        Command::Synth { spec, out } => synth_cmd(spec, out),
        Command::Eval { result, truth } => eval(result, truth),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
