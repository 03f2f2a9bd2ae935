//! The full estimation pipeline from a loaded sequence to a joint, motions and
//! a frame-0 segmentation, plus the result files the command line writes.

use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{optimize_constrained_icp, AlignmentConfig};
use crate::error::{Error, Result};
use crate::ingest::{
    backproject, estimate_normals, hand_centroid_3d, remove_static, subsample_indices, voxel_downsample_with_map,
    FrameCloud, HandDepthConfig, HandObservation, Mask,
};
use crate::io::{write_json, SequenceInput};
use crate::joint::{JointModel, MotionSequence, Vec3};
use crate::ply::{write_ply, PlyCloud};
use crate::refinement::{run_refinement_loop, RefinementConfig};
use crate::segmentation::{segment, Confidence, SegmentationConfig, SegmentationResult};
use crate::solver::IterationRecord;
use crate::trajectory::{classify_joint, initial_motions, FitSummary, RansacConfig};

/// Every tunable of the pipeline. All fields are optional in JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Largest number of frames kept after dropping frames without a hand.
    pub max_frames: usize,
    /// Drop pixels whose depth never departs from the background frame.
    pub remove_static: bool,
    /// Depth change that marks a pixel as non-static, meters.
    pub tau_static: f64,
    /// Voxel edge of the clouds used for alignment and refinement, meters.
    pub voxel_size: f64,
    /// Voxel edge of the clouds used for segmentation, meters.
    pub segmentation_voxel_size: f64,
    /// Neighbors used for normal estimation.
    pub normal_k: usize,
    /// Arcs shorter than this are treated as prismatic, degrees.
    pub angle_threshold_deg: f64,
    pub hand_depth: HandDepthConfig,
    pub ransac: RansacConfig,
    pub alignment: AlignmentConfig,
    pub segmentation: SegmentationConfig,
    pub refinement: RefinementConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_frames: 15,
            remove_static: true,
            tau_static: 0.02,
            voxel_size: 0.01,
            segmentation_voxel_size: 0.02,
            normal_k: 16,
            angle_threshold_deg: 30.0,
            hand_depth: HandDepthConfig::default(),
            ransac: RansacConfig::default(),
            alignment: AlignmentConfig::default(),
            segmentation: SegmentationConfig::default(),
            refinement: RefinementConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_frames >= 2
            && self.tau_static > 0.0
            && self.voxel_size > 0.0
            && self.segmentation_voxel_size >= self.voxel_size
            && self.normal_k >= 3
            && self.angle_threshold_deg > 0.0
            && self.angle_threshold_deg < 360.0
            && (0.0..=1.0).contains(&self.hand_depth.alpha_min);
        if !ok {
            return Err(Error::InvalidParameter(
                "invalid pipeline config: need max_frames >= 2, positive tau_static and voxel sizes \
                 (segmentation_voxel_size >= voxel_size), normal_k >= 3, angle_threshold_deg in (0, 360)"
                    .into(),
            ));
        }
        self.ransac.validate()?;
        self.alignment.validate()?;
        self.segmentation.validate()?;
        self.refinement.validate()
    }
}

/// Parameters after one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEstimate {
    pub joint: JointModel,
    pub motions: MotionSequence,
}

/// Per-stage record of a run. Contains no timings, so identical inputs give
/// identical diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub hand_centroids: Vec<Vec3>,
    pub trajectory: FitSummary,
    pub initial: StageEstimate,
    pub alignment: StageEstimate,
    pub alignment_cost: f64,
    pub alignment_iterations: Vec<IterationRecord>,
    pub first_segmentation_points: usize,
    pub refinement_costs: Vec<f64>,
    pub refinement_iterations: Vec<Vec<IterationRecord>>,
    /// Points per kept frame in the alignment clouds.
    pub cloud_sizes: Vec<usize>,
    pub candidates: usize,
    pub object_points: usize,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub joint: JointModel,
    pub motions: MotionSequence,
    pub motion_range: [f64; 2],
    /// Original index of each kept frame; motions refer to these.
    pub frames: Vec<usize>,
    /// Frame-0 pixels of the segmented object.
    pub object_pixels: Vec<u32>,
    pub segmentation: SegmentationResult,
    /// Frame-0 cloud the segmentation indices refer to.
    pub reference_cloud: FrameCloud,
    pub diagnostics: Diagnostics,
}

impl PipelineOutput {
    pub fn reference_frame(&self) -> usize {
        self.frames[0]
    }
}

struct PreparedFrame {
    /// Full-resolution points carrying pixel indices.
    raw: FrameCloud,
    fine: FrameCloud,
    raw_to_fine: Vec<usize>,
    coarse: FrameCloud,
    fine_to_coarse: Vec<usize>,
}

fn prepare_frame(
    seq: &SequenceInput,
    index: usize,
    keep: Option<&Mask>,
    with_normals: bool,
    cfg: &PipelineConfig,
) -> Result<PreparedFrame> {
    let mut mask = keep.cloned().unwrap_or_else(|| Mask::filled(seq.intrinsics.width, seq.intrinsics.height, true));
    if let Some(person) = &seq.person_masks[index] {
        mask.subtract(person)?;
    }
    let mut raw = backproject(&seq.frames[index], &seq.intrinsics, Some(&mask))?;
    raw.frame_index = index;
    let (mut fine, raw_to_fine) = voxel_downsample_with_map(&raw, cfg.voxel_size)?;
    if with_normals {
        fine = if fine.len() >= cfg.normal_k {
            estimate_normals(&fine, cfg.normal_k)?
        } else {
            return Err(Error::DegenerateGeometry(format!(
                "frame {index} has only {} points after filtering",
                fine.len()
            )));
        };
    }
    let (coarse, fine_to_coarse) = voxel_downsample_with_map(&fine, cfg.segmentation_voxel_size)?;
    Ok(PreparedFrame {
        raw,
        fine,
        raw_to_fine,
        coarse,
        fine_to_coarse,
    })
}

fn lap(stage: &str, start: &mut Instant) {
    info!("{stage}: {:.3} s", start.elapsed().as_secs_f64());
    *start = Instant::now();
}

/// Runs the whole pipeline on a sequence.
pub fn run(seq: &SequenceInput, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    seq.validate()?;
    let mut clock = Instant::now();

    let hands_all: Vec<HandObservation> = seq
        .keypoints
        .par_iter()
        .zip(&seq.frames)
        .enumerate()
        .map(|(i, (kp, depth))| {
            let mut obs = HandObservation::from_keypoints(kp);
            obs.frame_index = i;
            hand_centroid_3d(&obs, depth, &seq.intrinsics, &cfg.hand_depth)
        })
        .collect();
    let has_hand: Vec<bool> = hands_all.iter().map(|h| h.centroid_3d.is_some()).collect();
    let frames = subsample_indices(&has_hand, cfg.max_frames)?;
    if frames.len() < 3 {
        return Err(Error::FitFailure(format!(
            "only {} frames have a detected hand; the trajectory fit needs 3",
            frames.len()
        )));
    }
    let hands: Vec<HandObservation> = frames.iter().map(|&i| hands_all[i].clone()).collect();
    let centroids: Vec<Vec3> = hands.iter().map(|h| h.centroid_3d.expect("kept frames have a hand")).collect();
    info!("kept {} of {} frames", frames.len(), seq.frames.len());

    let (init_joint, fit) = classify_joint(&centroids, &cfg.ransac, cfg.angle_threshold_deg.to_radians())?;
    let init_motions = initial_motions(&init_joint, &centroids);
    info!("trajectory: {} ({} inliers)", init_joint.kind(), fit.inliers().len());
    lap("trajectory fit", &mut clock);

    let keep = if cfg.remove_static {
        let mut union = Mask::filled(seq.intrinsics.width, seq.intrinsics.height, false);
        for &i in &frames {
            union.union_with(&remove_static(&seq.frames[i], &seq.background, cfg.tau_static)?)?;
        }
        Some(union)
    } else {
        None
    };
    let prepared: Vec<PreparedFrame> = frames
        .par_iter()
        .enumerate()
        .map(|(k, &i)| prepare_frame(seq, i, keep.as_ref(), k == 0, cfg))
        .collect::<Result<_>>()?;
    let fine: Vec<FrameCloud> = prepared.iter().map(|p| p.fine.clone()).collect();
    let coarse: Vec<FrameCloud> = prepared.iter().map(|p| p.coarse.clone()).collect();
    if let Some(k) = fine.iter().position(|f| f.len() < 10) {
        return Err(Error::DegenerateGeometry(format!(
            "frame {} has only {} points after static removal and masking",
            frames[k],
            fine[k].len()
        )));
    }
    lap("cloud preparation", &mut clock);

    let aligned = optimize_constrained_icp(
        &fine,
        &hands,
        (init_joint, init_motions.clone()),
        &cfg.alignment,
    )?;
    info!(
        "alignment: {} iterations, cost {:.6e}",
        aligned.iterations.len(),
        aligned.final_cost
    );
    lap("constrained ICP", &mut clock);

    let hand_0 = centroids[0];
    let first = segment(
        &coarse,
        &aligned.joint,
        &aligned.motions,
        &hand_0,
        &cfg.segmentation,
        cfg.segmentation.tau_sym_first,
    )?;
    let first_points = first.object_indices.len();
    info!("first segmentation: {first_points} of {} points", coarse[0].len());
    lap("segmentation", &mut clock);

    // voxel centroids of two clouds sampled on the same camera lattice stick
    // together, so later frames are matched at full resolution
    let fit_frames: Vec<FrameCloud> = prepared
        .iter()
        .enumerate()
        .map(|(k, p)| if k == 0 { p.fine.clone() } else { p.raw.clone() })
        .collect();
    let looped = run_refinement_loop(
        &coarse,
        &fit_frames,
        &prepared[0].fine_to_coarse,
        &hands,
        (aligned.joint, aligned.motions.clone()),
        first,
        &cfg.segmentation,
        &cfg.refinement,
    )?;
    lap("refinement loop", &mut clock);

    let p0 = &prepared[0];
    let labels = &looped.segmentation.reference_labels;
    let pixels = p0.raw.pixels.as_ref().expect("backprojected clouds carry pixels");
    let object_pixels: Vec<u32> = (0..p0.raw.len())
        .filter(|&k| labels[p0.fine_to_coarse[p0.raw_to_fine[k]]])
        .map(|k| pixels[k])
        .collect();

    let diagnostics = Diagnostics {
        hand_centroids: centroids,
        trajectory: fit.summary(),
        initial: StageEstimate {
            joint: init_joint,
            motions: init_motions,
        },
        alignment: StageEstimate {
            joint: aligned.joint,
            motions: aligned.motions,
        },
        alignment_cost: aligned.final_cost,
        alignment_iterations: aligned.iterations,
        first_segmentation_points: first_points,
        refinement_costs: looped.rounds.iter().map(|r| r.cost).collect(),
        refinement_iterations: looped.rounds.iter().map(|r| r.iterations.clone()).collect(),
        cloud_sizes: fine.iter().map(FrameCloud::len).collect(),
        candidates: looped.segmentation.candidates.len(),
        object_points: looped.segmentation.object_indices.len(),
    };
    Ok(PipelineOutput {
        joint: looped.joint,
        motions: looped.motions,
        motion_range: looped.motion_range,
        frames,
        object_pixels,
        segmentation: looped.segmentation,
        reference_cloud: coarse[0].clone(),
        diagnostics,
    })
}

/// Per-stage costs and counts kept in the result file; iteration records
/// go to the separate diagnostics dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub trajectory: FitSummary,
    pub initial: StageEstimate,
    pub alignment: StageEstimate,
    pub alignment_cost: f64,
    pub alignment_iterations: usize,
    pub first_segmentation_points: usize,
    pub refinement_costs: Vec<f64>,
    pub candidates: usize,
    pub object_points: usize,
}

/// The result file written by `estimate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub joint: JointModel,
    pub motions: MotionSequence,
    pub motion_range: [f64; 2],
    /// Original indices of the frames the motions refer to.
    pub frames: Vec<usize>,
    pub reference_frame: usize,
    /// Paths relative to the result file.
    pub segmentation_ply: String,
    pub labels: String,
    pub diagnostics: DiagnosticsSummary,
}

/// Frame-0 object pixels, written as `labels.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    pub object_pixels: Vec<u32>,
}

pub const RESULT_FILE: &str = "result.json";
pub const SEGMENTATION_FILE: &str = "segmentation.ply";
pub const LABELS_FILE: &str = "labels.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

impl ResultFile {
    pub fn new(out: &PipelineOutput) -> Self {
        let d = &out.diagnostics;
        ResultFile {
            joint: out.joint,
            motions: out.motions.clone(),
            motion_range: out.motion_range,
            frames: out.frames.clone(),
            reference_frame: out.reference_frame(),
            segmentation_ply: SEGMENTATION_FILE.into(),
            labels: LABELS_FILE.into(),
            diagnostics: DiagnosticsSummary {
                trajectory: d.trajectory.clone(),
                initial: d.initial.clone(),
                alignment: d.alignment.clone(),
                alignment_cost: d.alignment_cost,
                alignment_iterations: d.alignment_iterations.len(),
                first_segmentation_points: d.first_segmentation_points,
                refinement_costs: d.refinement_costs.clone(),
                candidates: d.candidates,
                object_points: d.object_points,
            },
        }
    }
}

/// The segmented object as a PLY cloud with cluster ids and confidence
/// (1 confident, 0 ambiguous).
pub fn segmentation_ply(seg: &SegmentationResult) -> PlyCloud {
    PlyCloud {
        points: seg.object_cloud.points.clone(),
        normals: seg.object_cloud.normals.clone(),
        cluster_ids: Some(seg.cluster_ids.iter().map(|&c| c as i32).collect()),
        confidence: Some(
            seg.confidence_flags
                .iter()
                .map(|c| i32::from(*c == Confidence::Confident))
                .collect(),
        ),
    }
}

/// Writes `result.json`, `segmentation.ply`, `labels.json` and, when asked,
/// `diagnostics.json` into `dir`.
pub fn write_outputs(dir: &Path, seq: &SequenceInput, out: &PipelineOutput, dump_diagnostics: bool) -> Result<()> {
    crate::io::create_dir(dir)?;
    write_ply(&dir.join(SEGMENTATION_FILE), &segmentation_ply(&out.segmentation))?;
    write_json(
        &dir.join(LABELS_FILE),
        &LabelsFile {
            frame: out.reference_frame(),
            width: seq.intrinsics.width,
            height: seq.intrinsics.height,
            object_pixels: out.object_pixels.clone(),
        },
    )?;
    if dump_diagnostics {
        write_json(&dir.join(DIAGNOSTICS_FILE), &out.diagnostics)?;
    }
    write_json(&dir.join(RESULT_FILE), &ResultFile::new(out))
}
