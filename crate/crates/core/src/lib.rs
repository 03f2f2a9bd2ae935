//! Estimating 1-DoF articulations (drawers, doors) from a depth sequence of
//! a hand operating the object.
//!
//! The pipeline classifies the joint from the hand trajectory, registers all
//! frames under the joint constraint, segments the moving part by its
//! symmetric alignment error and refines the joint on the segmented points
//! with the hand as a soft constraint.
//!
//! ```no_run
//! use articulation::{io::load_sequence, pipeline};
//!
//! let seq = load_sequence("capture".as_ref())?;
//! let out = pipeline::run(&seq, &pipeline::PipelineConfig::default())?;
//! println!("{:?} {:?}", out.joint, out.motion_range);
//! # Ok::<(), articulation::Error>(())
//! ```
//!
//! Conventions: `T(J, m_i)` maps points of frame `i` into frame 0, so
//! `m_0 = 0` and a physical displacement `s` appears as `m = -s`.

pub mod alignment;
pub mod error;
pub mod ingest;
pub mod io;
pub mod joint;
pub mod kdtree;
pub mod pipeline;
pub mod ply;
pub mod refinement;
pub mod segmentation;
pub mod solver;
pub mod synth;
mod lm;
pub mod trajectory;

pub use error::{Error, Result};
pub use joint::{JointKind, JointModel, MotionSequence, RigidTransform};
