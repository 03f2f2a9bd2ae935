//! Joint parameterizations and the rigid transforms they induce.
//!
//! A prismatic joint is a unit direction `t`; motion `a` (meters) translates by
//! `a·t`. A revolute joint is a unit axis direction `n` through a point `l`
//! with `n·l = 0`; motion `θ` (radians) rotates about that line.
//!
//! Sign convention: `joint.transform(m_i)` maps frame-`i` points into the
//! frame-0 configuration, so the physical displacement of the object at frame
//! `i` is `-m_i`, and `m_0 = 0` always.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Inputs whose norm is within this distance of one are renormalized,
/// anything further away is rejected.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Prismatic,
    Revolute,
}

impl std::fmt::Display for JointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            JointKind::Prismatic => f.write_str("prismatic"),
            JointKind::Revolute => f.write_str("revolute"),
        }
    }
}

/// The articulation parameter block. Construct through [`JointModel::prismatic`]
/// or [`JointModel::revolute`], which enforce the unit-norm and `n·l = 0`
/// invariants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointRepr", into = "JointRepr")]
pub enum JointModel {
    Prismatic { direction: Vec3 },
    Revolute { axis_direction: Vec3, axis_point: Vec3 },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum JointRepr {
    Prismatic {
        direction: [f64; 3],
    },
    Revolute {
        axis_direction: [f64; 3],
        axis_point: [f64; 3],
    },
}

impl TryFrom<JointRepr> for JointModel {
    type Error = Error;

    fn try_from(repr: JointRepr) -> Result<Self> {
        match repr {
            JointRepr::Prismatic { direction } => JointModel::prismatic(Vec3::from(direction)),
            JointRepr::Revolute {
                axis_direction,
                axis_point,
            } => JointModel::revolute(Vec3::from(axis_direction), Vec3::from(axis_point)),
        }
    }
}

impl From<JointModel> for JointRepr {
    fn from(joint: JointModel) -> Self {
        match joint {
            JointModel::Prismatic { direction } => JointRepr::Prismatic {
                direction: direction.into(),
            },
            JointModel::Revolute {
                axis_direction,
                axis_point,
            } => JointRepr::Revolute {
                axis_direction: axis_direction.into(),
                axis_point: axis_point.into(),
            },
        }
    }
}

impl JointModel {
    pub fn prismatic(direction: Vec3) -> Result<Self> {
        Ok(JointModel::Prismatic {
            direction: checked_unit(direction, "prismatic direction")?,
        })
    }

    /// Builds a revolute joint. The axis point must already be orthogonal to
    /// the axis (within [`UNIT_TOLERANCE`]); use [`axis_point_from_circle`] or
    /// [`JointModel::revolute_through`] for an arbitrary point on the axis.
    pub fn revolute(axis_direction: Vec3, axis_point: Vec3) -> Result<Self> {
        let n = checked_unit(axis_direction, "revolute axis direction")?;
        let along = n.dot(&axis_point);
        if !along.is_finite() || along.abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "revolute axis point must satisfy n·l = 0 (got {along:e})"
            )));
        }
        Ok(JointModel::Revolute {
            axis_direction: n,
            axis_point: axis_point - along * n,
        })
    }

    /// Revolute joint whose axis passes through an arbitrary point.
    pub fn revolute_through(axis_direction: Vec3, point_on_axis: Vec3) -> Result<Self> {
        let n = checked_unit(axis_direction, "revolute axis direction")?;
        JointModel::revolute(n, axis_point_from_circle(point_on_axis, n))
    }

    pub fn kind(&self) -> JointKind {
        match self {
            JointModel::Prismatic { .. } => JointKind::Prismatic,
            JointModel::Revolute { .. } => JointKind::Revolute,
        }
    }

    /// `t` for prismatic joints, `n` for revolute joints.
    pub fn direction(&self) -> Vec3 {
        match *self {
            JointModel::Prismatic { direction } => direction,
            JointModel::Revolute { axis_direction, .. } => axis_direction,
        }
    }

    pub fn axis_point(&self) -> Option<Vec3> {
        match *self {
            JointModel::Prismatic { .. } => None,
            JointModel::Revolute { axis_point, .. } => Some(axis_point),
        }
    }

    /// Same physical joint with the direction negated. Motions expressed in
    /// the flipped joint change sign.
    pub fn flipped(&self) -> Self {
        match *self {
            JointModel::Prismatic { direction } => JointModel::Prismatic {
                direction: -direction,
            },
            JointModel::Revolute {
                axis_direction,
                axis_point,
            } => JointModel::Revolute {
                axis_direction: -axis_direction,
                axis_point,
            },
        }
    }

    /// The rigid transform for motion amount `m` (meters or radians).
    pub fn transform(&self, m: f64) -> RigidTransform {
        match *self {
            JointModel::Prismatic { direction } => RigidTransform {
                rotation: Mat3::identity(),
                translation: direction * m,
            },
            JointModel::Revolute {
                axis_direction,
                axis_point,
            } => {
                let rotation = rotation_about(m, &axis_direction);
                RigidTransform {
                    rotation,
                    translation: axis_point - rotation * axis_point,
                }
            }
        }
    }
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Largest absolute entry difference of the 3×4 matrices.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }
}

/// Per-frame motion amounts. `m[0]` is pinned to exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MotionSequence(Vec<f64>);

impl MotionSequence {
    pub fn new(amounts: Vec<f64>) -> Result<Self> {
        match amounts.first() {
            None => Err(Error::InvalidParameter("motion sequence is empty".into())),
            Some(&m0) if m0 != 0.0 => Err(Error::InvalidParameter(format!(
                "motion of the reference frame must be 0, got {m0}"
            ))),
            _ if amounts.iter().any(|m| !m.is_finite()) => Err(Error::InvalidParameter(
                "motion sequence contains non-finite values".into(),
            )),
            _ => Ok(MotionSequence(amounts)),
        }
    }

    /// Sequence `[0, rest...]`.
    pub fn from_tail(rest: &[f64]) -> Self {
        let mut v = Vec::with_capacity(rest.len() + 1);
        v.push(0.0);
        v.extend_from_slice(rest);
        MotionSequence(v)
    }

    pub fn zeros(len: usize) -> Self {
        MotionSequence(vec![0.0; len.max(1)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        MotionSequence(self.0.iter().map(|m| if *m == 0.0 { 0.0 } else { -m }).collect())
    }

    /// Observed physical displacement interval `[min(-m), max(-m)]`.
    pub fn range(&self) -> [f64; 2] {
        let lo = self.0.iter().map(|m| -m).fold(f64::INFINITY, f64::min);
        let hi = self.0.iter().map(|m| -m).fold(f64::NEG_INFINITY, f64::max);
        [lo + 0.0, hi + 0.0]
    }
}

impl std::ops::Index<usize> for MotionSequence {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for MotionSequence {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MotionSequence::new(v)
    }
}

impl From<MotionSequence> for Vec<f64> {
    fn from(m: MotionSequence) -> Self {
        m.0
    }
}

/// Canonical sign for a joint and its motions: the direction is chosen so
/// that the motions sum to a non-positive value.
pub fn canonicalize(joint: JointModel, motions: MotionSequence) -> (JointModel, MotionSequence) {
    let sum: f64 = motions.as_slice().iter().sum();
    if sum > 0.0 {
        (joint.flipped(), motions.negated())
    } else {
        (joint, motions)
    }
}

pub(crate) fn checked_unit(v: Vec3, what: &str) -> Result<Vec3> {
    let norm = v.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "{what} must be a unit vector (norm {norm})"
        )));
    }
    Ok(v / norm)
}

/// Translation by `a·t`.
pub fn prismatic_transform(direction: &Vec3, a: f64) -> Result<RigidTransform> {
    let t = checked_unit(*direction, "prismatic direction")?;
    Ok(JointModel::Prismatic { direction: t }.transform(a))
}

/// Rotation matrix `cosθ·I + (1−cosθ)·nnᵀ + sinθ·[n]ₓ`.
pub fn rodrigues(theta: f64, axis: &Vec3) -> Result<Mat3> {
    let n = checked_unit(*axis, "rotation axis")?;
    Ok(rotation_about(theta, &n))
}

/// Rotation by `theta` about the line `{l + s·n}`.
pub fn revolute_transform(axis: &Vec3, axis_point: &Vec3, theta: f64) -> Result<RigidTransform> {
    Ok(JointModel::revolute(*axis, *axis_point)?.transform(theta))
}

/// Foot of the perpendicular from the origin onto the axis through `c`:
/// `l = c − (c·n)n`.
pub fn axis_point_from_circle(center: Vec3, axis: Vec3) -> Vec3 {
    center - center.dot(&axis) * axis
}

/// Unchecked Rodrigues formula; `n` must be unit length.
#[inline]
pub(crate) fn rotation_about(theta: f64, n: &Vec3) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::identity() * c + (n * n.transpose()) * (1.0 - c) + skew(n) * s
}

#[inline]
pub(crate) fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Deterministic orthonormal basis of the plane orthogonal to unit `v`.
pub(crate) fn tangent_basis(v: &Vec3) -> (Vec3, Vec3) {
    let helper = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let a = v.cross(&helper).normalize();
    let b = v.cross(&a);
    (a, b)
}

/// Angle between two lines through the origin, in radians, in `[0, π/2]`.
pub fn undirected_angle(a: &Vec3, b: &Vec3) -> f64 {
    // acos loses precision near 1, atan2 of cross/dot does not
    a.cross(b).norm().atan2(a.dot(b).abs())
}

/// Angle between two directions in `[0, π]`.
pub fn directed_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}
