use serde::{Deserialize, Serialize};

use crate::joint::{rotation_about, Mat3, RigidTransform, Vec3};

/// Analytic primitive in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// Oriented box; `rotation` is an axis-angle vector (radians).
    Box {
        center: Vec3,
        #[serde(default = "Vec3::zeros")]
        rotation: Vec3,
        half_extents: Vec3,
    },
    /// Parallelogram `center + a·u + b·v` with `|a|, |b| ≤ 1`.
    Rect { center: Vec3, u: Vec3, v: Vec3 },
    Disk { center: Vec3, normal: Vec3, radius: f64 },
}

impl Shape {
    pub fn is_valid(&self) -> bool {
        match self {
            Shape::Box { half_extents, .. } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Rect { u, v, .. } => u.cross(v).norm() > 0.0,
            Shape::Disk { normal, radius, .. } => normal.norm() > 0.0 && *radius > 0.0,
        }
    }

    pub(crate) fn box_rotation(rotation: &Vec3) -> Mat3 {
        match rotation.try_normalize(1e-15) {
            Some(axis) => rotation_about(rotation.norm(), &axis),
            None => Mat3::identity(),
        }
    }

    /// Ray parameter of the first hit in front of the origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match self {
            Shape::Box {
                center,
                rotation,
                half_extents,
            } => {
                let rt = Self::box_rotation(rotation).transpose();
                let o = rt * (origin - center);
                let d = rt * dir;
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k].abs() > half_extents[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[k] - o[k]) / d[k];
                    let b = (half_extents[k] - o[k]) / d[k];
                    t_near = t_near.max(a.min(b));
                    t_far = t_far.min(a.max(b));
                }
                if t_near > t_far || t_far < EPS {
                    None
                } else if t_near > EPS {
                    Some(t_near)
                } else {
                    Some(t_far)
                }
            }
            Shape::Rect { center, u, v } => {
                let n = u.cross(v);
                let t = plane_hit(origin, dir, center, &n)?;
                let rel = origin + dir * t - center;
                let a = rel.dot(u) / u.norm_squared();
                let b = rel.dot(v) / v.norm_squared();
                (a.abs() <= 1.0 && b.abs() <= 1.0).then_some(t)
            }
            Shape::Disk { center, normal, radius } => {
                let t = plane_hit(origin, dir, center, normal)?;
                ((origin + dir * t - center).norm() <= *radius).then_some(t)
            }
        }
    }

    /// The shape moved by a rigid transform.
    pub fn transformed(&self, tr: &RigidTransform) -> Shape {
        match self {
            Shape::Box {
                center,
                rotation,
                half_extents,
            } => {
                let r = tr.rotation * Self::box_rotation(rotation);
                let aa = nalgebra::Rotation3::from_matrix_unchecked(r).scaled_axis();
                Shape::Box {
                    center: tr.apply(center),
                    rotation: aa,
                    half_extents: *half_extents,
                }
            }
            Shape::Rect { center, u, v } => Shape::Rect {
                center: tr.apply(center),
                u: tr.apply_vector(u),
                v: tr.apply_vector(v),
            },
            Shape::Disk { center, normal, radius } => Shape::Disk {
                center: tr.apply(center),
                normal: tr.apply_vector(normal),
                radius: *radius,
            },
        }
    }
}

fn plane_hit(origin: &Vec3, dir: &Vec3, point: &Vec3, normal: &Vec3) -> Option<f64> {
    let denom = dir.dot(normal);
    if denom.abs() < 1e-15 {
        return None;
    }
    let t = (point - origin).dot(normal) / denom;
    (t > 1e-9).then_some(t)
}
