//! Joint-constrained registration objective and its minimizer.
//!
//! Every residual has the form `|T(m_a)·p − T(m_b)·q|`, scaled by a weight and
//! smoothed as `w·sqrt(r² + δ²)`. Constrained ICP and segmented refinement
//! differ only in which terms they feed in.
//!
//! Parameters are updated through a local increment: two tangent components
//! for each unit vector, two in-plane components for the revolute axis point,
//! and one per motion amount except `m_0`, which stays pinned at zero.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{tangent_basis, JointModel, MotionSequence, RigidTransform, Vec3};
use crate::kdtree::KdTree;

/// Smoothing of the unsquared residual norm, meters.
pub const SMOOTHING: f64 = 1e-6;

const CHUNK: usize = 1024;
const UNMATCHED: u32 = u32::MAX;

/// Joint parameters together with per-frame motion amounts.
#[derive(Clone, Debug, PartialEq)]
pub struct ArticulationState {
    pub joint: JointModel,
    pub motions: MotionSequence,
}

impl ArticulationState {
    pub fn new(joint: JointModel, motions: MotionSequence) -> Self {
        ArticulationState { joint, motions }
    }

    pub fn joint_dof(&self) -> usize {
        match self.joint {
            JointModel::Prismatic { .. } => 2,
            JointModel::Revolute { .. } => 4,
        }
    }

    /// Size of the local increment.
    pub fn dof(&self) -> usize {
        self.joint_dof() + self.motions.len() - 1
    }

    pub fn transforms(&self) -> Vec<RigidTransform> {
        self.motions.as_slice().iter().map(|&m| self.joint.transform(m)).collect()
    }

    /// Applies a local increment of length [`dof`](Self::dof).
    pub fn retract(&self, delta: &[f64]) -> ArticulationState {
        assert_eq!(delta.len(), self.dof(), "increment size");
        let jd = self.joint_dof();
        let joint = match self.joint {
            JointModel::Prismatic { direction } => {
                let (u, w) = tangent_basis(&direction);
                JointModel::Prismatic {
                    direction: (direction + u * delta[0] + w * delta[1]).normalize(),
                }
            }
            JointModel::Revolute {
                axis_direction: n,
                axis_point: l,
            } => {
                let (u, w) = tangent_basis(&n);
                let n2 = (n + u * delta[0] + w * delta[1]).normalize();
                let l2 = l + u * delta[2] + w * delta[3];
                JointModel::Revolute {
                    axis_direction: n2,
                    axis_point: l2 - l2.dot(&n2) * n2,
                }
            }
        };
        let tail: Vec<f64> = self.motions.as_slice()[1..]
            .iter()
            .zip(&delta[jd..])
            .map(|(m, d)| m + d)
            .collect();
        ArticulationState {
            joint,
            motions: MotionSequence::from_tail(&tail),
        }
    }

    /// Largest absolute change of any parameter component.
    pub fn distance(&self, other: &ArticulationState) -> f64 {
        let joint = match (self.joint, other.joint) {
            (JointModel::Prismatic { direction: a }, JointModel::Prismatic { direction: b }) => (a - b).abs().max(),
            (
                JointModel::Revolute {
                    axis_direction: a,
                    axis_point: p,
                },
                JointModel::Revolute {
                    axis_direction: b,
                    axis_point: q,
                },
            ) => (a - b).abs().max().max((p - q).abs().max()),
            _ => f64::INFINITY,
        };
        self.motions
            .as_slice()
            .iter()
            .zip(other.motions.as_slice())
            .fold(joint, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// One weighted residual `|T(m_a)·p − T(m_b)·q|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub frame_a: usize,
    pub p: Vec3,
    pub frame_b: usize,
    pub q: Vec3,
    pub weight: f64,
}

/// Per-frame quantities needed for the Jacobian.
struct Linearization {
    joint: JointModel,
    basis: (Vec3, Vec3),
    transforms: Vec<RigidTransform>,
    sin_cos: Vec<(f64, f64)>,
    motions: Vec<f64>,
    joint_dof: usize,
}

impl Linearization {
    fn new(state: &ArticulationState) -> Self {
        Linearization {
            joint: state.joint,
            basis: tangent_basis(&state.joint.direction()),
            transforms: state.transforms(),
            sin_cos: state.motions.as_slice().iter().map(|m| m.sin_cos()).collect(),
            motions: state.motions.as_slice().to_vec(),
            joint_dof: state.joint_dof(),
        }
    }

    /// `T(m_f)·x`, its derivatives with respect to the joint increment, and
    /// its derivative with respect to `m_f`.
    #[inline]
    fn point(&self, f: usize, x: &Vec3) -> (Vec3, [Vec3; 4], Vec3) {
        let tr = &self.transforms[f];
        let y = tr.apply(x);
        let (u, w) = self.basis;
        match self.joint {
            JointModel::Prismatic { direction } => {
                let m = self.motions[f];
                (y, [u * m, w * m, Vec3::zeros(), Vec3::zeros()], direction)
            }
            JointModel::Revolute {
                axis_direction: n,
                axis_point: l,
            } => {
                let v = x - l;
                let rv = tr.rotation * v;
                let (s, c) = self.sin_cos[f];
                let nv = n.dot(&v);
                let d_dir = |t: Vec3| (t * nv + n * t.dot(&v)) * (1.0 - c) + t.cross(&v) * s;
                let d_pt = |t: Vec3| t - tr.rotation * t;
                (y, [d_dir(u), d_dir(w), d_pt(u), d_pt(w)], n.cross(&rv))
            }
        }
    }

    /// Residual and its nonzero Jacobian columns as `(column, ∂r)`.
    #[inline]
    fn term(&self, a: usize, p: &Vec3, b: usize, q: &Vec3, cols: &mut Vec<(usize, Vec3)>) -> Vec3 {
        let (ya, ja, ma) = self.point(a, p);
        let (yb, jb, mb) = self.point(b, q);
        cols.clear();
        for k in 0..self.joint_dof {
            cols.push((k, ja[k] - jb[k]));
        }
        let col_of = |f: usize| self.joint_dof + f - 1;
        if a == b {
            if a > 0 {
                cols.push((col_of(a), ma - mb));
            }
        } else {
            if a > 0 {
                cols.push((col_of(a), ma));
            }
            if b > 0 {
                cols.push((col_of(b), -mb));
            }
        }
        ya - yb
    }
}

/// Residual vector and dense `3 × dof` Jacobian of one term at `state`.
pub fn term_jacobian(state: &ArticulationState, term: &Term) -> (Vec3, DMatrix<f64>) {
    let lin = Linearization::new(state);
    let mut cols = Vec::new();
    let r = lin.term(term.frame_a, &term.p, term.frame_b, &term.q, &mut cols);
    let mut jac = DMatrix::zeros(3, state.dof());
    for (c, v) in cols {
        for row in 0..3 {
            jac[(row, c)] += v[row];
        }
    }
    (r, jac)
}

/// Smoothed cost of one residual.
#[inline]
pub fn smoothed_norm(r2: f64) -> f64 {
    (r2 + SMOOTHING * SMOOTHING).sqrt()
}

/// Correspondences between a source frame and a target frame that are
/// re-established by nearest-neighbor search.
pub(crate) struct Matching<'a> {
    pub source_frame: usize,
    pub source: &'a [Vec3],
    pub source_weights: Vec<f64>,
    pub target_frame: usize,
    pub target: &'a [Vec3],
    pub target_weights: &'a [f64],
    /// Upper bound of `target_weights`, used for the cost of unmatched points.
    pub target_weight_max: f64,
    pub tree: &'a KdTree,
}

pub(crate) struct Problem<'a> {
    pub matchings: Vec<Matching<'a>>,
    pub fixed: Vec<Term>,
    pub max_corr_dist: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SolverSettings {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub param_tol: f64,
    pub cost_tol: f64,
}

/// One outer iteration: cost with the iteration's correspondences before and
/// after the parameter update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost_before: f64,
    pub cost: f64,
    pub num_correspondences: usize,
    pub joint: JointModel,
    pub motions: MotionSequence,
}

pub(crate) struct Solution {
    pub state: ArticulationState,
    pub cost: f64,
    pub iterations: Vec<IterationRecord>,
}

/// Relative transform `T_b⁻¹·T_a`, so that `|T_a·p − T_b·q| = |T_ab·p − q|`.
fn relative(transforms: &[RigidTransform], a: usize, b: usize) -> RigidTransform {
    transforms[b].inverse().compose(&transforms[a])
}

impl Problem<'_> {
    /// Cost charged for a source point without a partner: never less than
    /// the cost of any pair within `max_corr_dist`.
    fn unmatched_cost(&self, m: &Matching, k: usize) -> f64 {
        m.source_weights[k] * m.target_weight_max * smoothed_norm(self.max_corr_dist * self.max_corr_dist)
    }

    fn chunks(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        for (mi, m) in self.matchings.iter().enumerate() {
            let n = m.source.len();
            out.extend((0..n).step_by(CHUNK).map(|s| (mi, s..(s + CHUNK).min(n))));
        }
        out
    }

    fn cost(&self, state: &ArticulationState, assign: &[Vec<u32>]) -> f64 {
        let transforms = state.transforms();
        let rel: Vec<RigidTransform> = self
            .matchings
            .iter()
            .map(|m| relative(&transforms, m.source_frame, m.target_frame))
            .collect();
        let partial: Vec<f64> = self
            .chunks()
            .into_par_iter()
            .map(|(mi, range)| {
                let m = &self.matchings[mi];
                let mut s = 0.0;
                for k in range {
                    let t = assign[mi][k];
                    s += if t == UNMATCHED {
                        self.unmatched_cost(m, k)
                    } else {
                        let t = t as usize;
                        let r2 = (rel[mi].apply(&m.source[k]) - m.target[t]).norm_squared();
                        m.source_weights[k] * m.target_weights[t] * smoothed_norm(r2)
                    };
                }
                s
            })
            .collect();
        let mut total: f64 = partial.iter().sum();
        for t in &self.fixed {
            let r2 = (relative(&transforms, t.frame_a, t.frame_b).apply(&t.p) - t.q).norm_squared();
            total += t.weight * smoothed_norm(r2);
        }
        total
    }

    /// Nearest neighbors within `max_corr_dist`; with `previous`, a point keeps
    /// its old partner (or stays unmatched) whenever that is cheaper.
    fn correspond(&self, state: &ArticulationState, previous: Option<&[Vec<u32>]>) -> Vec<Vec<u32>> {
        let transforms = state.transforms();
        let d2max = self.max_corr_dist * self.max_corr_dist;
        self.matchings
            .iter()
            .enumerate()
            .map(|(mi, m)| {
                let rel = relative(&transforms, m.source_frame, m.target_frame);
                let pair_cost = |k: usize, t: usize| {
                    let r2 = (rel.apply(&m.source[k]) - m.target[t]).norm_squared();
                    m.source_weights[k] * m.target_weights[t] * smoothed_norm(r2)
                };
                (0..m.source.len())
                    .into_par_iter()
                    .with_min_len(CHUNK)
                    .map(|k| {
                        let nearest = m
                            .tree
                            .nearest_within(&rel.apply(&m.source[k]), d2max)
                            .map(|(t, _)| t as u32)
                            .unwrap_or(UNMATCHED);
                        let Some(prev) = previous else {
                            return nearest;
                        };
                        let cost_of = |t: u32| {
                            if t == UNMATCHED {
                                self.unmatched_cost(m, k)
                            } else {
                                pair_cost(k, t as usize)
                            }
                        };
                        let old = prev[mi][k];
                        if old != nearest && cost_of(old) < cost_of(nearest) {
                            old
                        } else {
                            nearest
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Gauss-Newton system of the reweighted problem.
    fn normal_equations(&self, state: &ArticulationState, assign: &[Vec<u32>]) -> (DMatrix<f64>, DVector<f64>) {
        let lin = Linearization::new(state);
        let dof = state.dof();
        let accumulate = |h: &mut DMatrix<f64>, g: &mut DVector<f64>, cols: &mut Vec<(usize, Vec3)>, a, p, b, q, w: f64| {
            let r = lin.term(a, p, b, q, cols);
            let omega = w / smoothed_norm(r.norm_squared());
            for (i, &(ci, vi)) in cols.iter().enumerate() {
                g[ci] += omega * vi.dot(&r);
                for &(cj, vj) in &cols[i..] {
                    let v = omega * vi.dot(&vj);
                    h[(ci, cj)] += v;
                    if ci != cj {
                        h[(cj, ci)] += v;
                    }
                }
            }
        };
        let partial: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .chunks()
            .into_par_iter()
            .map(|(mi, range)| {
                let m = &self.matchings[mi];
                let mut h = DMatrix::zeros(dof, dof);
                let mut g = DVector::zeros(dof);
                let mut cols = Vec::with_capacity(6);
                for k in range {
                    let t = assign[mi][k];
                    if t != UNMATCHED {
                        let t = t as usize;
                        let w = m.source_weights[k] * m.target_weights[t];
                        accumulate(&mut h, &mut g, &mut cols, m.source_frame, &m.source[k], m.target_frame, &m.target[t], w);
                    }
                }
                (h, g)
            })
            .collect();
        let mut h = DMatrix::zeros(dof, dof);
        let mut g = DVector::zeros(dof);
        for (ph, pg) in &partial {
            h += ph;
            g += pg;
        }
        let mut cols = Vec::with_capacity(6);
        for t in &self.fixed {
            accumulate(&mut h, &mut g, &mut cols, t.frame_a, &t.p, t.frame_b, &t.q, t.weight);
        }
        (h, g)
    }

    /// Damped IRLS on fixed correspondences. Only steps that lower the cost
    /// are taken.
    fn inner_solve(
        &self,
        start: ArticulationState,
        start_cost: f64,
        assign: &[Vec<u32>],
        settings: &SolverSettings,
    ) -> (ArticulationState, f64) {
        let mut state = start;
        let mut cost = start_cost;
        let mut mu = 1e-4;
        for _ in 0..settings.inner_iterations {
            let (h, g) = self.normal_equations(&state, assign);
            let scale = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1e-300);
            let mut accepted = None;
            for _ in 0..16 {
                let mut a = h.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += mu * h[(i, i)].max(1e-9 * scale);
                }
                let Some(chol) = a.cholesky() else {
                    mu *= 10.0;
                    continue;
                };
                let delta = chol.solve(&(-&g));
                let candidate = state.retract(delta.as_slice());
                let c = self.cost(&candidate, assign);
                if c < cost {
                    accepted = Some((candidate, c, delta.amax()));
                    mu = (mu / 3.0).max(1e-10);
                    break;
                }
                mu *= 10.0;
            }
            let Some((candidate, c, step)) = accepted else {
                break;
            };
            let rel = (cost - c) / cost;
            state = candidate;
            cost = c;
            if step < settings.param_tol || rel < settings.cost_tol {
                break;
            }
        }
        (state, cost)
    }

    /// Alternates correspondence search and parameter updates. The sequence
    /// of recorded costs never increases.
    pub fn solve(&self, init: ArticulationState, settings: &SolverSettings) -> Result<Solution> {
        let mut state = init;
        let mut assign = self.correspond(&state, None);
        let mut cost = self.cost(&state, &assign);
        let mut iterations = Vec::new();
        for iter in 0..settings.outer_iterations {
            let matched: usize = assign.iter().map(|a| a.iter().filter(|&&t| t != UNMATCHED).count()).sum();
            if matched < 10 {
                return Err(Error::DegenerateGeometry(format!(
                    "only {matched} correspondences within {} m",
                    self.max_corr_dist
                )));
            }
            let (next, next_cost) = self.inner_solve(state.clone(), cost, &assign, settings);
            iterations.push(IterationRecord {
                iter,
                cost_before: cost,
                cost: next_cost,
                num_correspondences: matched,
                joint: next.joint,
                motions: next.motions.clone(),
            });
            let change = state.distance(&next);
            let next_assign = self.correspond(&next, Some(&assign));
            let updated_cost = self.cost(&next, &next_assign);
            let rel = (cost - updated_cost) / cost;
            state = next;
            assign = next_assign;
            cost = updated_cost;
            if change < settings.param_tol || rel < settings.cost_tol {
                break;
            }
        }
        Ok(Solution {
            state,
            cost,
            iterations,
        })
    }
}
