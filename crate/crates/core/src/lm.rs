//! Dense Levenberg-Marquardt for small problems on a manifold.
//!
//! Parameters live in whatever representation the problem likes; the solver
//! only sees local increments through [`LeastSquares::retract`].

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares: Sized {
    /// Dimension of the local increment.
    fn dof(&self) -> usize;

    fn residuals(&self) -> DVector<f64>;

    fn retract(&self, delta: &DVector<f64>) -> Self;

    /// Jacobian of the residuals with respect to the local increment at zero.
    /// Defaults to central differences.
    fn jacobian(&self) -> DMatrix<f64> {
        let n = self.dof();
        let r0 = self.residuals();
        let mut jac = DMatrix::zeros(r0.len(), n);
        for k in 0..n {
            let h = 1e-7;
            let mut d = DVector::zeros(n);
            d[k] = h;
            let plus = self.retract(&d).residuals();
            d[k] = -h;
            let minus = self.retract(&d).residuals();
            jac.set_column(k, &((plus - minus) / (2.0 * h)));
        }
        jac
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LmSettings {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub cost_tolerance: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings {
            max_iterations: 100,
            step_tolerance: 1e-12,
            cost_tolerance: 1e-15,
        }
    }
}

/// Minimizes `½‖r‖²`. Never returns a state with higher cost than `start`.
pub(crate) fn minimize<P: LeastSquares>(start: P, settings: &LmSettings) -> P {
    let mut state = start;
    let mut r = state.residuals();
    let mut cost = 0.5 * r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..settings.max_iterations {
        if cost == 0.0 {
            break;
        }
        let jac = state.jacobian();
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 10.0;
                continue;
            };
            let candidate = state.retract(&delta);
            let r_new = candidate.residuals();
            let cost_new = 0.5 * r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                let rel = (cost - cost_new) / cost.max(1e-300);
                state = candidate;
                r = r_new;
                cost = cost_new;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if delta.norm() < settings.step_tolerance || rel < settings.cost_tolerance {
                    return state;
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    state
}
