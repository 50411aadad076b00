//! Shrinking-horizon MPC for the vertical COM.
//!
//! Each control cycle re-solves a small QP over the remaining step time:
//! the vertical COM is a double integrator driven by the commanded
//! acceleration, the terminal state is pinned to the desired pre-impact
//! height and vertical velocity (`u_des`), accelerations are bounded below
//! by free fall (`u >= -g`), and the objective is minimum input norm. Only
//! the first input of the sequence is applied.

use crate::qp::{QpProblem, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error("MPC parameter out of range: {0}")]
    InvalidParams(&'static str),
}

/// Tuning knobs for the vertical-COM MPC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcParams {
    /// Number of inputs in the horizon.
    pub horizon: usize,
    /// Shortest horizon the QP is re-solved over, s. With less time left
    /// than this the previous command is held.
    pub min_horizon: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            horizon: 10,
            min_horizon: 0.005,
        }
    }
}

impl MpcParams {
    pub fn validate(&self) -> Result<(), MpcError> {
        if self.horizon == 0 {
            return Err(MpcError::InvalidParams("horizon must be at least 1"));
        }
        if !(self.min_horizon > 0.0) {
            return Err(MpcError::InvalidParams("min_horizon must be positive"));
        }
        Ok(())
    }
}

/// How the returned command was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpcStatus {
    /// QP solved to optimality.
    Optimal,
    /// Exact terminal pair unreachable under the free-fall bound; a
    /// velocity-exact, height-relaxed fallback was used instead.
    Clipped,
    /// Not enough time left; previous command held.
    Held,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// The acceleration to apply this cycle, m/s^2.
    pub u0: f64,
    /// The full planned input sequence.
    pub sequence: Vec<f64>,
    pub status: MpcStatus,
    /// Grid spacing the sequence was planned on, s.
    pub dt: f64,
}

/// Exact zero-order-hold discretization of the double integrator
/// `d/dt [z, dz] = [dz, u]`.
pub fn zoh_discretize(dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    (
        Matrix2::new(1.0, dt, 0.0, 1.0),
        Vector2::new(0.5 * dt * dt, dt),
    )
}

/// Propagates the discretized double integrator one interval.
pub fn propagate(x: Vector2<f64>, u: f64, dt: f64) -> Vector2<f64> {
    let (a, b) = zoh_discretize(dt);
    a * x + b * u
}

/// Stateful controller: keeps the QP solver (for warm starts) and the last
/// command (for the hold near impact).
#[derive(Debug, Clone)]
pub struct VerticalMpc {
    params: MpcParams,
    solver: QpSolver,
    last: Option<f64>,
}

impl VerticalMpc {
    pub fn new(params: MpcParams) -> Result<Self, MpcError> {
        params.validate()?;
        Ok(Self {
            params,
            solver: QpSolver::new(),
            last: None,
        })
    }

    /// Clears warm-start and hold state; call at step transitions.
    pub fn reset(&mut self) {
        self.solver = QpSolver::new();
        self.last = None;
    }

    pub fn params(&self) -> &MpcParams {
        &self.params
    }

    /// Solves for the acceleration command given the current vertical COM
    /// state, the terminal target, and the time remaining in the step.
    pub fn solve(
        &mut self,
        x: Vector2<f64>,
        target: Vector2<f64>,
        t_remaining: f64,
        g: f64,
    ) -> MpcSolution {
        if t_remaining < self.params.min_horizon {
            if let Some(u) = self.last {
                return MpcSolution {
                    u0: u,
                    sequence: vec![u],
                    status: MpcStatus::Held,
                    dt: 0.0,
                };
            }
        }
        let horizon = t_remaining.max(self.params.min_horizon);
        let n = self.params.horizon;
        let sol = self.solve_fixed(x, target, horizon / n as f64, n, g);
        self.last = Some(sol.u0);
        sol
    }

    /// Solves on an explicit grid (`n` intervals of `dt` seconds).
    pub fn solve_fixed(
        &mut self,
        x: Vector2<f64>,
        target: Vector2<f64>,
        dt: f64,
        n: usize,
        g: f64,
    ) -> MpcSolution {
        let (gmat, r) = condense(x, target, dt, n);
        // When the unconstrained min-norm profile already dips below free
        // fall, the bound-feasible optimum (if any) defers the dive to the
        // horizon tail; re-solving every cycle then postpones it forever
        // and the terminal velocity is never built up. Commit to the
        // velocity ramp at once instead of letting the height row stall it.
        if min_norm_profile(&gmat, &r)
            .map(|u| u.iter().any(|&v| v < -g))
            .unwrap_or(true)
        {
            let seq = fallback_sequence(&gmat, &r, dt, n, -g);
            return MpcSolution {
                u0: seq[0],
                sequence: seq,
                status: MpcStatus::Clipped,
                dt,
            };
        }
        let mut p = QpProblem::new(DMatrix::identity(n, n) * 2.0, DVector::zeros(n));
        p.a_eq = gmat.clone();
        p.b_eq = r.clone();
        p.lb = DVector::from_element(n, -g);
        let qp = self
            .solver
            .solve_reusing_last(&p)
            .expect("condensed MPC problem is well formed");
        match qp.status {
            QpStatus::Optimal => MpcSolution {
                u0: qp.x[0],
                sequence: qp.x.iter().copied().collect(),
                status: MpcStatus::Optimal,
                dt,
            },
            QpStatus::Infeasible | QpStatus::IterationLimit => {
                log::warn!("vertical MPC fell back to the relaxed height row ({:?})", qp.status);
                let seq = fallback_sequence(&gmat, &r, dt, n, -g);
                MpcSolution {
                    u0: seq[0],
                    sequence: seq,
                    status: MpcStatus::Clipped,
                    dt,
                }
            }
        }
    }
}

/// Condensed terminal-constraint matrices: `G u = r` maps the input
/// sequence to the terminal-state error. Column `j` is `A^(n-1-j) B`,
/// which for the double integrator is `[dt^2 (n - 1 - j + 1/2), dt]`.
fn condense(x: Vector2<f64>, target: Vector2<f64>, dt: f64, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut gmat = DMatrix::zeros(2, n);
    for j in 0..n {
        let k = (n - 1 - j) as f64;
        gmat[(0, j)] = dt * dt * (k + 0.5);
        gmat[(1, j)] = dt;
    }
    // A^n x = [z + n dt dz, dz].
    let free = Vector2::new(x[0] + n as f64 * dt * x[1], x[1]);
    let r = DVector::from_column_slice(&[target[0] - free[0], target[1] - free[1]]);
    (gmat, r)
}

/// Unconstrained minimum-norm solution `G^T (G G^T)^-1 r` of the terminal
/// boundary pair, or None when the Gram matrix is degenerate.
fn min_norm_profile(gmat: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    let gram = gmat * gmat.transpose();
    nalgebra::Cholesky::new(gram).map(|chol| gmat.transpose() * chol.solve(r))
}

/// With less time than this left, the fallback stops chasing the height
/// row: a height miss at touchdown costs millimetres, the terminal
/// velocity is what the discrete energy regulation rides on, and the
/// constant-mean profile is the one whose applied first input builds it
/// under receding re-solves.  Earlier in the step the height row is kept,
/// which is what carries climbs onto raised stones.
const VELOCITY_COMMIT_HORIZON: f64 = 0.15;

/// Fallback ladder when the exact boundary pair cannot be committed to
/// under the free-fall bound.
fn fallback_sequence(
    gmat: &DMatrix<f64>,
    r: &DVector<f64>,
    dt: f64,
    n: usize,
    u_min: f64,
) -> Vec<f64> {
    if dt * n as f64 >= VELOCITY_COMMIT_HORIZON {
        if let Some(seq) = relaxed_height_fallback(gmat, r, n, u_min) {
            return seq;
        }
    }
    velocity_priority_fallback(r, dt, n, u_min)
}

/// Holds the terminal-velocity row exactly (the discrete energy regulation
/// rides on the pre-impact velocity), tracks the height row in least
/// squares, and tilts the regularizer against late inputs. The tilt
/// matters under receding re-solves: a bound-active exact solve defers its
/// action to the horizon tail, where it is re-deferred every cycle and
/// never applied, while a front-loaded profile puts the recovery into the
/// one input that is. Returns `None` when even the velocity row alone is
/// out of reach (mean demand below free fall).
fn relaxed_height_fallback(
    gmat: &DMatrix<f64>,
    r: &DVector<f64>,
    n: usize,
    u_min: f64,
) -> Option<Vec<f64>> {
    let g0 = gmat.row(0).transpose().into_owned();
    let scale = g0.norm_squared() / n as f64;
    if !(scale > 0.0) {
        return None;
    }
    let lam = 1e-4 * scale;
    let mut h = 2.0 * &g0 * g0.transpose();
    for j in 0..n {
        let w = ((j + 1) as f64 / n as f64).powi(2);
        h[(j, j)] += 2.0 * lam * w;
    }
    let grad = -2.0 * r[0] * g0;
    let mut p = QpProblem::new(h, grad);
    p.a_eq = DMatrix::from_fn(1, n, |_, j| gmat[(1, j)]);
    p.b_eq = DVector::from_element(1, r[1]);
    p.lb = DVector::from_element(n, u_min);
    let sol = QpSolver::new().solve(&p).ok()?;
    if sol.status != QpStatus::Optimal {
        return None;
    }
    // Active bounds satisfy the solver's feasibility tolerance, not exact
    // arithmetic; the free-fall bound is physical, so shave the dust off.
    Some(sol.x.iter().map(|&u| u.max(u_min)).collect())
}

/// Last resort: meet the terminal-velocity row alone in least squares. The
/// min-norm input for that single row is constant, so this reduces to the
/// mean demand clipped at free fall.
fn velocity_priority_fallback(r: &DVector<f64>, dt: f64, n: usize, u_min: f64) -> Vec<f64> {
    let mean = r[1] / (n as f64 * dt);
    vec![mean.max(u_min); n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const G: f64 = 9.81;

    fn mpc() -> VerticalMpc {
        VerticalMpc::new(MpcParams::default()).unwrap()
    }

    #[test]
    fn discretization_matches_integrated_response() {
        // Integrate the double integrator with constant input using many
        // tiny Euler steps and compare against the one-shot hold.
        let dt = 0.07;
        let u = 1.3;
        let x0 = Vector2::new(0.8, -0.2);
        let mut z = x0[0];
        let mut dz = x0[1];
        let steps = 2_000_000;
        let h = dt / steps as f64;
        for _ in 0..steps {
            z += h * dz + 0.5 * h * h * u;
            dz += h * u;
        }
        let x1 = propagate(x0, u, dt);
        assert_abs_diff_eq!(x1[0], z, epsilon = 1e-9);
        assert_abs_diff_eq!(x1[1], dz, epsilon = 1e-9);
    }

    #[test]
    fn sequence_reaches_the_terminal_state_exactly() {
        let mut c = mpc();
        let x0 = Vector2::new(0.68, -0.1);
        let target = Vector2::new(0.72, 0.35);
        let sol = c.solve(x0, target, 0.4, G);
        assert_eq!(sol.status, MpcStatus::Optimal);
        let mut x = x0;
        for &u in &sol.sequence {
            x = propagate(x, u, sol.dt);
        }
        assert_abs_diff_eq!(x[0], target[0], epsilon = 1e-8);
        assert_abs_diff_eq!(x[1], target[1], epsilon = 1e-8);
    }

    #[test]
    fn unconstrained_solution_matches_the_normal_equations() {
        // When the bound is inactive the QP answer is the closed-form
        // minimum-norm solution of the terminal constraint.
        let mut c = mpc();
        let x0 = Vector2::new(0.7, 0.05);
        let target = Vector2::new(0.73, 0.3);
        let t = 0.5;
        let n = 10;
        let dt = t / n as f64;
        let sol = c.solve(x0, target, t, G);
        assert_eq!(sol.status, MpcStatus::Optimal);
        let (gmat, r) = condense(x0, target, dt, n);
        let gram = &gmat * gmat.transpose();
        let oracle = gmat.transpose() * nalgebra::Cholesky::new(gram).unwrap().solve(&r);
        assert!(oracle.iter().all(|&u| u > -G), "bound unexpectedly active");
        for j in 0..n {
            assert_abs_diff_eq!(sol.sequence[j], oracle[j], epsilon = 1e-7);
        }
    }

    #[test]
    fn constant_velocity_target_needs_no_input() {
        let mut c = mpc();
        let x0 = Vector2::new(0.7, 0.12);
        let t = 0.3;
        let target = Vector2::new(0.7 + 0.12 * t, 0.12);
        let sol = c.solve(x0, target, t, G);
        assert_eq!(sol.status, MpcStatus::Optimal);
        for u in sol.sequence {
            assert_abs_diff_eq!(u, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ballistic_target_saturates_at_free_fall() {
        // Terminal state consistent with u = -g throughout: the unique
        // feasible sequence sits on the bound.
        let mut c = mpc();
        let t = 0.4;
        let x0 = Vector2::new(0.8, 0.1);
        let mut x = x0;
        let n = 10;
        let dt = t / n as f64;
        for _ in 0..n {
            x = propagate(x, -G, dt);
        }
        let sol = c.solve(x0, x, t, G);
        for &u in &sol.sequence {
            assert_abs_diff_eq!(u, -G, epsilon = 1e-6);
        }
    }

    #[test]
    fn impossible_target_saturates_the_dive() {
        // Requires a mean acceleration below free fall: the fallback
        // should commit to the maximal dive, not split the miss with the
        // height row.
        let mut c = mpc();
        let t = 0.3;
        let x0 = Vector2::new(0.7, 0.0);
        let target = Vector2::new(0.7, -2.0 * G * t);
        let sol = c.solve(x0, target, t, G);
        assert_eq!(sol.status, MpcStatus::Clipped);
        for &u in &sol.sequence {
            assert_abs_diff_eq!(u, -G, epsilon = 1e-12);
        }
    }

    #[test]
    fn infeasible_height_pair_still_meets_the_velocity_target() {
        // The velocity demand alone fits under the bound, but no input
        // profile meets the height row at the same time. The fallback must
        // deliver the terminal velocity exactly.
        let mut c = mpc();
        let t = 0.2;
        let n = 10;
        let x0 = Vector2::new(0.7, 0.0);
        // Mean demand -0.9 g; pinning the height at its free-drift value
        // forces early positive inputs the bound-capped tail cannot repay.
        let target = Vector2::new(0.7, -0.9 * G * t);
        let sol = c.solve(x0, target, t, G);
        assert_eq!(sol.status, MpcStatus::Clipped);
        let mut x = x0;
        for &u in &sol.sequence {
            x = propagate(x, u, sol.dt);
        }
        assert_abs_diff_eq!(x[1], target[1], epsilon = 1e-9);
        assert!(sol.sequence.iter().all(|&u| u >= -G - 1e-12));
        assert_eq!(sol.sequence.len(), n);
    }

    #[test]
    fn shrinking_horizon_is_consistent_on_the_same_grid() {
        let mut c = mpc();
        let x0 = Vector2::new(0.66, -0.15);
        let target = Vector2::new(0.71, 0.4);
        let dt = 0.04;
        let full = c.solve_fixed(x0, target, dt, 10, G);
        assert_eq!(full.status, MpcStatus::Optimal);
        let x1 = propagate(x0, full.sequence[0], dt);
        let mut c2 = mpc();
        let tail = c2.solve_fixed(x1, target, dt, 9, G);
        assert_eq!(tail.status, MpcStatus::Optimal);
        for j in 0..9 {
            assert_abs_diff_eq!(tail.sequence[j], full.sequence[j + 1], epsilon = 1e-7);
        }
    }

    #[test]
    fn short_remaining_time_holds_the_previous_command() {
        let mut c = mpc();
        let x0 = Vector2::new(0.7, 0.0);
        let target = Vector2::new(0.72, 0.3);
        let first = c.solve(x0, target, 0.2, G);
        let held = c.solve(x0, target, 0.004, G);
        assert_eq!(held.status, MpcStatus::Held);
        assert_eq!(held.u0, first.u0);
        // Without history the floor horizon is solved instead.
        let mut fresh = mpc();
        let sol = fresh.solve(x0, target, 0.001, G);
        assert_ne!(sol.status, MpcStatus::Held);
    }

    #[test]
    fn warm_started_resolves_match_cold_solves() {
        let mut warm = mpc();
        let x0 = Vector2::new(0.7, -0.05);
        let target = Vector2::new(0.72, 0.35);
        for k in 0..40 {
            let t = 0.4 - 0.009 * k as f64;
            let x = Vector2::new(x0[0] - 0.0005 * k as f64, x0[1] + 0.002 * k as f64);
            let w = warm.solve(x, target, t, G);
            let c = mpc().solve(x, target, t, G);
            assert_eq!(w.status, c.status);
            assert_abs_diff_eq!(w.u0, c.u0, epsilon = 1e-9);
        }
    }

    #[test]
    fn params_are_validated() {
        assert!(VerticalMpc::new(MpcParams {
            horizon: 0,
            min_horizon: 0.005
        })
        .is_err());
        assert!(VerticalMpc::new(MpcParams {
            horizon: 10,
            min_horizon: 0.0
        })
        .is_err());
    }
}
