//! Task-space controller: one small QP per control cycle.
//!
//! Decision variables are the generalized accelerations, the four motor
//! torques, and the stance contact force. The full pinned dynamics and the
//! contact acceleration constraint enter as equalities, the friction
//! pyramid and torque limits as inequalities, and the cost penalizes the
//! deviation of the output accelerations `[torso pitch, z_com, x_sw,
//! z_sw]` from their commanded values. The vertical-COM row tracks the MPC
//! acceleration directly; the other rows use PD feedback around the
//! planned trajectories.

use crate::gait::OutputSet;
use crate::model::{
    actuation_matrix, bias_forces, com_jacobian, com_kinematics, contact_jacobian, frame_point,
    idx, mass_matrix, Frame, Jac2x7, RobotModel, RobotState, Vec7,
};
use crate::qp::{QpError, QpProblem, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TscError {
    #[error("controller gain out of range: {0}")]
    InvalidGains(&'static str),
    #[error("controller QP failed: {0}")]
    Qp(#[from] QpError),
    /// No admissible accelerations: the friction cone and torque limits
    /// cannot support the contact constraint at this state.
    #[error("controller QP infeasible")]
    Infeasible,
    /// The solver stopped before reaching a verified optimum, so the
    /// iterate cannot be trusted to respect the torque bounds.
    #[error("controller QP did not converge")]
    IterationLimit,
}

/// PD gains, torque limits, and contact parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerGains {
    /// Proportional gain on output errors, 1/s^2.
    pub kp: f64,
    /// Derivative gain on output-rate errors, 1/s.
    pub kd: f64,
    /// Diagonal output weights in the tracking cost.
    pub weight: Vector4<f64>,
    /// Contact friction coefficient.
    pub mu: f64,
    /// Motor torque bounds, N m.
    pub tau_lb: f64,
    pub tau_ub: f64,
    /// Tikhonov weight keeping the QP strictly convex. The regularizer is
    /// anchored at the exact-tracking solution, so it does not bias the
    /// answer when the commanded accelerations are admissible.
    pub reg: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp: 400.0,
            kd: 40.0,
            weight: Vector4::from_element(1.0),
            mu: 0.8,
            tau_lb: -150.0,
            tau_ub: 150.0,
            reg: 1e-6,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), TscError> {
        if !(self.kp > 0.0 && self.kd > 0.0) {
            return Err(TscError::InvalidGains("kp and kd must be positive"));
        }
        if !self.weight.iter().all(|&w| w >= 0.0) {
            return Err(TscError::InvalidGains("weights must be nonnegative"));
        }
        if !(self.mu > 0.0) {
            return Err(TscError::InvalidGains("mu must be positive"));
        }
        if !(self.tau_lb <= self.tau_ub) {
            return Err(TscError::InvalidGains("tau_lb must not exceed tau_ub"));
        }
        if !(self.reg > 0.0) {
            return Err(TscError::InvalidGains("reg must be positive"));
        }
        Ok(())
    }
}

/// What the controller hands to the simulator each cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    pub tau: SVector<f64, 4>,
    pub ddq: Vec7,
    /// Stance contact force, N.
    pub force: Vector2<f64>,
    pub status: QpStatus,
    /// Achieved minus commanded output accelerations.
    pub tracking_error: Vector4<f64>,
}

/// Friction pyramid rows in `A F <= 0` form: `|F_x| <= mu F_z` and
/// `F_z >= 0`.
pub fn friction_pyramid(mu: f64) -> SMatrix<f64, 3, 2> {
    SMatrix::<f64, 3, 2>::new(1.0, -mu, -1.0, -mu, 0.0, -1.0)
}

/// Solves the square system (9 equality rows + 4 task rows, 13 unknowns)
/// whose solution tracks the commanded accelerations exactly, ignoring
/// torque and friction limits. `None` at rank-deficient configurations.
fn exact_tracking_reference(
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_task: &DMatrix<f64>,
    rhs: &Vector4<f64>,
) -> Option<DVector<f64>> {
    let mut a = DMatrix::zeros(N_VARS, N_VARS);
    let mut b = DVector::zeros(N_VARS);
    for i in 0..9 {
        a.row_mut(i).copy_from(&a_eq.row(i));
        b[i] = b_eq[i];
    }
    for i in 0..4 {
        a.row_mut(9 + i).copy_from(&a_task.row(i));
        b[9 + i] = rhs[i];
    }
    a.lu().solve(&b)
}

/// Measured outputs and their rates at the current state, plus the output
/// Jacobian and drift so callers and the QP use identical kinematics.
pub struct OutputKinematics {
    pub y: Vector4<f64>,
    pub dy: Vector4<f64>,
    pub jac: SMatrix<f64, 4, 7>,
    /// `Jdot_y * dq`.
    pub drift: Vector4<f64>,
}

/// Assembles the output map `[torso pitch, z_com, x_sw, z_sw]`, everything
/// relative to the stance foot.
pub fn output_kinematics(model: &RobotModel, state: &RobotState) -> OutputKinematics {
    let q = &state.q;
    let dq = &state.dq;
    let (j_com, b_com) = com_jacobian(model, q, dq);
    let (j_st, b_st) = contact_jacobian(model, q, dq, Frame::StanceFoot);
    let (j_sw, b_sw) = contact_jacobian(model, q, dq, Frame::SwingFoot);
    let j_com_rel: Jac2x7 = j_com - j_st;
    let j_sw_rel: Jac2x7 = j_sw - j_st;
    let b_com_rel = b_com - b_st;
    let b_sw_rel = b_sw - b_st;

    let mut jac = SMatrix::<f64, 4, 7>::zeros();
    jac[(0, idx::TORSO_PITCH)] = 1.0;
    jac.row_mut(1).copy_from(&j_com_rel.row(1));
    jac.row_mut(2).copy_from(&j_sw_rel.row(0));
    jac.row_mut(3).copy_from(&j_sw_rel.row(1));
    let drift = Vector4::new(0.0, b_com_rel.y, b_sw_rel.x, b_sw_rel.y);

    let k = com_kinematics(model, q, dq);
    let sw = frame_point(model, state, Frame::SwingFoot);
    let y = Vector4::new(q[idx::TORSO_PITCH], k.z_com, sw.position.x, sw.position.y);
    let dy = jac * dq;
    OutputKinematics { y, dy, jac, drift }
}

/// Stateful task-space controller; keeps the QP solver for warm starts.
#[derive(Debug, Clone)]
pub struct TaskSpaceController {
    gains: ControllerGains,
    solver: QpSolver,
}

const N_VARS: usize = 13; // ddq (7) + tau (4) + F (2)
const TAU0: usize = 7;
const F0: usize = 11;

impl TaskSpaceController {
    pub fn new(gains: ControllerGains) -> Result<Self, TscError> {
        gains.validate()?;
        Ok(Self {
            gains,
            solver: QpSolver::new(),
        })
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    /// Clears warm-start state; call at step transitions.
    pub fn reset(&mut self) {
        self.solver = QpSolver::new();
    }

    /// One control cycle: returns torques realizing the commanded output
    /// accelerations as closely as the dynamics, torque limits, and
    /// friction cone allow. `u_z0` is the vertical-COM acceleration from
    /// the MPC; the other outputs use PD feedback around `desired`.
    pub fn control(
        &mut self,
        model: &RobotModel,
        state: &RobotState,
        desired: &OutputSet,
        u_z0: f64,
    ) -> Result<ControlCommand, TscError> {
        let out = output_kinematics(model, state);
        let mut y_cmd = desired.ddy
            + self.gains.kd * (desired.dy - out.dy)
            + self.gains.kp * (desired.y - out.y);
        y_cmd[1] = u_z0;

        let d = mass_matrix(model, &state.q);
        let h = bias_forces(model, &state.q, &state.dq);
        let (j_c, jdqd) = contact_jacobian(model, &state.q, &state.dq, Frame::StanceFoot);
        let b = actuation_matrix();

        // Dynamics (7 rows): D ddq - B tau - J_c^T F = -h.
        // Contact (2 rows): J_c ddq = -Jdot dq.
        let mut a_eq = DMatrix::zeros(9, N_VARS);
        let mut b_eq = DVector::zeros(9);
        for i in 0..7 {
            for j in 0..7 {
                a_eq[(i, j)] = d[(i, j)];
            }
            for j in 0..4 {
                a_eq[(i, TAU0 + j)] = -b[(i, j)];
            }
            for j in 0..2 {
                a_eq[(i, F0 + j)] = -j_c[(j, i)];
            }
            b_eq[i] = -h[i];
        }
        for i in 0..2 {
            for j in 0..7 {
                a_eq[(7 + i, j)] = j_c[(i, j)];
            }
            b_eq[7 + i] = -jdqd[i];
        }

        // Cost: || W^(1/2) (J_y ddq + drift - y_cmd) ||^2
        //       + reg || x - x_ref ||^2,
        // anchored at the exact tracker so regularization is bias-free
        // whenever the command is admissible.
        let mut a_task = DMatrix::zeros(4, N_VARS);
        for i in 0..4 {
            for j in 0..7 {
                a_task[(i, j)] = out.jac[(i, j)];
            }
        }
        let rhs = y_cmd - out.drift;
        let x_ref = exact_tracking_reference(&a_eq, &b_eq, &a_task, &rhs)
            .unwrap_or_else(|| DVector::zeros(N_VARS));
        let w = DMatrix::from_diagonal(&DVector::from_iterator(
            4,
            self.gains.weight.iter().copied(),
        ));
        let mut hess = 2.0 * a_task.transpose() * &w * &a_task;
        for i in 0..N_VARS {
            hess[(i, i)] += 2.0 * self.gains.reg;
        }
        let grad = -2.0
            * (a_task.transpose() * &w * DVector::from_iterator(4, rhs.iter().copied())
                + self.gains.reg * &x_ref);

        let mut p = QpProblem::new(hess, grad);
        p.a_eq = a_eq;
        p.b_eq = b_eq;

        // Friction pyramid on F.
        let pyr = friction_pyramid(self.gains.mu);
        let mut a_in = DMatrix::zeros(3, N_VARS);
        for i in 0..3 {
            for j in 0..2 {
                a_in[(i, F0 + j)] = pyr[(i, j)];
            }
        }
        p.a_in = a_in;
        p.b_in = DVector::zeros(3);

        for j in 0..4 {
            p.lb[TAU0 + j] = self.gains.tau_lb;
            p.ub[TAU0 + j] = self.gains.tau_ub;
        }

        let sol = self.solver.solve_reusing_last(&p)?;
        if sol.status == QpStatus::Infeasible {
            return Err(TscError::Infeasible);
        }
        // An iteration-limited iterate may violate the torque bounds or the
        // dynamics equality; applying it would feed unphysical torques to
        // the plant.  Refuse rather than guess.
        if sol.status == QpStatus::IterationLimit {
            return Err(TscError::IterationLimit);
        }
        let ddq = Vec7::from_iterator(sol.x.iter().take(7).copied());
        let tau = SVector::<f64, 4>::from_iterator(sol.x.iter().skip(TAU0).take(4).copied());
        let force = Vector2::new(sol.x[F0], sol.x[F0 + 1]);
        let achieved = out.jac * ddq + out.drift;
        Ok(ControlCommand {
            tau,
            ddq,
            force,
            status: sol.status,
            tracking_error: achieved - y_cmd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gait::OutputSet;
    use crate::model::constrained_accel;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standing_state() -> RobotState {
        let mut q = Vec7::zeros();
        q[idx::BASE_Z] = 0.74;
        q[idx::STANCE_HIP] = -0.2;
        q[idx::STANCE_KNEE] = 0.45;
        q[idx::SWING_HIP] = 0.1;
        q[idx::SWING_KNEE] = 0.35;
        RobotState::new(q, Vec7::zeros())
    }

    fn hold_current_outputs(model: &RobotModel, state: &RobotState) -> OutputSet {
        let out = output_kinematics(model, state);
        OutputSet {
            y: out.y,
            dy: out.dy,
            ddy: Vector4::zeros(),
        }
    }

    /// Direct square-system oracle: with 4 outputs + 9 equalities in 13
    /// unknowns, exact tracking (when admissible) is the unique solution
    /// of a linear system.
    fn square_system_solution(
        model: &RobotModel,
        state: &RobotState,
        y_cmd: Vector4<f64>,
    ) -> (Vec7, SVector<f64, 4>, Vector2<f64>) {
        let out = output_kinematics(model, state);
        let d = mass_matrix(model, &state.q);
        let h = bias_forces(model, &state.q, &state.dq);
        let (j_c, jdqd) = contact_jacobian(model, &state.q, &state.dq, Frame::StanceFoot);
        let b = actuation_matrix();
        let mut a = DMatrix::zeros(13, 13);
        let mut rhs = DVector::zeros(13);
        for i in 0..7 {
            for j in 0..7 {
                a[(i, j)] = d[(i, j)];
            }
            for j in 0..4 {
                a[(i, 7 + j)] = -b[(i, j)];
            }
            for j in 0..2 {
                a[(i, 11 + j)] = -j_c[(j, i)];
            }
            rhs[i] = -h[i];
        }
        for i in 0..2 {
            for j in 0..7 {
                a[(7 + i, j)] = j_c[(i, j)];
            }
            rhs[7 + i] = -jdqd[i];
        }
        for i in 0..4 {
            for j in 0..7 {
                a[(9 + i, j)] = out.jac[(i, j)];
            }
            rhs[9 + i] = y_cmd[i] - out.drift[i];
        }
        let x = a.lu().solve(&rhs).expect("square system is regular");
        (
            Vec7::from_iterator(x.iter().take(7).copied()),
            SVector::<f64, 4>::from_iterator(x.iter().skip(7).take(4).copied()),
            Vector2::new(x[11], x[12]),
        )
    }

    #[test]
    fn exact_tracking_matches_the_square_system() {
        let model = RobotModel::default_biped();
        let state = standing_state();
        let mut ctrl = TaskSpaceController::new(ControllerGains::default()).unwrap();
        // Small commanded accelerations around hold-still: admissible well
        // inside the torque and friction limits.
        let desired = hold_current_outputs(&model, &state);
        let u_z0 = 0.4;
        let cmd = ctrl.control(&model, &state, &desired, u_z0).unwrap();
        assert_eq!(cmd.status, QpStatus::Optimal);
        let mut y_cmd = Vector4::zeros();
        y_cmd[1] = u_z0;
        let (ddq, tau, force) = square_system_solution(&model, &state, y_cmd);
        assert!(tau.amax() < 150.0, "oracle torques exceed bounds");
        for i in 0..7 {
            assert_abs_diff_eq!(cmd.ddq[i], ddq[i], epsilon = 1e-6);
        }
        for i in 0..4 {
            assert_abs_diff_eq!(cmd.tau[i], tau[i], epsilon = 1e-6);
        }
        assert_abs_diff_eq!(cmd.force.x, force.x, epsilon = 1e-6);
        assert_abs_diff_eq!(cmd.force.y, force.y, epsilon = 1e-6);
        assert!(cmd.tracking_error.amax() < 1e-6);
    }

    #[test]
    fn holding_still_compensates_gravity() {
        let model = RobotModel::default_biped();
        let state = standing_state();
        let mut ctrl = TaskSpaceController::new(ControllerGains::default()).unwrap();
        let desired = hold_current_outputs(&model, &state);
        let cmd = ctrl.control(&model, &state, &desired, 0.0).unwrap();
        // Supporting the whole weight through the stance foot.
        assert!(cmd.force.y > 0.0);
        assert!(cmd.tracking_error.amax() < 1e-6);
        // The output accelerations are zeroed; the remaining free motion
        // keeps the contact fixed.
        let achieved = output_kinematics(&model, &state).jac * cmd.ddq;
        assert!(achieved.amax() < 1e-6);
    }

    #[test]
    fn zero_torque_bounds_reproduce_passive_dynamics() {
        let model = RobotModel::default_biped();
        let mut state = standing_state();
        state.dq[idx::TORSO_PITCH] = 0.3;
        state.dq[idx::SWING_HIP] = -0.2;
        let gains = ControllerGains {
            tau_lb: 0.0,
            tau_ub: 0.0,
            ..ControllerGains::default()
        };
        let mut ctrl = TaskSpaceController::new(gains).unwrap();
        let desired = hold_current_outputs(&model, &state);
        let cmd = ctrl.control(&model, &state, &desired, 0.0).unwrap();
        let (ddq_passive, f_passive) =
            constrained_accel(&model, &state.q, &state.dq, &SVector::zeros()).unwrap();
        for i in 0..7 {
            assert_abs_diff_eq!(cmd.ddq[i], ddq_passive[i], epsilon = 1e-6);
        }
        assert_abs_diff_eq!(cmd.force.x, f_passive.x, epsilon = 1e-6);
        assert_abs_diff_eq!(cmd.force.y, f_passive.y, epsilon = 1e-6);
        assert!(cmd.tau.amax() < 1e-9);
    }

    #[test]
    fn friction_pyramid_classifies_forces() {
        let pyr = friction_pyramid(0.5);
        let inside = Vector2::new(0.3, 1.0);
        let outside = Vector2::new(0.6, 1.0);
        let pulling = Vector2::new(0.0, -0.2);
        let ok = |f: Vector2<f64>| (pyr * f).iter().all(|&v| v <= 1e-12);
        assert!(ok(inside));
        assert!(!ok(outside));
        assert!(!ok(pulling));
    }

    #[test]
    fn solutions_satisfy_dynamics_and_contact() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut ctrl = TaskSpaceController::new(ControllerGains::default()).unwrap();
        for _ in 0..20 {
            let mut state = standing_state();
            for i in 0..7 {
                state.q[i] += rng.random_range(-0.05..0.05);
                state.dq[i] = rng.random_range(-0.3..0.3);
            }
            let mut desired = hold_current_outputs(&model, &state);
            for i in 0..4 {
                desired.ddy[i] = rng.random_range(-1.0..1.0);
            }
            let cmd = ctrl
                .control(&model, &state, &desired, rng.random_range(-1.0..1.0))
                .unwrap();
            let d = mass_matrix(&model, &state.q);
            let h = bias_forces(&model, &state.q, &state.dq);
            let (j_c, jdqd) = contact_jacobian(&model, &state.q, &state.dq, Frame::StanceFoot);
            let resid =
                d * cmd.ddq + h - actuation_matrix() * cmd.tau - j_c.transpose() * cmd.force;
            assert!(resid.amax() < 1e-7, "dynamics residual {}", resid.amax());
            let contact = j_c * cmd.ddq + jdqd;
            assert!(contact.norm() < 1e-7, "contact residual {}", contact.norm());
            let pyr = friction_pyramid(ctrl.gains().mu);
            assert!((pyr * cmd.force).iter().all(|&v| v <= 1e-8));
        }
    }

    #[test]
    fn warm_and_cold_agree_across_a_cycle_sequence() {
        let model = RobotModel::default_biped();
        let mut warm = TaskSpaceController::new(ControllerGains::default()).unwrap();
        let mut state = standing_state();
        for k in 0..15 {
            state.dq[idx::TORSO_PITCH] = 0.01 * k as f64;
            let desired = hold_current_outputs(&model, &state);
            let w = warm.control(&model, &state, &desired, 0.2).unwrap();
            let mut cold = TaskSpaceController::new(ControllerGains::default()).unwrap();
            let c = cold.control(&model, &state, &desired, 0.2).unwrap();
            for i in 0..4 {
                assert_abs_diff_eq!(w.tau[i], c.tau[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn gains_are_validated() {
        let bad = ControllerGains {
            kp: -1.0,
            ..ControllerGains::default()
        };
        assert!(TaskSpaceController::new(bad).is_err());
        let bad = ControllerGains {
            tau_lb: 10.0,
            tau_ub: -10.0,
            ..ControllerGains::default()
        };
        assert!(TaskSpaceController::new(bad).is_err());
        // Equal bounds (a locked joint set) are allowed.
        let locked = ControllerGains {
            tau_lb: 0.0,
            tau_ub: 0.0,
            ..ControllerGains::default()
        };
        assert!(TaskSpaceController::new(locked).is_ok());
    }
}
