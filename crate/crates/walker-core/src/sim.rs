//! Closed-loop simulation of the full walking pipeline.
//!
//! Each step runs the same cycle a hardware stack would: plan the step at
//! touchdown, then at the control rate estimate the pre-impact state,
//! refresh the momentum target, re-solve the shrinking-horizon vertical
//! MPC, solve the task-space QP for torques, and integrate the pinned
//! stance dynamics under a zero-order hold until the swing foot crosses
//! the next stone's height plane. A plastic impact and leg relabeling
//! close the hybrid loop and the planner runs again.

use nalgebra::{DVector, SVector, Vector2, Vector4};
use thiserror::Error;

use crate::gait::{self, GaitError, GaitParams};
use crate::hybrid::{momentum_from_energy, HybridError, StoneConfig};
use crate::lip::{orbital_energy, LipParams, ReducedState};
use crate::model::{
    com_jacobian, com_kinematics, constrained_accel, contact_jacobian, foot_kinematics,
    frame_point, idx, mass_matrix, momentum_about_point, plastic_impact, relabel_legs, Frame,
    ModelError, RobotModel, RobotState, Vec7,
};
use crate::mpc::{MpcError, MpcParams, MpcStatus, VerticalMpc};
use crate::ode::{locate_crossing, Dopri5, Dopri5Options};
use crate::terrain::Terrain;
use crate::tsc::{output_kinematics, ControllerGains, TaskSpaceController, TscError};
use crate::qp::QpStatus;

/// Errors raised while setting a scenario up. In-walk problems (falls,
/// missed footholds, controller infeasibility) are reported through
/// [`SimOutcome`] instead so batch runs keep going.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(&'static str),
    #[error("initial pose: {0}")]
    InitialPose(&'static str),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Tsc(#[from] TscError),
}

/// Swing-foot clearance above the target plane required before the
/// touchdown guard arms, m.
const GUARD_ARM_CLEARANCE: f64 = 1e-4;
/// Pendulum phase after which the guard may arm, keeping lift-off scuffs
/// from triggering it.
const GUARD_ARM_PHASE: f64 = 0.5;
/// Bisection tolerance on the touchdown time, s.
const GUARD_TIME_TOL: f64 = 1e-12;

/// One closed-loop walking experiment: robot, tuning, terrain, and limits.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: RobotModel,
    pub gait: GaitParams,
    pub gains: ControllerGains,
    pub mpc: MpcParams,
    pub terrain: Terrain,
    /// Number of steps to attempt.
    pub n_steps: usize,
    /// Controller period, s.
    pub control_dt: f64,
    /// Wall-clock cap on a single step before it counts as stalled, s.
    pub max_step_time: f64,
    /// The walker has fallen when the COM drops below this fraction of the
    /// nominal slope-normal height.
    pub fall_height_frac: f64,
    /// Keep per-cycle telemetry (sizeable; disable for large sweeps).
    pub record_samples: bool,
}

impl Scenario {
    /// A scenario on the given terrain with default robot and tuning.
    pub fn new(terrain: Terrain, n_steps: usize) -> Self {
        Self {
            model: RobotModel::default_biped(),
            gait: GaitParams::default(),
            gains: ControllerGains::default(),
            mpc: MpcParams::default(),
            terrain,
            n_steps,
            control_dt: 1e-3,
            max_step_time: 3.0,
            fall_height_frac: 0.4,
            record_samples: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_dt > 0.0 && self.control_dt <= 0.1) {
            return Err(SimError::InvalidScenario("control period out of range"));
        }
        if self.n_steps == 0 {
            return Err(SimError::InvalidScenario("need at least one step"));
        }
        if !(self.max_step_time > 0.0) {
            return Err(SimError::InvalidScenario("non-positive step time limit"));
        }
        if !(self.fall_height_frac > 0.0 && self.fall_height_frac < 1.0) {
            return Err(SimError::InvalidScenario("fall threshold must be in (0, 1)"));
        }
        self.gait.validate()?;
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum SimOutcome {
    /// All requested steps finished with a detected touchdown.
    Completed,
    /// The COM height collapsed mid-step.
    Fell { step: usize, t: f64 },
    /// The touchdown guard never fired within the per-step time limit.
    Stalled { step: usize, t: f64 },
    /// Planning or control failed irrecoverably.
    ControllerFailure { step: usize, t: f64, reason: String },
}

impl SimOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, SimOutcome::Completed)
    }
}

/// Discrete summary of one completed step, recorded at its impact.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub index: usize,
    /// The stone this step targeted (relative to its stance foot).
    pub stone: StoneConfig,
    pub planned_duration: f64,
    pub actual_duration: f64,
    /// Reduced state just after impact, in the new stance frame.
    pub reduced_plus: ReducedState,
    /// Post-impact orbital energy in the next step's slope-normal frame.
    pub energy_plus: f64,
    /// Momentum about the old pivot just before impact.
    pub l_minus: f64,
    /// COM position relative to the old pivot just before impact.
    pub x_com_minus: f64,
    /// Vertical COM velocity just before impact.
    pub dz_com_minus: f64,
    /// Last commanded pre-impact vertical velocity target.
    pub u_des_final: f64,
    /// Swing-foot horizontal landing error relative to the stone, m.
    pub placement_error: f64,
    /// Impulse applied at the new contact, N s.
    pub impulse: Vector2<f64>,
    /// Post-impact vertical velocity of the former stance foot.
    pub old_foot_dz: f64,
    /// Whether the post-impact state that started this step was inside the
    /// viability band.
    pub viable: bool,
}

/// Per-control-cycle telemetry.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    /// Global time, s.
    pub t: f64,
    pub step: usize,
    /// Pendulum phase within the step (0 at the post-impact position, 1
    /// at the planned pre-impact position; runs past 1 on late landings).
    pub s: f64,
    pub q: Vec7,
    pub dq: Vec7,
    pub x_com: f64,
    pub z_com: f64,
    pub dx_com: f64,
    pub dz_com: f64,
    /// Momentum about the stance foot (mass-normalized).
    pub l_y: f64,
    /// Slope-normal height of the step plan, m (frame for orbital energy).
    pub z_tilde: f64,
    /// Current pre-impact vertical velocity target.
    pub u_des: f64,
    /// Pendulum-model time to touchdown, s.
    pub t_rem: f64,
    /// Vertical COM acceleration commanded by the MPC.
    pub u_z: f64,
    pub mpc_status: MpcStatus,
    pub tau: SVector<f64, 4>,
    pub force: Vector2<f64>,
    /// Friction-cone margin `mu F_z - |F_x|` of the stance force (negative
    /// means the commanded force left the cone).
    pub cone_margin: f64,
    pub qp_status: QpStatus,
    /// Measured outputs `[torso pitch, z_com, x_sw, z_sw]`.
    pub y: Vector4<f64>,
    /// Desired outputs at this cycle.
    pub y_des: Vector4<f64>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct SimLog {
    pub outcome: SimOutcome,
    pub steps: Vec<StepRecord>,
    pub samples: Vec<SampleRecord>,
    pub final_state: RobotState,
    /// Total simulated time, s.
    pub total_time: f64,
}

impl SimLog {
    pub fn completed(&self) -> bool {
        self.outcome.is_completed()
    }

    pub fn steps_taken(&self) -> usize {
        self.steps.len()
    }

    /// Post-impact orbital energies, one per completed step.
    pub fn post_impact_energies(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.energy_plus).collect()
    }
}

/// Closed-form two-link leg IK in the clockwise-pitch convention: returns
/// `(hip angle, knee angle)` placing the foot at `target`, with the knee
/// bent in its natural (positive) direction.
fn leg_ik(
    model: &RobotModel,
    hip: Vector2<f64>,
    target: Vector2<f64>,
    phi: f64,
) -> Result<(f64, f64), SimError> {
    let lt = model.thigh.length;
    let ls = model.shin.length;
    let r = target - hip;
    let rho2 = r.norm_squared();
    let rho = rho2.sqrt();
    if rho > 0.999 * (lt + ls) || rho < 1.001 * (lt - ls).abs() {
        return Err(SimError::InitialPose("foothold outside leg reach"));
    }
    let c_knee = ((rho2 - lt * lt - ls * ls) / (2.0 * lt * ls)).clamp(-1.0, 1.0);
    let q_knee = c_knee.acos();
    let a = lt + ls * c_knee;
    let b = ls * q_knee.sin();
    let s_pitch = (-a * r.x + b * r.y) / rho2;
    let c_pitch = -(b * r.x + a * r.y) / rho2;
    Ok((s_pitch.atan2(c_pitch) - phi, q_knee))
}

fn pose_for_hip(
    model: &RobotModel,
    hip: Vector2<f64>,
    phi: f64,
    stance_target: Vector2<f64>,
    swing_target: Vector2<f64>,
) -> Result<Vec7, SimError> {
    let (q_sh, q_sk) = leg_ik(model, hip, stance_target, phi)?;
    let (q_wh, q_wk) = leg_ik(model, hip, swing_target, phi)?;
    let mut q = Vec7::zeros();
    q[idx::BASE_X] = hip.x;
    q[idx::BASE_Z] = hip.y;
    q[idx::TORSO_PITCH] = phi;
    q[idx::STANCE_HIP] = q_sh;
    q[idx::STANCE_KNEE] = q_sk;
    q[idx::SWING_HIP] = q_wh;
    q[idx::SWING_KNEE] = q_wk;
    Ok(q)
}

/// Builds a post-impact state on the nominal orbit for the first stone:
/// stance foot at the origin, swing foot on the previous (mirrored)
/// foothold, COM at the nominal pre-impact offset with the slope-normal
/// height, and the minimum-energy velocity realizing the target momentum.
pub fn initial_state(
    model: &RobotModel,
    gait: &GaitParams,
    terrain: &Terrain,
) -> Result<RobotState, SimError> {
    gait.validate()?;
    let stone = *terrain.stone(0);
    let slope = stone.slope();
    let x_c = -(1.0 - gait.epsilon) * stone.l_des();
    let z_c = gait.z_tilde_star + slope * x_c;
    let phi = gait.phi_other_f;
    let stance_target = Vector2::zeros();
    let swing_target = Vector2::new(-stone.l_des(), -stone.h_des());
    let com_target = Vector2::new(x_c, z_c);

    // The COM offset from the hip depends weakly on the leg angles, so a
    // fixed-point update on the hip position converges fast.
    let mut hip = com_target - Vector2::new(0.0, 0.15);
    let mut q = Vec7::zeros();
    let mut converged = false;
    for _ in 0..200 {
        q = pose_for_hip(model, hip, phi, stance_target, swing_target)?;
        let kin = com_kinematics(model, &q, &Vec7::zeros());
        let err = com_target - Vector2::new(kin.x_com, kin.z_com);
        hip += err;
        if err.norm() < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SimError::InitialPose("COM placement did not converge"));
    }

    // Velocity: minimum kinetic energy subject to a pinned stance foot,
    // the target momentum about it, a COM velocity parallel to the virtual
    // slope, and a still torso.
    let l0 = momentum_from_energy(gait.e_star, x_c, gait.z_tilde_star, model.g)?;
    let zero = Vec7::zeros();
    let (j_st, _) = contact_jacobian(model, &q, &zero, Frame::StanceFoot);
    let (j_com, _) = com_jacobian(model, &q, &zero);
    let mut a = nalgebra::DMatrix::<f64>::zeros(5, 7);
    for col in 0..7 {
        a[(0, col)] = j_st[(0, col)];
        a[(1, col)] = j_st[(1, col)];
        let mut e = Vec7::zeros();
        e[col] = 1.0;
        a[(2, col)] = momentum_about_point(model, &q, &e, Vector2::zeros());
        a[(3, col)] = j_com[(1, col)] - slope * j_com[(0, col)];
    }
    a[(4, idx::TORSO_PITCH)] = 1.0;
    let mut b = DVector::zeros(5);
    b[2] = l0;

    let d = mass_matrix(model, &q);
    let mut kkt = nalgebra::DMatrix::<f64>::zeros(12, 12);
    for i in 0..7 {
        for j in 0..7 {
            kkt[(i, j)] = 2.0 * d[(i, j)];
        }
    }
    for i in 0..5 {
        for j in 0..7 {
            kkt[(7 + i, j)] = a[(i, j)];
            kkt[(j, 7 + i)] = a[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(12);
    rhs.rows_mut(7, 5).copy_from(&b);
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or(SimError::InitialPose("velocity constraints are singular"))?;
    let dq = Vec7::from_column_slice(&sol.as_slice()[..7]);
    Ok(RobotState::new(q, dq))
}

fn pack_state(state: &RobotState) -> DVector<f64> {
    let mut y = DVector::zeros(14);
    y.rows_mut(0, 7).copy_from(&state.q);
    y.rows_mut(7, 7).copy_from(&state.dq);
    y
}

fn unpack_state(y: &DVector<f64>) -> RobotState {
    RobotState::new(
        Vec7::from_column_slice(&y.as_slice()[..7]),
        Vec7::from_column_slice(&y.as_slice()[7..14]),
    )
}

/// Swing-foot height above the stance foot for a packed state.
fn swing_clearance(model: &RobotModel, y: &DVector<f64>) -> f64 {
    let q = Vec7::from_column_slice(&y.as_slice()[..7]);
    let zero = Vec7::zeros();
    let sw = foot_kinematics(model, &q, &zero, Frame::SwingFoot);
    let st = foot_kinematics(model, &q, &zero, Frame::StanceFoot);
    sw.pos.y - st.pos.y
}

enum StepEnd {
    Impact {
        t_hit: f64,
        state_hit: RobotState,
    },
    Fell {
        t: f64,
    },
    Stalled {
        t: f64,
    },
    Failed {
        t: f64,
        reason: String,
    },
}

/// Runs one scenario to completion or failure.
///
/// `Err` is reserved for ill-posed setups; everything that can go wrong
/// mid-walk lands in the returned log's [`SimOutcome`].
pub fn run_scenario(sc: &Scenario) -> Result<SimLog, SimError> {
    sc.validate()?;
    let model = &sc.model;
    let g = model.g;
    let mut state = initial_state(model, &sc.gait, &sc.terrain)?;
    let mut mpc = VerticalMpc::new(sc.mpc)?;
    let mut tsc = TaskSpaceController::new(sc.gains)?;
    let mut ode = Dopri5::new(Dopri5Options {
        h_max: sc.control_dt,
        ..Dopri5Options::default()
    });

    let mut stance_world = Vector2::<f64>::zeros();
    let mut t_global = 0.0;
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut samples: Vec<SampleRecord> = Vec::new();

    for step_index in 0..sc.n_steps {
        // Target the world-fixed stones, correcting for accumulated
        // placement error of the actual stance foot.
        let rel = sc.terrain.foothold(step_index + 1) - stance_world;
        let stone = match StoneConfig::new(rel.x, rel.y) {
            Ok(s) => s,
            Err(e) => {
                return finish(
                    SimOutcome::ControllerFailure {
                        step: step_index,
                        t: t_global,
                        reason: format!("stone unreachable after drift: {e}"),
                    },
                    steps,
                    samples,
                    state,
                    t_global,
                );
            }
        };
        let next_rel = sc.terrain.foothold(step_index + 2) - sc.terrain.foothold(step_index + 1);
        let stone_next = StoneConfig::new(next_rel.x, next_rel.y).ok();

        let kin_plus = com_kinematics(model, &state.q, &state.dq);
        let swing_plus = frame_point(model, &state, Frame::SwingFoot).position;
        let phi_plus = state.q[idx::TORSO_PITCH];
        let plan = match gait::plan_step_from_kinematics(
            &kin_plus,
            swing_plus,
            phi_plus,
            stone,
            stone_next,
            &sc.gait,
            g,
        ) {
            Ok(p) => p,
            Err(e) => {
                return finish(
                    SimOutcome::ControllerFailure {
                        step: step_index,
                        t: t_global,
                        reason: format!("planning failed: {e}"),
                    },
                    steps,
                    samples,
                    state,
                    t_global,
                );
            }
        };

        mpc.reset();
        tsc.reset();
        ode.reset();

        let h_rel = stone.h_des();
        let guard = |_t: f64, y: &DVector<f64>| swing_clearance(model, y) - h_rel;
        let mut armed = false;
        let mut step_t = 0.0;
        let mut last_u_des = 0.0;

        let end = 'cycles: loop {
            if step_t > sc.max_step_time {
                break StepEnd::Stalled { t: step_t };
            }
            if !state.q.iter().chain(state.dq.iter()).all(|v| v.is_finite()) {
                break StepEnd::Failed {
                    t: step_t,
                    reason: "state became non-finite".into(),
                };
            }
            let kin_now = com_kinematics(model, &state.q, &state.dq);
            if kin_now.z_com < sc.fall_height_frac * sc.gait.z_tilde_star {
                break StepEnd::Fell { t: step_t };
            }

            let ph = gait::pendulum_phase(&kin_now, &plan, g);
            // `None` means the pendulum has stalled short of the target line
            // (crossing time unreachable), not that touchdown is imminent.
            // Keep a generous horizon so the height regulator stays gentle
            // instead of compressing the whole maneuver into a vanishing
            // window while the robot recovers.
            let t_remaining = gait::time_remaining(&kin_now, &plan, g)
                .unwrap_or_else(|| (plan.t_s - step_t).max(0.25 * plan.t_s));
            let est = gait::estimate_preimpact(&kin_now, step_t, &plan, &sc.gait, g);
            let u_des = gait::compute_u_des(&est, &plan, &sc.gait, g);
            last_u_des = u_des;
            let mpc_sol = mpc.solve(
                Vector2::new(kin_now.z_com, kin_now.dz_com),
                Vector2::new(plan.z_com_f, u_des),
                t_remaining,
                g,
            );
            let desired = gait::outputs_from_phase(&ph, &plan);
            let cmd = match tsc.control(model, &state, &desired, mpc_sol.u0) {
                Ok(c) => c,
                Err(e) => {
                    break StepEnd::Failed {
                        t: step_t,
                        reason: format!("whole-body QP: {e}"),
                    }
                }
            };

            if sc.record_samples {
                let out = output_kinematics(model, &state);
                samples.push(SampleRecord {
                    t: t_global + step_t,
                    step: step_index,
                    s: ph.s,
                    q: state.q,
                    dq: state.dq,
                    x_com: kin_now.x_com,
                    z_com: kin_now.z_com,
                    dx_com: kin_now.dx_com,
                    dz_com: kin_now.dz_com,
                    l_y: kin_now.momentum_about_pivot(),
                    z_tilde: plan.z_tilde,
                    u_des,
                    t_rem: t_remaining,
                    u_z: mpc_sol.u0,
                    mpc_status: mpc_sol.status,
                    tau: cmd.tau,
                    force: cmd.force,
                    cone_margin: sc.gains.mu * cmd.force.y - cmd.force.x.abs(),
                    qp_status: cmd.status,
                    y: out.y,
                    y_des: desired.y,
                });
            }

            let tau = cmd.tau;
            let arm_allowed = ph.s > GUARD_ARM_PHASE;
            let mut dyn_err: Option<ModelError> = None;
            let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
                let q = Vec7::from_column_slice(&y.as_slice()[..7]);
                let dq = Vec7::from_column_slice(&y.as_slice()[7..14]);
                match constrained_accel(model, &q, &dq, &tau) {
                    Ok((ddq, _)) => {
                        dy.rows_mut(0, 7).copy_from(&dq);
                        dy.rows_mut(7, 7).copy_from(&ddq);
                    }
                    Err(e) => {
                        dyn_err = Some(e);
                        dy.fill(0.0);
                    }
                }
            };

            let mut hit: Option<(f64, DVector<f64>)> = None;
            let y0 = pack_state(&state);
            let window_end = step_t + sc.control_dt;
            let res = ode.integrate(f, step_t, &y0, window_end, |seg| {
                let y_end = seg.eval(seg.t_end);
                let g_end = guard(seg.t_end, &y_end);
                if !armed {
                    if arm_allowed && g_end > GUARD_ARM_CLEARANCE {
                        armed = true;
                    }
                    true
                } else if g_end <= 0.0 {
                    let (t_hit, y_hit) =
                        locate_crossing(seg, &guard, seg.t_start, seg.t_end, GUARD_TIME_TOL);
                    hit = Some((t_hit, y_hit));
                    false
                } else {
                    true
                }
            });
            if let Some(e) = dyn_err {
                break StepEnd::Failed {
                    t: step_t,
                    reason: format!("stance dynamics: {e}"),
                };
            }
            let (t_new, y_new) = match res {
                Ok(r) => r,
                Err(e) => {
                    break StepEnd::Failed {
                        t: step_t,
                        reason: format!("integrator: {e}"),
                    }
                }
            };
            if let Some((t_hit, y_hit)) = hit.take() {
                break 'cycles StepEnd::Impact {
                    t_hit,
                    state_hit: unpack_state(&y_hit),
                };
            }
            state = unpack_state(&y_new);
            step_t = t_new;
        };

        match end {
            StepEnd::Impact { t_hit, state_hit } => {
                let kin_minus = com_kinematics(model, &state_hit.q, &state_hit.dq);
                let swing_land = frame_point(model, &state_hit, Frame::SwingFoot).position;
                let impact =
                    match plastic_impact(model, &state_hit.q, &state_hit.dq, Frame::SwingFoot) {
                        Ok(o) => o,
                        Err(e) => {
                            return finish(
                                SimOutcome::ControllerFailure {
                                    step: step_index,
                                    t: t_global + t_hit,
                                    reason: format!("impact map: {e}"),
                                },
                                steps,
                                samples,
                                state_hit,
                                t_global + t_hit,
                            );
                        }
                    };
                state = relabel_legs(&RobotState::new(state_hit.q, impact.dq_plus));
                stance_world += swing_land;

                let kin_new = com_kinematics(model, &state.q, &state.dq);
                let reduced_plus = kin_new.reduced_state();
                let ahead = sc.terrain.foothold(step_index + 2) - stance_world;
                let slope_next = if ahead.x > 1e-9 { ahead.y / ahead.x } else { 0.0 };
                let z_tilde_plus = kin_new.z_com - slope_next * kin_new.x_com;
                let energy_plus = LipParams::new(z_tilde_plus, g)
                    .map(|p| orbital_energy(reduced_plus, &p))
                    .unwrap_or(f64::NAN);

                steps.push(StepRecord {
                    index: step_index,
                    stone,
                    planned_duration: plan.t_s,
                    actual_duration: t_hit,
                    reduced_plus,
                    energy_plus,
                    l_minus: kin_minus.momentum_about_pivot(),
                    x_com_minus: kin_minus.x_com,
                    dz_com_minus: kin_minus.dz_com,
                    u_des_final: last_u_des,
                    placement_error: swing_land.x - stone.l_des(),
                    impulse: impact.impulse,
                    old_foot_dz: impact.old_foot_dz,
                    viable: plan.viable,
                });
                t_global += t_hit;
            }
            StepEnd::Fell { t } => {
                return finish(
                    SimOutcome::Fell {
                        step: step_index,
                        t: t_global + t,
                    },
                    steps,
                    samples,
                    state,
                    t_global + t,
                );
            }
            StepEnd::Stalled { t } => {
                return finish(
                    SimOutcome::Stalled {
                        step: step_index,
                        t: t_global + t,
                    },
                    steps,
                    samples,
                    state,
                    t_global + t,
                );
            }
            StepEnd::Failed { t, reason } => {
                return finish(
                    SimOutcome::ControllerFailure {
                        step: step_index,
                        t: t_global + t,
                        reason,
                    },
                    steps,
                    samples,
                    state,
                    t_global + t,
                );
            }
        }
    }

    finish(SimOutcome::Completed, steps, samples, state, t_global)
}

fn finish(
    outcome: SimOutcome,
    steps: Vec<StepRecord>,
    samples: Vec<SampleRecord>,
    final_state: RobotState,
    total_time: f64,
) -> Result<SimLog, SimError> {
    Ok(SimLog {
        outcome,
        steps,
        samples,
        final_state,
        total_time,
    })
}

/// Runs scenarios in parallel (one per worker) and returns the logs in
/// input order.
#[cfg(feature = "parallel")]
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<SimLog, SimError>> {
    use rayon::prelude::*;
    scenarios.par_iter().map(run_scenario).collect()
}

/// Sequential stand-in used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub fn run_batch(scenarios: &[Scenario]) -> Vec<Result<SimLog, SimError>> {
    run_batch_sequential(scenarios)
}

/// Runs scenarios one after another on the calling thread.
pub fn run_batch_sequential(scenarios: &[Scenario]) -> Vec<Result<SimLog, SimError>> {
    scenarios.iter().map(run_scenario).collect()
}
