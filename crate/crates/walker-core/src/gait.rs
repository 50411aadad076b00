//! Per-step gait synthesis.
//!
//! At every touchdown the planner fixes the whole next step: its duration
//! (the pendulum's time-to-impact to the desired pre-impact COM position),
//! degree-5 Bezier trajectories for the swing foot and torso pitch, the
//! desired pre-impact posture, and the nominal post-impact momentum target.
//! During the step the remaining pre-impact state is re-estimated every
//! control cycle by flowing the pendulum forward, and the desired
//! pre-impact vertical COM velocity `u_des` is recomputed from those
//! estimates; the vertical MPC then drives the COM to meet it.

use crate::hybrid::{
    momentum_from_energy, virtual_slope_height, ComKinematics, EnergyTarget, StoneConfig,
};
use crate::lip::{lip_flow, time_to_impact, LipError, LipParams, ReducedState};
use crate::model::{com_kinematics, frame_point, Frame, RobotModel, RobotState};
use nalgebra::{Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("gait parameter out of range: {0}")]
    InvalidParams(&'static str),
    /// The pendulum cannot reach the desired pre-impact position, or the
    /// resulting step duration is degenerate.
    #[error("step infeasible: {0}")]
    InfeasibleStep(&'static str),
}

/// User-level gait tuning shared by every step of a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitParams {
    /// Pre-impact COM position as a fraction of the step length, in (0,1).
    pub epsilon: f64,
    /// Desired post-impact orbital energy, m^2/s^2.
    pub e_star: f64,
    /// Nominal slope-normal COM height, m.
    pub z_tilde_star: f64,
    /// Swing apex height over the stance foot, m.
    pub z_sw_max: f64,
    /// Terminal swing overshoot below the stone surface, m (negative).
    pub z_sw_neg: f64,
    /// Desired pre-impact torso pitch, rad.
    pub phi_other_f: f64,
    /// Base weight of the plan (vs the measurement) in pre-impact
    /// estimation blending, in [0,1]; ramps to 1 as the step progresses.
    pub blend_weight: f64,
    /// Viability band half-widths around `e_star` used for warnings.
    pub e_band: (f64, f64),
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), GaitError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(GaitError::InvalidParams("epsilon must be in (0,1)"));
        }
        if !(self.e_star > 0.0) {
            return Err(GaitError::InvalidParams("e_star must be positive"));
        }
        if !(self.z_tilde_star > 0.0) {
            return Err(GaitError::InvalidParams("z_tilde_star must be positive"));
        }
        if !(self.z_sw_max > 0.0) {
            return Err(GaitError::InvalidParams("z_sw_max must be positive"));
        }
        if !(self.z_sw_neg <= 0.0) {
            return Err(GaitError::InvalidParams("z_sw_neg must not be positive"));
        }
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return Err(GaitError::InvalidParams("blend_weight must be in [0,1]"));
        }
        if !(self.e_band.0 >= 0.0 && self.e_band.1 >= 0.0) {
            return Err(GaitError::InvalidParams("energy band must be nonnegative"));
        }
        Ok(())
    }

    /// Energy band for viability checks, clipped to stay positive below.
    pub fn energy_target(&self) -> EnergyTarget {
        let e_min = (self.e_star - self.e_band.0).max(1e-6);
        let e_max = self.e_star + self.e_band.1;
        EnergyTarget::new(self.e_star, e_min.min(self.e_star), e_max)
            .expect("validated parameters produce a valid band")
    }
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            epsilon: 0.6,
            e_star: 0.5,
            z_tilde_star: 0.7,
            z_sw_max: 0.12,
            z_sw_neg: -0.005,
            phi_other_f: 0.0,
            blend_weight: 0.5,
            e_band: (0.3, 0.5),
        }
    }
}

/// Everything fixed at the start of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    /// Planned step duration: the pendulum's time to the pre-impact
    /// position, s.
    pub t_s: f64,
    /// Duration of the swing-output clock for a pendulum exactly on
    /// schedule, s. Slightly longer than `t_s` so that the height
    /// profile's final descent — which ends a touch below the stone to
    /// guarantee a transversal crossing — meets the stone plane at
    /// pendulum phase 1.
    pub t_sw: f64,
    /// Planned pre-impact COM position (phase-1 point), m.
    pub x_des: f64,
    /// The stone this step lands on.
    pub stone: StoneConfig,
    /// Optional preview of the stone after that.
    pub stone_next: Option<StoneConfig>,
    /// Nominal desired post-impact momentum, m^2/s.
    pub l_des: f64,
    /// Desired pre-impact COM height above the stance foot, m
    /// (`z_tilde_star + epsilon h_des`, rise-limited per step).
    pub z_com_f: f64,
    /// Slope-normal COM height at the start of the step, m.
    pub z_tilde: f64,
    /// Horizontal swing Bezier coefficients (normalized 0 to 1).
    pub b_h: [f64; 6],
    /// Vertical swing Bezier coefficients, m.
    pub b_v: [f64; 6],
    /// Torso-pitch Bezier coefficients, rad.
    pub b_phi: [f64; 6],
    /// Swing-foot position relative to the stance foot at step start, m.
    pub swing_plus: Vector2<f64>,
    /// Reduced state at step start.
    pub reduced_plus: ReducedState,
    /// Full COM kinematics at step start.
    pub kin_plus: ComKinematics,
    /// Whether the post-impact state satisfied the viability conditions.
    pub viable: bool,
}

/// The four controlled outputs `[torso pitch, z_com, x_sw, z_sw]` with time
/// derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputSet {
    pub y: Vector4<f64>,
    pub dy: Vector4<f64>,
    pub ddy: Vector4<f64>,
}

/// Pre-impact state estimate produced by [`estimate_preimpact`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreImpactEstimate {
    /// Estimated pre-impact COM position, m.
    pub x_com: f64,
    /// Estimated pre-impact momentum, m^2/s.
    pub l_y: f64,
    /// Estimated pre-impact COM height, m.
    pub z_com: f64,
    /// Estimated pre-impact horizontal COM velocity, m/s.
    pub dx_com: f64,
}

/// Plans a step from explicit post-impact COM kinematics and swing-foot
/// position. `swing_plus` is relative to the (new) stance foot.
pub fn plan_step_from_kinematics(
    kin_plus: &ComKinematics,
    swing_plus: Vector2<f64>,
    phi_plus: f64,
    stone: StoneConfig,
    stone_next: Option<StoneConfig>,
    params: &GaitParams,
    g: f64,
) -> Result<StepPlan, GaitError> {
    params.validate()?;
    let z_tilde = virtual_slope_height(kin_plus.x_com, kin_plus.z_com, &stone);
    if !(z_tilde > 0.0) {
        return Err(GaitError::InfeasibleStep("non-positive slope-normal height"));
    }
    let p = LipParams::new(z_tilde, g).map_err(|_| GaitError::InvalidParams("pendulum"))?;
    let reduced_plus = kin_plus.reduced_state();

    let viable = crate::hybrid::viable_post_impact(reduced_plus, &p, &params.energy_target());
    if !viable {
        log::warn!(
            "post-impact state (x={:.3}, L={:.3}) outside the viability band; planning anyway",
            reduced_plus.x_com,
            reduced_plus.l_y
        );
    }

    let x_des = params.epsilon * stone.l_des();
    let t_s = match time_to_impact(x_des, &p, reduced_plus) {
        Ok(t) if t > 0.0 => t,
        Ok(_) => return Err(GaitError::InfeasibleStep("zero step duration")),
        Err(LipError::Unreachable) => {
            return Err(GaitError::InfeasibleStep("pre-impact position unreachable"))
        }
        Err(_) => return Err(GaitError::InfeasibleStep("pendulum not moving forward")),
    };

    // Nominal pre-impact height, saturated so the step never demands a COM
    // climb faster than [`Z_RISE_RATE`].  A steeper rise either saturates
    // the vertical input or, while the COM is still behind the stance
    // foot, brakes the pendulum into a stall; descents cost nothing and
    // are left free.
    let z_com_f = (params.z_tilde_star + params.epsilon * stone.h_des())
        .min(kin_plus.z_com + Z_RISE_RATE * t_s);
    // Nominal post-impact momentum target for the impact that ends this
    // step, evaluated at the planned pre-impact posture.
    let x_plus_next = x_des - stone.l_des();
    let z_tilde_next = match stone_next {
        Some(next) => z_com_f - stone.h_des() - next.slope() * x_plus_next,
        None => z_com_f - stone.h_des(),
    };
    let l_des = momentum_from_energy(params.e_star, x_plus_next, z_tilde_next, g)
        .map_err(|_| GaitError::InfeasibleStep("energy target unrealizable"))?;

    let zs = swing_plus.y;
    let apex = params.z_sw_max;
    let b_v = [
        zs,
        apex,
        apex,
        apex,
        stone.h_des(),
        stone.h_des() + params.z_sw_neg,
    ];
    let b_phi = [
        phi_plus,
        phi_plus,
        phi_plus,
        params.phi_other_f,
        params.phi_other_f,
        params.phi_other_f,
    ];
    let t_sw = t_s / touchdown_phase(&b_v, stone.h_des());
    Ok(StepPlan {
        t_s,
        t_sw,
        x_des,
        stone,
        stone_next,
        l_des,
        z_com_f,
        z_tilde,
        b_h: [0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        b_v,
        b_phi,
        swing_plus,
        reduced_plus,
        kin_plus: *kin_plus,
        viable,
    })
}

/// Phase at which the swing-height profile crosses the stone plane on its
/// final descent, found by walking back from the end of the step and
/// bisecting the bracketed crossing. Returns 1 when the profile never dips
/// below the stone.
fn touchdown_phase(b_v: &[f64; 6], h: f64) -> f64 {
    let clearance = |s: f64| bezier_eval(b_v, s).0 - h;
    if clearance(1.0) >= 0.0 {
        return 1.0;
    }
    let mut lo = None;
    for k in 1..20 {
        let s = 1.0 - 0.025 * k as f64;
        if clearance(s) > 0.0 {
            lo = Some(s);
            break;
        }
    }
    let Some(mut a) = lo else { return 1.0 };
    let mut b = 1.0;
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        if clearance(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Plans a step from a full post-impact robot state (stance/swing already
/// relabeled).
pub fn plan_step(
    model: &RobotModel,
    state: &RobotState,
    stone: StoneConfig,
    stone_next: Option<StoneConfig>,
    params: &GaitParams,
) -> Result<StepPlan, GaitError> {
    let kin = com_kinematics(model, &state.q, &state.dq);
    let swing = frame_point(model, state, Frame::SwingFoot);
    let phi = state.q[crate::model::idx::TORSO_PITCH];
    plan_step_from_kinematics(&kin, swing.position, phi, stone, stone_next, params, model.g)
}

/// Evaluates a degree-5 Bezier curve and its first two derivatives with
/// respect to the (clamped) phase `s`.
pub fn bezier_eval(coeffs: &[f64; 6], s: f64) -> (f64, f64, f64) {
    let s = s.clamp(0.0, 1.0);
    let value = de_casteljau(coeffs, s);
    // Derivative curves have hodograph coefficients 5 (c[k+1] - c[k]) and
    // 20 (c[k+2] - 2 c[k+1] + c[k]).
    let mut d1 = [0.0; 5];
    for k in 0..5 {
        d1[k] = 5.0 * (coeffs[k + 1] - coeffs[k]);
    }
    let mut d2 = [0.0; 4];
    for k in 0..4 {
        d2[k] = 20.0 * (coeffs[k + 2] - 2.0 * coeffs[k + 1] + coeffs[k]);
    }
    (value, bernstein(&d1, s), bernstein(&d2, s))
}

fn de_casteljau(c: &[f64; 6], s: f64) -> f64 {
    let mut b = *c;
    for level in (1..6).rev() {
        for k in 0..level {
            b[k] = (1.0 - s) * b[k] + s * b[k + 1];
        }
    }
    b[0]
}

fn bernstein(c: &[f64], s: f64) -> f64 {
    let mut b = c.to_vec();
    for level in (1..c.len()).rev() {
        for k in 0..level {
            b[k] = (1.0 - s) * b[k] + s * b[k + 1];
        }
    }
    b[0]
}

/// Pendulum phase: the fraction of the planned COM travel already
/// covered, with its time derivatives. `s` is 0 at the post-impact
/// position and 1 when the COM reaches the planned pre-impact position;
/// it exceeds 1 when the pendulum runs past the plan before the foot
/// lands. Driving the outputs by this phase instead of the clock keeps
/// touchdown synchronized with the COM even when the full dynamics run
/// ahead of or behind the pendulum prediction.
#[derive(Debug, Clone, Copy)]
pub struct PhaseState {
    pub s: f64,
    pub ds: f64,
    /// Pendulum-model feedforward for the phase acceleration.
    pub dds: f64,
}

pub fn pendulum_phase(kin_now: &ComKinematics, plan: &StepPlan, g: f64) -> PhaseState {
    let span = plan.x_des - plan.reduced_plus.x_com;
    PhaseState {
        s: ((kin_now.x_com - plan.reduced_plus.x_com) / span).max(0.0),
        ds: kin_now.dx_com / span,
        dds: g * kin_now.x_com / (plan.z_tilde * span),
    }
}

/// Pendulum time from the current state to the planned pre-impact
/// position. `None` when that stretch has become unreachable (the step
/// will stall rather than land on plan).
pub fn time_remaining(kin_now: &ComKinematics, plan: &StepPlan, g: f64) -> Option<f64> {
    if kin_now.x_com >= plan.x_des {
        return Some(0.0);
    }
    let p = LipParams::new(plan.z_tilde, g).ok()?;
    time_to_impact(plan.x_des, &p, kin_now.reduced_state()).ok()
}

/// Desired outputs at a pendulum phase. The swing profiles live on the
/// slightly longer swing clock, so the stone-plane crossing happens at
/// phase 1 exactly; past the end the outputs hold their terminal values.
pub fn outputs_from_phase(ph: &PhaseState, plan: &StepPlan) -> OutputSet {
    let kappa = plan.t_s / plan.t_sw;
    let s_raw = kappa * ph.s;
    let s = s_raw.clamp(0.0, 1.0);
    let (rate, acc) = if (0.0..1.0).contains(&s_raw) {
        (kappa * ph.ds, kappa * ph.dds)
    } else {
        (0.0, 0.0)
    };
    let (bh, dbh, ddbh) = bezier_eval(&plan.b_h, s);
    let (bv, dbv, ddbv) = bezier_eval(&plan.b_v, s);
    let (bp, dbp, ddbp) = bezier_eval(&plan.b_phi, s);
    let x0 = plan.swing_plus.x;
    let span = plan.stone.l_des() - x0;
    let y = Vector4::new(bp, plan.z_com_f, x0 + bh * span, bv);
    let dy = Vector4::new(dbp * rate, 0.0, dbh * span * rate, dbv * rate);
    let r2 = rate * rate;
    let ddy = Vector4::new(
        ddbp * r2 + dbp * acc,
        0.0,
        (ddbh * r2 + dbh * acc) * span,
        ddbv * r2 + dbv * acc,
    );
    OutputSet { y, dy, ddy }
}

/// Desired outputs for a pendulum exactly on its planned schedule
/// (`s = t / t_s`). The closed loop uses [`outputs_from_phase`] with the
/// measured phase instead.
pub fn desired_outputs(t: f64, plan: &StepPlan) -> OutputSet {
    let ph = PhaseState {
        s: t / plan.t_s,
        ds: 1.0 / plan.t_s,
        dds: 0.0,
    };
    outputs_from_phase(&ph, plan)
}

/// Estimates the pre-impact underactuated state by flowing the pendulum
/// over its remaining travel to the planned pre-impact position, blending
/// plan and measurement for the quantities the pendulum does not predict.
/// `t` only seeds a fallback horizon when that travel has become
/// unreachable.
pub fn estimate_preimpact(
    kin_now: &ComKinematics,
    t: f64,
    plan: &StepPlan,
    params: &GaitParams,
    g: f64,
) -> PreImpactEstimate {
    let p = LipParams::new(plan.z_tilde, g).expect("plan carries a valid height");
    let remaining =
        time_remaining(kin_now, plan, g).unwrap_or_else(|| (plan.t_s - t).max(0.0));
    let flowed = lip_flow(kin_now.reduced_state(), &p, remaining);
    // The plan anchors the estimate early, when the measured height and
    // velocity still have the whole step ahead of them; the measurements
    // take over as impact nears, because they converge to the pre-impact
    // values themselves while the pendulum relation dx = L/z degrades
    // during the terminal vertical maneuver.
    let s = pendulum_phase(kin_now, plan, g).s.min(1.0);
    let w = params.blend_weight * (1.0 - s);
    let z_minus = w * plan.z_com_f + (1.0 - w) * kin_now.z_com;
    let dx_minus = w * (flowed.l_y / z_minus) + (1.0 - w) * kin_now.dx_com;
    PreImpactEstimate {
        x_com: flowed.x_com,
        l_y: flowed.l_y,
        z_com: z_minus,
        dx_com: dx_minus,
    }
}

/// Desired post-impact momentum recomputed from fresh pre-impact estimates
/// (one- or two-stone preview).
pub fn desired_post_impact_momentum(
    est: &PreImpactEstimate,
    plan: &StepPlan,
    params: &GaitParams,
    g: f64,
) -> f64 {
    let x_plus = est.x_com - plan.stone.l_des();
    let z_tilde_plus = match plan.stone_next {
        Some(next) => est.z_com - plan.stone.h_des() - next.slope() * x_plus,
        None => est.z_com - plan.stone.h_des(),
    };
    match momentum_from_energy(params.e_star, x_plus, z_tilde_plus, g) {
        Ok(l) => l,
        Err(e) => {
            log::warn!("momentum target fell back to the nominal plan: {e}");
            plan.l_des
        }
    }
}

/// The discrete-input formula: desired pre-impact vertical COM velocity
/// that transfers the estimated momentum onto the target orbit,
/// `u_des = (L_des - L_minus + h_des dx_minus) / l_des`.
pub fn u_des_formula(l_des_target: f64, l_minus: f64, dx_minus: f64, stone: &StoneConfig) -> f64 {
    (l_des_target - l_minus + stone.h_des() * dx_minus) / stone.l_des()
}

/// Largest pre-impact vertical COM speed the height regulator is asked to
/// produce, m/s.  Nominal gaits sit well inside +-1.5; demands beyond this
/// only arise from corrupted estimates (e.g. a stalled pendulum), and
/// chasing them destabilizes the whole-body layer.
pub const U_DES_LIMIT: f64 = 2.0;

/// Largest average COM climb rate a step plan may demand, m/s.  Steady
/// stair ascents sit just under this; only short, tall steps hit it, and
/// their remaining height recovery is spread over the following steps.
pub const Z_RISE_RATE: f64 = 0.5;

/// Recomputes `u_des` from the current pre-impact estimates, saturated at
/// [`U_DES_LIMIT`].
pub fn compute_u_des(
    est: &PreImpactEstimate,
    plan: &StepPlan,
    params: &GaitParams,
    g: f64,
) -> f64 {
    let l_target = desired_post_impact_momentum(est, plan, params, g);
    u_des_formula(l_target, est.l_y, est.dx_com, &plan.stone).clamp(-U_DES_LIMIT, U_DES_LIMIT)
}
