//! Planar five-link biped: torso and two thigh–shin legs on a floating
//! base, with point feet.
//!
//! Generalized coordinates are laid out as
//! `q = [hip x, hip z, torso pitch, stance hip, stance knee, swing hip,
//! swing knee]`, angles in radians with forward lean positive. Hip and knee
//! angles are relative to their parent link, so the absolute thigh angle is
//! `pitch + hip` and the shin angle is `pitch + hip + knee`. The four hip
//! and knee joints are actuated; the base and torso pitch are not, which
//! makes the robot underactuated by one degree of freedom once the stance
//! contact pins the base.
//!
//! Dynamics are assembled per link from analytic COM Jacobians
//! (d'Alembert), which keeps every term checkable against finite
//! differences and per-link energy/momentum sums.

use crate::hybrid::ComKinematics;
use nalgebra::{Cholesky, Matrix2, SMatrix, SVector, Vector2};
use thiserror::Error;

pub type Vec7 = SVector<f64, 7>;
pub type Mat7 = SMatrix<f64, 7, 7>;
pub type Jac2x7 = SMatrix<f64, 2, 7>;
pub type Row7 = SMatrix<f64, 1, 7>;
pub type ActuationMatrix = SMatrix<f64, 7, 4>;

/// Indices into the generalized-coordinate layout.
pub mod idx {
    pub const BASE_X: usize = 0;
    pub const BASE_Z: usize = 1;
    pub const TORSO_PITCH: usize = 2;
    pub const STANCE_HIP: usize = 3;
    pub const STANCE_KNEE: usize = 4;
    pub const SWING_HIP: usize = 5;
    pub const SWING_KNEE: usize = 6;
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("link parameter out of range: {0}")]
    InvalidLink(&'static str),
    /// The contact Jacobian lost rank (kinematic singularity), so the
    /// impact/contact solve has no unique answer.
    #[error("contact Jacobian is singular at this configuration")]
    SingularContact,
}

/// Inertial and geometric parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// Mass, kg.
    pub mass: f64,
    /// Length, m.
    pub length: f64,
    /// Distance from the proximal joint to the link COM, m.
    pub com_offset: f64,
    /// Rotational inertia about the COM, kg m^2.
    pub inertia: f64,
}

impl LinkParams {
    /// Uniform thin rod: COM at the midpoint, inertia m l^2 / 12.
    pub fn uniform_rod(mass: f64, length: f64) -> Self {
        Self {
            mass,
            length,
            com_offset: 0.5 * length,
            inertia: mass * length * length / 12.0,
        }
    }

    fn validate(&self, what: &'static str) -> Result<(), ModelError> {
        let ok = self.mass > 0.0
            && self.length > 0.0
            && self.inertia > 0.0
            && self.com_offset > 0.0
            && self.com_offset <= self.length;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidLink(what))
        }
    }
}

/// The full robot: torso plus two identical thigh–shin legs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    pub torso: LinkParams,
    pub thigh: LinkParams,
    pub shin: LinkParams,
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
}

impl RobotModel {
    pub fn new(
        torso: LinkParams,
        thigh: LinkParams,
        shin: LinkParams,
        g: f64,
    ) -> Result<Self, ModelError> {
        torso.validate("torso")?;
        thigh.validate("thigh")?;
        shin.validate("shin")?;
        if !(g > 0.0) {
            return Err(ModelError::InvalidLink("gravity"));
        }
        Ok(Self {
            torso,
            thigh,
            shin,
            g,
        })
    }

    /// Default parameter set: 10 kg / 0.5 m torso, 2 kg / 0.4 m thighs,
    /// 1 kg / 0.4 m shins, uniform rods.
    pub fn default_biped() -> Self {
        Self::new(
            LinkParams::uniform_rod(10.0, 0.5),
            LinkParams::uniform_rod(2.0, 0.4),
            LinkParams::uniform_rod(1.0, 0.4),
            9.81,
        )
        .expect("default parameters are valid")
    }

    pub fn total_mass(&self) -> f64 {
        self.torso.mass + 2.0 * (self.thigh.mass + self.shin.mass)
    }

    /// Fully extended leg length, m.
    pub fn leg_length(&self) -> f64 {
        self.thigh.length + self.shin.length
    }
}

/// Generalized position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub q: Vec7,
    pub dq: Vec7,
}

impl RobotState {
    pub fn new(q: Vec7, dq: Vec7) -> Self {
        Self { q, dq }
    }
}

/// Frames whose kinematics the planner and controller query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    StanceFoot,
    SwingFoot,
    Com,
    TorsoTop,
}

/// Position (relative to the stance foot) and absolute velocity of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub frame: Frame,
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
}

/// Unit vector along a leg link with pitch `p` (points down at 0). Pitch
/// is clockwise-positive for every link, matching the torso convention, so
/// joint coordinates are true relative angles and positive angular rates
/// mean tipping forward.
fn leg_dir(p: f64) -> Vector2<f64> {
    Vector2::new(-p.sin(), -p.cos())
}

/// Derivative of [`leg_dir`] with respect to the pitch.
fn leg_dir_d(p: f64) -> Vector2<f64> {
    Vector2::new(-p.cos(), p.sin())
}

/// Kinematics of one link COM.
#[derive(Debug, Clone)]
struct LinkKin {
    mass: f64,
    inertia: f64,
    pos: Vector2<f64>,
    vel: Vector2<f64>,
    jac: Jac2x7,
    /// Constant row mapping dq to the link's angular rate.
    w: Row7,
    omega: f64,
    /// Jdot * dq of the COM.
    bias: Vector2<f64>,
}

/// Kinematics of a point on the kinematic chain (a foot).
#[derive(Debug, Clone)]
pub struct PointKin {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub jac: Jac2x7,
    /// Jdot * dq at the point.
    pub bias: Vector2<f64>,
}

fn rotation_row(indices: &[usize]) -> Row7 {
    let mut w = Row7::zeros();
    for &i in indices {
        w[(0, i)] = 1.0;
    }
    w
}

/// Builds thigh-COM, shin-COM and foot kinematics for the leg whose hip
/// joint index is `hip` (knee is `hip + 1`).
fn leg_kinematics(model: &RobotModel, q: &Vec7, dq: &Vec7, hip: usize) -> (LinkKin, LinkKin, PointKin) {
    let base = Vector2::new(q[idx::BASE_X], q[idx::BASE_Z]);
    let base_v = Vector2::new(dq[idx::BASE_X], dq[idx::BASE_Z]);
    let knee = hip + 1;

    let th1 = q[idx::TORSO_PITCH] + q[hip];
    let th2 = th1 + q[knee];
    let w1 = dq[idx::TORSO_PITCH] + dq[hip];
    let w2 = w1 + dq[knee];
    let (d1, e1) = (leg_dir(th1), leg_dir_d(th1));
    let (d2, e2) = (leg_dir(th2), leg_dir_d(th2));

    let lt = model.thigh.length;
    let ct = model.thigh.com_offset;
    let cs = model.shin.com_offset;
    let ls = model.shin.length;

    let mut thigh_jac = Jac2x7::zeros();
    thigh_jac.set_column(idx::BASE_X, &Vector2::x());
    thigh_jac.set_column(idx::BASE_Z, &Vector2::y());
    thigh_jac.set_column(idx::TORSO_PITCH, &(ct * e1));
    thigh_jac.set_column(hip, &(ct * e1));
    let thigh = LinkKin {
        mass: model.thigh.mass,
        inertia: model.thigh.inertia,
        pos: base + ct * d1,
        vel: base_v + ct * w1 * e1,
        jac: thigh_jac,
        w: rotation_row(&[idx::TORSO_PITCH, hip]),
        omega: w1,
        bias: -ct * w1 * w1 * d1,
    };

    let mut shin_jac = Jac2x7::zeros();
    shin_jac.set_column(idx::BASE_X, &Vector2::x());
    shin_jac.set_column(idx::BASE_Z, &Vector2::y());
    shin_jac.set_column(idx::TORSO_PITCH, &(lt * e1 + cs * e2));
    shin_jac.set_column(hip, &(lt * e1 + cs * e2));
    shin_jac.set_column(knee, &(cs * e2));
    let shin = LinkKin {
        mass: model.shin.mass,
        inertia: model.shin.inertia,
        pos: base + lt * d1 + cs * d2,
        vel: base_v + lt * w1 * e1 + cs * w2 * e2,
        jac: shin_jac,
        w: rotation_row(&[idx::TORSO_PITCH, hip, knee]),
        omega: w2,
        bias: -lt * w1 * w1 * d1 - cs * w2 * w2 * d2,
    };

    let mut foot_jac = Jac2x7::zeros();
    foot_jac.set_column(idx::BASE_X, &Vector2::x());
    foot_jac.set_column(idx::BASE_Z, &Vector2::y());
    foot_jac.set_column(idx::TORSO_PITCH, &(lt * e1 + ls * e2));
    foot_jac.set_column(hip, &(lt * e1 + ls * e2));
    foot_jac.set_column(knee, &(ls * e2));
    let foot = PointKin {
        pos: base + lt * d1 + ls * d2,
        vel: base_v + lt * w1 * e1 + ls * w2 * e2,
        jac: foot_jac,
        bias: -lt * w1 * w1 * d1 - ls * w2 * w2 * d2,
    };

    (thigh, shin, foot)
}

fn torso_kinematics(model: &RobotModel, q: &Vec7, dq: &Vec7) -> LinkKin {
    let base = Vector2::new(q[idx::BASE_X], q[idx::BASE_Z]);
    let base_v = Vector2::new(dq[idx::BASE_X], dq[idx::BASE_Z]);
    let phi = q[idx::TORSO_PITCH];
    let dphi = dq[idx::TORSO_PITCH];
    // Torso points up at zero pitch.
    let u = Vector2::new(phi.sin(), phi.cos());
    let du = Vector2::new(phi.cos(), -phi.sin());
    let c = model.torso.com_offset;
    let mut jac = Jac2x7::zeros();
    jac.set_column(idx::BASE_X, &Vector2::x());
    jac.set_column(idx::BASE_Z, &Vector2::y());
    jac.set_column(idx::TORSO_PITCH, &(c * du));
    LinkKin {
        mass: model.torso.mass,
        inertia: model.torso.inertia,
        pos: base + c * u,
        vel: base_v + c * dphi * du,
        jac,
        w: rotation_row(&[idx::TORSO_PITCH]),
        omega: dphi,
        bias: -c * dphi * dphi * u,
    }
}

fn all_links(model: &RobotModel, q: &Vec7, dq: &Vec7) -> [LinkKin; 5] {
    let torso = torso_kinematics(model, q, dq);
    let (st_thigh, st_shin, _) = leg_kinematics(model, q, dq, idx::STANCE_HIP);
    let (sw_thigh, sw_shin, _) = leg_kinematics(model, q, dq, idx::SWING_HIP);
    [torso, st_thigh, st_shin, sw_thigh, sw_shin]
}

/// Kinematics of a foot point.
pub fn foot_kinematics(model: &RobotModel, q: &Vec7, dq: &Vec7, frame: Frame) -> PointKin {
    let hip = match frame {
        Frame::StanceFoot => idx::STANCE_HIP,
        Frame::SwingFoot => idx::SWING_HIP,
        _ => panic!("foot_kinematics expects a foot frame"),
    };
    leg_kinematics(model, q, dq, hip).2
}

/// Joint-space inertia matrix, assembled per link:
/// `D = sum_i m_i J_i^T J_i + I_i w_i^T w_i`.
pub fn mass_matrix(model: &RobotModel, q: &Vec7) -> Mat7 {
    let links = all_links(model, q, &Vec7::zeros());
    let mut d = Mat7::zeros();
    for l in &links {
        d += l.mass * l.jac.transpose() * l.jac + l.inertia * l.w.transpose() * l.w;
    }
    d
}

/// Coriolis, centrifugal and gravity forces `H(q, dq)` such that the
/// unforced dynamics are `D(q) ddq + H(q, dq) = 0`.
pub fn bias_forces(model: &RobotModel, q: &Vec7, dq: &Vec7) -> Vec7 {
    let links = all_links(model, q, dq);
    let gravity = Vector2::new(0.0, model.g);
    let mut h = Vec7::zeros();
    for l in &links {
        h += l.mass * l.jac.transpose() * (l.bias + gravity);
    }
    h
}

/// Actuation map: four joint torques enter the hip and knee coordinates;
/// base and torso pitch are unactuated.
pub fn actuation_matrix() -> ActuationMatrix {
    let mut b = ActuationMatrix::zeros();
    for (col, row) in [idx::STANCE_HIP, idx::STANCE_KNEE, idx::SWING_HIP, idx::SWING_KNEE]
        .into_iter()
        .enumerate()
    {
        b[(row, col)] = 1.0;
    }
    b
}

/// Contact Jacobian of a foot frame and its velocity-product term
/// `Jdot * dq`.
pub fn contact_jacobian(
    model: &RobotModel,
    q: &Vec7,
    dq: &Vec7,
    frame: Frame,
) -> (Jac2x7, Vector2<f64>) {
    let kin = foot_kinematics(model, q, dq, frame);
    (kin.jac, kin.bias)
}

/// COM position (relative to the stance foot), COM velocity, and the
/// mass-normalized centroidal angular momentum.
pub fn com_kinematics(model: &RobotModel, q: &Vec7, dq: &Vec7) -> ComKinematics {
    let links = all_links(model, q, dq);
    let m_total = model.total_mass();
    let mut p = Vector2::zeros();
    let mut v = Vector2::zeros();
    for l in &links {
        p += l.mass * l.pos;
        v += l.mass * l.vel;
    }
    p /= m_total;
    v /= m_total;
    // Centroidal angular momentum (y-component, mass-normalized): positive
    // when the robot tips forward.
    let mut l_com = 0.0;
    for l in &links {
        let r = l.pos - p;
        l_com += l.mass * (r.y * l.vel.x - r.x * l.vel.y) + l.inertia * l.omega;
    }
    l_com /= m_total;
    let stance = foot_kinematics(model, q, dq, Frame::StanceFoot);
    ComKinematics {
        x_com: p.x - stance.pos.x,
        z_com: p.y - stance.pos.y,
        dx_com: v.x,
        dz_com: v.y,
        l_com_y: l_com,
    }
}

/// Mass-weighted COM Jacobian and its drift term `Jdot_com * dq`.
pub fn com_jacobian(model: &RobotModel, q: &Vec7, dq: &Vec7) -> (Jac2x7, Vector2<f64>) {
    let links = all_links(model, q, dq);
    let m_total = model.total_mass();
    let mut jac = Jac2x7::zeros();
    let mut bias = Vector2::zeros();
    for l in &links {
        jac += l.mass * l.jac;
        bias += l.mass * l.bias;
    }
    (jac / m_total, bias / m_total)
}

/// Position (relative to the stance foot) and velocity of a named frame.
pub fn frame_point(model: &RobotModel, state: &RobotState, frame: Frame) -> FramePoint {
    let stance = foot_kinematics(model, &state.q, &state.dq, Frame::StanceFoot);
    let (position, velocity) = match frame {
        Frame::StanceFoot => (Vector2::zeros(), stance.vel),
        Frame::SwingFoot => {
            let sw = foot_kinematics(model, &state.q, &state.dq, Frame::SwingFoot);
            (sw.pos - stance.pos, sw.vel)
        }
        Frame::Com => {
            let k = com_kinematics(model, &state.q, &state.dq);
            (
                Vector2::new(k.x_com, k.z_com),
                Vector2::new(k.dx_com, k.dz_com),
            )
        }
        Frame::TorsoTop => {
            let phi = state.q[idx::TORSO_PITCH];
            let u = Vector2::new(phi.sin(), phi.cos());
            let du = Vector2::new(phi.cos(), -phi.sin());
            let base = Vector2::new(state.q[idx::BASE_X], state.q[idx::BASE_Z]);
            let base_v = Vector2::new(state.dq[idx::BASE_X], state.dq[idx::BASE_Z]);
            let top = base + model.torso.length * u;
            let v = base_v + model.torso.length * state.dq[idx::TORSO_PITCH] * du;
            (top - stance.pos, v)
        }
    };
    FramePoint {
        frame,
        position,
        velocity,
    }
}

/// Mass-normalized angular momentum about a world point, summed per link.
/// This is an independent path to the quantity the reduced model tracks.
pub fn momentum_about_point(model: &RobotModel, q: &Vec7, dq: &Vec7, point: Vector2<f64>) -> f64 {
    let links = all_links(model, q, dq);
    let mut l = 0.0;
    for link in &links {
        let r = link.pos - point;
        l += link.mass * (r.y * link.vel.x - r.x * link.vel.y) + link.inertia * link.omega;
    }
    l / model.total_mass()
}

/// Kinetic energy `0.5 dq^T D dq` computed per link.
pub fn kinetic_energy(model: &RobotModel, q: &Vec7, dq: &Vec7) -> f64 {
    let links = all_links(model, q, dq);
    links
        .iter()
        .map(|l| 0.5 * l.mass * l.vel.norm_squared() + 0.5 * l.inertia * l.omega * l.omega)
        .sum()
}

/// Gravitational potential energy.
pub fn potential_energy(model: &RobotModel, q: &Vec7) -> f64 {
    let links = all_links(model, q, &Vec7::zeros());
    links.iter().map(|l| l.mass * model.g * l.pos.y).sum()
}

/// Forward dynamics with the stance foot pinned: solves the index-1 KKT
/// system for `ddq` and the contact wrench `F` with `J ddq + Jdot dq = 0`.
pub fn constrained_accel(
    model: &RobotModel,
    q: &Vec7,
    dq: &Vec7,
    tau: &SVector<f64, 4>,
) -> Result<(Vec7, Vector2<f64>), ModelError> {
    let d = mass_matrix(model, q);
    let h = bias_forces(model, q, dq);
    let (j, jdqd) = contact_jacobian(model, q, dq, Frame::StanceFoot);
    let chol = Cholesky::new(d).ok_or(ModelError::SingularContact)?;
    let rhs = actuation_matrix() * tau - h;
    let dinv_rhs = chol.solve(&rhs);
    let dinv_jt = chol.solve(&j.transpose());
    let s: Matrix2<f64> = j * dinv_jt;
    let s_chol = Cholesky::new(s).ok_or(ModelError::SingularContact)?;
    let f = -s_chol.solve(&(j * dinv_rhs + jdqd));
    let ddq = dinv_rhs + dinv_jt * f;
    Ok((ddq, f))
}

/// Unconstrained forward dynamics (free flight), used by energy tests.
pub fn free_accel(model: &RobotModel, q: &Vec7, dq: &Vec7) -> Vec7 {
    let d = mass_matrix(model, q);
    let h = bias_forces(model, q, dq);
    Cholesky::new(d).expect("inertia matrix is positive definite").solve(&(-h))
}

/// Plastic impact at `new_stance`: instantaneously zeroes that point's
/// velocity while conserving generalized momentum, by solving
/// `[D, -J^T; J, 0] [dq+; Imp] = [D dq-; 0]`.
///
/// Also reports whether the old stance foot separates upward afterwards
/// (the lift-off consistency check).
pub struct ImpactOutcome {
    pub dq_plus: Vec7,
    /// Impulse applied at the new contact, N s.
    pub impulse: Vector2<f64>,
    /// Post-impact vertical velocity of the former stance foot; negative
    /// values mean the instantaneous-lift-off assumption was violated.
    pub old_foot_dz: f64,
}

pub fn plastic_impact(
    model: &RobotModel,
    q: &Vec7,
    dq_minus: &Vec7,
    new_stance: Frame,
) -> Result<ImpactOutcome, ModelError> {
    let d = mass_matrix(model, q);
    let (j, _) = contact_jacobian(model, q, dq_minus, new_stance);
    let chol = Cholesky::new(d).ok_or(ModelError::SingularContact)?;
    let dinv_jt = chol.solve(&j.transpose());
    let s: Matrix2<f64> = j * dinv_jt;
    let s_chol = Cholesky::new(s).ok_or(ModelError::SingularContact)?;
    let impulse = -s_chol.solve(&(j * dq_minus));
    let dq_plus = dq_minus + dinv_jt * impulse;
    let old = match new_stance {
        Frame::SwingFoot => Frame::StanceFoot,
        Frame::StanceFoot => Frame::SwingFoot,
        _ => panic!("impact frame must be a foot"),
    };
    let old_kin = foot_kinematics(model, q, &dq_plus, old);
    Ok(ImpactOutcome {
        dq_plus,
        impulse,
        old_foot_dz: old_kin.vel.y,
    })
}

/// Swaps the stance and swing leg coordinates so the controller always sees
/// the support leg in the same slots. Involution.
pub fn relabel_legs(state: &RobotState) -> RobotState {
    let mut q = state.q;
    let mut dq = state.dq;
    q.swap_rows(idx::STANCE_HIP, idx::SWING_HIP);
    q.swap_rows(idx::STANCE_KNEE, idx::SWING_KNEE);
    dq.swap_rows(idx::STANCE_HIP, idx::SWING_HIP);
    dq.swap_rows(idx::STANCE_KNEE, idx::SWING_KNEE);
    RobotState { q, dq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng) -> RobotState {
        let mut q = Vec7::zeros();
        let mut dq = Vec7::zeros();
        q[idx::BASE_X] = rng.random_range(-1.0..1.0);
        q[idx::BASE_Z] = rng.random_range(0.6..1.1);
        q[idx::TORSO_PITCH] = rng.random_range(-0.4..0.4);
        for i in idx::STANCE_HIP..=idx::SWING_KNEE {
            q[i] = rng.random_range(-0.9..0.9);
        }
        for i in 0..7 {
            dq[i] = rng.random_range(-1.5..1.5);
        }
        RobotState::new(q, dq)
    }

    /// Per-link velocity by central finite differences of the position map,
    /// bypassing the analytic Jacobians entirely.
    fn fd_link_velocities(model: &RobotModel, q: &Vec7, dq: &Vec7) -> Vec<Vector2<f64>> {
        let delta = 1e-6;
        let plus = all_links(model, &(q + delta * dq), &Vec7::zeros());
        let minus = all_links(model, &(q - delta * dq), &Vec7::zeros());
        plus.iter()
            .zip(minus.iter())
            .map(|(p, m)| (p.pos - m.pos) / (2.0 * delta))
            .collect()
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = random_state(&mut rng);
            let d = mass_matrix(&model, &s.q);
            assert!((d - d.transpose()).abs().max() < 1e-12);
            let eig = d.symmetric_eigenvalues();
            assert!(eig.min() > 0.0, "inertia not positive definite");
        }
    }

    #[test]
    fn quadratic_form_matches_per_link_kinetic_energy() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            let d = mass_matrix(&model, &s.q);
            let quad = 0.5 * (s.dq.transpose() * d * s.dq)[0];
            let per_link = kinetic_energy(&model, &s.q, &s.dq);
            assert_abs_diff_eq!(quad, per_link, epsilon = 1e-10);
        }
    }

    #[test]
    fn link_velocities_match_finite_differences() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_state(&mut rng);
            let links = all_links(&model, &s.q, &s.dq);
            let fd = fd_link_velocities(&model, &s.q, &s.dq);
            for (l, v_fd) in links.iter().zip(fd) {
                assert!((l.vel - v_fd).norm() < 1e-6);
                assert!((l.jac * s.dq - v_fd).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn gravity_vector_matches_potential_gradient() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng);
        let h = bias_forces(&model, &s.q, &Vec7::zeros());
        let delta = 1e-6;
        for i in 0..7 {
            let mut qp = s.q;
            let mut qm = s.q;
            qp[i] += delta;
            qm[i] -= delta;
            let grad =
                (potential_energy(&model, &qp) - potential_energy(&model, &qm)) / (2.0 * delta);
            assert_abs_diff_eq!(h[i], grad, epsilon = 1e-7);
        }
    }

    #[test]
    fn velocity_terms_are_quadratic_in_dq() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng);
        let grav = bias_forces(&model, &s.q, &Vec7::zeros());
        let plus = bias_forces(&model, &s.q, &s.dq) - grav;
        let minus = bias_forces(&model, &s.q, &(-s.dq)) - grav;
        assert!((plus - minus).norm() < 1e-10);
        let half = bias_forces(&model, &s.q, &(0.5 * s.dq)) - grav;
        assert!((0.25 * plus - half).norm() < 1e-10);
    }

    #[test]
    fn free_fall_conserves_energy() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_state(&mut rng);
        let e0 = kinetic_energy(&model, &s.q, &s.dq) + potential_energy(&model, &s.q);
        let y0 = nalgebra::DVector::from_iterator(14, s.q.iter().chain(s.dq.iter()).copied());
        let mut solver = crate::ode::Dopri5::new(crate::ode::Dopri5Options {
            atol: 1e-10,
            rtol: 1e-10,
            ..Default::default()
        });
        let (_, y) = solver
            .integrate(
                |_, y, dy| {
                    let q = Vec7::from_iterator(y.iter().take(7).copied());
                    let dq = Vec7::from_iterator(y.iter().skip(7).copied());
                    let ddq = free_accel(&model, &q, &dq);
                    for i in 0..7 {
                        dy[i] = dq[i];
                        dy[7 + i] = ddq[i];
                    }
                },
                0.0,
                &y0,
                0.5,
                |_| true,
            )
            .unwrap();
        let q = Vec7::from_iterator(y.iter().take(7).copied());
        let dq = Vec7::from_iterator(y.iter().skip(7).copied());
        let e1 = kinetic_energy(&model, &q, &dq) + potential_energy(&model, &q);
        assert!((e1 - e0).abs() < 1e-6, "energy drift {}", e1 - e0);
    }

    #[test]
    fn foot_jacobian_base_columns_are_identity() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_state(&mut rng);
        for frame in [Frame::StanceFoot, Frame::SwingFoot] {
            let (j, _) = contact_jacobian(&model, &s.q, &s.dq, frame);
            assert_eq!(j[(0, 0)], 1.0);
            assert_eq!(j[(1, 1)], 1.0);
            assert_eq!(j[(0, 1)], 0.0);
            assert_eq!(j[(1, 0)], 0.0);
        }
    }

    #[test]
    fn jdot_dq_matches_finite_differences() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let delta = 1e-6;
        for _ in 0..10 {
            let s = random_state(&mut rng);
            for frame in [Frame::StanceFoot, Frame::SwingFoot] {
                let (_, jdqd) = contact_jacobian(&model, &s.q, &s.dq, frame);
                let (jp, _) = contact_jacobian(&model, &(s.q + delta * s.dq), &s.dq, frame);
                let (jm, _) = contact_jacobian(&model, &(s.q - delta * s.dq), &s.dq, frame);
                let fd = (jp - jm) / (2.0 * delta) * s.dq;
                assert!((jdqd - fd).norm() < 1e-5);
            }
        }
    }

    /// A left-right symmetric pose standing over the origin.
    fn symmetric_pose() -> Vec7 {
        let mut q = Vec7::zeros();
        q[idx::BASE_Z] = 0.78;
        q[idx::STANCE_HIP] = 0.3;
        q[idx::STANCE_KNEE] = -0.5;
        q[idx::SWING_HIP] = 0.3;
        q[idx::SWING_KNEE] = -0.5;
        q
    }

    #[test]
    fn symmetric_pose_matches_hand_kinematics() {
        let model = RobotModel::default_biped();
        let q = symmetric_pose();
        let k = com_kinematics(&model, &q, &Vec7::zeros());
        // Equal joint angles put both feet at the same point.
        let st = foot_kinematics(&model, &q, &Vec7::zeros(), Frame::StanceFoot);
        let sw = foot_kinematics(&model, &q, &Vec7::zeros(), Frame::SwingFoot);
        assert!((st.pos - sw.pos).norm() < 1e-12);
        // Hand-evaluated chain: thigh pitch 0.3, shin pitch -0.2, link
        // direction (-sin p, -cos p), torso straight up from the hip.
        let (s3, c3) = (0.3f64.sin(), 0.3f64.cos());
        let (s2, c2) = (0.2f64.sin(), 0.2f64.cos());
        let foot = Vector2::new(-0.4 * s3 + 0.4 * s2, -0.4 * c3 - 0.4 * c2);
        assert_abs_diff_eq!(st.pos.x, foot.x, epsilon = 1e-12);
        assert_abs_diff_eq!(st.pos.y, 0.78 + foot.y, epsilon = 1e-12);
        let thigh_x = -0.2 * s3;
        let shin_x = -0.4 * s3 + 0.2 * s2;
        let com_x = (10.0 * 0.0 + 2.0 * 2.0 * thigh_x + 2.0 * 1.0 * shin_x) / 16.0;
        assert_abs_diff_eq!(k.x_com, com_x - foot.x, epsilon = 1e-12);
        let thigh_z = -0.2 * c3;
        let shin_z = -0.4 * c3 - 0.2 * c2;
        let com_z = (10.0 * 0.25 + 4.0 * thigh_z + 2.0 * shin_z) / 16.0;
        assert_abs_diff_eq!(k.z_com, com_z - foot.y, epsilon = 1e-12);
    }

    #[test]
    fn pivot_momentum_matches_per_link_oracle() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = random_state(&mut rng);
            let k = com_kinematics(&model, &s.q, &s.dq);
            let stance = foot_kinematics(&model, &s.q, &s.dq, Frame::StanceFoot);
            let oracle = momentum_about_point(&model, &s.q, &s.dq, stance.pos);
            assert_abs_diff_eq!(k.momentum_about_pivot(), oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn rigid_translation_has_zero_centroidal_momentum() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut s = random_state(&mut rng);
        s.dq = Vec7::zeros();
        s.dq[idx::BASE_X] = 0.9;
        s.dq[idx::BASE_Z] = -0.3;
        let k = com_kinematics(&model, &s.q, &s.dq);
        assert_abs_diff_eq!(k.l_com_y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            k.momentum_about_pivot(),
            k.z_com * 0.9 - k.x_com * (-0.3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn impact_zeroes_the_new_contact_velocity() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let s = random_state(&mut rng);
            let out = plastic_impact(&model, &s.q, &s.dq, Frame::SwingFoot).unwrap();
            let (j, _) = contact_jacobian(&model, &s.q, &s.dq, Frame::SwingFoot);
            assert!((j * out.dq_plus).norm() < 1e-10);
        }
    }

    #[test]
    fn impact_is_identity_on_compatible_velocities() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = random_state(&mut rng);
        // Project dq onto the contact-consistent subspace first.
        let pre = plastic_impact(&model, &s.q, &s.dq, Frame::SwingFoot).unwrap();
        let again = plastic_impact(&model, &s.q, &pre.dq_plus, Frame::SwingFoot).unwrap();
        assert!((again.dq_plus - pre.dq_plus).norm() < 1e-10);
        assert!(again.impulse.norm() < 1e-9);
    }

    #[test]
    fn impact_conserves_momentum_about_the_impact_point() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let s = random_state(&mut rng);
            let foot = foot_kinematics(&model, &s.q, &s.dq, Frame::SwingFoot);
            let before = momentum_about_point(&model, &s.q, &s.dq, foot.pos);
            let out = plastic_impact(&model, &s.q, &s.dq, Frame::SwingFoot).unwrap();
            let after = momentum_about_point(&model, &s.q, &out.dq_plus, foot.pos);
            assert_abs_diff_eq!(before, after, epsilon = 1e-10);
        }
    }

    #[test]
    fn pivot_momentum_rate_equals_gravity_torque() {
        // With the stance foot pinned, motor torques are internal pairs and
        // the contact force has no arm, so d/dt of the momentum about the
        // pivot is g * x_com no matter what the actuators do.
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let s = random_state(&mut rng);
            let tau = SVector::<f64, 4>::from_fn(|_, _| rng.random_range(-20.0..20.0));
            // Project onto contact-consistent velocities first.
            let dq0 = plastic_impact(&model, &s.q, &s.dq, Frame::StanceFoot)
                .unwrap()
                .dq_plus;
            let pivot = foot_kinematics(&model, &s.q, &dq0, Frame::StanceFoot).pos;
            let h = 1e-6;
            let rk4 = |q: &Vec7, dq: &Vec7, dt: f64| {
                let f = |q: &Vec7, dq: &Vec7| {
                    let (ddq, _) = constrained_accel(&model, q, dq, &tau).unwrap();
                    (*dq, ddq)
                };
                let (k1q, k1v) = f(q, dq);
                let (k2q, k2v) = f(&(q + 0.5 * dt * k1q), &(dq + 0.5 * dt * k1v));
                let (k3q, k3v) = f(&(q + 0.5 * dt * k2q), &(dq + 0.5 * dt * k2v));
                let (k4q, k4v) = f(&(q + dt * k3q), &(dq + dt * k3v));
                (
                    q + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
                    dq + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
                )
            };
            let (q1, dq1) = rk4(&s.q, &dq0, h);
            let (qm, dqm) = rk4(&s.q, &dq0, 0.5 * h);
            let l0 = momentum_about_point(&model, &s.q, &dq0, pivot);
            let l1 = momentum_about_point(&model, &q1, &dq1, pivot);
            let x_mid = com_kinematics(&model, &qm, &dqm).x_com;
            assert_abs_diff_eq!((l1 - l0) / h, model.g * x_mid, epsilon = 1e-6);
        }
    }

    #[test]
    fn impact_never_adds_kinetic_energy() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..30 {
            let s = random_state(&mut rng);
            let before = kinetic_energy(&model, &s.q, &s.dq);
            let out = plastic_impact(&model, &s.q, &s.dq, Frame::SwingFoot).unwrap();
            let after = kinetic_energy(&model, &s.q, &out.dq_plus);
            assert!(after <= before + 1e-10);
        }
    }

    #[test]
    fn relabeling_is_an_involution_and_swaps_feet() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let s = random_state(&mut rng);
        let r = relabel_legs(&s);
        let rr = relabel_legs(&r);
        assert_eq!(s, rr);
        let sw_before = foot_kinematics(&model, &s.q, &s.dq, Frame::SwingFoot);
        let st_after = foot_kinematics(&model, &r.q, &r.dq, Frame::StanceFoot);
        assert!((sw_before.pos - st_after.pos).norm() < 1e-12);
        // A symmetric pose is a fixed point.
        let sym = RobotState::new(symmetric_pose(), Vec7::zeros());
        assert_eq!(relabel_legs(&sym), sym);
    }

    #[test]
    fn constrained_dynamics_respects_the_contact() {
        let model = RobotModel::default_biped();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let s = random_state(&mut rng);
            let tau = SVector::<f64, 4>::from_fn(|i, _| (i as f64 - 1.5) * 3.0);
            let (ddq, f) = constrained_accel(&model, &s.q, &s.dq, &tau).unwrap();
            let (j, jdqd) = contact_jacobian(&model, &s.q, &s.dq, Frame::StanceFoot);
            assert!((j * ddq + jdqd).norm() < 1e-8);
            // The KKT solution satisfies the dynamics row exactly.
            let d = mass_matrix(&model, &s.q);
            let h = bias_forces(&model, &s.q, &s.dq);
            let resid = d * ddq + h - actuation_matrix() * tau - j.transpose() * f;
            assert!(resid.norm() < 1e-7);
        }
    }
}
