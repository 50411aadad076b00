//! Linear inverted pendulum on a virtual slope.
//!
//! The reduced model keeps only the COM position along the slope and the
//! angular momentum about the stance pivot. Its flow has a closed form, its
//! orbital energy is a conserved quantity, and the time at which the COM
//! reaches a given position ahead of the pivot (the step duration) is the
//! root of a scalar residual solved here with a safeguarded Newton method.

use thiserror::Error;

/// Hard cap on a planned step duration; targets further out than this are
/// treated as unreachable.
const MAX_STEP_DURATION: f64 = 10.0;

/// Errors from reduced-model construction and the time-to-impact solve.
#[derive(Debug, Error, PartialEq)]
pub enum LipError {
    /// Pendulum height must be strictly positive.
    #[error("pendulum height must be positive, got {0}")]
    NonPositiveHeight(f64),
    /// Gravity must be strictly positive.
    #[error("gravity must be positive, got {0}")]
    NonPositiveGravity(f64),
    /// The COM never reaches the requested position.
    #[error("target COM position is unreachable on the current orbit")]
    Unreachable,
    /// Forward walking needs positive angular momentum about the pivot.
    #[error("angular momentum must be positive for forward walking, got {0}")]
    NonPositiveMomentum(f64),
}

/// Pendulum constants for one step: height above the virtual slope, gravity
/// and the derived natural frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipParams {
    z_tilde: f64,
    g: f64,
    lambda: f64,
}

impl LipParams {
    /// Builds pendulum constants, deriving `lambda = sqrt(g / z_tilde)`.
    pub fn new(z_tilde: f64, g: f64) -> Result<Self, LipError> {
        if !(z_tilde > 0.0) {
            return Err(LipError::NonPositiveHeight(z_tilde));
        }
        if !(g > 0.0) {
            return Err(LipError::NonPositiveGravity(g));
        }
        Ok(Self {
            z_tilde,
            g,
            lambda: (g / z_tilde).sqrt(),
        })
    }

    /// COM height measured normal to the virtual slope, m.
    pub fn z_tilde(&self) -> f64 {
        self.z_tilde
    }

    /// Gravitational acceleration, m/s^2.
    pub fn g(&self) -> f64 {
        self.g
    }

    /// Natural frequency `sqrt(g / z_tilde)`, 1/s.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Underactuated state of the reduced model: COM position relative to the
/// stance pivot and mass-normalized angular momentum about the pivot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    /// Horizontal COM offset from the stance pivot, m.
    pub x_com: f64,
    /// Mass-normalized angular momentum about the pivot, m^2/s.
    pub l_y: f64,
}

impl ReducedState {
    pub fn new(x_com: f64, l_y: f64) -> Self {
        Self { x_com, l_y }
    }
}

/// Closed-form flow of the pendulum for a duration `t`.
///
/// Solves `x' = L / z_tilde`, `L' = g x` exactly:
/// `x(t) = cosh(lt) x0 + sinh(lt) L0 / (l z)`,
/// `L(t) = l z sinh(lt) x0 + cosh(lt) L0` with `l = lambda`, `z = z_tilde`.
pub fn lip_flow(s0: ReducedState, p: &LipParams, t: f64) -> ReducedState {
    let lt = p.lambda * t;
    let (sh, ch) = (lt.sinh(), lt.cosh());
    let lz = p.lambda * p.z_tilde;
    ReducedState {
        x_com: ch * s0.x_com + sh * s0.l_y / lz,
        l_y: lz * sh * s0.x_com + ch * s0.l_y,
    }
}

/// Orbital energy `(L / z_tilde)^2 - lambda^2 x^2`, conserved along the flow.
///
/// Positive energy means the COM crosses over the pivot; negative energy
/// means it turns around before reaching it.
pub fn orbital_energy(s: ReducedState, p: &LipParams) -> f64 {
    let v = s.l_y / p.z_tilde;
    v * v - p.lambda * p.lambda * s.x_com * s.x_com
}

/// Time at which the COM, flowing forward from `s0`, reaches `x_des`.
///
/// Returns `Unreachable` if the orbit turns around short of the target or
/// the crossing lies beyond [`MAX_STEP_DURATION`], and `NonPositiveMomentum`
/// if the pendulum is not moving forward to begin with.
pub fn time_to_impact(x_des: f64, p: &LipParams, s0: ReducedState) -> Result<f64, LipError> {
    if s0.l_y <= 0.0 {
        return Err(LipError::NonPositiveMomentum(s0.l_y));
    }
    if x_des < s0.x_com {
        return Err(LipError::Unreachable);
    }
    if x_des == s0.x_com {
        return Ok(0.0);
    }

    let lam = p.lambda;
    let lz = lam * p.z_tilde;
    let residual = |t: f64| lip_flow(s0, p, t).x_com - x_des;

    // Bracket the crossing. On a negative-energy orbit the pendulum turns
    // around at a known time, so the root (if any) lies before it; otherwise
    // x grows without bound and doubling finds a sign change quickly.
    let energy = orbital_energy(s0, p);
    let mut hi = if energy < 0.0 && s0.x_com < 0.0 {
        // x(t) = a e^{lt} + b e^{-lt}; the turning point is where x' = 0.
        let a = 0.5 * (s0.x_com + s0.l_y / lz);
        let b = 0.5 * (s0.x_com - s0.l_y / lz);
        ((b / a).ln() / (2.0 * lam)).min(MAX_STEP_DURATION)
    } else {
        let mut t = 1.0;
        while residual(t) < 0.0 && t < MAX_STEP_DURATION {
            t = (2.0 * t).min(MAX_STEP_DURATION);
        }
        t
    };
    if residual(hi) < 0.0 {
        return Err(LipError::Unreachable);
    }
    let mut lo = 0.0;

    // Newton from the analytic seed (exact when x0 = 0), falling back to
    // bisection whenever a step leaves the bracket.
    let mut t = (lz * (x_des - s0.x_com) / s0.l_y.max(1e-9)).asinh() / lam;
    if !(t > lo && t < hi) {
        t = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = residual(t);
        if f.abs() < 1e-12 {
            return Ok(t);
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let df = lip_flow(s0, p, t).l_y / p.z_tilde; // x'(t)
        let newton = t - f / df;
        t = if df.abs() > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    if residual(t).abs() < 1e-10 {
        Ok(t)
    } else {
        Err(LipError::Unreachable)
    }
}
