//! Adaptive Dormand–Prince 4(5) integration with dense output.
//!
//! The hybrid simulator integrates the closed-loop dynamics one control
//! period at a time and needs the guard crossing localized far below the
//! step size, so every accepted step exposes a quartic interpolant
//! ([`DenseSegment`]) that event bisection can evaluate anywhere inside the
//! step.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OdeError {
    /// The error controller pushed the step below the representable limit,
    /// usually a sign of a singular right-hand side.
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    /// Safety valve against runaway adaptivity.
    #[error("exceeded {max_steps} steps at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
}

/// Integration tolerances and limits.
#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub atol: f64,
    pub rtol: f64,
    /// Largest step the controller may take, s.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            atol: 1e-9,
            rtol: 1e-9,
            h_max: 0.1,
            max_steps: 100_000,
        }
    }
}

/// One accepted step with its dense-output interpolant.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t_start: f64,
    pub t_end: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseSegment {
    /// Evaluates the interpolant at `t` inside `[t_start, t_end]`.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let h = self.t_end - self.t_start;
        let s = if h == 0.0 { 0.0 } else { (t - self.t_start) / h };
        let s1 = 1.0 - s;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        r1 + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5)))
    }
}

/// Bisects a scalar function of the dense output down to `tol` seconds.
///
/// Requires `g` to change sign between `t_lo` and `t_hi` (crossing from
/// positive to non-positive). Returns the crossing time and interpolated
/// state.
pub fn locate_crossing(
    seg: &DenseSegment,
    g: impl Fn(f64, &DVector<f64>) -> f64,
    mut t_lo: f64,
    mut t_hi: f64,
    tol: f64,
) -> (f64, DVector<f64>) {
    debug_assert!(g(t_lo, &seg.eval(t_lo)) > 0.0);
    debug_assert!(g(t_hi, &seg.eval(t_hi)) <= 0.0);
    while t_hi - t_lo > tol {
        let mid = 0.5 * (t_lo + t_hi);
        if g(mid, &seg.eval(mid)) > 0.0 {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    (t_hi, seg.eval(t_hi))
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const BH1: f64 = 5179.0 / 57600.0;
const BH3: f64 = 7571.0 / 16695.0;
const BH4: f64 = 393.0 / 640.0;
const BH5: f64 = -92097.0 / 339200.0;
const BH6: f64 = 187.0 / 2100.0;
const BH7: f64 = 1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
// Dense-output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive integrator that keeps its last accepted step size, so repeated
/// short windows (the 1 kHz control cadence) do not restart the controller.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub opts: Dopri5Options,
    h_last: Option<f64>,
}

impl Dopri5 {
    pub fn new(opts: Dopri5Options) -> Self {
        Self { opts, h_last: None }
    }

    /// Forgets the carried step size (call after a discontinuity such as an
    /// impact).
    pub fn reset(&mut self) {
        self.h_last = None;
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t_end`.
    ///
    /// `on_segment` sees every accepted step in order; returning `false`
    /// stops the integration and yields the state at that segment's end.
    /// Returns `(t_reached, y_at_t_reached)`.
    pub fn integrate<F>(
        &mut self,
        mut f: F,
        t0: f64,
        y0: &DVector<f64>,
        t_end: f64,
        mut on_segment: impl FnMut(&DenseSegment) -> bool,
    ) -> Result<(f64, DVector<f64>), OdeError>
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        let n = y0.len();
        let span = t_end - t0;
        if span <= 0.0 {
            return Ok((t0, y0.clone()));
        }
        let mut t = t0;
        let mut y = y0.clone();
        let mut k: Vec<DVector<f64>> = (0..7).map(|_| DVector::zeros(n)).collect();
        let mut ytmp = DVector::zeros(n);
        f(t, &y, &mut k[0]);
        let mut h = self.h_last.unwrap_or(span).min(self.opts.h_max).min(span);

        for _step in 0..self.opts.max_steps {
            // Within a few ulps of the end counts as arrived; otherwise the
            // leftover sliver would trip the underflow guard.
            if t_end - t <= 4.0 * f64::EPSILON * t_end.abs().max(1.0) {
                return Ok((t_end, y));
            }
            h = h.min(t_end - t);
            if h < f64::EPSILON * t.abs().max(1.0) {
                return Err(OdeError::StepSizeUnderflow { t });
            }

            ytmp.copy_from(&y);
            ytmp.axpy(h * A21, &k[0], 1.0);
            f(t + C2 * h, &ytmp, &mut k[1]);

            ytmp.copy_from(&y);
            ytmp.axpy(h * A31, &k[0], 1.0);
            ytmp.axpy(h * A32, &k[1], 1.0);
            f(t + C3 * h, &ytmp, &mut k[2]);

            ytmp.copy_from(&y);
            ytmp.axpy(h * A41, &k[0], 1.0);
            ytmp.axpy(h * A42, &k[1], 1.0);
            ytmp.axpy(h * A43, &k[2], 1.0);
            f(t + C4 * h, &ytmp, &mut k[3]);

            ytmp.copy_from(&y);
            ytmp.axpy(h * A51, &k[0], 1.0);
            ytmp.axpy(h * A52, &k[1], 1.0);
            ytmp.axpy(h * A53, &k[2], 1.0);
            ytmp.axpy(h * A54, &k[3], 1.0);
            f(t + C5 * h, &ytmp, &mut k[4]);

            ytmp.copy_from(&y);
            ytmp.axpy(h * A61, &k[0], 1.0);
            ytmp.axpy(h * A62, &k[1], 1.0);
            ytmp.axpy(h * A63, &k[2], 1.0);
            ytmp.axpy(h * A64, &k[3], 1.0);
            ytmp.axpy(h * A65, &k[4], 1.0);
            f(t + h, &ytmp, &mut k[5]);

            // Fifth-order solution (also the seventh stage point, FSAL).
            let mut y1 = y.clone();
            y1.axpy(h * B1, &k[0], 1.0);
            y1.axpy(h * B3, &k[2], 1.0);
            y1.axpy(h * B4, &k[3], 1.0);
            y1.axpy(h * B5, &k[4], 1.0);
            y1.axpy(h * B6, &k[5], 1.0);
            f(t + h, &y1, &mut k[6]);

            // Embedded fourth-order error estimate.
            let mut err_norm_sq = 0.0;
            for i in 0..n {
                let e = h
                    * ((B1 - BH1) * k[0][i]
                        + (B3 - BH3) * k[2][i]
                        + (B4 - BH4) * k[3][i]
                        + (B5 - BH5) * k[4][i]
                        + (B6 - BH6) * k[5][i]
                        - BH7 * k[6][i]);
                let scale = self.opts.atol + self.opts.rtol * y[i].abs().max(y1[i].abs());
                err_norm_sq += (e / scale) * (e / scale);
            }
            let err = (err_norm_sq / n as f64).sqrt();

            if err <= 1.0 {
                let ydiff = &y1 - &y;
                let rcont3 = h * &k[0] - &ydiff;
                let rcont4 = &ydiff - h * &k[6] - &rcont3;
                let rcont5 = h
                    * (D1 * &k[0] + D3 * &k[2] + D4 * &k[3] + D5 * &k[4] + D6 * &k[5]
                        + D7 * &k[6]);
                let seg = DenseSegment {
                    t_start: t,
                    t_end: t + h,
                    rcont: [y.clone(), ydiff, rcont3, rcont4, rcont5],
                };
                t += h;
                y = y1;
                k.swap(0, 6); // FSAL: last stage is the next step's first.
                let grow = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
                h = (h * grow).min(self.opts.h_max);
                self.h_last = Some(h);
                if !on_segment(&seg) {
                    return Ok((seg.t_end, y));
                }
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        Err(OdeError::MaxStepsExceeded {
            t,
            max_steps: self.opts.max_steps,
        })
    }
}
