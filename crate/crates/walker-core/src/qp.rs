//! Dense convex QP solver.
//!
//! Both consumers (the vertical MPC and the task-space controller) solve
//! small, dense, strictly-convexifiable programs at 1 kHz, so the solver is
//! a dual active-set method in the Goldfarb–Idnani style: it starts from
//! the unconstrained minimizer, which is always available after Cholesky
//! regularization, and adds violated constraints one at a time. No feasible
//! starting point (phase 1) is ever needed, and warm starting reduces to
//! verifying the previous active set against the KKT conditions.
//!
//! Problems are stated as
//! `min 0.5 x'Hx + g'x  s.t.  A_eq x = b_eq, A_in x <= b_in, lb <= x <= ub`.
//! Bounds are handled as ordinary inequalities with unit normals; entries
//! may be infinite. Inequality indices used in active sets and duals are
//! `0..m_in` for rows of `A_in`, `m_in + i` for `lb_i`, and `m_in + n + i`
//! for `ub_i`.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("Hessian is not symmetric (max asymmetry {0:.3e})")]
    AsymmetricHessian(f64),
    #[error("Hessian could not be factorized even after regularization")]
    IndefiniteHessian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// Dense QP data. All constraint blocks may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem with infinite bounds.
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(QpError::DimensionMismatch("Hessian"));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::DimensionMismatch("equalities"));
        }
        if self.a_in.ncols() != n || self.a_in.nrows() != self.b_in.len() {
            return Err(QpError::DimensionMismatch("inequalities"));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::DimensionMismatch("bounds"));
        }
        let asym = (&self.h - self.h.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(QpError::AsymmetricHessian(asym));
        }
        Ok(())
    }

    /// Number of inequality slots including both bound blocks.
    fn total_ineq(&self) -> usize {
        self.a_in.nrows() + 2 * self.n()
    }

    /// Inequality `k` in `n'x >= c` form; `None` when the slot is an
    /// infinite bound.
    fn ineq_ge(&self, k: usize) -> Option<(DVector<f64>, f64)> {
        let m = self.a_in.nrows();
        let n = self.n();
        if k < m {
            Some((-self.a_in.row(k).transpose(), -self.b_in[k]))
        } else if k < m + n {
            let i = k - m;
            if self.lb[i].is_finite() {
                let mut v = DVector::zeros(n);
                v[i] = 1.0;
                Some((v, self.lb[i]))
            } else {
                None
            }
        } else if k < m + 2 * n {
            let i = k - m - n;
            if self.ub[i].is_finite() {
                let mut v = DVector::zeros(n);
                v[i] = -1.0;
                Some((v, -self.ub[i]))
            } else {
                None
            }
        } else {
            // A stale warm-start index from a differently sized problem.
            None
        }
    }

    /// Objective value at `x`.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[0] + self.g.dot(x)
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..self.a_eq.nrows() {
            v = v.max((self.a_eq.row(i).transpose().dot(x) - self.b_eq[i]).abs());
        }
        for k in 0..self.total_ineq() {
            if let Some((nrm, c)) = self.ineq_ge(k) {
                v = v.max(c - nrm.dot(x));
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Multipliers for the equality rows (sign-free).
    pub eq_duals: DVector<f64>,
    /// Active inequality slots (see module docs for the index scheme).
    pub active_set: Vec<usize>,
    /// Multipliers for `active_set`, elementwise `>= 0`.
    pub ineq_duals: Vec<f64>,
    /// max of stationarity, feasibility and complementarity residuals.
    pub kkt_residual: f64,
    /// Number of active-set changes performed.
    pub iterations: usize,
}

/// Stateful solver: remembers the last active set for warm starting.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub max_iterations: usize,
    last_active: Option<Vec<usize>>,
}

impl QpSolver {
    pub fn new() -> Self {
        Self {
            max_iterations: 200,
            last_active: None,
        }
    }

    /// Cold solve; also records the resulting active set for later warm
    /// starts.
    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        p.validate()?;
        let sol = dual_active_set(p, self.max_iterations)?;
        if sol.status == QpStatus::Optimal {
            self.last_active = Some(sol.active_set.clone());
        } else {
            self.last_active = None;
        }
        Ok(sol)
    }

    /// Warm solve: first tries to verify `warm_set` as the optimal active
    /// set (one KKT solve, zero active-set changes); falls back to a cold
    /// solve.
    pub fn solve_warm(&mut self, p: &QpProblem, warm_set: &[usize]) -> Result<QpSolution, QpError> {
        p.validate()?;
        if let Some(sol) = try_active_set(p, warm_set) {
            self.last_active = Some(sol.active_set.clone());
            return Ok(sol);
        }
        self.solve(p)
    }

    /// Warm solve seeded by the previous call on this solver instance.
    pub fn solve_reusing_last(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        match self.last_active.take() {
            Some(set) => self.solve_warm(p, &set),
            None => self.solve(p),
        }
    }
}

const FEAS_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-12;
/// Relative residual above which a nominally converged solve is no longer
/// reported as optimal.  Healthy solves land many orders of magnitude
/// below this; only numerically degenerate instances trip it.
const KKT_DEMOTE_TOL: f64 = 1e-7;

/// Cholesky of `H`, regularizing PSD-but-singular Hessians by `eps * I`.
fn factor_hessian(h: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, QpError> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok(c);
    }
    let n = h.nrows();
    for eps in [1e-9, 1e-9 * h.abs().max().max(1.0), 1e-6 * h.abs().max().max(1.0)] {
        let reg = h + DMatrix::identity(n, n) * eps;
        if let Some(c) = Cholesky::new(reg) {
            return Ok(c);
        }
    }
    Err(QpError::IndefiniteHessian)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActiveKind {
    Eq(usize),
    Ineq(usize),
}

struct Directions {
    /// Primal step (applied with the incoming normal).
    z: DVector<f64>,
    /// Dual adjustments for the current active set.
    r: DVector<f64>,
}

/// Computes the GI step directions for incoming normal `n_p` given the
/// active normals `n_active` (columns). Returns `None` when the active
/// Gram matrix is singular (linearly dependent active set).
fn directions(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    n_active: &DMatrix<f64>,
    n_p: &DVector<f64>,
) -> Option<Directions> {
    let v = chol.solve(n_p);
    if n_active.ncols() == 0 {
        return Some(Directions {
            z: v,
            r: DVector::zeros(0),
        });
    }
    let b = chol.solve(n_active);
    let gram = n_active.transpose() * &b;
    let gram_chol = Cholesky::new(gram)?;
    let r = gram_chol.solve(&(n_active.transpose() * &v));
    let z = &v - &b * &r;
    Some(Directions { z, r })
}

fn dual_active_set(p: &QpProblem, max_iterations: usize) -> Result<QpSolution, QpError> {
    let n = p.n();
    let chol = factor_hessian(&p.h)?;
    let mut x = chol.solve(&(-&p.g));
    let mut active: Vec<ActiveKind> = Vec::new();
    let mut duals: Vec<f64> = Vec::new();
    let mut normals = DMatrix::<f64>::zeros(n, 0);
    let mut iterations = 0usize;

    let push_active = |normals: &mut DMatrix<f64>, nrm: &DVector<f64>| {
        let cols = normals.ncols();
        let mut grown = DMatrix::zeros(n, cols + 1);
        grown.view_mut((0, 0), (n, cols)).copy_from(normals);
        grown.set_column(cols, nrm);
        *normals = grown;
    };
    let remove_active = |normals: &mut DMatrix<f64>, col: usize| {
        *normals = normals.clone().remove_column(col);
    };

    // Equalities first; they never leave the active set and their duals are
    // sign-free, so each is driven to zero residual in one step.
    for i in 0..p.a_eq.nrows() {
        let nrm = p.a_eq.row(i).transpose();
        let c = p.b_eq[i];
        let s = nrm.dot(&x) - c;
        let dir = directions(&chol, &normals, &nrm);
        match dir {
            Some(d) => {
                let curv = nrm.dot(&d.z);
                if curv.abs() <= 1e-12 {
                    // Linearly dependent on previous equalities.
                    if s.abs() > 1e-8 {
                        return Ok(infeasible_solution(p, x));
                    }
                    continue;
                }
                let t = -s / curv;
                x += t * &d.z;
                for (u, rj) in duals.iter_mut().zip(d.r.iter()) {
                    *u -= t * rj;
                }
                active.push(ActiveKind::Eq(i));
                duals.push(t);
                push_active(&mut normals, &nrm);
            }
            None => return Ok(infeasible_solution(p, x)),
        }
    }

    loop {
        // Most violated inequality (ties resolved toward the smallest
        // index by strict comparison).
        let mut worst: Option<(usize, DVector<f64>, f64, f64)> = None;
        for k in 0..p.total_ineq() {
            if active.contains(&ActiveKind::Ineq(k)) {
                continue;
            }
            if let Some((nrm, c)) = p.ineq_ge(k) {
                let s = nrm.dot(&x) - c;
                if s < -FEAS_TOL && worst.as_ref().is_none_or(|w| s < w.3) {
                    worst = Some((k, nrm, c, s));
                }
            }
        }
        let Some((k, nrm, c, _)) = worst else {
            let sol = finish_optimal(p, x, active, duals, iterations);
            // Optimality is a verified claim.  The residual is absolute, so
            // compare it against the magnitude of the stationarity equation
            // itself; when roundoff (extreme scaling, near-singular working
            // sets) leaves a relative residual the caller could not rely
            // on, report the solve as iteration-limited instead.
            let scale = (&p.h * &sol.x).abs().max().max(p.g.abs().max()).max(1.0);
            if sol.kkt_residual > KKT_DEMOTE_TOL * scale {
                return Ok(QpSolution {
                    status: QpStatus::IterationLimit,
                    ..sol
                });
            }
            return Ok(sol);
        };

        // Work constraint k into the active set, dropping blockers as
        // needed.
        let mut u_p = 0.0;
        loop {
            if iterations >= max_iterations {
                return Ok(QpSolution {
                    x,
                    status: QpStatus::IterationLimit,
                    eq_duals: DVector::zeros(p.a_eq.nrows()),
                    active_set: Vec::new(),
                    ineq_duals: Vec::new(),
                    kkt_residual: f64::INFINITY,
                    iterations,
                });
            }
            let s = nrm.dot(&x) - c;
            if s >= -FEAS_TOL {
                // Satisfied while dropping blockers; treat as active with
                // the accumulated dual.
                active.push(ActiveKind::Ineq(k));
                duals.push(u_p);
                push_active(&mut normals, &nrm);
                iterations += 1;
                break;
            }
            let Some(d) = directions(&chol, &normals, &nrm) else {
                return Ok(infeasible_solution(p, x));
            };
            let curv = nrm.dot(&d.z);
            // Dual step bound: first active inequality whose multiplier
            // would cross zero.
            let mut t1 = f64::INFINITY;
            let mut blocker = None;
            for (j, (kind, u)) in active.iter().zip(duals.iter()).enumerate() {
                if let ActiveKind::Ineq(_) = kind {
                    let rj = d.r[j];
                    if rj > DUAL_TOL {
                        let ratio = u / rj;
                        if ratio < t1 {
                            t1 = ratio;
                            blocker = Some(j);
                        }
                    }
                }
            }
            let t2 = if curv > 1e-12 {
                -s / curv
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(infeasible_solution(p, x));
            }
            if curv > 1e-12 {
                x += t * &d.z;
            }
            for (u, rj) in duals.iter_mut().zip(d.r.iter()) {
                *u -= t * rj;
            }
            u_p += t;
            if t2 <= t1 {
                active.push(ActiveKind::Ineq(k));
                duals.push(u_p);
                push_active(&mut normals, &nrm);
                iterations += 1;
                break;
            }
            let j = blocker.expect("finite t1 implies a blocking constraint");
            active.remove(j);
            duals.remove(j);
            remove_active(&mut normals, j);
            iterations += 1;
        }
    }
}

fn infeasible_solution(p: &QpProblem, x: DVector<f64>) -> QpSolution {
    QpSolution {
        x,
        status: QpStatus::Infeasible,
        eq_duals: DVector::zeros(p.a_eq.nrows()),
        active_set: Vec::new(),
        ineq_duals: Vec::new(),
        kkt_residual: f64::INFINITY,
        iterations: 0,
    }
}

fn finish_optimal(
    p: &QpProblem,
    x: DVector<f64>,
    active: Vec<ActiveKind>,
    duals: Vec<f64>,
    iterations: usize,
) -> QpSolution {
    let mut eq_duals = DVector::zeros(p.a_eq.nrows());
    let mut active_set = Vec::new();
    let mut ineq_duals = Vec::new();
    for (kind, u) in active.iter().zip(duals.iter()) {
        match kind {
            ActiveKind::Eq(i) => eq_duals[*i] = *u,
            ActiveKind::Ineq(k) => {
                active_set.push(*k);
                ineq_duals.push(u.max(0.0));
            }
        }
    }
    let kkt_residual = kkt_residual(p, &x, &eq_duals, &active_set, &ineq_duals);
    QpSolution {
        x,
        status: QpStatus::Optimal,
        eq_duals,
        active_set,
        ineq_duals,
        kkt_residual,
        iterations,
    }
}

/// Stationarity, primal feasibility and complementarity residual.
fn kkt_residual(
    p: &QpProblem,
    x: &DVector<f64>,
    eq_duals: &DVector<f64>,
    active_set: &[usize],
    ineq_duals: &[f64],
) -> f64 {
    let mut grad = &p.h * x + &p.g;
    for i in 0..p.a_eq.nrows() {
        grad -= eq_duals[i] * p.a_eq.row(i).transpose();
    }
    let mut compl: f64 = 0.0;
    for (k, u) in active_set.iter().zip(ineq_duals.iter()) {
        if let Some((nrm, c)) = p.ineq_ge(*k) {
            grad -= *u * &nrm;
            compl = compl.max((u * (nrm.dot(x) - c)).abs());
        }
    }
    grad.abs().max().max(p.max_violation(x)).max(compl)
}

/// Solves with `warm_set` treated as equalities and verifies the full KKT
/// conditions. Returns `None` unless everything checks out.
fn try_active_set(p: &QpProblem, warm_set: &[usize]) -> Option<QpSolution> {
    let n = p.n();
    let chol = factor_hessian(&p.h).ok()?;
    let m_eq = p.a_eq.nrows();
    let mut cols: Vec<(DVector<f64>, f64)> = Vec::with_capacity(m_eq + warm_set.len());
    for i in 0..m_eq {
        cols.push((p.a_eq.row(i).transpose(), p.b_eq[i]));
    }
    for &k in warm_set {
        cols.push(p.ineq_ge(k)?);
    }
    let x;
    let mut all_duals = DVector::zeros(cols.len());
    if cols.is_empty() {
        x = chol.solve(&(-&p.g));
    } else {
        let mut nmat = DMatrix::zeros(n, cols.len());
        let mut c = DVector::zeros(cols.len());
        for (j, (nrm, cj)) in cols.iter().enumerate() {
            nmat.set_column(j, nrm);
            c[j] = *cj;
        }
        // Stationarity: H x + g = N u with N' x = c.
        let b = chol.solve(&nmat);
        let gram = nmat.transpose() * &b;
        let gram_chol = Cholesky::new(gram)?;
        let v = chol.solve(&(-&p.g));
        all_duals = gram_chol.solve(&(&c - nmat.transpose() * &v));
        x = &v + &b * &all_duals;
    }
    for j in 0..warm_set.len() {
        if all_duals[m_eq + j] < -1e-9 {
            return None;
        }
    }
    if p.max_violation(&x) > 1e-9 {
        return None;
    }
    let eq_duals = DVector::from_iterator(m_eq, (0..m_eq).map(|i| all_duals[i]));
    let ineq_duals: Vec<f64> = (0..warm_set.len())
        .map(|j| all_duals[m_eq + j].max(0.0))
        .collect();
    let resid = kkt_residual(p, &x, &eq_duals, warm_set, &ineq_duals);
    if resid > 1e-8 {
        return None;
    }
    Some(QpSolution {
        x,
        status: QpStatus::Optimal,
        eq_duals,
        active_set: warm_set.to_vec(),
        ineq_duals,
        kkt_residual: resid,
        iterations: 0,
    })
}
