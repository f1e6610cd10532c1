//! Dense operator-splitting QP solver.
//!
//! Solves
//!
//! ```text
//! minimize    1/2 u' P u + q' u
//! subject to  A_eq u = b_eq,   lo <= u <= hi,   H u <= h
//! ```
//!
//! by stacking every constraint into `l <= A u <= r` and running ADMM on the
//! splitting `A u = w`: an equality-constrained quadratic step (one cached
//! Cholesky factor of `P + sigma I + A' diag(rho) A`), a projection of `w`
//! onto `[l, r]`, and a scaled dual update. Once the iterates settle, the
//! active set read off the duals is used to solve the KKT system directly
//! (polishing), which gives answers accurate to rounding.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Convex QP in the form documented at module level. Build with
/// [`QpProblem::new`] and the `with_*` methods.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub quad_matrix: DMatrix<f64>,
    pub lin_vector: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem; `quad` is symmetrized.
    pub fn new(quad: DMatrix<f64>, lin: DVector<f64>) -> Self {
        let n = lin.len();
        let quad_matrix = (&quad + quad.transpose()) * 0.5;
        QpProblem {
            quad_matrix,
            lin_vector: lin,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            lo: DVector::from_element(n, f64::NEG_INFINITY),
            hi: DVector::from_element(n, f64::INFINITY),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_box(mut self, lo: DVector<f64>, hi: DVector<f64>) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn with_equality(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequality(mut self, h: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = h;
        self.ineq_rhs = rhs;
        self
    }

    pub fn dim(&self) -> usize {
        self.lin_vector.len()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.quad_matrix * u)) + self.lin_vector.dot(u)
    }

    /// Largest violation of any constraint at `u`.
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..u.len() {
            worst = worst.max(self.lo[i] - u[i]).max(u[i] - self.hi[i]);
        }
        if self.eq_matrix.nrows() > 0 {
            let r = &self.eq_matrix * u - &self.eq_rhs;
            worst = worst.max(r.amax());
        }
        if self.ineq_matrix.nrows() > 0 {
            let r = &self.ineq_matrix * u - &self.ineq_rhs;
            worst = worst.max(r.max());
        }
        worst
    }

    /// Shape, finiteness and positive-semidefiniteness checks.
    pub fn check(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            ("qp quad rows", self.quad_matrix.nrows()),
            ("qp quad cols", self.quad_matrix.ncols()),
            ("qp lo", self.lo.len()),
            ("qp hi", self.hi.len()),
            ("qp eq cols", self.eq_matrix.ncols()),
            ("qp ineq cols", self.ineq_matrix.ncols()),
        ];
        for (what, found) in dims {
            crate::error::check_len(what, n, found)?;
        }
        crate::error::check_len("qp eq rhs", self.eq_matrix.nrows(), self.eq_rhs.len())?;
        crate::error::check_len("qp ineq rhs", self.ineq_matrix.nrows(), self.ineq_rhs.len())?;
        if self.quad_matrix.iter().chain(self.lin_vector.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("QP data must be finite".into()));
        }
        if (0..n).any(|i| self.lo[i] > self.hi[i]) {
            return Err(Error::Infeasible("QP box has lo > hi".into()));
        }
        if !probe_psd(&self.quad_matrix, 16) {
            return Err(Error::InvalidParameter("QP cost matrix is not PSD".into()));
        }
        Ok(())
    }
}

/// Random quadratic-form probe: `v' P v >= -eps |P| |v|^2` for `samples`
/// deterministic random directions plus the coordinate axes.
pub fn probe_psd(p: &DMatrix<f64>, samples: usize) -> bool {
    let n = p.nrows();
    let scale = p.amax().max(1e-300);
    let eps = 1e-12 * scale * n as f64;
    for i in 0..n {
        if p[(i, i)] < -eps {
            return false;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_9d5d);
    (0..samples).all(|_| {
        let v = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        v.dot(&(p * &v)) >= -eps * v.norm_squared()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub rho_penalty: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            max_iter: 20_000,
            rho_penalty: 1.0,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.tol_primal > 0.0 && self.tol_dual > 0.0 && self.max_iter > 0 && self.rho_penalty > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("QP settings must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Multipliers of the stacked constraints `[box; eq; ineq]`; positive
    /// entries push against the upper side.
    pub duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

const SIGMA: f64 = 1e-6;
const RELAX: f64 = 1.6;
const RHO_EQ_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const CHECK_EVERY: usize = 5;
const ADAPT_EVERY: usize = 50;
const POLISH_DELTA: f64 = 1e-9;
const EPS_PINF: f64 = 1e-6;

struct Stacked {
    a: DMatrix<f64>,
    l: DVector<f64>,
    r: DVector<f64>,
}

fn stack(problem: &QpProblem) -> Stacked {
    let n = problem.dim();
    let m_eq = problem.eq_matrix.nrows();
    let m_in = problem.ineq_matrix.nrows();
    let m = n + m_eq + m_in;
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut r = DVector::zeros(m);
    for i in 0..n {
        a[(i, i)] = 1.0;
        l[i] = problem.lo[i];
        r[i] = problem.hi[i];
    }
    for k in 0..m_eq {
        a.row_mut(n + k).copy_from(&problem.eq_matrix.row(k));
        l[n + k] = problem.eq_rhs[k];
        r[n + k] = problem.eq_rhs[k];
    }
    for k in 0..m_in {
        a.row_mut(n + m_eq + k).copy_from(&problem.ineq_matrix.row(k));
        l[n + m_eq + k] = f64::NEG_INFINITY;
        r[n + m_eq + k] = problem.ineq_rhs[k];
    }
    Stacked { a, l, r }
}

fn rho_vector(st: &Stacked, rho: f64) -> DVector<f64> {
    DVector::from_fn(st.l.len(), |i, _| {
        if st.l[i] == st.r[i] {
            rho * RHO_EQ_SCALE
        } else if st.l[i] == f64::NEG_INFINITY && st.r[i] == f64::INFINITY {
            RHO_MIN
        } else {
            rho
        }
    })
}

fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = p.nrows();
    let mut scaled = a.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= rho[i];
    }
    let m = p + DMatrix::identity(n, n) * SIGMA + a.transpose() * scaled;
    Cholesky::new(m).ok_or_else(|| Error::InvalidParameter("QP KKT matrix not positive definite".into()))
}

fn clip(v: &DVector<f64>, l: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(r[i]))
}

struct Residuals {
    primal: f64,
    dual: f64,
}

fn residuals(problem: &QpProblem, st: &Stacked, u: &DVector<f64>, w: &DVector<f64>, y: &DVector<f64>) -> Residuals {
    let au = &st.a * u;
    let primal = (&au - w).amax();
    let grad = &problem.quad_matrix * u + &problem.lin_vector + st.a.tr_mul(y);
    Residuals {
        primal,
        dual: grad.amax(),
    }
}

/// Certificate of primal infeasibility from the dual increment `dy`.
fn primal_infeasible(st: &Stacked, dy: &DVector<f64>) -> bool {
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    if st.a.tr_mul(dy).amax() > EPS_PINF * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if st.r[i] == f64::INFINITY {
                return false;
            }
            support += st.r[i] * dy[i];
        } else if dy[i] < 0.0 {
            if st.l[i] == f64::NEG_INFINITY {
                return false;
            }
            support += st.l[i] * dy[i];
        }
    }
    support < -EPS_PINF * norm
}

/// Solve the KKT system on the active set guessed from the ADMM iterate.
fn polish(
    problem: &QpProblem,
    st: &Stacked,
    w: &DVector<f64>,
    y: &DVector<f64>,
    settings: &QpSettings,
) -> Option<(DVector<f64>, DVector<f64>, Residuals)> {
    let n = problem.dim();
    let m = st.l.len();
    // +1 upper active, -1 lower active, 0 inactive.
    let mut side = vec![0i8; m];
    for i in 0..m {
        if st.l[i] == st.r[i] {
            side[i] = 1;
        } else if w[i] - st.l[i] < -y[i] {
            side[i] = -1;
        } else if st.r[i] - w[i] < y[i] {
            side[i] = 1;
        }
    }
    let active: Vec<usize> = (0..m).filter(|&i| side[i] != 0).collect();
    let k = active.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.quad_matrix);
    for (j, &i) in active.iter().enumerate() {
        for c in 0..n {
            kkt[(n + j, c)] = st.a[(i, c)];
            kkt[(c, n + j)] = st.a[(i, c)];
        }
    }
    let mut reg = kkt.clone();
    for i in 0..n {
        reg[(i, i)] += POLISH_DELTA;
    }
    for j in 0..k {
        reg[(n + j, n + j)] -= POLISH_DELTA;
    }
    let lu: LU<f64, Dyn, Dyn> = reg.lu();
    let mut rhs = DVector::zeros(dim);
    for c in 0..n {
        rhs[c] = -problem.lin_vector[c];
    }
    for (j, &i) in active.iter().enumerate() {
        rhs[n + j] = if side[i] > 0 { st.r[i] } else { st.l[i] };
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..6 {
        let res = &rhs - &kkt * &sol;
        if res.amax() <= 1e-14 * (1.0 + rhs.amax()) {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let u = sol.rows(0, n).into_owned();
    let mut duals = DVector::zeros(m);
    for (j, &i) in active.iter().enumerate() {
        duals[i] = sol[n + j];
    }
    // Multipliers must push the right way on inequality rows.
    for &i in &active {
        if st.l[i] != st.r[i] {
            let sign_ok = if side[i] > 0 {
                duals[i] >= -settings.tol_dual
            } else {
                duals[i] <= settings.tol_dual
            };
            if !sign_ok {
                return None;
            }
        }
    }
    let w_new = clip(&(&st.a * &u), &st.l, &st.r);
    let res = residuals(problem, st, &u, &w_new, &duals);
    Some((u, duals, res))
}

/// Solve a convex QP. Returns `Err(Infeasible)` when a certificate of primal
/// infeasibility is found; hitting `max_iter` is reported through
/// [`QpStatus::MaxIter`] together with the best iterate seen.
pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_warm(problem, settings, None)
}

/// [`solve_qp`] with an optional initial primal iterate.
pub fn solve_qp_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    initial: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    settings.validate()?;
    problem.check()?;
    let n = problem.dim();
    let st = stack(problem);
    let m = st.l.len();

    let mut rho_scalar = settings.rho_penalty;
    let mut rho = rho_vector(&st, rho_scalar);
    let mut chol = factor(&problem.quad_matrix, &st.a, &rho)?;

    let mut u = match initial {
        Some(x0) => {
            crate::error::check_len("qp warm start", n, x0.len())?;
            x0.clone()
        }
        None => DVector::zeros(n),
    };
    let mut w = clip(&(&st.a * &u), &st.l, &st.r);
    let mut y = DVector::<f64>::zeros(m);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, Residuals)> = None;

    for iter in 1..=settings.max_iter {
        let rhs = &u * SIGMA - &problem.lin_vector + st.a.tr_mul(&(rho.component_mul(&w) - &y));
        let u_tilde = chol.solve(&rhs);
        let w_tilde = &st.a * &u_tilde;
        let u_next = &u_tilde * RELAX + &u * (1.0 - RELAX);
        let w_relaxed = &w_tilde * RELAX + &w * (1.0 - RELAX);
        let w_next = clip(&(&w_relaxed + y.component_div(&rho)), &st.l, &st.r);
        let y_next = &y + rho.component_mul(&(&w_relaxed - &w_next));
        let dy = &y_next - &y;
        u = u_next;
        w = w_next;
        y = y_next;

        if iter % CHECK_EVERY != 0 && iter != settings.max_iter {
            continue;
        }
        let res = residuals(problem, &st, &u, &w, &y);
        if res.primal <= settings.tol_primal && res.dual <= settings.tol_dual {
            return Ok(finish(problem, u, y, QpStatus::Converged, iter, res));
        }
        if iter >= 2 * CHECK_EVERY {
            if let Some((pu, py, pres)) = polish(problem, &st, &w, &y, settings) {
                if pres.primal <= settings.tol_primal && pres.dual <= settings.tol_dual {
                    return Ok(finish(problem, pu, py, QpStatus::Converged, iter, pres));
                }
            }
        }
        if primal_infeasible(&st, &dy) {
            return Err(Error::Infeasible(format!("QP certificate after {iter} iterations")));
        }
        let score = res.primal.max(res.dual);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, u.clone(), y.clone(), Residuals { primal: res.primal, dual: res.dual }));
        }
        if iter % ADAPT_EVERY == 0 {
            let au = (&st.a * &u).amax();
            let px = (&problem.quad_matrix * &u).amax();
            let aty = st.a.tr_mul(&y).amax();
            let qn = problem.lin_vector.amax();
            let prim_rel = res.primal / au.max(w.amax()).max(1e-12);
            let dual_rel = res.dual / px.max(aty).max(qn).max(1e-12);
            let proposed = (rho_scalar * (prim_rel / dual_rel.max(1e-300)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if proposed > 5.0 * rho_scalar || proposed < rho_scalar / 5.0 {
                let new_rho = rho_vector(&st, proposed);
                if let Ok(c) = factor(&problem.quad_matrix, &st.a, &new_rho) {
                    rho_scalar = proposed;
                    rho = new_rho;
                    chol = c;
                }
            }
        }
    }
    let (_, bu, by, bres) = best.unwrap_or_else(|| {
        let res = residuals(problem, &st, &u, &w, &y);
        (0.0, u.clone(), y.clone(), res)
    });
    Ok(finish(problem, bu, by, QpStatus::MaxIter, settings.max_iter, bres))
}

fn finish(
    problem: &QpProblem,
    u: DVector<f64>,
    duals: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    res: Residuals,
) -> QpSolution {
    let objective = problem.objective(&u);
    QpSolution {
        u,
        duals,
        status,
        iterations,
        primal_residual: res.primal,
        dual_residual: res.dual,
        objective,
    }
}
