//! Per-agent best responses against a fixed price signal.
//!
//! Every agent subproblem in the crate has the form
//!
//! ```text
//! minimize  V_i(x, u) + 1/2 c' Q c + l' c     with c = u or c = x = C u + D
//! ```
//!
//! over the agent's polytope. The plain best response `mu_i(y)` is `Q = 0,
//! l = y`; the ADMM agent block adds a proximal term; the exact finite-N
//! deviation problem used for Nash gaps folds the agent's own effect on the
//! aggregate into `Q` and `l`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::model::{AffineMap, AgentSpec, CouplingMode, LinearOp, ProblemInstance};
use crate::qp::{project_box, project_box_budget, solve_qp, QpProblem, QpSettings, QpStatus};
use crate::vecops::dot;

/// Regularization added to every agent QP so degenerate (`eta = 0`) cases
/// still have a unique minimizer.
pub const JITTER: f64 = 1e-10;
/// Default first-order optimality tolerance for best responses.
pub const OPT_TOL: f64 = 1e-7;
const STATE_TOL: f64 = 1e-9;

/// Best response of one agent to the price `y` (`mu_i(y)`).
#[derive(Debug, Clone, Copy)]
pub struct BestResponseQuery<'a> {
    pub agent: &'a AgentSpec,
    pub map: &'a AffineMap,
    pub price_signal: &'a [f64],
    pub mode: CouplingMode,
}

impl<'a> BestResponseQuery<'a> {
    /// Query for agent `i` of `instance`, coupled as the instance says.
    pub fn new(instance: &'a ProblemInstance, i: usize, price: &'a [f64]) -> Self {
        BestResponseQuery {
            agent: instance.agent(i),
            map: instance.map(i),
            price_signal: price,
            mode: instance.mode(),
        }
    }

    pub fn with_mode(mut self, mode: CouplingMode) -> Self {
        self.mode = mode;
        self
    }

    fn objective(&self) -> LocalObjective<'a> {
        LocalObjective::new(
            self.agent,
            self.map,
            self.mode,
            LinearOp::Scaled(0.0),
            self.price_signal.to_vec(),
        )
    }
}

/// `argmin_u V_i(x, u) + y . coupled` over the agent's admissible set.
pub fn best_response(query: &BestResponseQuery<'_>, settings: &QpSettings) -> Result<Vec<f64>> {
    check_len("price signal", query.map.dim(), query.price_signal.len())?;
    if query.price_signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("price signal must be finite".into()));
    }
    query.objective().minimize(settings)
}

/// Optimal value of the frozen-price problem, `V_i + y . coupled` at the
/// best response.
pub fn best_response_value(query: &BestResponseQuery<'_>, settings: &QpSettings) -> Result<f64> {
    let u = best_response(query, settings)?;
    Ok(query.objective().value(&u))
}

/// A quadratic agent subproblem; see the module docs.
#[derive(Debug, Clone)]
pub struct LocalObjective<'a> {
    agent: &'a AgentSpec,
    map: &'a AffineMap,
    mode: CouplingMode,
    coupled_quad: LinearOp,
    coupled_lin: Vec<f64>,
}

impl<'a> LocalObjective<'a> {
    /// `coupled_quad` must be symmetric positive semidefinite.
    pub fn new(
        agent: &'a AgentSpec,
        map: &'a AffineMap,
        mode: CouplingMode,
        coupled_quad: LinearOp,
        coupled_lin: Vec<f64>,
    ) -> Self {
        LocalObjective {
            agent,
            map,
            mode,
            coupled_quad,
            coupled_lin,
        }
    }

    /// The proximal agent block of consensus ADMM:
    /// `V_i + price . c + rho/2 |c - anchor|^2`.
    pub fn proximal(
        instance: &'a ProblemInstance,
        i: usize,
        price: &[f64],
        rho: f64,
        anchor: &[f64],
    ) -> Self {
        let lin = price.iter().zip(anchor).map(|(p, a)| p - rho * a).collect();
        LocalObjective::new(instance.agent(i), instance.map(i), instance.mode(), LinearOp::Scaled(rho), lin)
    }

    fn coupled(&self, u: &[f64]) -> Vec<f64> {
        match self.mode {
            CouplingMode::ControlAverage => u.to_vec(),
            CouplingMode::StateAverage => self.map.apply(u),
        }
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        let x = self.map.apply(u);
        let c = self.coupled(u);
        let qc = self.coupled_quad.apply(&c);
        self.agent.running_cost(&x, u) + 0.5 * dot(&c, &qc) + dot(&self.coupled_lin, &c)
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let a = self.agent;
        let x = self.map.apply(u);
        let c = self.coupled(u);
        let qc = self.coupled_quad.apply(&c);
        let dc: Vec<f64> = qc.iter().zip(&self.coupled_lin).map(|(q, l)| q + l).collect();
        let from_state = self.map.transpose_apply(&x.iter().map(|v| 2.0 * a.state_weight * v).collect::<Vec<_>>());
        let from_coupled = match self.mode {
            CouplingMode::ControlAverage => dc,
            CouplingMode::StateAverage => self.map.transpose_apply(&dc),
        };
        (0..u.len())
            .map(|t| 2.0 * a.control_weight * u[t] + a.linear_cost[t] + from_state[t] + from_coupled[t])
            .collect()
    }

    /// `P` and `q` of the equivalent QP in `u`, without jitter.
    pub fn quadratic_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let a = self.agent;
        let k = self.map.dim();
        let c = &self.map.matrix_c;
        let d = &self.map.offset_d;
        let mut p = DMatrix::identity(k, k) * (2.0 * a.control_weight);
        let mut q = DVector::from_column_slice(&a.linear_cost);
        if a.state_weight != 0.0 {
            p += c.tr_mul(c) * (2.0 * a.state_weight);
            q += c.tr_mul(d) * (2.0 * a.state_weight);
        }
        let qd = self.coupled_quad.to_dense(k);
        let lin = DVector::from_column_slice(&self.coupled_lin);
        match self.mode {
            CouplingMode::ControlAverage => {
                p += &qd;
                q += lin;
            }
            CouplingMode::StateAverage => {
                p += c.tr_mul(&(&qd * c));
                q += c.tr_mul(&(&qd * d + lin));
            }
        }
        (p, q)
    }

    /// When the objective is `p/2 |u|^2 + q . u` with scalar `p > 0`, the
    /// minimizer over box and budget is a Euclidean projection of `-q/p`.
    fn isotropic(&self) -> Option<(f64, Vec<f64>)> {
        if self.agent.state_weight != 0.0 || self.mode != CouplingMode::ControlAverage {
            return None;
        }
        let LinearOp::Scaled(s) = self.coupled_quad else {
            return None;
        };
        let p = 2.0 * self.agent.control_weight + s + JITTER;
        if p < 1e-8 {
            return None;
        }
        let q: Vec<f64> = self
            .agent
            .linear_cost
            .iter()
            .zip(&self.coupled_lin)
            .map(|(r, l)| r + l)
            .collect();
        Some((p, q))
    }

    fn states_ok(&self, u: &[f64]) -> bool {
        let x = self.map.apply(u);
        x.iter()
            .zip(self.agent.x_min.iter().zip(&self.agent.x_max))
            .all(|(v, (lo, hi))| *v >= lo - STATE_TOL && *v <= hi + STATE_TOL)
    }

    /// Minimize over the agent's admissible set.
    pub fn minimize(&self, settings: &QpSettings) -> Result<Vec<f64>> {
        let agent = self.agent;
        if let Some((p, q)) = self.isotropic() {
            let target: Vec<f64> = q.iter().map(|v| -v / p).collect();
            let relaxed = match agent.budget {
                Some(b) => project_box_budget(&target, &agent.u_min, &agent.u_max, b)
                    .map_err(|_| Error::AgentInfeasible { agent: agent.id })?,
                None => project_box(&target, &agent.u_min, &agent.u_max),
            };
            if self.states_ok(&relaxed) {
                return Ok(relaxed);
            }
        }
        let (mut p, q) = self.quadratic_form();
        let k = p.nrows();
        p += DMatrix::identity(k, k) * JITTER;
        let qp = constrained_qp(agent, self.map, p, q);
        match solve_qp(&qp, settings) {
            Ok(sol) if sol.status == QpStatus::Converged => Ok(sol.u.as_slice().to_vec()),
            Ok(sol) => Err(Error::QpMaxIter {
                agent: agent.id,
                iterations: sol.iterations,
            }),
            Err(Error::Infeasible(_)) => Err(Error::AgentInfeasible { agent: agent.id }),
            Err(e) => Err(e),
        }
    }
}

/// The agent's polytope (control box, budget, lifted state bounds) attached
/// to the cost `1/2 u' P u + q' u`.
pub fn constrained_qp(agent: &AgentSpec, map: &AffineMap, p: DMatrix<f64>, q: DVector<f64>) -> QpProblem {
    let k = map.dim();
    let mut qp = QpProblem::new(p, q).with_box(
        DVector::from_column_slice(&agent.u_min),
        DVector::from_column_slice(&agent.u_max),
    );
    if let Some(b) = agent.budget {
        qp = qp.with_equality(DMatrix::from_element(1, k, 1.0), DVector::from_element(1, b));
    }
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for t in 0..k {
        let row: Vec<f64> = map.matrix_c.row(t).iter().copied().collect();
        if agent.x_max[t].is_finite() {
            rows.push((row.clone(), agent.x_max[t] - map.offset_d[t]));
        }
        if agent.x_min[t].is_finite() {
            rows.push((row.iter().map(|v| -v).collect(), map.offset_d[t] - agent.x_min[t]));
        }
    }
    if !rows.is_empty() {
        let h = DMatrix::from_fn(rows.len(), k, |r, c| rows[r].0[c]);
        let rhs = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        qp = qp.with_inequality(h, rhs);
    }
    qp
}
