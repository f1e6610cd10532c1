use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::model::TimeGrid;

/// One agent: scalar linear dynamics, a separable convex running cost and a
/// polytope of admissible controls.
///
/// Dynamics are `x(t) = alpha * x(t-1) + beta * u(t)` for `t = 1..=K`, seeded
/// with `x(0) = x0`. The running cost is
/// `V(x, u) = state_weight * |x|^2 + control_weight * |u|^2 + linear_cost . u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub alpha: f64,
    pub beta: f64,
    pub x0: f64,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    /// Required total control `sum_t u(t)`, if any.
    pub budget: Option<f64>,
    pub control_weight: f64,
    pub state_weight: f64,
    pub linear_cost: Vec<f64>,
}

impl AgentSpec {
    /// An agent with uniform per-period bounds, unit integrator dynamics and
    /// zero cost. Chain the `with_*` setters to fill in the rest.
    pub fn integrator(id: usize, horizon: usize, x_max: f64, u_max: f64) -> Self {
        AgentSpec {
            id,
            alpha: 1.0,
            beta: 1.0,
            x0: 0.0,
            x_min: vec![0.0; horizon],
            x_max: vec![x_max; horizon],
            u_min: vec![0.0; horizon],
            u_max: vec![u_max; horizon],
            budget: None,
            control_weight: 0.0,
            state_weight: 0.0,
            linear_cost: vec![0.0; horizon],
        }
    }

    /// EV charging agent: running cost `eta |u|^2 + 2 gamma c^T u` with a
    /// uniform price offset `c`.
    #[allow(clippy::too_many_arguments)]
    pub fn ev(
        id: usize,
        horizon: usize,
        x0: f64,
        capacity: f64,
        max_rate: f64,
        energy: f64,
        eta: f64,
        gamma: f64,
        price_offset: f64,
    ) -> Self {
        AgentSpec::integrator(id, horizon, capacity, max_rate)
            .with_x0(x0)
            .with_budget(Some(energy))
            .with_control_weight(eta)
            .with_linear_cost(vec![2.0 * gamma * price_offset; horizon])
    }

    pub fn with_dynamics(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn with_budget(mut self, budget: Option<f64>) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_control_weight(mut self, w: f64) -> Self {
        self.control_weight = w;
        self
    }

    pub fn with_state_weight(mut self, w: f64) -> Self {
        self.state_weight = w;
        self
    }

    pub fn with_linear_cost(mut self, r: Vec<f64>) -> Self {
        self.linear_cost = r;
        self
    }

    pub fn with_state_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.x_min = lo;
        self.x_max = hi;
        self
    }

    pub fn with_control_bounds(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Self {
        self.u_min = lo;
        self.u_max = hi;
        self
    }

    pub(crate) fn check_dims(&self, horizon: usize) -> Result<()> {
        check_len("agent x_min", horizon, self.x_min.len())?;
        check_len("agent x_max", horizon, self.x_max.len())?;
        check_len("agent u_min", horizon, self.u_min.len())?;
        check_len("agent u_max", horizon, self.u_max.len())?;
        check_len("agent linear_cost", horizon, self.linear_cost.len())
    }

    /// `V(x, u)` for a state trajectory `x` and control trajectory `u`.
    pub fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let uu: f64 = u.iter().map(|v| v * v).sum();
        let lin: f64 = self.linear_cost.iter().zip(u).map(|(r, v)| r * v).sum();
        self.state_weight * xx + self.control_weight * uu + lin
    }
}

/// Affine map from a stacked control trajectory to the stacked states:
/// `x = C u + D`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix_c: DMatrix<f64>,
    pub offset_d: DVector<f64>,
}

impl AffineMap {
    pub fn dim(&self) -> usize {
        self.offset_d.len()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(u);
        (&self.matrix_c * u + &self.offset_d).as_slice().to_vec()
    }

    /// `C^T v`.
    pub fn transpose_apply(&self, v: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(v);
        self.matrix_c.tr_mul(&v).as_slice().to_vec()
    }
}

/// Stack the scalar recursion into `x = C u + D`.
///
/// `C[t][s] = alpha^(t-s) * beta` for `s <= t` (lower triangular) and
/// `D[t] = alpha^(t+1) * x0`, with zero-based `t`.
pub fn lift_dynamics(agent: &AgentSpec, grid: &TimeGrid) -> Result<AffineMap> {
    let k = grid.horizon();
    agent.check_dims(k)?;
    let mut powers = vec![1.0; k + 1];
    for t in 1..=k {
        powers[t] = powers[t - 1] * agent.alpha;
    }
    let matrix_c = DMatrix::from_fn(k, k, |t, s| {
        if s <= t {
            powers[t - s] * agent.beta
        } else {
            0.0
        }
    });
    let offset_d = DVector::from_fn(k, |t, _| powers[t + 1] * agent.x0);
    Ok(AffineMap { matrix_c, offset_d })
}

/// Step-by-step simulation of the recursion.
pub fn simulate(agent: &AgentSpec, u: &[f64]) -> Vec<f64> {
    let mut x = agent.x0;
    u.iter()
        .map(|&ut| {
            x = agent.alpha * x + agent.beta * ut;
            x
        })
        .collect()
}
