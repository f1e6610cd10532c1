//! Equilibrium-finding schemes: the price-based primal-dual iteration (with
//! constant or diminishing steps) and consensus ADMM on the welfare program.

use rayon::prelude::*;

use crate::agent_solver::{best_response, BestResponseQuery, LocalObjective};
use crate::error::{check_len, Error, Result};
use crate::model::{
    aggregate, coupled_variable, social_welfare, validate_instance, Algorithm, CouplingMode,
    Diagnostics, ProblemInstance, Solution, TraceRow,
};
use crate::qp::QpSettings;
use crate::vecops::{dist, mean, norm, sub};
use crate::verification::{potential_condition_check, PotentialProbe};

/// Default stopping tolerance on the primal and dual residuals.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Iterates of the coordination schemes.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub controls: Vec<Vec<f64>>,
    /// Coordinator variable `z`.
    pub aggregate_z: Vec<f64>,
    /// Price for the next round.
    pub dual_price: Vec<f64>,
    /// Price the current controls responded to.
    pub response_price: Vec<f64>,
    pub iter: usize,
    pub residual_trace: Vec<TraceRow>,
}

impl SolverState {
    /// Greedy feasible controls, `z` their average, `lambda = F(z)`.
    pub fn initial(instance: &ProblemInstance) -> Result<Self> {
        let report = validate_instance(instance);
        if let Some(v) = report.violations.first() {
            return Err(Error::Infeasible(v.to_string()));
        }
        let controls: Vec<Vec<f64>> = report.witnesses.into_iter().map(|w| w.unwrap_or_default()).collect();
        let z = aggregate(instance, &controls)?;
        let lambda = instance.coupling().price(&z);
        Ok(SolverState {
            controls,
            aggregate_z: z,
            dual_price: lambda.clone(),
            response_price: lambda,
            iter: 0,
            residual_trace: Vec::new(),
        })
    }

    fn check(&self, instance: &ProblemInstance) -> Result<()> {
        let k = instance.horizon();
        check_len("controls", instance.n_agents(), self.controls.len())?;
        check_len("aggregate", k, self.aggregate_z.len())?;
        check_len("dual price", k, self.dual_price.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Constant,
    Mann,
}

/// Dual step sizes `beta_k = beta0 / k^exponent` (`exponent` ignored for
/// constant steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: StepKind,
    pub beta0: f64,
    pub exponent: f64,
}

impl StepSchedule {
    pub fn constant(beta: f64) -> Self {
        StepSchedule {
            kind: StepKind::Constant,
            beta0: beta,
            exponent: 0.0,
        }
    }

    pub fn mann(beta0: f64) -> Self {
        StepSchedule {
            kind: StepKind::Mann,
            beta0,
            exponent: 1.0,
        }
    }

    pub fn with_exponent(mut self, p: f64) -> Self {
        self.exponent = p;
        self
    }

    /// `beta = 1 / L_d` with `L_d = sum_i 1/mu_i + N/mu_phi` a Lipschitz
    /// bound on the dual gradient, where `mu_i` and `mu_phi` are the strong
    /// convexity moduli of the agent costs (in the coupled variable) and of
    /// `phi / N`. Falls back to `1 / (N L)`, `L` the Lipschitz constant of
    /// `phi'`, when some modulus vanishes.
    pub fn default_constant(instance: &ProblemInstance) -> Self {
        let n = instance.n_agents() as f64;
        let mu_phi = instance.coupling().potential_strong_convexity();
        let mut inv_sum = if mu_phi > 0.0 { n / mu_phi } else { f64::INFINITY };
        for i in 0..instance.n_agents() {
            let mu = agent_modulus(instance, i);
            inv_sum += if mu > 0.0 { 1.0 / mu } else { f64::INFINITY };
        }
        let beta = if inv_sum.is_finite() {
            1.0 / inv_sum
        } else {
            let l = instance.coupling().potential_gradient_lipschitz(instance.n_agents());
            if l > 0.0 { 1.0 / (n * l) } else { 1.0 }
        };
        StepSchedule::constant(beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0) || !self.beta0.is_finite() {
            return Err(Error::InvalidParameter(format!("step beta0 must be positive, got {}", self.beta0)));
        }
        if self.kind == StepKind::Mann && !(self.exponent > 0.0 && self.exponent <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Mann steps need 0 < exponent <= 1, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Step for iteration `k >= 1`.
    pub fn beta(&self, k: usize) -> f64 {
        match self.kind {
            StepKind::Constant => self.beta0,
            StepKind::Mann => self.beta0 / (k.max(1) as f64).powf(self.exponent),
        }
    }
}

/// Strong convexity of `V_i` as a function of the coupled variable.
fn agent_modulus(instance: &ProblemInstance, i: usize) -> f64 {
    let a = instance.agent(i);
    match instance.mode() {
        CouplingMode::ControlAverage => 2.0 * a.control_weight,
        CouplingMode::StateAverage => {
            let c = &instance.map(i).matrix_c;
            let smax = c.clone().svd(false, false).singular_values.max();
            let from_u = if smax > 0.0 { 2.0 * a.control_weight / (smax * smax) } else { 0.0 };
            from_u + 2.0 * a.state_weight
        }
    }
}

fn best_responses(
    instance: &ProblemInstance,
    price: &[f64],
    settings: &QpSettings,
) -> Result<Vec<Vec<f64>>> {
    (0..instance.n_agents())
        .into_par_iter()
        .map(|i| best_response(&BestResponseQuery::new(instance, i, price), settings))
        .collect()
}

fn coupled_all(instance: &ProblemInstance, controls: &[Vec<f64>]) -> Vec<Vec<f64>> {
    controls
        .iter()
        .enumerate()
        .map(|(i, u)| coupled_variable(instance, i, u))
        .collect()
}

fn trace_row(
    instance: &ProblemInstance,
    iter: usize,
    controls: &[Vec<f64>],
    avg: &[f64],
    primal: f64,
    dual: f64,
) -> Result<TraceRow> {
    Ok(TraceRow {
        iter,
        primal_res: primal,
        dual_res: dual,
        welfare: social_welfare(instance, controls)?,
        z_norm: norm(avg),
        agent_norms: controls.iter().map(|u| norm(u)).collect(),
        aggregate: avg.to_vec(),
    })
}

/// One round: best responses to `lambda`, the coordinator's `z`, and the
/// price update `lambda + beta N (avg - z)`.
pub fn primal_dual_step(
    state: SolverState,
    instance: &ProblemInstance,
    beta: f64,
    settings: &QpSettings,
) -> Result<SolverState> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    state.check(instance)?;
    let lambda = &state.dual_price;
    let controls = best_responses(instance, lambda, settings)?;
    let avg = mean(&coupled_all(instance, &controls), instance.horizon());
    let z = instance.coupling().solve_coordinator(lambda, 0.0, &avg, &avg)?;
    let n = instance.n_agents() as f64;
    let next: Vec<f64> = lambda
        .iter()
        .zip(avg.iter().zip(&z))
        .map(|(l, (a, zz))| l + beta * n * (a - zz))
        .collect();
    let iter = state.iter + 1;
    let row = trace_row(instance, iter, &controls, &avg, dist(&avg, &z), dist(&z, &state.aggregate_z))?;
    let mut residual_trace = state.residual_trace;
    residual_trace.push(row);
    Ok(SolverState {
        controls,
        aggregate_z: z,
        dual_price: next,
        response_price: state.dual_price,
        iter,
        residual_trace,
    })
}

fn finish(instance: &ProblemInstance, algorithm: Algorithm, state: SolverState, dual_price: Vec<f64>, converged: bool) -> Result<Solution> {
    let states = state
        .controls
        .iter()
        .enumerate()
        .map(|(i, u)| instance.map(i).apply(u))
        .collect();
    let aggregate_z = aggregate(instance, &state.controls)?;
    let welfare = social_welfare(instance, &state.controls)?;
    Ok(Solution {
        algorithm,
        controls: state.controls,
        states,
        aggregate_z,
        dual_price,
        coordinator_z: state.aggregate_z,
        iterations: state.iter,
        converged,
        residual_trace: state.residual_trace,
        diagnostics: Diagnostics {
            welfare,
            nash_gap: None,
            duality_gap: None,
        },
    })
}

fn check_loop(max_iter: usize, tol: f64) -> Result<()> {
    if max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be positive, got {tol}")));
    }
    Ok(())
}

fn run_price_iteration(
    instance: &ProblemInstance,
    algorithm: Algorithm,
    schedule: StepSchedule,
    max_iter: usize,
    tol: f64,
) -> Result<Solution> {
    schedule.validate()?;
    check_loop(max_iter, tol)?;
    let settings = QpSettings::default();
    let mut state = SolverState::initial(instance)?;
    let mut converged = false;
    while state.iter < max_iter {
        let beta = schedule.beta(state.iter + 1);
        state = primal_dual_step(state, instance, beta, &settings)?;
        let last = state.residual_trace.last().expect("trace row per step");
        if last.primal_res <= tol && last.dual_res <= tol {
            converged = true;
            break;
        }
    }
    let price = state.response_price.clone();
    finish(instance, algorithm, state, price, converged)
}

/// Primal-dual iteration with diminishing steps `beta0 / k^p`.
pub fn mann_solve(instance: &ProblemInstance, schedule: StepSchedule, max_iter: usize, tol: f64) -> Result<Solution> {
    if schedule.kind != StepKind::Mann {
        return Err(Error::InvalidParameter("mann_solve needs a Mann step schedule".into()));
    }
    run_price_iteration(instance, Algorithm::Mann, schedule, max_iter, tol)
}

/// Primal-dual iteration with a constant step.
pub fn primal_dual_solve(instance: &ProblemInstance, schedule: StepSchedule, max_iter: usize, tol: f64) -> Result<Solution> {
    if schedule.kind != StepKind::Constant {
        return Err(Error::InvalidParameter("primal_dual_solve needs a constant step schedule".into()));
    }
    run_price_iteration(instance, Algorithm::PrimalDual, schedule, max_iter, tol)
}

/// `|y - F(avg)|` where `avg` averages every agent's best response to `y`.
pub fn fixed_point_residual(instance: &ProblemInstance, y: &[f64]) -> Result<f64> {
    check_len("price", instance.horizon(), y.len())?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("price must be finite".into()));
    }
    let controls = best_responses(instance, y, &QpSettings::default())?;
    let avg = aggregate(instance, &controls)?;
    Ok(dist(y, &instance.coupling().price(&avg)))
}

/// Every agent's control is within `tol` of its best response to `y`, and
/// the best responses reproduce `y` within `tol`.
fn responses_settled(instance: &ProblemInstance, controls: &[Vec<f64>], y: &[f64], tol: f64) -> Result<bool> {
    let best = best_responses(instance, y, &QpSettings::default())?;
    if best.iter().zip(controls).any(|(b, u)| dist(b, u) > tol) {
        return Ok(false);
    }
    let avg = aggregate(instance, &best)?;
    Ok(dist(y, &instance.coupling().price(&avg)) <= tol)
}

/// Sharing-form ADMM on `min sum_i V_i + phi(z)` s.t. `z = (1/N) sum_i c_i`.
///
/// Agents solve `V_i + rho/2 |c_i - c_i^k + avg^k - z^k + v^k|^2`; the
/// coordinator solves `phi'(z)/N + rho (z - v - avg) = 0`; the scaled dual is
/// `v += avg - z`. The reported price is `rho v`, which equals `F(z)` after
/// every update.
pub fn admm_solve(instance: &ProblemInstance, rho_admm: f64, tol: f64, max_iter: usize) -> Result<Solution> {
    if !(rho_admm > 0.0) || !rho_admm.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho_admm}")));
    }
    check_loop(max_iter, tol)?;
    let pot = potential_condition_check(instance.coupling(), instance.n_agents(), &PotentialProbe::for_instance(instance));
    if !pot.passed {
        return Err(Error::PotentialCondition {
            max_deviation: pot.max_deviation,
        });
    }
    let settings = QpSettings::default();
    let k = instance.horizon();
    let n = instance.n_agents();
    let mut state = SolverState::initial(instance)?;
    let mut coupled = coupled_all(instance, &state.controls);
    let mut avg = mean(&coupled, k);
    let mut v: Vec<f64> = state.dual_price.iter().map(|l| l / rho_admm).collect();
    let zero = vec![0.0; k];
    let mut converged = false;

    while state.iter < max_iter {
        let shift: Vec<f64> = (0..k).map(|t| avg[t] - state.aggregate_z[t] + v[t]).collect();
        let controls: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let anchor = sub(&coupled[i], &shift);
                LocalObjective::proximal(instance, i, &zero, rho_admm, &anchor).minimize(&settings)
            })
            .collect::<Result<_>>()?;
        coupled = coupled_all(instance, &controls);
        avg = mean(&coupled, k);
        let anchor: Vec<f64> = (0..k).map(|t| v[t] + avg[t]).collect();
        let z = instance.coupling().solve_coordinator(&zero, rho_admm, &anchor, &anchor)?;
        for t in 0..k {
            v[t] += avg[t] - z[t];
        }
        let primal = dist(&avg, &z);
        let dual = dist(&z, &state.aggregate_z);
        state.iter += 1;
        state.residual_trace.push(trace_row(instance, state.iter, &controls, &avg, primal, dual)?);
        state.controls = controls;
        state.aggregate_z = z;
        state.dual_price = v.iter().map(|x| rho_admm * x).collect();
        state.response_price = state.dual_price.clone();
        if primal <= tol && dual <= tol && responses_settled(instance, &state.controls, &state.dual_price, tol)? {
            converged = true;
            break;
        }
    }
    let price = state.dual_price.clone();
    finish(instance, Algorithm::Admm, state, price, converged)
}
