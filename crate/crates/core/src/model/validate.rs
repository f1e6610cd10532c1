use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::agent_solver::constrained_qp;
use crate::error::Error;
use crate::model::{simulate, AgentSpec, ProblemInstance};
use crate::qp::{solve_qp, QpSettings, QpStatus};

const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for instance-level problems.
    pub agent: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.agent {
            Some(id) => write!(f, "agent {id}: {}", self.message),
            None => write!(f, "instance: {}", self.message),
        }
    }
}

/// Outcome of [`validate_instance`]. `witnesses[i]` is a feasible control
/// trajectory for agent `i` when one was found.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub witnesses: Vec<Option<Vec<f64>>>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Fill the budget as early as the control box and the upper state bounds
/// allow. Cheap feasibility witness; not guaranteed to find one.
pub fn greedy_fill(agent: &AgentSpec) -> Vec<f64> {
    let k = agent.u_min.len();
    let Some(budget) = agent.budget else {
        return (0..k).map(|t| 0.0f64.max(agent.u_min[t]).min(agent.u_max[t])).collect();
    };
    let mut u = agent.u_min.clone();
    let mut remaining = budget - agent.u_min.iter().sum::<f64>();
    let mut x = agent.x0;
    for t in 0..k {
        let mut add = (agent.u_max[t] - agent.u_min[t]).min(remaining).max(0.0);
        if agent.beta > 0.0 {
            let headroom = (agent.x_max[t] - agent.alpha * x - agent.beta * agent.u_min[t]) / agent.beta;
            add = add.min(headroom.max(0.0));
        }
        u[t] += add;
        remaining -= add;
        x = agent.alpha * x + agent.beta * u[t];
    }
    u
}

fn path_feasible(agent: &AgentSpec, u: &[f64]) -> bool {
    let x = simulate(agent, u);
    let boxes = (0..u.len()).all(|t| {
        u[t] >= agent.u_min[t] - FEAS_TOL
            && u[t] <= agent.u_max[t] + FEAS_TOL
            && x[t] >= agent.x_min[t] - FEAS_TOL
            && x[t] <= agent.x_max[t] + FEAS_TOL
    });
    let budget = agent
        .budget
        .is_none_or(|b| (u.iter().sum::<f64>() - b).abs() <= FEAS_TOL * (1.0 + b.abs()));
    boxes && budget
}

/// Check that every agent's admissible set is nonempty and the coupling is
/// well formed. Violations are returned as data.
pub fn validate_instance(instance: &ProblemInstance) -> ValidationReport {
    let k = instance.horizon();
    let mut report = ValidationReport::default();
    for msg in instance.coupling().violations(k) {
        report.violations.push(Violation {
            agent: None,
            message: msg,
        });
    }
    let mut seen = HashSet::new();
    for (i, agent) in instance.agents().iter().enumerate() {
        if !seen.insert(agent.id) {
            report.violations.push(Violation {
                agent: Some(agent.id),
                message: "duplicate agent id".into(),
            });
        }
        let (violations, witness) = check_agent(instance, i);
        report.violations.extend(violations.into_iter().map(|message| Violation {
            agent: Some(agent.id),
            message,
        }));
        report.witnesses.push(witness);
    }
    report
}

fn check_agent(instance: &ProblemInstance, i: usize) -> (Vec<String>, Option<Vec<f64>>) {
    let agent = instance.agent(i);
    let k = instance.horizon();
    let mut out = Vec::new();
    let finite = [agent.alpha, agent.beta, agent.x0, agent.control_weight, agent.state_weight]
        .iter()
        .chain(agent.u_min.iter())
        .chain(agent.u_max.iter())
        .chain(agent.linear_cost.iter())
        .all(|v| v.is_finite());
    if !finite {
        out.push("dynamics, control bounds and costs must be finite".into());
    }
    if agent.control_weight < 0.0 || agent.state_weight < 0.0 {
        out.push("cost weights must be nonnegative".into());
    }
    for t in 0..k {
        if agent.u_min[t] > agent.u_max[t] {
            out.push(format!("u_min > u_max at period {}", t + 1));
        }
        if agent.x_min[t] > agent.x_max[t] {
            out.push(format!("x_min > x_max at period {}", t + 1));
        }
    }
    if let Some(b) = agent.budget {
        let cap: f64 = agent.u_max.iter().sum();
        let floor: f64 = agent.u_min.iter().sum();
        if b > cap + FEAS_TOL {
            out.push(format!("budget exceeds capacity ({b} > {cap})"));
        }
        if b < floor - FEAS_TOL {
            out.push(format!("budget below minimum total control ({b} < {floor})"));
        }
    }
    if !out.is_empty() {
        return (out, None);
    }

    let greedy = greedy_fill(agent);
    if path_feasible(agent, &greedy) {
        return (out, Some(greedy));
    }

    // Greedy failed: decide with a projection QP onto the admissible set.
    let p = DMatrix::identity(k, k);
    let q = -DVector::from_column_slice(&greedy);
    let qp = constrained_qp(agent, instance.map(i), p, q);
    match solve_qp(&qp, &QpSettings::default()) {
        Ok(sol) => {
            let u = sol.u.as_slice().to_vec();
            if path_feasible(agent, &u) {
                (out, Some(u))
            } else if sol.status == QpStatus::MaxIter {
                out.push("state bounds could not be certified reachable".into());
                (out, None)
            } else {
                out.push("state bounds unreachable under the control box and budget".into());
                (out, None)
            }
        }
        Err(Error::Infeasible(_)) => {
            out.push("state bounds unreachable under the control box and budget".into());
            (out, None)
        }
        Err(e) => {
            out.push(format!("feasibility check failed: {e}"));
            (out, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingSpec, TimeGrid};

    fn single(agent: AgentSpec, k: usize) -> ProblemInstance {
        ProblemInstance::new(vec![agent], CouplingSpec::ev(0.01, 1.0), TimeGrid::new(k, 5.0).unwrap()).unwrap()
    }

    #[test]
    fn budget_over_capacity() {
        let a = AgentSpec::integrator(0, 2, 100.0, 1.0).with_budget(Some(3.0));
        let r = validate_instance(&single(a, 2));
        assert!(!r.is_ok());
        assert!(r.violations[0].message.contains("budget exceeds capacity"));
    }

    #[test]
    fn full_charge_is_feasible() {
        let a = AgentSpec::integrator(0, 2, 100.0, 1.0).with_budget(Some(2.0));
        let r = validate_instance(&single(a, 2));
        assert!(r.is_ok(), "{:?}", r.violations);
        assert_eq!(r.witnesses[0].as_deref(), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn capacity_below_final_state_is_infeasible() {
        // Integrator from x0 = 0 ends at the budget, 2 > 1.5.
        let a = AgentSpec::integrator(0, 3, 1.5, 1.0).with_budget(Some(2.0));
        let r = validate_instance(&single(a, 3));
        assert!(!r.is_ok());
        assert!(r.violations[0].message.contains("state bounds"));
    }

    #[test]
    fn greedy_path_respects_capacity() {
        let a = AgentSpec::integrator(0, 3, 2.5, 1.0).with_budget(Some(2.0));
        assert_eq!(greedy_fill(&a), vec![1.0, 1.0, 0.0]);
        let a = AgentSpec::integrator(0, 3, 1.5, 1.0).with_budget(Some(1.5));
        assert_eq!(greedy_fill(&a), vec![1.0, 0.5, 0.0]);
        assert!(validate_instance(&single(a, 3)).is_ok());
    }

    #[test]
    fn leaky_storage_needs_the_qp() {
        // With alpha = 0.5 the state decays; greedy front-loading overshoots
        // the lower bound requirement at the end, the QP finds a late fill.
        let a = AgentSpec::integrator(0, 3, 1.2, 1.0)
            .with_dynamics(0.5, 1.0)
            .with_budget(Some(2.0))
            .with_state_bounds(vec![0.0, 0.0, 1.0], vec![1.2; 3]);
        let r = validate_instance(&single(a.clone(), 3));
        assert!(r.is_ok(), "{:?}", r.violations);
        let w = r.witnesses[0].clone().unwrap();
        assert!(path_feasible(&a, &w));
    }

    #[test]
    fn crossed_bounds_reported() {
        let a = AgentSpec::integrator(7, 2, 10.0, 1.0).with_control_bounds(vec![0.0, 2.0], vec![1.0, 1.0]);
        let r = validate_instance(&single(a, 2));
        assert_eq!(r.violations[0].agent, Some(7));
        assert!(r.violations[0].message.contains("u_min > u_max"));
    }
}
