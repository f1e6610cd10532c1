use crate::error::{check_len, Result};
use crate::model::{CouplingMode, ProblemInstance};
use crate::vecops::{dot, mean};

/// The variable of agent `i` that enters the population average: its control
/// trajectory, or its lifted state trajectory.
pub fn coupled_variable(instance: &ProblemInstance, i: usize, u: &[f64]) -> Vec<f64> {
    match instance.mode() {
        CouplingMode::ControlAverage => u.to_vec(),
        CouplingMode::StateAverage => instance.map(i).apply(u),
    }
}

/// `(1/N) sum_i coupled_i`.
pub fn aggregate(instance: &ProblemInstance, controls: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_len("controls", instance.n_agents(), controls.len())?;
    let k = instance.horizon();
    let coupled = controls
        .iter()
        .enumerate()
        .map(|(i, u)| {
            check_len("control trajectory", k, u.len())?;
            Ok(coupled_variable(instance, i, u))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&coupled, k))
}

/// Individual cost `V_i(x_i, u_i) + F(z) . coupled_i + G(z)`.
///
/// For the EV coupling this equals `eta |u - z|^2 + 2 gamma (z + c)^T u`.
pub fn agent_cost(instance: &ProblemInstance, i: usize, u: &[f64], z: &[f64]) -> Result<f64> {
    let k = instance.horizon();
    check_len("control trajectory", k, u.len())?;
    check_len("aggregate", k, z.len())?;
    let agent = instance.agent(i);
    let x = instance.map(i).apply(u);
    let coupling = instance.coupling();
    let price = coupling.price(z);
    let c = coupled_variable(instance, i, u);
    Ok(agent.running_cost(&x, u) + dot(&price, &c) + coupling.aggregate_cost(z))
}

/// The two parts of the welfare objective, evaluated separately.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareTerms {
    pub running: Vec<f64>,
    pub potential: f64,
    pub aggregate: Vec<f64>,
}

impl WelfareTerms {
    pub fn total(&self) -> f64 {
        self.running.iter().sum::<f64>() + self.potential
    }
}

pub fn welfare_terms(instance: &ProblemInstance, controls: &[Vec<f64>]) -> Result<WelfareTerms> {
    let z = aggregate(instance, controls)?;
    let running = controls
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let x = instance.map(i).apply(u);
            instance.agent(i).running_cost(&x, u)
        })
        .collect();
    let potential = instance.coupling().potential(&z, instance.n_agents());
    Ok(WelfareTerms {
        running,
        potential,
        aggregate: z,
    })
}

/// Social welfare `sum_i V_i + phi(z)` with `z` the population average.
pub fn social_welfare(instance: &ProblemInstance, controls: &[Vec<f64>]) -> Result<f64> {
    Ok(welfare_terms(instance, controls)?.total())
}
