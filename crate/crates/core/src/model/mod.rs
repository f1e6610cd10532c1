//! Domain types: agents, couplings, problem instances and solutions, plus
//! cost and welfare evaluation.

mod agent;
mod cost;
mod coupling;
mod validate;

pub use agent::{lift_dynamics, simulate, AffineMap, AgentSpec};
pub use cost::{agent_cost, aggregate, coupled_variable, social_welfare, welfare_terms, WelfareTerms};
pub use coupling::{CouplingKind, CouplingMode, CouplingSpec, LinearOp};
pub use validate::{greedy_fill, validate_instance, ValidationReport, Violation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Control horizon: `horizon` periods of `period_minutes` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: usize,
    period_minutes: f64,
}

impl TimeGrid {
    pub fn new(horizon: usize, period_minutes: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if !(period_minutes > 0.0) || !period_minutes.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "period_minutes must be positive, got {period_minutes}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            period_minutes,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn period_minutes(&self) -> f64 {
        self.period_minutes
    }
}

/// N agents sharing one coupling and one horizon. Lifted dynamics are
/// computed once at construction; the instance is immutable afterwards.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    agents: Vec<AgentSpec>,
    coupling: CouplingSpec,
    grid: TimeGrid,
    maps: Vec<AffineMap>,
}

impl ProblemInstance {
    /// Checks shapes only; feasibility is reported by [`validate_instance`].
    pub fn new(agents: Vec<AgentSpec>, coupling: CouplingSpec, grid: TimeGrid) -> Result<Self> {
        if agents.is_empty() {
            return Err(Error::InvalidParameter("an instance needs at least one agent".into()));
        }
        let maps = agents
            .iter()
            .map(|a| lift_dynamics(a, &grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemInstance {
            agents,
            coupling,
            grid,
            maps,
        })
    }

    pub fn agents(&self) -> &[AgentSpec] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentSpec {
        &self.agents[i]
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn map(&self, i: usize) -> &AffineMap {
        &self.maps[i]
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn horizon(&self) -> usize {
        self.grid.horizon()
    }

    pub fn mode(&self) -> CouplingMode {
        self.coupling.mode
    }

    /// Replace the coupling, keeping agents and grid.
    pub fn with_coupling(&self, coupling: CouplingSpec) -> Self {
        ProblemInstance {
            coupling,
            ..self.clone()
        }
    }

    /// The first `n` agents as a standalone instance.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        ProblemInstance::new(
            self.agents.iter().take(n).cloned().collect(),
            self.coupling.clone(),
            self.grid,
        )
    }
}

/// One row of a solver's per-iteration record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// `|(1/N) sum coupled - z|`
    pub primal_res: f64,
    /// `|z_k - z_{k-1}|`
    pub dual_res: f64,
    /// Social welfare of the current controls.
    pub welfare: f64,
    /// Norm of the population average of the coupled variable.
    pub z_norm: f64,
    /// Norm of every agent's current control trajectory.
    #[serde(skip)]
    pub agent_norms: Vec<f64>,
    /// The population average itself.
    #[serde(skip)]
    pub aggregate: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    PrimalDual,
    Mann,
    Admm,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::PrimalDual => "primal-dual",
            Algorithm::Mann => "mann",
            Algorithm::Admm => "admm",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primal-dual" => Ok(Algorithm::PrimalDual),
            "mann" => Ok(Algorithm::Mann),
            "admm" => Ok(Algorithm::Admm),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub welfare: f64,
    pub nash_gap: Option<f64>,
    pub duality_gap: Option<f64>,
}

/// Output of an equilibrium solver.
#[derive(Debug, Clone)]
pub struct Solution {
    pub algorithm: Algorithm,
    pub controls: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    /// Population average of the coupled variable at the returned controls.
    pub aggregate_z: Vec<f64>,
    /// The price the returned controls respond to.
    pub dual_price: Vec<f64>,
    /// The coordinator's own aggregate variable at termination.
    pub coordinator_z: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_trace: Vec<TraceRow>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// The aggregate-norm trace, one entry per iteration.
    pub fn z_norm_trace(&self) -> Vec<f64> {
        self.residual_trace.iter().map(|r| r.z_norm).collect()
    }

    /// `|u_i|` per iteration for agent `i`.
    pub fn agent_norm_trace(&self, i: usize) -> Vec<f64> {
        self.residual_trace
            .iter()
            .map(|r| r.agent_norms.get(i).copied().unwrap_or(f64::NAN))
            .collect()
    }
}
