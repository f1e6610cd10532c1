//! Scenario files, EV fleet generation, end-to-end runs and their output
//! files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordination::{admm_solve, fixed_point_residual, mann_solve, primal_dual_solve, StepSchedule};
use crate::error::{Error, Result};
use crate::model::{
    validate_instance, AgentSpec, Algorithm, CouplingMode, CouplingSpec, ProblemInstance, Solution, TimeGrid,
};
use crate::qp::QpSettings;
use crate::vecops::{dist, norm};
use crate::verification::{
    duality_gap, epsilon_nash_gap, potential_condition_check, NashGapReport, PotentialCheck, PotentialProbe,
};

const MAX_REJECTIONS: usize = 1000;
/// Agents whose `|u_i|` traces are written out.
pub const TRACKED_AGENTS: usize = 10;
/// Relative aggregate error used for iterations-to-tolerance.
pub const LIMIT_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: usize,
    pub period_minutes: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: 36,
            period_minutes: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialId {
    /// `F(z) = 2 (gamma - eta) z`
    Ev,
    /// No coupling at all.
    None,
}

/// A scalar offset applied to every period, or one value per period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriceOffset {
    Uniform(f64),
    Profile(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingConfig {
    pub mode: CouplingMode,
    pub potential: PotentialId,
    pub eta: f64,
    pub gamma: f64,
    /// Overrides the drawn price offset profile when set.
    pub c: Option<PriceOffset>,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        CouplingConfig {
            mode: CouplingMode::ControlAverage,
            potential: PotentialId::Ev,
            eta: 0.01,
            gamma: 1.0,
            c: None,
        }
    }
}

/// Uniform ranges `[lo, hi]` for the generated fleet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub n_agents: usize,
    pub seed: u64,
    pub capacity: [f64; 2],
    pub max_rate: [f64; 2],
    pub energy: [f64; 2],
    pub initial_soc: [f64; 2],
    /// Per-period price offset, drawn once and shared by all agents.
    pub price_offset: [f64; 2],
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            n_agents: 100,
            seed: 2024,
            capacity: [20.0, 40.0],
            max_rate: [1.0, 3.0],
            energy: [5.0, 15.0],
            initial_soc: [0.0, 5.0],
            price_offset: [0.05, 0.15],
        }
    }
}

/// An explicitly listed agent. Bounds are uniform over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    pub id: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub x0: f64,
    pub x_max: f64,
    pub u_max: f64,
    pub budget: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmChoice {
    PrimalDual,
    Mann,
    Admm,
    All,
}

impl AlgorithmChoice {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgorithmChoice::PrimalDual => vec![Algorithm::PrimalDual],
            AlgorithmChoice::Mann => vec![Algorithm::Mann],
            AlgorithmChoice::Admm => vec![Algorithm::Admm],
            AlgorithmChoice::All => vec![Algorithm::Admm, Algorithm::Mann, Algorithm::PrimalDual],
        }
    }
}

impl std::str::FromStr for AlgorithmChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(AlgorithmChoice::All),
            other => Ok(match other.parse::<Algorithm>()? {
                Algorithm::PrimalDual => AlgorithmChoice::PrimalDual,
                Algorithm::Mann => AlgorithmChoice::Mann,
                Algorithm::Admm => AlgorithmChoice::Admm,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub algorithm: AlgorithmChoice,
    pub tol: f64,
    pub max_iter: usize,
    /// ADMM penalty.
    pub rho: f64,
    /// Mann steps `(mann_beta0 / N) / k^exponent`; the price update is
    /// scaled by `N`, so this keeps the effective step independent of it.
    pub mann_beta0: f64,
    pub mann_exponent: f64,
    /// Constant primal-dual step; derived from the agent and potential
    /// curvatures when absent.
    pub pd_beta: Option<f64>,
    pub out_dir: PathBuf,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: AlgorithmChoice::All,
            tol: 1e-6,
            max_iter: 1000,
            rho: 0.2,
            mann_beta0: 4.0,
            mann_exponent: 1.0,
            pd_beta: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// A full scenario. Every section and field is optional in the file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub coupling: CouplingConfig,
    pub fleet: FleetConfig,
    /// When nonempty, used instead of the generated fleet.
    pub agents: Vec<AgentEntry>,
    pub solver: SolverConfig,
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("range '{name}' must be finite and ordered, got {r:?}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ScenarioConfig::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.coupling;
        if c.potential == PotentialId::Ev && !(c.eta >= 0.0 && c.eta < c.gamma) {
            return Err(Error::Config(format!("need 0 <= eta < gamma, got eta={} gamma={}", c.eta, c.gamma)));
        }
        if let Some(PriceOffset::Profile(p)) = &c.c {
            if p.len() != self.grid.horizon {
                return Err(Error::Config(format!(
                    "price offset profile has {} entries, horizon is {}",
                    p.len(),
                    self.grid.horizon
                )));
            }
        }
        let f = &self.fleet;
        if self.agents.is_empty() && f.n_agents == 0 {
            return Err(Error::Config("n_agents must be at least 1".into()));
        }
        for (name, r) in [
            ("capacity", f.capacity),
            ("max_rate", f.max_rate),
            ("energy", f.energy),
            ("initial_soc", f.initial_soc),
            ("price_offset", f.price_offset),
        ] {
            check_range(name, r)?;
        }
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 || !(s.rho > 0.0) {
            return Err(Error::Config("tol, max_iter and rho must be positive".into()));
        }
        StepSchedule::mann(s.mann_beta0).with_exponent(s.mann_exponent).validate()?;
        if let Some(b) = s.pd_beta {
            StepSchedule::constant(b).validate()?;
        }
        TimeGrid::new(self.grid.horizon, self.grid.period_minutes)?;
        Ok(())
    }

    fn coupling_spec(&self) -> CouplingSpec {
        match self.coupling.potential {
            PotentialId::Ev => {
                let mut c = CouplingSpec::ev(self.coupling.eta, self.coupling.gamma);
                c.mode = self.coupling.mode;
                c
            }
            PotentialId::None => CouplingSpec::decoupled(self.coupling.mode),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

/// The fleet and the shared price offset profile. Deterministic in the
/// seed; the first `n` agents do not depend on `n_agents`.
pub fn generate_fleet(config: &ScenarioConfig) -> Result<ProblemInstance> {
    config.validate()?;
    let k = config.grid.horizon;
    let grid = TimeGrid::new(k, config.grid.period_minutes)?;
    let f = &config.fleet;
    let cp = &config.coupling;
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let drawn: Vec<f64> = (0..k).map(|_| draw(&mut rng, f.price_offset)).collect();
    let offset = match &cp.c {
        Some(PriceOffset::Uniform(v)) => vec![*v; k],
        Some(PriceOffset::Profile(p)) => p.clone(),
        None => drawn,
    };
    let linear: Vec<f64> = offset.iter().map(|c| 2.0 * cp.gamma * c).collect();
    let weight = if cp.potential == PotentialId::Ev { cp.eta } else { 0.0 };

    let agents = if config.agents.is_empty() {
        let mut agents = Vec::with_capacity(f.n_agents);
        for id in 0..f.n_agents {
            let mut rejections = 0;
            loop {
                let capacity = draw(&mut rng, f.capacity);
                let rate = draw(&mut rng, f.max_rate);
                let energy = draw(&mut rng, f.energy);
                let x0 = draw(&mut rng, f.initial_soc);
                let agent = AgentSpec::integrator(id, k, capacity, rate)
                    .with_x0(x0)
                    .with_budget(Some(energy))
                    .with_control_weight(weight)
                    .with_linear_cost(linear.clone());
                let single = ProblemInstance::new(vec![agent.clone()], config.coupling_spec(), grid)?;
                if validate_instance(&single).is_ok() {
                    agents.push(agent);
                    break;
                }
                rejections += 1;
                if rejections >= MAX_REJECTIONS {
                    return Err(Error::Config(format!(
                        "agent {id}: {MAX_REJECTIONS} infeasible draws in a row, check the fleet ranges"
                    )));
                }
            }
        }
        agents
    } else {
        config
            .agents
            .iter()
            .map(|e| {
                AgentSpec::integrator(e.id, k, e.x_max, e.u_max)
                    .with_dynamics(e.alpha, e.beta)
                    .with_x0(e.x0)
                    .with_budget(Some(e.budget))
                    .with_control_weight(weight)
                    .with_linear_cost(linear.clone())
            })
            .collect()
    };
    let instance = ProblemInstance::new(agents, config.coupling_spec(), grid)?;
    let report = validate_instance(&instance);
    if let Some(v) = report.violations.first() {
        return Err(Error::Infeasible(v.to_string()));
    }
    Ok(instance)
}

/// One algorithm's result with its certificates.
#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub solution: Solution,
    /// First iteration after which `|z_k - z_ref| <= LIMIT_TOL |z_ref|` holds
    /// for the rest of the trace.
    pub iterations_to_tolerance: Option<usize>,
    pub nash_gap: Option<NashGapReport>,
    pub duality_gap: Option<f64>,
    /// `|lambda - F(z)|` at the returned aggregate.
    pub dual_stationarity: f64,
    pub fixed_point_residual: Option<f64>,
    pub solve_seconds: f64,
    pub verify_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub instance: ProblemInstance,
    pub potential: PotentialCheck,
    /// Algorithm whose final aggregate is the common limit, if any.
    pub reference: Option<Algorithm>,
    pub runs: Vec<AlgorithmRun>,
    pub generate_seconds: f64,
}

/// `min k` such that every trace aggregate from `k` on is within `tol`
/// relative of `reference`.
pub fn iterations_to_tolerance(solution: &Solution, reference: &[f64], tol: f64) -> Option<usize> {
    let scale = norm(reference).max(f64::MIN_POSITIVE);
    let mut first = None;
    for row in &solution.residual_trace {
        if dist(&row.aggregate, reference) <= tol * scale {
            first.get_or_insert(row.iter);
        } else {
            first = None;
        }
    }
    first
}

pub fn solve_with(instance: &ProblemInstance, algorithm: Algorithm, solver: &SolverConfig) -> Result<Solution> {
    match algorithm {
        Algorithm::Admm => admm_solve(instance, solver.rho, solver.tol, solver.max_iter),
        Algorithm::Mann => mann_solve(
            instance,
            StepSchedule::mann(solver.mann_beta0 / instance.n_agents() as f64).with_exponent(solver.mann_exponent),
            solver.max_iter,
            solver.tol,
        ),
        Algorithm::PrimalDual => {
            let schedule = match solver.pd_beta {
                Some(b) => StepSchedule::constant(b),
                None => StepSchedule::default_constant(instance),
            };
            primal_dual_solve(instance, schedule, solver.max_iter, solver.tol)
        }
    }
}

/// Generate, solve and verify, without touching the file system.
pub fn execute(config: &ScenarioConfig) -> Result<RunReport> {
    let t0 = Instant::now();
    let instance = generate_fleet(config)?;
    let generate_seconds = t0.elapsed().as_secs_f64();
    let potential = potential_condition_check(instance.coupling(), instance.n_agents(), &PotentialProbe::for_instance(&instance));
    let settings = QpSettings::default();

    let mut solved = Vec::new();
    for algorithm in config.solver.algorithm.algorithms() {
        let t = Instant::now();
        let solution = solve_with(&instance, algorithm, &config.solver)?;
        solved.push((solution, t.elapsed().as_secs_f64()));
    }
    let reference = solved
        .iter()
        .find(|(s, _)| s.algorithm == Algorithm::Admm && s.converged)
        .map(|(s, _)| (Algorithm::Admm, s.aggregate_z.clone()));

    let mut runs = Vec::new();
    for (mut solution, solve_seconds) in solved {
        let t = Instant::now();
        let nash_gap = match epsilon_nash_gap(&instance, &solution, &settings) {
            Ok(r) => Some(r),
            Err(Error::Unsupported(_)) => None,
            Err(e) => return Err(e),
        };
        let gap = duality_gap(&instance, &solution)?;
        let duality = gap.is_finite().then_some(gap);
        let dual_stationarity = dist(&solution.dual_price, &instance.coupling().price(&solution.aggregate_z));
        let fp = fixed_point_residual(&instance, &solution.dual_price)?;
        solution.diagnostics.nash_gap = nash_gap.as_ref().map(|r| r.max_gap);
        solution.diagnostics.duality_gap = duality;
        let target = match &reference {
            Some((_, z)) => z.clone(),
            None => solution.aggregate_z.clone(),
        };
        runs.push(AlgorithmRun {
            iterations_to_tolerance: iterations_to_tolerance(&solution, &target, LIMIT_TOL),
            solution,
            nash_gap,
            duality_gap: duality,
            dual_stationarity,
            fixed_point_residual: Some(fp),
            solve_seconds,
            verify_seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(RunReport {
        config: config.clone(),
        instance,
        potential,
        reference: reference.map(|r| r.0),
        runs,
        generate_seconds,
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub converged: bool,
    pub iterations: usize,
    pub iterations_to_tolerance: Option<usize>,
    pub final_welfare: f64,
    pub max_nash_gap: Option<f64>,
    pub duality_gap: Option<f64>,
    pub dual_stationarity: f64,
    pub fixed_point_residual: Option<f64>,
    pub aggregate_norm: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub n_agents: usize,
    pub horizon: usize,
    pub seed: u64,
    pub potential_check_passed: bool,
    pub potential_max_deviation: f64,
    pub limit_reference: String,
    pub limit_tolerance: f64,
    pub price_offset: Vec<f64>,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl RunReport {
    pub fn summary(&self) -> Summary {
        let gamma = self.config.coupling.gamma;
        Summary {
            n_agents: self.instance.n_agents(),
            horizon: self.instance.horizon(),
            seed: self.config.fleet.seed,
            potential_check_passed: self.potential.passed,
            potential_max_deviation: self.potential.max_deviation,
            limit_reference: match self.reference {
                Some(a) => format!("final aggregate of {}", a.as_str()),
                None => "final aggregate of each run".into(),
            },
            limit_tolerance: LIMIT_TOL,
            price_offset: self.instance.agent(0).linear_cost.iter().map(|r| r / (2.0 * gamma)).collect(),
            algorithms: self
                .runs
                .iter()
                .map(|r| AlgorithmSummary {
                    algorithm: r.solution.algorithm,
                    converged: r.solution.converged,
                    iterations: r.solution.iterations,
                    iterations_to_tolerance: r.iterations_to_tolerance,
                    final_welfare: r.solution.diagnostics.welfare,
                    max_nash_gap: r.nash_gap.as_ref().map(|g| g.max_gap),
                    duality_gap: r.duality_gap,
                    dual_stationarity: r.dual_stationarity,
                    fixed_point_residual: r.fixed_point_residual,
                    aggregate_norm: norm(&r.solution.aggregate_z),
                })
                .collect(),
        }
    }

    pub fn run(&self, algorithm: Algorithm) -> Option<&AlgorithmRun> {
        self.runs.iter().find(|r| r.solution.algorithm == algorithm)
    }
}

#[derive(Debug, Serialize)]
struct AgentRow {
    id: usize,
    x0: f64,
    capacity: f64,
    max_rate: f64,
    budget: f64,
    control_weight: f64,
}

#[derive(Debug, Serialize)]
struct ControlRow {
    agent: usize,
    period: usize,
    u: f64,
    x: f64,
}

#[derive(Debug, Serialize)]
struct Timing {
    generate_seconds: f64,
    runs: Vec<RunTiming>,
}

#[derive(Debug, Serialize)]
struct RunTiming {
    algorithm: Algorithm,
    solve_seconds: f64,
    verify_seconds: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_agent_norms(path: &Path, solution: &Solution, ids: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(ids.iter().map(|id| format!("agent_{id}")));
    w.write_record(&header)?;
    for row in &solution.residual_trace {
        let mut rec = vec![row.iter.to_string()];
        rec.extend(row.agent_norms.iter().take(ids.len()).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Write every output file of a run into `dir`. All files except
/// `timing.json` are identical for identical configurations.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let inst = &report.instance;
    write_csv(
        &dir.join("agents.csv"),
        inst.agents().iter().map(|a| AgentRow {
            id: a.id,
            x0: a.x0,
            capacity: a.x_max[0],
            max_rate: a.u_max[0],
            budget: a.budget.unwrap_or(f64::NAN),
            control_weight: a.control_weight,
        }),
    )?;
    let ids: Vec<usize> = inst.agents().iter().take(TRACKED_AGENTS).map(|a| a.id).collect();
    for run in &report.runs {
        let s = &run.solution;
        let name = s.algorithm.as_str().replace('-', "_");
        write_csv(&dir.join(format!("trace_{name}.csv")), &s.residual_trace)?;
        write_agent_norms(&dir.join(format!("agent_norms_{name}.csv")), s, &ids)?;
        let rows = s.controls.iter().zip(&s.states).enumerate().flat_map(|(i, (u, x))| {
            (0..u.len()).map(move |t| ControlRow {
                agent: inst.agent(i).id,
                period: t + 1,
                u: u[t],
                x: x[t],
            })
        });
        write_csv(&dir.join(format!("controls_{name}.csv")), rows)?;
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report.summary())? + "\n")?;
    if report.runs.len() >= 2 {
        let cmp = compare_algorithms(report)?;
        fs::write(dir.join("comparison.txt"), &cmp.table)?;
        fs::write(dir.join("comparison.csv"), &cmp.summary_csv)?;
        fs::write(dir.join("comparison_trace.csv"), &cmp.trace_csv)?;
    }
    let timing = Timing {
        generate_seconds: report.generate_seconds,
        runs: report
            .runs
            .iter()
            .map(|r| RunTiming {
                algorithm: r.solution.algorithm,
                solve_seconds: r.solve_seconds,
                verify_seconds: r.verify_seconds,
            })
            .collect(),
    };
    fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(())
}

/// [`execute`] followed by [`write_outputs`] into the configured directory.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    let report = execute(config)?;
    write_outputs(&report, &config.solver.out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub table: String,
    pub summary_csv: String,
    /// Per-iteration `|z|` and tracked `|u_i|` for every algorithm.
    pub trace_csv: String,
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    algorithm: Algorithm,
    iterations: usize,
    iterations_to_tolerance: Option<usize>,
    final_welfare: f64,
    welfare_delta: f64,
    aggregate_delta: f64,
}

/// Side-by-side view of the runs; deltas are relative to the first run.
pub fn compare_algorithms(report: &RunReport) -> Result<Comparison> {
    if report.runs.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two runs".into()));
    }
    let base = &report.runs[0].solution;
    let rows: Vec<ComparisonRow> = report
        .runs
        .iter()
        .map(|r| ComparisonRow {
            algorithm: r.solution.algorithm,
            iterations: r.solution.iterations,
            iterations_to_tolerance: r.iterations_to_tolerance,
            final_welfare: r.solution.diagnostics.welfare,
            welfare_delta: r.solution.diagnostics.welfare - base.diagnostics.welfare,
            aggregate_delta: dist(&r.solution.aggregate_z, &base.aggregate_z),
        })
        .collect();

    let mut table = format!(
        "{:<12} {:>10} {:>14} {:>18} {:>14} {:>12}\n",
        "algorithm", "iterations", "iters_to_1e-3", "final_welfare", "welfare_delta", "z_delta"
    );
    for r in &rows {
        let itt = r.iterations_to_tolerance.map_or("-".to_string(), |v| v.to_string());
        table += &format!(
            "{:<12} {:>10} {:>14} {:>18.9} {:>14.3e} {:>12.3e}\n",
            r.algorithm.as_str(),
            r.iterations,
            itt,
            r.final_welfare,
            r.welfare_delta,
            r.aggregate_delta
        );
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let summary_csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");

    let tracked = report.instance.n_agents().min(3);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iter".to_string()];
    for r in &report.runs {
        let name = r.solution.algorithm.as_str().replace('-', "_");
        header.push(format!("z_norm_{name}"));
        for i in 0..tracked {
            header.push(format!("u_norm_{name}_agent_{}", report.instance.agent(i).id));
        }
    }
    w.write_record(&header)?;
    let longest = report.runs.iter().map(|r| r.solution.residual_trace.len()).max().unwrap_or(0);
    for k in 0..longest {
        let mut rec = vec![(k + 1).to_string()];
        for r in &report.runs {
            match r.solution.residual_trace.get(k) {
                Some(row) => {
                    rec.push(row.z_norm.to_string());
                    rec.extend(row.agent_norms.iter().take(tracked).map(|v| v.to_string()));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), tracked + 1)),
            }
        }
        w.write_record(&rec)?;
    }
    let trace_csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");
    Ok(Comparison {
        table,
        summary_csv,
        trace_csv,
    })
}
