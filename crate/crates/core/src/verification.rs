//! Certificates for computed equilibria: finite-N Nash gaps, the potential
//! condition, the Lagrangian duality gap, and a Monte Carlo estimate of the
//! mean-field coupling error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent_solver::{best_response, BestResponseQuery, LocalObjective, OPT_TOL};
use crate::error::{check_len, Error, Result};
use crate::model::{
    agent_cost, coupled_variable, social_welfare, CouplingSpec, LinearOp, ProblemInstance, Solution,
};
use crate::qp::QpSettings;
use crate::vecops::{dot, norm, sum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashGapReport {
    /// `(agent id, gap)`
    pub per_agent_gap: Vec<(usize, f64)>,
    pub max_gap: f64,
    pub n_agents: usize,
}

/// For each agent, the cost at the solution minus the cost of its best
/// unilateral deviation, with everyone else frozen and the aggregate
/// recomputed from the deviation.
///
/// Requires an affine price `F(z) = A z + b`; the deviation problem is then
/// a QP. Nonlinear couplings return [`Error::Unsupported`].
pub fn epsilon_nash_gap(instance: &ProblemInstance, solution: &Solution, settings: &QpSettings) -> Result<NashGapReport> {
    let n = instance.n_agents();
    let k = instance.horizon();
    check_len("solution controls", n, solution.controls.len())?;
    let coupling = instance.coupling();
    let (a, b) = coupling
        .affine_price(k)
        .ok_or_else(|| Error::Unsupported(format!("Nash gap for '{}' coupling", coupling.id())))?;
    let g = coupling.aggregate_cost_weight();
    let nf = n as f64;
    let coupled: Vec<Vec<f64>> = solution
        .controls
        .iter()
        .enumerate()
        .map(|(i, u)| {
            check_len("control trajectory", k, u.len())?;
            Ok(coupled_variable(instance, i, u))
        })
        .collect::<Result<_>>()?;
    let total = sum(&coupled, k);
    let quad = match &a {
        LinearOp::Scaled(s) => LinearOp::Scaled(2.0 * s / nf + 2.0 * g / (nf * nf)),
        LinearOp::Dense(m) => {
            let mut q = (m + m.transpose()) / nf;
            for t in 0..k {
                q[(t, t)] += 2.0 * g / (nf * nf);
            }
            LinearOp::Dense(q)
        }
    };
    let z: Vec<f64> = total.iter().map(|v| v / nf).collect();

    let per_agent_gap = (0..n)
        .into_par_iter()
        .map(|i| {
            let others: Vec<f64> = (0..k).map(|t| total[t] - coupled[i][t]).collect();
            let a_others = a.apply(&others);
            let lin: Vec<f64> = (0..k)
                .map(|t| a_others[t] / nf + b[t] + 2.0 * g * others[t] / (nf * nf))
                .collect();
            let constant = g * dot(&others, &others) / (nf * nf);
            let obj = LocalObjective::new(instance.agent(i), instance.map(i), instance.mode(), quad.clone(), lin);
            let best = obj.minimize(settings)?;
            let current = agent_cost(instance, i, &solution.controls[i], &z)?;
            Ok((instance.agent(i).id, current - (obj.value(&best) + constant)))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_gap = per_agent_gap.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(NashGapReport {
        per_agent_gap,
        max_gap,
        n_agents: n,
    })
}

/// Probe settings for [`potential_condition_check`]. Probe points are drawn
/// uniformly from `[-10, 10]^dim * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialProbe {
    pub dim: usize,
    pub probes: usize,
    pub tol: f64,
    pub scale: f64,
    pub seed: u64,
}

impl PotentialProbe {
    pub fn new(dim: usize) -> Self {
        PotentialProbe {
            dim,
            probes: 50,
            tol: 1e-6,
            scale: 1.0,
            seed: 0,
        }
    }

    /// Dimension of the instance's aggregate, scale its largest control bound.
    pub fn for_instance(instance: &ProblemInstance) -> Self {
        let scale = instance
            .agents()
            .iter()
            .flat_map(|a| a.u_max.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        PotentialProbe {
            scale: if scale > 0.0 && scale.is_finite() { scale } else { 1.0 },
            ..PotentialProbe::new(instance.horizon())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialCheck {
    pub passed: bool,
    /// Largest relative deviation of `F` from the finite-difference gradient
    /// of `phi / N`, or of the Jacobian of `F` from its transpose.
    pub max_deviation: f64,
}

/// Check `F(z) = phi'(z) / N` and the symmetry of the Jacobian of `F` at
/// seeded probe points.
pub fn potential_condition_check(coupling: &CouplingSpec, n_agents: usize, probe: &PotentialProbe) -> PotentialCheck {
    if !coupling.violations(probe.dim).is_empty() || n_agents == 0 || probe.probes == 0 {
        return PotentialCheck {
            passed: false,
            max_deviation: f64::INFINITY,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let nf = n_agents as f64;
    let dim = probe.dim;
    let mut worst = 0.0f64;
    for _ in 0..probe.probes {
        let z: Vec<f64> = (0..dim)
            .map(|_| probe.scale * rng.random_range(-10.0..=10.0))
            .collect();
        let f = coupling.price(&z);
        let steps: Vec<f64> = z.iter().map(|v| 1e-4 * (1.0 + v.abs())).collect();
        let mut fd = vec![0.0; dim];
        let mut jac = vec![vec![0.0; dim]; dim];
        for s in 0..dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[s] += steps[s];
            zm[s] -= steps[s];
            let h2 = zp[s] - zm[s];
            fd[s] = (coupling.potential(&zp, n_agents) - coupling.potential(&zm, n_agents)) / (nf * h2);
            let (fp, fm) = (coupling.price(&zp), coupling.price(&zm));
            for r in 0..dim {
                jac[r][s] = (fp[r] - fm[r]) / h2;
            }
        }
        let grad_dev = fd.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / 1.0f64.max(norm(&f));
        let jac_scale = jac.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut asym = 0.0f64;
        for r in 0..dim {
            for s in 0..r {
                asym = asym.max((jac[r][s] - jac[s][r]).abs());
            }
        }
        worst = worst.max(grad_dev).max(asym / jac_scale);
    }
    PotentialCheck {
        passed: worst.is_finite() && worst <= probe.tol,
        max_deviation: worst,
    }
}

/// Primal welfare minus the Lagrangian dual value at `solution.dual_price`:
/// `W(u) - [sum_i min (V_i + lambda . c_i) + min_z (phi(z) - N lambda . z)]`.
/// Infinite when the coordinator block is unbounded below at that price.
pub fn duality_gap(instance: &ProblemInstance, solution: &Solution) -> Result<f64> {
    let k = instance.horizon();
    let lambda = &solution.dual_price;
    check_len("dual price", k, lambda.len())?;
    let settings = QpSettings::default();
    let primal = social_welfare(instance, &solution.controls)?;
    let agents: Vec<f64> = (0..instance.n_agents())
        .into_par_iter()
        .map(|i| {
            let q = BestResponseQuery::new(instance, i, lambda);
            let u = best_response(&q, &settings)?;
            let x = instance.map(i).apply(&u);
            Ok(instance.agent(i).running_cost(&x, &u) + dot(lambda, &coupled_variable(instance, i, &u)))
        })
        .collect::<Result<_>>()?;
    let hint = if solution.aggregate_z.len() == k { solution.aggregate_z.clone() } else { vec![0.0; k] };
    let coupling = instance.coupling();
    let n = instance.n_agents();
    let z = match coupling.solve_coordinator(lambda, 0.0, &hint, &hint) {
        Ok(z) => z,
        Err(Error::Unbounded(_)) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
    };
    let dual = agents.iter().sum::<f64>() + coupling.potential(&z, n) - n as f64 * dot(lambda, &z);
    Ok(primal - dual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Stats {
    pub n_population: usize,
    pub trials: usize,
    /// Estimate of `|E(F(m) . x_i) - F(E m) . E x_i|`.
    pub mean_lhs: f64,
    pub std_error: f64,
    pub bound_2lc_over_n: f64,
    pub lipschitz_l: f64,
    pub second_moment_c: f64,
}

impl Lemma1Stats {
    pub fn within_bound(&self) -> bool {
        self.mean_lhs <= self.bound_2lc_over_n + 3.0 * self.std_error
    }
}

/// Distribution of the agent states in [`lemma1_bound_estimate_with`].
#[derive(Debug, Clone, PartialEq)]
pub enum Lemma1Sampler {
    /// Uniform on the ball of radius `sqrt(C)` in the given dimension.
    UniformBall { dim: usize },
    /// Every state equals this vector.
    Constant(Vec<f64>),
}

/// Uniform-ball sampler in the plane.
pub fn lemma1_bound_estimate(
    lipschitz_l: f64,
    second_moment_c: f64,
    n_population: usize,
    trials: usize,
    seed: u64,
) -> Result<Lemma1Stats> {
    lemma1_bound_estimate_with(
        lipschitz_l,
        second_moment_c,
        n_population,
        trials,
        seed,
        &Lemma1Sampler::UniformBall { dim: 2 },
    )
}

/// Monte Carlo estimate of the coupling error with `F(m) = L m`.
///
/// Each trial draws `x_1..x_N`, and averages `F(m) . x_i` over `i`, which is
/// `L |m|^2`. The second term uses the across-trial mean of `m`. Trial `t`
/// uses stream `t` of a ChaCha8 generator seeded with `seed`.
pub fn lemma1_bound_estimate_with(
    lipschitz_l: f64,
    second_moment_c: f64,
    n_population: usize,
    trials: usize,
    seed: u64,
    sampler: &Lemma1Sampler,
) -> Result<Lemma1Stats> {
    if trials < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 trials, got {trials}")));
    }
    if n_population == 0 {
        return Err(Error::InvalidParameter("population must be nonempty".into()));
    }
    if !(lipschitz_l >= 0.0) || !(second_moment_c >= 0.0) {
        return Err(Error::InvalidParameter("L and C must be nonnegative".into()));
    }
    let dim = match sampler {
        Lemma1Sampler::UniformBall { dim } if *dim > 0 => *dim,
        Lemma1Sampler::Constant(x) if !x.is_empty() => {
            if dot(x, x) > second_moment_c * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter("constant state violates the second-moment bound".into()));
            }
            x.len()
        }
        _ => return Err(Error::InvalidParameter("sampler dimension must be positive".into())),
    };
    let radius = second_moment_c.sqrt();
    let means: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut m = vec![0.0; dim];
            match sampler {
                Lemma1Sampler::Constant(x) => m.copy_from_slice(x),
                Lemma1Sampler::UniformBall { .. } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(trial as u64);
                    let mut g = vec![0.0; dim];
                    for _ in 0..n_population {
                        for v in g.iter_mut() {
                            *v = rng.sample(StandardNormal);
                        }
                        let len = norm(&g);
                        let r = radius * rng.random::<f64>().powf(1.0 / dim as f64) / len;
                        for (acc, v) in m.iter_mut().zip(&g) {
                            *acc += r * v;
                        }
                    }
                    for v in m.iter_mut() {
                        *v /= n_population as f64;
                    }
                }
            }
            m
        })
        .collect();
    let tf = trials as f64;
    let samples: Vec<f64> = means.iter().map(|m| lipschitz_l * dot(m, m)).collect();
    let first = samples.iter().sum::<f64>() / tf;
    let var = samples.iter().map(|s| (s - first) * (s - first)).sum::<f64>() / (tf - 1.0);
    let mbar: Vec<f64> = (0..dim).map(|d| means.iter().map(|m| m[d]).sum::<f64>() / tf).collect();
    let second = lipschitz_l * dot(&mbar, &mbar);
    Ok(Lemma1Stats {
        n_population,
        trials,
        mean_lhs: (first - second).abs(),
        std_error: (var / tf).sqrt(),
        bound_2lc_over_n: 2.0 * lipschitz_l * second_moment_c / n_population as f64,
        lipschitz_l,
        second_moment_c,
    })
}

/// `L C d / ((d + 2) N)`: the exact left side for the uniform-ball sampler.
pub fn lemma1_closed_form(lipschitz_l: f64, second_moment_c: f64, n_population: usize, dim: usize) -> f64 {
    let d = dim as f64;
    lipschitz_l * second_moment_c * d / ((d + 2.0) * n_population as f64)
}

/// Tolerance below zero allowed for reported gaps.
pub const GAP_TOL: f64 = 10.0 * OPT_TOL;
