//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use mfg_welfare::model::{agent_cost, coupled_variable, simulate, AgentSpec, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// A small QP in explicit form.
#[derive(Debug, Clone)]
pub struct SmallQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub total: Option<f64>,
    pub h: Vec<Vec<f64>>,
    pub h_rhs: Vec<f64>,
}

impl SmallQp {
    pub fn objective(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        0.5 * v.dot(&(&self.p * &v)) + self.q.dot(&v)
    }

    pub fn feasible(&self, u: &[f64], tol: f64) -> bool {
        let boxed = u
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol);
        let eq = self.total.is_none_or(|b| (u.iter().sum::<f64>() - b).abs() <= tol);
        let ineq = self
            .h
            .iter()
            .zip(&self.h_rhs)
            .all(|(row, r)| row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() <= r + tol);
        boxed && eq && ineq
    }
}

/// Enumerate every active set (each variable free, at its lower or at its
/// upper bound; each inequality row active or not), solve the equality
/// constrained KKT system, and keep the best feasible candidate.
pub fn active_set_qp(qp: &SmallQp) -> (Vec<f64>, f64) {
    let k = qp.lo.len();
    let m = qp.h.len();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let patterns = 3usize.pow(k as u32);
    for pat in 0..patterns {
        let mut state = vec![0u8; k];
        let mut code = pat;
        for s in state.iter_mut() {
            *s = (code % 3) as u8;
            code /= 3;
        }
        for rows in 0..(1usize << m) {
            if let Some(u) = solve_pattern(qp, &state, rows) {
                if qp.feasible(&u, 1e-9) {
                    let f = qp.objective(&u);
                    if best.as_ref().is_none_or(|b| f < b.1) {
                        best = Some((u, f));
                    }
                }
            }
        }
    }
    best.expect("feasible QP has a KKT point")
}

fn solve_pattern(qp: &SmallQp, state: &[u8], rows: usize) -> Option<Vec<f64>> {
    let k = state.len();
    let mut u = vec![0.0; k];
    let free: Vec<usize> = (0..k).filter(|&t| state[t] == 0).collect();
    for t in 0..k {
        match state[t] {
            1 => u[t] = qp.lo[t],
            2 => u[t] = qp.hi[t],
            _ => {}
        }
    }
    let mut eq_rows: Vec<(Vec<f64>, f64)> = Vec::new();
    if let Some(b) = qp.total {
        eq_rows.push((vec![1.0; k], b));
    }
    for (j, row) in qp.h.iter().enumerate() {
        if rows & (1 << j) != 0 {
            eq_rows.push((row.clone(), qp.h_rhs[j]));
        }
    }
    let nf = free.len();
    let ne = eq_rows.len();
    if nf == 0 {
        return Some(u);
    }
    let dim = nf + ne;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = qp.p[(i, j)];
        }
        let fixed: f64 = (0..k).filter(|t| state[*t] != 0).map(|t| qp.p[(i, t)] * u[t]).sum();
        rhs[a] = -qp.q[i] - fixed;
    }
    for (r, (row, b)) in eq_rows.iter().enumerate() {
        for (a, &i) in free.iter().enumerate() {
            kkt[(nf + r, a)] = row[i];
            kkt[(a, nf + r)] = row[i];
        }
        let fixed: f64 = (0..k).filter(|t| state[*t] != 0).map(|t| row[t] * u[t]).sum();
        rhs[nf + r] = b - fixed;
    }
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (a, &i) in free.iter().enumerate() {
        u[i] = sol[a];
    }
    Some(u)
}

/// All integer vectors with `0 <= v_t <= cap_t` and `sum v = total`.
pub fn compositions(cap: &[i64], total: i64) -> Vec<Vec<i64>> {
    fn rec(cap: &[i64], total: i64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
        if cap.is_empty() {
            if total == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        let rest: i64 = cap[1..].iter().sum();
        for v in 0..=cap[0].min(total) {
            if total - v <= rest {
                prefix.push(v);
                rec(&cap[1..], total - v, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(cap, total, &mut Vec::new(), &mut out);
    out
}

/// Feasible controls of an agent on the grid `step * Z`. Bounds and budget
/// must be multiples of `step`; the control floor must be zero.
pub fn agent_grid(agent: &AgentSpec, step: f64) -> Vec<Vec<f64>> {
    let cap: Vec<i64> = agent.u_max.iter().map(|v| (v / step).round() as i64).collect();
    let total = (agent.budget.expect("grid oracle needs a budget") / step).round() as i64;
    compositions(&cap, total)
        .into_iter()
        .map(|v| v.iter().map(|x| *x as f64 * step).collect::<Vec<f64>>())
        .filter(|u| {
            let x = simulate(agent, u);
            x.iter()
                .zip(agent.x_min.iter().zip(&agent.x_max))
                .all(|(v, (lo, hi))| *v >= lo - 1e-12 && *v <= hi + 1e-12)
        })
        .collect()
}

/// Minimum social welfare over the joint grid, for up to three agents.
pub fn grid_welfare_min(instance: &ProblemInstance, step: f64) -> f64 {
    let n = instance.n_agents();
    assert!((1..=3).contains(&n));
    let k = instance.horizon();
    let per_agent: Vec<Vec<(Vec<f64>, f64)>> = (0..n)
        .map(|i| {
            let agent = instance.agent(i);
            agent_grid(agent, step)
                .into_iter()
                .map(|u| {
                    let x = instance.map(i).apply(&u);
                    let v = agent.running_cost(&x, &u);
                    (coupled_variable(instance, i, &u), v)
                })
                .collect()
        })
        .collect();
    let coupling = instance.coupling();
    let nf = n as f64;
    let empty = vec![(vec![0.0; k], 0.0)];
    let second = if n >= 2 { &per_agent[1] } else { &empty };
    let third = if n >= 3 { &per_agent[2] } else { &empty };
    per_agent[0]
        .par_iter()
        .map(|(c0, v0)| {
            let mut best = f64::INFINITY;
            let mut z = vec![0.0; k];
            for (c1, v1) in second {
                for (c2, v2) in third {
                    for t in 0..k {
                        z[t] = (c0[t] + c1[t] + c2[t]) / nf;
                    }
                    let w = v0 + v1 + v2 + coupling.potential(&z, n);
                    if w < best {
                        best = w;
                    }
                }
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min)
}

/// Per-agent Nash gap with the deviation searched over the grid.
pub fn grid_nash_gap(instance: &ProblemInstance, controls: &[Vec<f64>], step: f64) -> Vec<f64> {
    let n = instance.n_agents();
    let k = instance.horizon();
    let coupled: Vec<Vec<f64>> = (0..n).map(|i| coupled_variable(instance, i, &controls[i])).collect();
    (0..n)
        .map(|i| {
            let others: Vec<f64> = (0..k)
                .map(|t| (0..n).filter(|j| *j != i).map(|j| coupled[j][t]).sum())
                .collect();
            let z_of = |c: &[f64]| -> Vec<f64> { (0..k).map(|t| (others[t] + c[t]) / n as f64).collect() };
            let current = agent_cost(instance, i, &controls[i], &z_of(&coupled[i])).unwrap();
            let best = agent_grid(instance.agent(i), step)
                .into_iter()
                .map(|u| {
                    let c = coupled_variable(instance, i, &u);
                    agent_cost(instance, i, &u, &z_of(&c)).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            current - best
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Random instance with at most three agents and three periods whose
/// bounds and budgets sit on the 0.01 grid. Even seeds use the EV coupling,
/// odd seeds an affine price with heterogeneous quadratic costs.
pub fn small_instance(seed: u64) -> ProblemInstance {
    use mfg_welfare::model::{CouplingKind, CouplingMode, CouplingSpec, TimeGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let k = rng.random_range(1..=3usize);
    let ev = seed.is_multiple_of(2);
    let (coupling, eta, gamma) = if ev {
        let eta = rng.random_range(0.1..0.5);
        (CouplingSpec::ev(eta, 1.0), eta, 1.0)
    } else {
        let slope = rng.random_range(0.5..2.0);
        let offset = (0..k).map(|_| rng.random_range(-0.2..0.2)).collect();
        (
            CouplingSpec::new(CouplingMode::ControlAverage, CouplingKind::Affine { slope, offset }),
            0.0,
            0.0,
        )
    };
    let c: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..0.3)).collect();
    let agents = (0..n)
        .map(|i| {
            let cap_h = rng.random_range(5..=20i64);
            let budget_h = rng.random_range(1..=cap_h * k as i64);
            let cap = cap_h as f64 / 100.0;
            let budget = budget_h as f64 / 100.0;
            let a = AgentSpec::integrator(i, k, 10.0, cap).with_budget(Some(budget));
            if ev {
                a.with_control_weight(eta)
                    .with_linear_cost(c.iter().map(|v| 2.0 * gamma * v).collect())
            } else {
                a.with_control_weight(rng.random_range(0.2..1.0))
                    .with_linear_cost((0..k).map(|_| rng.random_range(-0.5..0.5)).collect())
            }
        })
        .collect();
    ProblemInstance::new(agents, coupling, TimeGrid::new(k, 5.0).unwrap()).unwrap()
}
