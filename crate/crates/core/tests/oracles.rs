//! Fixed examples checked against hand computations or brute-force oracles.

mod common;

use approx::assert_abs_diff_eq;
use common::{active_set_qp, grid_nash_gap, grid_welfare_min, SmallQp};
use mfg_welfare::agent_solver::{best_response, best_response_value, BestResponseQuery};
use mfg_welfare::coordination::{
    admm_solve, fixed_point_residual, mann_solve, primal_dual_step, SolverState, StepSchedule,
};
use mfg_welfare::model::{
    agent_cost, lift_dynamics, simulate, validate_instance, AgentSpec, CouplingKind, CouplingMode,
    CouplingSpec, ProblemInstance, TimeGrid,
};
use mfg_welfare::qp::{project_box_budget, solve_qp, QpProblem, QpSettings};
use mfg_welfare::vecops::dist;
use mfg_welfare::verification::{duality_gap, epsilon_nash_gap, lemma1_bound_estimate, lemma1_closed_form};
use nalgebra::{DMatrix, DVector};

fn grid(k: usize) -> TimeGrid {
    TimeGrid::new(k, 5.0).unwrap()
}

fn affine(slope: f64, k: usize) -> CouplingSpec {
    CouplingSpec::new(
        CouplingMode::ControlAverage,
        CouplingKind::Affine { slope, offset: vec![0.0; k] },
    )
}

/// Two EV agents over two periods, all bounds on the 0.01 grid.
fn two_by_two() -> ProblemInstance {
    let agents = vec![
        AgentSpec::integrator(0, 2, 10.0, 0.2)
            .with_budget(Some(0.3))
            .with_control_weight(0.2)
            .with_linear_cost(vec![0.2, 0.6]),
        AgentSpec::integrator(1, 2, 10.0, 0.2)
            .with_budget(Some(0.2))
            .with_control_weight(0.2)
            .with_linear_cost(vec![0.2, 0.6]),
    ];
    ProblemInstance::new(agents, CouplingSpec::ev(0.2, 1.0), grid(2)).unwrap()
}

#[test]
fn validate_reports_budget_and_greedy_witness() {
    let bad = AgentSpec::integrator(0, 3, 1.5, 1.0).with_budget(Some(2.0));
    let inst = ProblemInstance::new(vec![bad], CouplingSpec::ev(0.1, 1.0), grid(3)).unwrap();
    assert!(!validate_instance(&inst).is_ok());

    let ok = AgentSpec::integrator(0, 3, 2.5, 1.0).with_budget(Some(2.0));
    let inst = ProblemInstance::new(vec![ok], CouplingSpec::ev(0.1, 1.0), grid(3)).unwrap();
    let report = validate_instance(&inst);
    assert!(report.is_ok());
    assert_eq!(report.witnesses[0].as_deref(), Some(&[1.0, 1.0, 0.0][..]));
}

#[test]
fn lifted_states_match_recursion() {
    let agent = AgentSpec::integrator(0, 3, 10.0, 5.0).with_dynamics(0.9, 0.5).with_x0(1.0);
    let map = lift_dynamics(&agent, &grid(3)).unwrap();
    let x = map.apply(&[1.0, 2.0, 3.0]);
    // 0.9 + 0.5, 0.9 * 1.4 + 1.0, 0.9 * 2.26 + 1.5
    let expected = [1.4, 2.26, 3.534];
    for (a, b) in x.iter().zip(expected) {
        assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
    }
    assert!(dist(&x, &simulate(&agent, &[1.0, 2.0, 3.0])) < 1e-12);
}

#[test]
fn agent_cost_expands_by_hand() {
    let agent = AgentSpec::integrator(0, 2, 10.0, 5.0)
        .with_control_weight(0.5)
        .with_state_weight(0.25)
        .with_linear_cost(vec![1.0, -1.0]);
    let inst = ProblemInstance::new(vec![agent], affine(2.0, 2), grid(2)).unwrap();
    // x = [1, 3]; V = 0.25 * 10 + 0.5 * 5 + (1 - 2) = 4; F(z) . u = 2 * (0.5 + 2)
    let cost = agent_cost(&inst, 0, &[1.0, 2.0], &[0.5, 1.0]).unwrap();
    assert_abs_diff_eq!(cost, 9.0, epsilon = 1e-12);
}

#[test]
fn projection_clips_to_budget() {
    let p = project_box_budget(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1.0).unwrap();
    assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
}

#[test]
fn qp_with_budget_matches_active_set() {
    let p = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
    let q = DVector::from_vec(vec![-1.0, -1.0]);
    let problem = QpProblem::new(p.clone(), q.clone())
        .with_box(DVector::zeros(2), DVector::from_element(2, 1.0))
        .with_equality(DMatrix::from_element(1, 2, 1.0), DVector::from_element(1, 1.0));
    let sol = solve_qp(&problem, &QpSettings::default()).unwrap();
    assert_abs_diff_eq!(sol.u[0], 2.0 / 3.0, epsilon = 1e-6);
    assert_abs_diff_eq!(sol.u[1], 1.0 / 3.0, epsilon = 1e-6);

    let oracle = active_set_qp(&SmallQp {
        p,
        q,
        lo: vec![0.0; 2],
        hi: vec![1.0; 2],
        total: Some(1.0),
        h: vec![],
        h_rhs: vec![],
    });
    assert_abs_diff_eq!(sol.objective, oracle.1, epsilon = 1e-6);
}

#[test]
fn state_coupled_best_response() {
    let agent = AgentSpec::integrator(0, 2, 10.0, 1.0)
        .with_budget(Some(1.0))
        .with_control_weight(1.0);
    let coupling = CouplingSpec::new(
        CouplingMode::StateAverage,
        CouplingKind::Affine { slope: 1.0, offset: vec![0.0; 2] },
    );
    let inst = ProblemInstance::new(vec![agent], coupling, grid(2)).unwrap();
    let y = [1.0, 1.0];
    let u = best_response(&BestResponseQuery::new(&inst, 0, &y), &QpSettings::default()).unwrap();
    // min u1^2 + u2^2 + 2 u1 + u2 on u1 + u2 = 1
    assert_abs_diff_eq!(u[0], 0.25, epsilon = 1e-6);
    assert_abs_diff_eq!(u[1], 0.75, epsilon = 1e-6);

    // x = [u1, u1 + u2]: objective u^T I u + [2, 1] . u, halved for the oracle
    let oracle = active_set_qp(&SmallQp {
        p: DMatrix::identity(2, 2) * 2.0,
        q: DVector::from_vec(vec![2.0, 1.0]),
        lo: vec![0.0; 2],
        hi: vec![1.0; 2],
        total: Some(1.0),
        h: vec![vec![1.0, 0.0], vec![1.0, 1.0]],
        h_rhs: vec![10.0, 10.0],
    });
    assert!(dist(&u, &oracle.0) < 1e-6);
}

#[test]
fn best_response_value_matches_grid() {
    let inst = two_by_two();
    let y = [0.3, -0.1];
    let settings = QpSettings::default();
    let value = best_response_value(&BestResponseQuery::new(&inst, 0, &y), &settings).unwrap();
    let agent = inst.agent(0);
    let best = common::agent_grid(agent, 0.01)
        .into_iter()
        .map(|u| {
            let x = inst.map(0).apply(&u);
            agent.running_cost(&x, &u) + y.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(value <= best + 1e-9);
    assert!(best - value < 1e-3);
}

#[test]
fn primal_dual_two_steps_by_hand() {
    let agents = vec![
        AgentSpec::integrator(0, 1, 10.0, 1.0)
            .with_control_weight(1.0)
            .with_linear_cost(vec![-1.0]),
        AgentSpec::integrator(1, 1, 10.0, 1.0)
            .with_control_weight(0.5)
            .with_linear_cost(vec![-2.0]),
    ];
    let inst = ProblemInstance::new(agents, affine(1.0, 1), grid(1)).unwrap();
    let settings = QpSettings::default();
    let s0 = SolverState::initial(&inst).unwrap();
    assert_eq!(s0.dual_price, vec![0.0]);

    let s1 = primal_dual_step(s0, &inst, 0.25, &settings).unwrap();
    assert_abs_diff_eq!(s1.controls[0][0], 0.5, epsilon = 1e-9);
    assert_abs_diff_eq!(s1.controls[1][0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(s1.aggregate_z[0], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(s1.dual_price[0], 0.375, epsilon = 1e-9);

    let s2 = primal_dual_step(s1, &inst, 0.25, &settings).unwrap();
    assert_abs_diff_eq!(s2.controls[0][0], 0.3125, epsilon = 1e-9);
    assert_abs_diff_eq!(s2.controls[1][0], 1.0, epsilon = 1e-9);
    assert_abs_diff_eq!(s2.aggregate_z[0], 0.375, epsilon = 1e-9);
    assert_abs_diff_eq!(s2.dual_price[0], 0.515625, epsilon = 1e-9);

    let t = &s2.residual_trace;
    assert_abs_diff_eq!(t[0].primal_res, 0.75, epsilon = 1e-9);
    assert_abs_diff_eq!(t[0].dual_res, 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t[1].primal_res, 0.28125, epsilon = 1e-9);
    assert_abs_diff_eq!(t[1].dual_res, 0.375, epsilon = 1e-9);
}

#[test]
fn small_game_welfare_matches_grid() {
    let inst = two_by_two();
    let mann = mann_solve(&inst, StepSchedule::mann(0.5), 5000, 1e-8).unwrap();
    assert!(mann.converged);
    let grid_min = grid_welfare_min(&inst, 0.01);
    let w = mann.diagnostics.welfare;
    assert!(w <= grid_min + 1e-9, "{w} vs {grid_min}");
    assert!(grid_min - w < 1e-3, "{w} vs {grid_min}");

    let admm = admm_solve(&inst, 0.2, 1e-8, 5000).unwrap();
    assert!(admm.converged);
    assert!(dist(&admm.aggregate_z, &mann.aggregate_z) < 1e-4);
}

#[test]
fn small_game_gap_matches_grid_gap() {
    let inst = two_by_two();
    let sol = admm_solve(&inst, 0.2, 1e-8, 5000).unwrap();
    let exact = epsilon_nash_gap(&inst, &sol, &QpSettings::default()).unwrap();
    let grid = grid_nash_gap(&inst, &sol.controls, 0.01);
    for (i, g) in exact.per_agent_gap.iter() {
        // the grid deviation is restricted, so it can only find less
        assert!(grid[*i] <= g + 1e-9);
        assert!(g - grid[*i] < 1e-3, "agent {i}: {g} vs {}", grid[*i]);
    }
}

#[test]
fn duality_gap_closes_at_equilibrium() {
    let inst = two_by_two();
    let sol = admm_solve(&inst, 0.2, 1e-8, 5000).unwrap();
    let gap = duality_gap(&inst, &sol).unwrap();
    assert!(gap.abs() <= 1e-4 * sol.diagnostics.welfare.abs().max(1.0), "{gap}");
}

#[test]
fn mean_field_bound_example() {
    let stats = lemma1_bound_estimate(1.0, 1.0, 100, 10_000, 7).unwrap();
    assert!(stats.mean_lhs <= 0.02 + 3.0 * stats.std_error);
    // d = 2 ball of radius 1: L C d / ((d + 2) N) = 0.005
    assert_abs_diff_eq!(lemma1_closed_form(1.0, 1.0, 100, 2), 0.005, epsilon = 1e-15);
    assert_abs_diff_eq!(
        lemma1_closed_form(1.0, 1.0, 200, 2),
        0.5 * lemma1_closed_form(1.0, 1.0, 100, 2),
        epsilon = 1e-15
    );
}

#[test]
fn fixed_point_residual_examples() {
    let inst = two_by_two();
    let sol = admm_solve(&inst, 0.2, 1e-8, 5000).unwrap();
    assert!(fixed_point_residual(&inst, &sol.dual_price).unwrap() < 1e-5);
    let off: Vec<f64> = sol.dual_price.iter().map(|v| v + 1.0).collect();
    assert!(fixed_point_residual(&inst, &off).unwrap() > 0.1);
}
