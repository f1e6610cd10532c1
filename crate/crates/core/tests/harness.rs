use std::fs;

use mfg_welfare::harness::{run_scenario, AlgorithmChoice, PriceOffset, ScenarioConfig};
use mfg_welfare::model::TraceRow;
use mfg_welfare::vecops::dist;

fn config(dir: &std::path::Path, n: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.fleet.n_agents = n;
    c.solver.out_dir = dir.to_path_buf();
    c
}

#[test]
fn outputs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run_scenario(&config(&a, 12)).unwrap();
    run_scenario(&config(&b, 12)).unwrap();
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "comparison.txt"));
    for name in names.iter().filter(|n| *n != "timing.json") {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn trace_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(tmp.path(), 8);
    c.solver.algorithm = AlgorithmChoice::Admm;
    let report = run_scenario(&c).unwrap();
    let mut reader = csv::Reader::from_path(tmp.path().join("trace_admm.csv")).unwrap();
    let rows: Vec<TraceRow> = reader.deserialize().map(|r| r.unwrap()).collect();
    let trace = &report.runs[0].solution.residual_trace;
    assert_eq!(rows.len(), trace.len());
    for (r, t) in rows.iter().zip(trace) {
        assert_eq!(r.iter, t.iter);
        assert_eq!(r.primal_res, t.primal_res);
        assert_eq!(r.welfare, t.welfare);
        assert_eq!(r.z_norm, t.z_norm);
    }
    assert!(!tmp.path().join("comparison.txt").exists());
}

#[test]
fn state_of_charge_fills_to_target() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_scenario(&config(tmp.path(), 20)).unwrap();
    for run in &report.runs {
        let s = &run.solution;
        for (i, x) in s.states.iter().enumerate() {
            let agent = report.instance.agent(i);
            let mut prev = agent.x0;
            for v in x {
                assert!(*v >= prev - 1e-9);
                prev = *v;
            }
            assert!((prev - agent.x0 - agent.budget.unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn single_agent_algorithms_agree() {
    let tmp = tempfile::tempdir().unwrap();
    // with a time-constant price the lone agent's optimum is also its best response
    let mut c = config(tmp.path(), 1);
    c.coupling.c = Some(PriceOffset::Uniform(0.1));
    let report = run_scenario(&c).unwrap();
    let base = &report.runs[0].solution.controls[0];
    for run in &report.runs {
        assert!(run.solution.converged, "{:?}", run.solution.algorithm);
        assert!(dist(&run.solution.controls[0], base) < 1e-6);
        assert!(run.nash_gap.as_ref().unwrap().max_gap.abs() < 1e-6);
    }
}

#[test]
fn algorithms_agree_on_welfare() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_scenario(&config(tmp.path(), 100)).unwrap();
    let base = report.runs[0].solution.diagnostics.welfare;
    for run in &report.runs {
        let w = run.solution.diagnostics.welfare;
        assert!((w - base).abs() <= 1e-3 * base.abs(), "{:?}: {w} vs {base}", run.solution.algorithm);
    }
}
