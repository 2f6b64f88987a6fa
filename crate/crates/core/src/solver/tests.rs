use super::*;
use crate::fixtures;
use crate::grid::{BusNetwork, LinearizedGrid};
use crate::program::{build_timestep_program, AffineExpr, CardinalityLimit, ConverterSpec, LinearRow, SocCone, Term, TimestepInput};

fn cont(i: usize, coef: f64) -> Term {
    Term::new(Var::Cont(i), coef)
}

fn ir(vars: &[&str]) -> ConicProgramIR {
    ConicProgramIR {
        variables: vars.iter().map(|s| s.to_string()).collect(),
        binaries: Vec::new(),
        equalities: Vec::new(),
        inequalities: Vec::new(),
        soc_cones: Vec::new(),
        objective: AffineExpr::default(),
        big_m: 0.0,
    }
}

fn norm_instance() -> ConicProgramIR {
    let mut p = ir(&["t"]);
    p.soc_cones.push(SocCone {
        name: "norm".into(),
        head: 0,
        tail: vec![
            AffineExpr { terms: vec![], constant: 3.0 },
            AffineExpr { terms: vec![], constant: 4.0 },
        ],
    });
    p.objective = AffineExpr::var(0);
    p
}

#[test]
fn minimal_soc_instance() {
    let sol = solve_socp(&norm_instance(), &[]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal[0] - 5.0).abs() < 1e-8, "{}", sol.primal[0]);
    assert!((sol.objective - sol.dual_objective).abs() < 1e-8);
}

#[test]
fn small_socp_with_equalities() {
    // min x + y  s.t. t >= ||(x, y)||, t = 1  ->  x = y = -1/sqrt 2
    let mut p = ir(&["t", "x", "y"]);
    p.soc_cones.push(SocCone {
        name: "c".into(),
        head: 0,
        tail: vec![AffineExpr::var(1), AffineExpr::var(2)],
    });
    p.equalities.push(LinearRow { name: "unit".into(), terms: vec![cont(0, 1.0)], rhs: 1.0 });
    p.objective = AffineExpr { terms: vec![cont(1, 1.0), cont(2, 1.0)], constant: 0.0 };
    let sol = solve_socp(&p, &[]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let r = -(0.5f64).sqrt();
    assert!((sol.primal[1] - r).abs() < 1e-8);
    assert!((sol.primal[2] - r).abs() < 1e-8);
    assert!((sol.objective + 2f64.sqrt()).abs() < 1e-8);
    assert!(sol.primal_residual < 1e-8 && sol.dual_residual < 1e-8);
}

#[test]
fn infeasible_lp_is_certified() {
    // x <= -1, -x <= -1
    let mut p = ir(&["x"]);
    p.inequalities.push(LinearRow { name: "a".into(), terms: vec![cont(0, 1.0)], rhs: -1.0 });
    p.inequalities.push(LinearRow { name: "b".into(), terms: vec![cont(0, -1.0)], rhs: -1.0 });
    p.objective = AffineExpr::var(0);
    let sol = solve_socp(&p, &[]);
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.certificate_residual.unwrap() <= 1e-8);
}

#[test]
fn unbounded_lp_is_certified() {
    let mut p = ir(&["x"]);
    p.inequalities.push(LinearRow { name: "a".into(), terms: vec![cont(0, 1.0)], rhs: 1.0 });
    p.objective = AffineExpr::var(0);
    let sol = solve_socp(&p, &[]);
    assert_eq!(sol.status, SolveStatus::Unbounded);
}

#[test]
fn presolve_detects_violated_fixed_row() {
    let mut p = ir(&["x"]);
    p.binaries.push("z".into());
    p.inequalities.push(LinearRow {
        name: "need_z".into(),
        terms: vec![Term::new(Var::Bin(0), -1.0)],
        rhs: -0.5,
    });
    p.objective = AffineExpr::var(0);
    p.inequalities.push(LinearRow { name: "lo".into(), terms: vec![cont(0, -1.0)], rhs: 0.0 });
    let sol = solve_socp(&p, &[false]);
    assert_eq!(sol.status, SolveStatus::Infeasible);
    let sol = solve_socp(&p, &[true]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.objective.abs() < 1e-8);
}

fn two_bus() -> BusNetwork {
    BusNetwork::from_json(
        r#"{"s_base_kva": 1000, "slack_voltage_pu": [1.0, 0.0],
            "buses": [{"id": "1", "kind": "slack"}, {"id": "2", "kind": "load"}, {"id": "3", "kind": "load"}],
            "branches": [{"from": "1", "to": "2", "r_pu": 0.01, "x_pu": 0.1, "b_shunt_pu": 0},
                         {"from": "1", "to": "3", "r_pu": 0.02, "x_pu": 0.05, "b_shunt_pu": 0}]}"#,
    )
    .unwrap()
}

#[test]
fn zero_demand_gives_zero_transfer() {
    let net = two_bus();
    let grid = LinearizedGrid::build(&net, &["2", "3"]).unwrap();
    let conv = ConverterSpec::new(vec!["2".into(), "3".into()], 1.0);
    let ts = TimestepInput::unloaded(2, 0.9, 1.1, CardinalityLimit::Unconstrained);
    let p = build_timestep_program(&grid, &conv, &ts).unwrap();
    let sol = solve_socp(&p, &[]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    for &v in &sol.primal[..6] {
        assert!(v.abs() < 1e-7, "{v}");
    }
    assert!((sol.objective - grid.loss.sigma).abs() < 1e-9);
    assert!(check_relaxation_tightness(&p, &sol).unwrap() < 1e-9);
}

fn five_bus_program(k: f64) -> ConicProgramIR {
    let net = fixtures::two_feeder_5bus();
    let grid = LinearizedGrid::build(&net, &["3", "5"]).unwrap();
    let mut conv = ConverterSpec::new(vec!["3".into(), "5".into()], 1.0);
    conv.loss_coeff = k;
    let mut ts = TimestepInput::unloaded(4, 0.9, 1.1, CardinalityLimit::Unconstrained);
    ts.background = net.peak_demand_injection();
    build_timestep_program(&grid, &conv, &ts).unwrap()
}

#[test]
fn loaded_instance_is_tight_and_transfers_power() {
    let p = five_bus_program(0.01);
    let sol = solve_socp(&p, &[]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.rel_gap <= 1e-8);
    assert!(check_relaxation_tightness(&p, &sol).unwrap() < 3e-5);
    let s1 = sol.value(&p, "S_c[1]").unwrap();
    assert!(s1 > 1e-3, "expected a transfer, got {s1}");
}

#[test]
fn solves_are_deterministic() {
    let p = five_bus_program(0.01);
    let a = solve_socp(&p, &[]);
    let b = solve_socp(&p, &[]);
    assert_eq!(a, b);
}

#[test]
fn argmin_is_invariant_to_objective_scaling() {
    let p = five_bus_program(0.01);
    let base = solve_socp(&p, &[]);
    for factor in [1e-3, 7.0, 1e3] {
        let mut q = p.clone();
        for t in &mut q.objective.terms {
            t.coef *= factor;
        }
        let sol = solve_socp(&q, &[]);
        assert_eq!(sol.status, SolveStatus::Optimal);
        for (a, b) in base.primal.iter().zip(&sol.primal) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b} at factor {factor}");
        }
    }
}

#[test]
fn tightness_of_inflated_epigraph() {
    let p = five_bus_program(0.01);
    let mut sol = solve_socp(&p, &[]);
    let t = p.continuous("P_loss_ntwk").unwrap();
    let before = check_relaxation_tightness(&p, &sol).unwrap();
    sol.primal[t] += 0.1;
    // keep the head definition consistent with the inflated epigraph
    let h = p.continuous("loss_head").unwrap();
    sol.primal[h] += 0.05;
    let after = check_relaxation_tightness(&p, &sol).unwrap();
    assert!((after - before - 0.1).abs() < 1e-6, "{after}");
}

#[test]
fn trace_is_recorded_on_request() {
    let solver = SocpSolver::new(SolverSettings { trace: true, ..Default::default() });
    let sol = solver.solve_fixed(&norm_instance(), &[]);
    assert!(!sol.trace.is_empty());
    let mut buf = Vec::new();
    sol.write_trace(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,pcost"));
    assert_eq!(text.lines().count(), sol.trace.len() + 1);
}

