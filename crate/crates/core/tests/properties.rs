//! Property tests over randomly loaded timesteps.

use mpcard_core::fixtures;
use mpcard_core::grid::LinearizedGrid;
use mpcard_core::mip::{solve_misocp, BnBConfig};
use mpcard_core::mission::electrical_cardinality;
use mpcard_core::program::{build_program, parse_ir, serialize_ir, BuildOptions, CardinalityLimit, ConverterSpec, TimestepInput, TimestepModel};
use mpcard_core::solver::{check_relaxation_tightness, solve_socp, ConicSolution};
use proptest::prelude::*;

const M: usize = 3;

#[derive(Clone, Debug)]
struct Case {
    load: f64,
    der: f64,
    loss_coeff: f64,
}

fn case() -> impl Strategy<Value = Case> {
    (0.0..1.2f64, prop_oneof![Just(0.0), 0.0..0.3f64], 0.0..0.05f64).prop_map(|(load, der, loss_coeff)| Case { load, der, loss_coeff })
}

fn model(c: &Case, n: CardinalityLimit) -> TimestepModel {
    let net = fixtures::two_feeder_5bus();
    let pcc = &fixtures::FIVE_BUS_PCC[..M];
    let grid = LinearizedGrid::build(&net, pcc).unwrap();
    let mut conv = ConverterSpec::new(pcc.iter().map(|s| s.to_string()).collect(), 1.0);
    conv.loss_coeff = c.loss_coeff;
    conv.has_dc_der = c.der != 0.0;
    let mut ts = TimestepInput::unloaded(grid.bus_ids.len(), 0.9, 1.1, n);
    ts.background = net.peak_demand_injection().iter().map(|s| s * c.load).collect();
    ts.p_der = c.der;
    TimestepModel::new(&grid, &conv, &ts).unwrap()
}

fn exact() -> BnBConfig {
    BnBConfig { rel_gap: 0.0, abs_gap: 0.0, ..Default::default() }
}

/// Optimal objective for limit `n`, `None` when infeasible.
fn solve(c: &Case, n: usize, cfg: &BnBConfig) -> Option<(f64, ConicSolution, TimestepModel)> {
    let md = model(c, CardinalityLimit::AtMost(n));
    let ir = build_program(&md, BuildOptions { binaries_when_vacuous: true }).unwrap();
    let sol = solve_misocp(&ir, cfg).unwrap();
    sol.status.has_solution().then(|| (sol.objective, sol.incumbent.unwrap(), md))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_is_nonincreasing_in_n(c in case()) {
        let objs: Vec<Option<f64>> = (0..=M).map(|n| solve(&c, n, &exact()).map(|s| s.0)).collect();
        for w in objs.windows(2) {
            match (w[0], w[1]) {
                (Some(a), Some(b)) => prop_assert!(b <= a + 1e-8 * a.abs().max(1.0), "{objs:?}"),
                (Some(_), None) => prop_assert!(false, "looser limit became infeasible: {objs:?}"),
                _ => {}
            }
        }
        // Any feasible case is feasible once every terminal is allowed.
        prop_assert!(objs[M].is_some());
    }

    #[test]
    fn solutions_respect_the_limit_and_are_tight(c in case(), n in 0..=M) {
        if let Some((_, sol, md)) = solve(&c, n, &BnBConfig::default()) {
            let ir = build_program(&md, BuildOptions { binaries_when_vacuous: true }).unwrap();
            let s: Vec<f64> = (1..=M).map(|i| sol.value(&ir, &format!("S_c[{i}]")).unwrap().abs()).collect();
            prop_assert!(electrical_cardinality(&s, 1e-5 * md.conv.s_total).unwrap() <= n);
            prop_assert!(check_relaxation_tightness(&ir, &sol).unwrap() <= 3e-5);
        }
    }

    #[test]
    fn reported_gap_bounds_the_true_suboptimality(c in case(), n in 0..M, rel in 1e-6..1e-2f64) {
        let cfg = BnBConfig { rel_gap: rel, abs_gap: 1e-5, ..Default::default() };
        let md = model(&c, CardinalityLimit::AtMost(n));
        let ir = build_program(&md, BuildOptions::default()).unwrap();
        let loose = solve_misocp(&ir, &cfg).unwrap();
        let best = solve_misocp(&ir, &exact()).unwrap();
        prop_assert_eq!(loose.status.has_solution(), best.status.has_solution());
        if loose.status.has_solution() {
            let tol = cfg.abs_gap.max(rel * loose.objective.abs());
            prop_assert!(loose.objective - loose.bound <= tol + 1e-9);
            prop_assert!(loose.bound <= best.objective + 1e-8);
            prop_assert!(loose.objective <= best.objective + tol + 1e-8);
        }
    }

    #[test]
    fn converter_losses_never_help(c in case(), extra in 0.001..0.05f64) {
        let solve_k = |k: f64| {
            let md = model(&Case { loss_coeff: k, ..c.clone() }, CardinalityLimit::Unconstrained);
            solve_socp(&build_program(&md, BuildOptions::default()).unwrap(), &[])
        };
        let (a, b) = (solve_k(c.loss_coeff), solve_k(c.loss_coeff + extra));
        prop_assert!(a.is_optimal() && b.is_optimal());
        prop_assert!(b.objective >= a.objective - 1e-9);
    }

    #[test]
    fn solves_are_deterministic(c in case(), n in 0..=M) {
        let md = model(&c, CardinalityLimit::AtMost(n));
        let ir = build_program(&md, BuildOptions::default()).unwrap();
        let (a, b) = (solve_misocp(&ir, &BnBConfig::default()).unwrap(), solve_misocp(&ir, &BnBConfig::default()).unwrap());
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        prop_assert_eq!(a.nodes_explored, b.nodes_explored);
        let bits = |s: &Option<ConicSolution>| s.as_ref().map(|s| s.primal.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(bits(&a.incumbent), bits(&b.incumbent));
    }

    #[test]
    fn programs_survive_serialization(c in case(), n in 0..=M) {
        let md = model(&c, CardinalityLimit::AtMost(n));
        let ir = build_program(&md, BuildOptions::default()).unwrap();
        prop_assert_eq!(parse_ir(&serialize_ir(&ir)).unwrap(), ir);
    }

    #[test]
    fn ec_is_bounded_and_order_free(row in prop::collection::vec(0.0..10.0f64, 1..8), eps in 1e-6..1.0f64, scale in 0.1..10.0f64) {
        let ec = electrical_cardinality(&row, eps).unwrap();
        prop_assert!(ec <= row.len());
        let mut rev = row.clone();
        rev.reverse();
        prop_assert_eq!(electrical_cardinality(&rev, eps).unwrap(), ec);
        prop_assert!(electrical_cardinality(&row, 2.0 * eps).unwrap() <= ec);
        let scaled: Vec<f64> = row.iter().map(|v| v * scale).collect();
        let direct = row.iter().filter(|&&v| v * scale > eps * scale).count();
        prop_assert_eq!(electrical_cardinality(&scaled, eps * scale).unwrap(), direct);
    }

    #[test]
    fn cardinality_limits_round_trip(n in 0usize..64, unconstrained in any::<bool>()) {
        let c = if unconstrained { CardinalityLimit::Unconstrained } else { CardinalityLimit::AtMost(n) };
        prop_assert_eq!(c.to_string().parse::<CardinalityLimit>().unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        prop_assert_eq!(serde_json::from_str::<CardinalityLimit>(&json).unwrap(), c);
    }
}
