//! The `verify` command: linearization checks against the nonlinear power
//! flow, branch-and-bound against support enumeration, and (for two
//! terminals) the conic solver against a grid search.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use mpcard_core::mip::{solve_misocp, BnBConfig, MipStatus};
use mpcard_core::mission::{electrical_cardinality, EC_RELATIVE_TOLERANCE};
use mpcard_core::oracle::{check_linearization, enumerate_supports, grid_search_continuous, Check, MAX_ENUMERATED_TERMINALS};
use mpcard_core::program::{build_program, BuildOptions, TimestepModel};
use mpcard_core::solver::{check_relaxation_tightness, solve_socp};
use mpcard_core::CardinalityLimit;
use rayon::prelude::*;

use crate::linearize;
use crate::Loaded;

pub struct Options {
    pub linearization: Option<PathBuf>,
    pub samples: usize,
    pub timesteps: usize,
    pub out: Option<PathBuf>,
}

const TIGHTNESS_TOL: f64 = 3e-5;
const GRID_RESOLUTION: f64 = 1e-3;
const GRID_TOL: f64 = 1e-4;

struct Row {
    subject: String,
    check: Check,
}

impl Row {
    fn new(subject: impl Into<String>, check: Check) -> Self {
        Self { subject: subject.into(), check }
    }
}

/// Evenly spaced timesteps, centred in their segments.
fn sample_timesteps(tau: usize, count: usize) -> Vec<usize> {
    let count = count.min(tau);
    let mut ts: Vec<usize> = (0..count).map(|j| (2 * j + 1) * tau / (2 * count)).collect();
    ts.dedup();
    ts
}

fn solver_checks(loaded: &Loaded, t: usize, n: usize) -> Result<Vec<Row>> {
    let study = &loaded.study;
    let ts = study.horizon(CardinalityLimit::AtMost(n)).timestep(t);
    let model = TimestepModel::new(&study.grid, &study.converter, &ts)?;
    let ir = build_program(&model, BuildOptions { binaries_when_vacuous: true })?;
    let cfg = BnBConfig { rel_gap: 0.0, abs_gap: 0.0, ..study.bnb.clone() };
    let bnb = solve_misocp(&ir, &cfg)?;
    let oracle = enumerate_supports(&ir, n, &cfg.solver)?;
    let subject = format!("t={t} n={n}");
    let mut rows = Vec::new();
    match (oracle.objective(), bnb.status.has_solution()) {
        (None, _) => {
            let agree = bnb.status == MipStatus::Infeasible;
            rows.push(Row::new(&subject, Check::at_most("bnb_vs_enumeration", if agree { 0.0 } else { f64::INFINITY }, 0.0)));
        }
        (Some(_), false) => rows.push(Row::new(&subject, Check::at_most("bnb_vs_enumeration", f64::INFINITY, 0.0))),
        (Some(obj), true) => {
            let tol = 1e-8f64.max(1e-4 * obj.abs());
            rows.push(Row::new(&subject, Check::at_most("bnb_vs_enumeration", (bnb.objective - obj).abs(), tol)));
            let inc = bnb.incumbent.as_ref().expect("solved status has an incumbent");
            let tight = check_relaxation_tightness(&ir, inc).unwrap_or(f64::INFINITY);
            rows.push(Row::new(&subject, Check::at_most("relaxation_tightness", tight, TIGHTNESS_TOL)));
            let s: Vec<f64> = (1..=model.m())
                .map(|i| inc.value(&ir, &format!("S_c[{i}]")).unwrap_or(f64::NAN).abs())
                .collect();
            let ec = electrical_cardinality(&s, EC_RELATIVE_TOLERANCE * model.conv.s_total)?;
            rows.push(Row::new(&subject, Check::at_most("ec_excess", ec.saturating_sub(n) as f64, 0.0)));
        }
    }
    Ok(rows)
}

fn grid_check(loaded: &Loaded, t: usize) -> Result<Row> {
    let study = &loaded.study;
    let ts = study.horizon(CardinalityLimit::Unconstrained).timestep(t);
    let model = TimestepModel::new(&study.grid, &study.converter, &ts)?;
    let ir = build_program(&model, BuildOptions::default())?;
    let sol = solve_socp(&ir, &[]);
    let grid = grid_search_continuous(&model, GRID_RESOLUTION)?;
    let value = match (sol.is_optimal(), grid) {
        (false, None) => 0.0,
        // The grid is restricted to the feasible set, so it cannot beat the solver.
        (true, Some(g)) if g.objective >= sol.objective - 1e-9 => g.objective - sol.objective,
        _ => f64::INFINITY,
    };
    Ok(Row::new(format!("t={t}"), Check::at_most("socp_vs_grid", value, GRID_TOL)))
}

pub fn execute(loaded: &Loaded, opts: &Options) -> Result<bool> {
    let study = &loaded.study;
    let mut grid = study.grid.clone();
    let subject = match &opts.linearization {
        Some(dir) => {
            linearize::read_dir(&mut grid, dir)?;
            dir.display().to_string()
        }
        None => "computed".to_string(),
    };
    let mut rows: Vec<Row> = check_linearization(&study.network, &grid, study.converter.s_total, opts.samples, loaded.config.synthetic.seed)?
        .into_iter()
        .map(|c| Row::new(format!("linearization {subject}"), c))
        .collect();

    let m = study.converter.m();
    let times = sample_timesteps(study.horizon.tau(), opts.timesteps);
    if m <= MAX_ENUMERATED_TERMINALS {
        let cases: Vec<(usize, usize)> = times.iter().flat_map(|&t| (0..=m).map(move |n| (t, n))).collect();
        let solved: Vec<Vec<Row>> = cases.par_iter().map(|&(t, n)| solver_checks(loaded, t, n)).collect::<Result<_>>()?;
        rows.extend(solved.into_iter().flatten());
    } else {
        log::warn!("{m} terminals exceed the enumeration guard; skipping branch-and-bound checks");
    }
    if m == 2 {
        let grids: Vec<Row> = times.par_iter().map(|&t| grid_check(loaded, t)).collect::<Result<_>>()?;
        rows.extend(grids);
    }

    let mut table = Vec::new();
    writeln!(table, "subject,check,value,tolerance,result")?;
    for r in &rows {
        let verdict = if r.check.passed { "pass" } else { "FAIL" };
        writeln!(table, "{},{},{:.6e},{:.1e},{verdict}", r.subject, r.check.name, r.check.value, r.check.tolerance)?;
    }
    std::io::stdout().write_all(&table)?;
    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("verify.csv"), &table)?;
    }
    let failed = rows.iter().filter(|r| !r.check.passed).count();
    if failed == 0 {
        eprintln!("all {} checks passed", rows.len());
    } else {
        eprintln!("{failed} of {} checks failed", rows.len());
    }
    Ok(failed == 0)
}
