//! Brute-force reference engines used to check the solver and the
//! branch-and-bound: exhaustive enumeration of leg supports, a
//! coarse-to-fine grid search over the transfers of a two-terminal device,
//! and finite-difference checks of a linearized grid against the nonlinear
//! power flow.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ac_power_flow, build_admittance, solve_noload, BusNetwork, LinearizedGrid};
use crate::program::{CardinalityLimit, ConicProgramIR, TimestepModel};
use crate::solver::{ConicSolution, SocpSolver, SolverSettings};

/// Largest terminal count accepted by [`enumerate_supports`].
pub const MAX_ENUMERATED_TERMINALS: usize = 12;

/// Terminals allowed to carry power.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SupportPattern(pub Vec<usize>);

impl SupportPattern {
    pub fn fixings(&self, m: usize) -> Vec<bool> {
        (0..m).map(|i| self.0.contains(&i)).collect()
    }
}

/// Every subset of `0..m` of size at most `n`, smallest first.
pub fn supports(m: usize, n: usize) -> Vec<SupportPattern> {
    let mut out: Vec<SupportPattern> = (0u32..1 << m)
        .filter(|mask| mask.count_ones() as usize <= n)
        .map(|mask| SupportPattern((0..m).filter(|i| mask & (1 << i) != 0).collect()))
        .collect();
    out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.cmp(b)));
    out
}

#[derive(Clone, Debug)]
pub struct SupportSearch {
    /// Best support and its solution; `None` if every support is infeasible.
    pub best: Option<(SupportPattern, ConicSolution)>,
    pub solved: usize,
    pub infeasible: usize,
}

impl SupportSearch {
    pub fn objective(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, s)| s.objective)
    }
}

/// Solves the program once for every support of size at most `n`, with the
/// binaries fixed to the support, and keeps the best.
///
/// The program must carry one binary per terminal; build it with
/// `binaries_when_vacuous` when `n` equals the terminal count.
pub fn enumerate_supports(ir: &ConicProgramIR, n: usize, settings: &SolverSettings) -> Result<SupportSearch> {
    let m = ir.n_binaries();
    if m == 0 {
        return Err(Error::Validation("support enumeration needs one binary per terminal".into()));
    }
    if m > MAX_ENUMERATED_TERMINALS {
        return Err(Error::Validation(format!(
            "{m} terminals exceed the enumeration guard of {MAX_ENUMERATED_TERMINALS}"
        )));
    }
    let solver = SocpSolver::new(settings.clone());
    let results: Vec<(SupportPattern, ConicSolution)> = supports(m, n.min(m))
        .into_par_iter()
        .map(|sp| {
            let sol = solver.solve_fixed(ir, &sp.fixings(m));
            (sp, sol)
        })
        .collect();
    let solved = results.len();
    let infeasible = results.iter().filter(|(_, s)| !s.is_optimal()).count();
    // Ties keep the earliest (smallest) support, independent of scheduling.
    let best = results
        .into_iter()
        .filter(|(_, s)| s.is_optimal())
        .fold(None::<(SupportPattern, ConicSolution)>, |acc, cand| match acc {
            Some(a) if a.1.objective <= cand.1.objective => Some(a),
            _ => Some(cand),
        });
    Ok(SupportSearch { best, solved, infeasible })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    /// `[P_1, P_2, Q_1, Q_2]`, pu.
    pub x: DVector<f64>,
    pub apparent: [f64; 2],
    /// Exact objective: quadratic network loss plus converter losses.
    pub objective: f64,
    pub evaluations: usize,
}

/// Grid search over `(P_1, Q_1, Q_2)` for a two-terminal converter, with
/// `P_2` recovered from the dc power balance. The scan starts at a step of
/// a twentieth of the rating and refines around the incumbent by a factor
/// of five per level until the step reaches `resolution`.
///
/// Returns `Ok(None)` when no grid point is feasible.
pub fn grid_search_continuous(model: &TimestepModel, resolution: f64) -> Result<Option<GridPoint>> {
    if model.m() != 2 {
        return Err(Error::Validation(format!(
            "grid search handles 2 terminals (3 free dimensions), got {}",
            model.m()
        )));
    }
    if !(resolution > 0.0) {
        return Err(Error::Validation("grid resolution must be positive".into()));
    }
    let k = model.conv.loss_coeff;
    if k >= 1.0 {
        return Err(Error::Validation("loss coefficient must be below 1 for the dc balance".into()));
    }
    let s_total = model.conv.s_total;
    let p_der = if model.conv.has_dc_der { model.ts.p_der } else { 0.0 };
    let allowed = match model.ts.cardinality {
        CardinalityLimit::Unconstrained => 2,
        CardinalityLimit::AtMost(n) => n,
    };
    let monitored = model.monitored();

    let eval = |p1: f64, q1: f64, q2: f64| -> Option<(f64, DVector<f64>, [f64; 2])> {
        let s1 = p1.hypot(q1);
        // P_1 - k S_1 + P_2 - k S_2 + P_DER = 0, solved for P_2.
        let r = -p_der - p1 + k * s1;
        let p2 = (r + k * (r * r + (1.0 - k * k) * q2 * q2).sqrt()) / (1.0 - k * k);
        let s2 = p2.hypot(q2);
        if s1 + s2 > s_total * (1.0 + 1e-12) {
            return None;
        }
        let active = usize::from(s1 > 0.0) + usize::from(s2 > 0.0);
        if active > allowed {
            return None;
        }
        let x = DVector::from_vec(vec![p1, p2, q1, q2]);
        let v = model.voltages(&x);
        if monitored.iter().any(|&j| v[j] > model.ts.v_max || v[j] < model.ts.v_min) {
            return None;
        }
        Some((model.network_loss(&x) + k * (s1 + s2), x, [s1, s2]))
    };

    let mut step = s_total / 20.0;
    let mut center = [0.0; 3];
    let mut half = s_total;
    let mut best: Option<GridPoint> = None;
    let mut evaluations = 0;
    loop {
        let count = (half / step).round() as i64;
        for a in -count..=count {
            for b in -count..=count {
                for c in -count..=count {
                    let (p1, q1, q2) = (
                        center[0] + a as f64 * step,
                        center[1] + b as f64 * step,
                        center[2] + c as f64 * step,
                    );
                    evaluations += 1;
                    if let Some((obj, x, apparent)) = eval(p1, q1, q2) {
                        if !best.as_ref().is_some_and(|g| obj >= g.objective) {
                            best = Some(GridPoint { x, apparent, objective: obj, evaluations: 0 });
                        }
                    }
                }
            }
        }
        let Some(b) = &best else { break };
        if step <= resolution {
            break;
        }
        center = [b.x[0], b.x[2], b.x[3]];
        half = 2.0 * step;
        step = (step / 5.0).max(resolution);
    }
    Ok(best.map(|mut g| {
        g.evaluations = evaluations;
        g
    }))
}

/// Outcome of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            // NaN fails.
            passed: value <= tolerance,
        }
    }
}

/// Step of the central differences.
const FD_STEP: f64 = 1e-5;

/// Checks a linearization of `net` at its terminals against the nonlinear
/// power flow:
///
/// * `lambda_psd`: most negative eigenvalue of the terminal loss Hessian;
/// * `k_fd`, `lambda_fd`: largest deviation of the voltage sensitivity and
///   the loss gradient from central differences at zero injection;
/// * `curvature_fd`: relative deviation of the loss curvature from second
///   differences along random directions;
/// * `sigma_noload`: constant term against the no-load loss;
/// * `voltage_change_error`: relative 2-norm error of the predicted voltage
///   changes, pooled over `samples` random terminal injections whose total
///   apparent power is at most `rating`.
pub fn check_linearization(net: &BusNetwork, lin: &LinearizedGrid, rating: f64, samples: usize, seed: u64) -> Result<Vec<Check>> {
    let adm = build_admittance(net)?;
    let noload = solve_noload(net, &adm)?;
    let m = lin.n_terminals();
    let flow = |x: &DVector<f64>| ac_power_flow(&adm, &noload, &lin.expand_terminal_injections(x));

    let quad = &lin.loss.quad;
    let asym = (quad - quad.transpose()).amax();
    let min_eig = quad.clone().symmetric_eigen().eigenvalues.min();
    let mut checks = vec![
        Check::at_most("lambda_psd", (-min_eig).max(0.0), 1e-9),
        Check::at_most("lambda_symmetry", asym, 1e-12),
    ];

    let zero = DVector::zeros(2 * m);
    let base = flow(&zero)?;
    let (mut k_err, mut lam_err) = (0.0f64, 0.0f64);
    for j in 0..2 * m {
        let mut e = zero.clone();
        e[j] = FD_STEP;
        let plus = flow(&e)?;
        let minus = flow(&-e)?;
        let dv = (plus.load_magnitudes() - minus.load_magnitudes()) / (2.0 * FD_STEP);
        k_err = k_err.max((lin.k.column(j) - dv).amax());
        lam_err = lam_err.max((lin.loss.lin[j] - (plus.loss - minus.loss) / (2.0 * FD_STEP)).abs());
    }
    checks.push(Check::at_most("k_fd", k_err, 1e-5));
    checks.push(Check::at_most("lambda_fd", lam_err, 1e-5));
    checks.push(Check::at_most("sigma_noload", (lin.loss.sigma - base.loss).abs(), 1e-9));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-3;
    let (mut curv_err, mut curv_scale) = (0.0f64, 0.0f64);
    for _ in 0..8 {
        let mut d = DVector::from_fn(2 * m, |_, _| rng.gen_range(-1.0..1.0));
        d /= d.norm();
        let second = (flow(&(&d * h))?.loss + flow(&(&d * -h))?.loss - 2.0 * base.loss) / (h * h);
        let model = 2.0 * d.dot(&(quad * &d));
        curv_err = curv_err.max((second - model).abs());
        curv_scale = curv_scale.max(second.abs());
    }
    checks.push(Check::at_most("curvature_fd", curv_err / curv_scale.max(f64::MIN_POSITIVE), 1e-2));

    let (mut err_sq, mut change_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut x: DVector<f64> = DVector::from_fn(2 * m, |_, _| rng.gen_range(-1.0..1.0));
        let apparent: f64 = (0..m).map(|i| x[i].hypot(x[m + i])).sum();
        x *= rng.gen_range(0.0..=1.0) * rating / apparent;
        let truth = flow(&x)?.load_magnitudes() - &lin.b;
        let predicted = &lin.k * &x;
        err_sq += (predicted - &truth).norm_squared();
        change_sq += truth.norm_squared();
    }
    let rel = if change_sq > 0.0 { (err_sq / change_sq).sqrt() } else { 0.0 };
    checks.push(Check::at_most("voltage_change_error", rel, 0.035));
    Ok(checks)
}
