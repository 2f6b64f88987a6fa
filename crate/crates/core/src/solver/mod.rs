//! Continuous second-order cone solver for [`ConicProgramIR`] instances
//! with every binary fixed (or relaxed to `[0, 1]` inside branch-and-bound).
//!
//! The pipeline is: presolve (binary substitution, collapse of cones whose
//! head is forced to zero, removal of empty rows), Ruiz equilibration,
//! cost normalization, then a dense homogeneous self-dual interior-point
//! method. Results are reported against the IR's variables and rows.

mod compile;
mod cones;
mod ipm;

use std::io::Write;

use crate::error::Result;
use crate::program::{ConicProgramIR, Var};
use compile::{compile, equilibrate, BinaryMode, Compiled, NonnegOrigin};
pub use cones::ConeLayout;
pub use ipm::IterStat;

const RUIZ_PASSES: usize = 15;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    /// Primal and dual residual tolerance (relative to data scale).
    pub feastol: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub max_iter: usize,
    /// Keep per-iteration statistics in the solution.
    pub trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feastol: 1e-9,
            abs_gap: 1e-10,
            rel_gap: 1e-8,
            max_iter: 200,
            trace: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solution of a continuous program, indexed like the IR.
///
/// Duals follow the convention `objective = -(sum y_i rhs_i) - ...`: the
/// multiplier of an inequality row is nonnegative, and cone duals lie in the
/// (self-dual) cone.
#[derive(Clone, Debug, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Continuous values, one per `ir.variables`.
    pub primal: Vec<f64>,
    /// Binary values used (fixed or relaxed), one per `ir.binaries`.
    pub binaries: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub ineq_duals: Vec<f64>,
    pub cone_duals: Vec<Vec<f64>>,
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub iterations: usize,
    /// Residual of the infeasibility (or unboundedness) certificate.
    pub certificate_residual: Option<f64>,
    pub trace: Vec<IterStat>,
}

impl ConicSolution {
    pub fn value(&self, ir: &ConicProgramIR, name: &str) -> Option<f64> {
        match ir.var(name)? {
            Var::Cont(i) => self.primal.get(i).copied(),
            Var::Bin(i) => self.binaries.get(i).copied(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn failed(ir: &ConicProgramIR, status: SolveStatus, binaries: Vec<f64>, iterations: usize) -> Self {
        Self {
            status,
            primal: vec![f64::NAN; ir.n_continuous()],
            binaries,
            eq_duals: vec![0.0; ir.equalities.len()],
            ineq_duals: vec![0.0; ir.inequalities.len()],
            cone_duals: ir.soc_cones.iter().map(|c| vec![0.0; c.tail.len() + 1]).collect(),
            objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            gap: f64::NAN,
            rel_gap: f64::NAN,
            iterations,
            certificate_residual: None,
            trace: Vec::new(),
        }
    }

    /// Writes the iteration trace as CSV.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        write_trace(&self.trace, out)
    }
}

pub fn write_trace<W: Write>(stats: &[IterStat], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "pcost", "dcost", "gap", "pres", "dres", "tau", "kappa", "step"])?;
    for s in stats {
        w.write_record(&[
            s.iteration.to_string(),
            format!("{:e}", s.pcost),
            format!("{:e}", s.dcost),
            format!("{:e}", s.gap),
            format!("{:e}", s.pres),
            format!("{:e}", s.dres),
            format!("{:e}", s.tau),
            format!("{:e}", s.kappa),
            format!("{:e}", s.step),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reusable solver; holds only settings, so one per thread is cheap.
#[derive(Clone, Debug, Default)]
pub struct SocpSolver {
    pub settings: SolverSettings,
}

impl SocpSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }

    /// Solves with every binary fixed. Programs without binaries take an
    /// empty slice.
    pub fn solve_fixed(&self, ir: &ConicProgramIR, fixings: &[bool]) -> ConicSolution {
        let modes: Vec<BinaryMode> = fixings.iter().map(|&v| BinaryMode::Fixed(v)).collect();
        self.solve_modes(ir, &modes)
    }

    /// Solves with `None` binaries relaxed to `[0, 1]`.
    pub fn solve_relaxation(&self, ir: &ConicProgramIR, fixings: &[Option<bool>]) -> ConicSolution {
        let modes: Vec<BinaryMode> = fixings
            .iter()
            .map(|f| match f {
                Some(v) => BinaryMode::Fixed(*v),
                None => BinaryMode::Relaxed,
            })
            .collect();
        self.solve_modes(ir, &modes)
    }

    fn solve_modes(&self, ir: &ConicProgramIR, modes: &[BinaryMode]) -> ConicSolution {
        assert_eq!(
            modes.len(),
            ir.n_binaries(),
            "every binary needs a fixing or relaxation"
        );
        let fixed_bins: Vec<f64> = modes
            .iter()
            .map(|m| match m {
                BinaryMode::Fixed(v) => f64::from(u8::from(*v)),
                BinaryMode::Relaxed => f64::NAN,
            })
            .collect();
        let (sf, post) = match compile(ir, modes) {
            Compiled::Ready(sf, post) => (sf, post),
            Compiled::Infeasible { row, violation } => {
                log::debug!("presolve: row '{row}' violated by {violation:.3e}");
                let mut sol = ConicSolution::failed(ir, SolveStatus::Infeasible, fixed_bins, 0);
                sol.certificate_residual = Some(violation);
                return sol;
            }
        };

        let (mut scaled, scaling) = equilibrate(&sf, RUIZ_PASSES);
        let cost_scale = {
            let c = scaled.c.amax();
            if c > 0.0 {
                c
            } else {
                1.0
            }
        };
        scaled.c /= cost_scale;
        let tol = ipm::Tolerances {
            feas: self.settings.feastol,
            abs_gap: self.settings.abs_gap,
            rel_gap: self.settings.rel_gap,
            max_iter: self.settings.max_iter,
        };
        let res = ipm::solve(&scaled, &tol);
        let mut trace = if self.settings.trace { res.stats.clone() } else { Vec::new() };
        for t in &mut trace {
            t.pcost = t.pcost * cost_scale + sf.obj_const;
            t.dcost = t.dcost * cost_scale + sf.obj_const;
            t.gap *= cost_scale;
        }
        let status = match res.outcome {
            ipm::Outcome::Optimal => SolveStatus::Optimal,
            ipm::Outcome::PrimalInfeasible => SolveStatus::Infeasible,
            ipm::Outcome::DualInfeasible => SolveStatus::Unbounded,
            ipm::Outcome::MaxIterations | ipm::Outcome::Stalled => SolveStatus::NumericalFailure,
        };
        if status != SolveStatus::Optimal {
            let mut sol = ConicSolution::failed(ir, status, fixed_bins, res.iterations);
            sol.certificate_residual = res.certificate_residual;
            sol.trace = trace;
            return sol;
        }

        // Undo equilibration and cost normalization.
        let x = res.x.component_mul(&scaling.col);
        let y = res.y.component_mul(&scaling.eq_row) * cost_scale;
        let z = res.z.component_mul(&scaling.cone_row) * cost_scale;
        let s = res.s.component_div(&scaling.cone_row);

        let objective = sf.c.dot(&x) + sf.obj_const;
        let dual_objective = -sf.b.dot(&y) - sf.h.dot(&z) + sf.obj_const;
        let pres = (&sf.a * &x - &sf.b)
            .amax()
            .max((&sf.g * &x + &s - &sf.h).amax());
        let dres = (sf.a.tr_mul(&y) + sf.g.tr_mul(&z) + &sf.c).amax();
        let gap = s.dot(&z).max(0.0);
        let rel_gap = gap / objective.abs().max(dual_objective.abs()).max(1.0);

        let mut primal: Vec<f64> = post.fixed_cont.iter().map(|f| f.unwrap_or(0.0)).collect();
        let mut binaries = fixed_bins;
        for (col, var) in post.columns.iter().enumerate() {
            match *var {
                Var::Cont(i) => primal[i] = x[col],
                Var::Bin(j) => binaries[j] = x[col],
            }
        }
        let mut eq_duals = vec![0.0; ir.equalities.len()];
        for (r, &i) in post.eq_rows.iter().enumerate() {
            eq_duals[i] = y[r];
        }
        let mut ineq_duals = vec![0.0; ir.inequalities.len()];
        let mut cone_duals: Vec<Vec<f64>> = ir.soc_cones.iter().map(|c| vec![0.0; c.tail.len() + 1]).collect();
        for (r, origin) in post.nonneg_rows.iter().enumerate() {
            match *origin {
                NonnegOrigin::Inequality(i) => ineq_duals[i] = z[r],
                NonnegOrigin::ConeHead(ci) => cone_duals[ci][0] = z[r],
                NonnegOrigin::ConeSplit { cone, pos, sign } => {
                    cone_duals[cone][0] += z[r];
                    cone_duals[cone][pos] -= sign * z[r];
                }
                NonnegOrigin::BinaryLower(_) | NonnegOrigin::BinaryUpper(_) => {}
            }
        }
        for ((start, dim), (ci, kept)) in sf.cones.soc_blocks().zip(&post.cone_blocks) {
            debug_assert_eq!(dim, kept.len());
            for (k, &pos) in kept.iter().enumerate() {
                cone_duals[*ci][pos] = z[start + k];
            }
        }

        ConicSolution {
            status,
            primal,
            binaries,
            eq_duals,
            ineq_duals,
            cone_duals,
            objective,
            dual_objective,
            primal_residual: pres,
            dual_residual: dres,
            gap,
            rel_gap,
            iterations: res.iterations,
            certificate_residual: None,
            trace,
        }
    }
}

/// Solves the continuous program obtained by fixing every binary.
pub fn solve_socp(ir: &ConicProgramIR, fixings: &[bool]) -> ConicSolution {
    SocpSolver::default().solve_fixed(ir, fixings)
}

/// Solves with unfixed binaries relaxed to `[0, 1]`.
pub fn solve_relaxation(ir: &ConicProgramIR, fixings: &[Option<bool>]) -> ConicSolution {
    SocpSolver::default().solve_relaxation(ir, fixings)
}

/// Relative mismatch between the loss epigraph variable and the quadratic
/// loss it bounds, `|t - q| / max(1, q)`, read off the `loss_epigraph` cone
/// of a program built by [`crate::program::build_program`].
///
/// The cone is `head >= ||(F x, last)||` with `head - last = 1` and
/// `head + last = t - lambda x - sigma`, so `q = t - (head^2 - last^2 - |F x|^2)`.
pub fn check_relaxation_tightness(ir: &ConicProgramIR, sol: &ConicSolution) -> Option<f64> {
    let cone = ir.cone("loss_epigraph")?;
    let t = sol.value(ir, "P_loss_ntwk")?;
    let head = sol.primal[cone.head];
    let vals: Vec<f64> = cone.tail.iter().map(|e| e.eval(&sol.primal, &sol.binaries)).collect();
    let (last, rows) = vals.split_last()?;
    let fx_sq: f64 = rows.iter().map(|v| v * v).sum();
    // head^2 - last^2 = (head + last)(head - last) = t - lambda x - sigma.
    let slack = (head + last) * (head - last) - fx_sq;
    let q = t - slack;
    Some((t - q).abs() / q.abs().max(1.0))
}

#[cfg(test)]
mod tests;
