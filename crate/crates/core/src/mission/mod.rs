//! Horizon scheduling and electrical-cardinality metrics.
//!
//! A mission profile collects the per-timestep transfers of every terminal.
//! Its electrical cardinality (EC) at a timestep is the number of terminals
//! whose apparent power exceeds a tolerance; the maximum over the horizon is
//! the MEC.

mod io;
mod profiles;

pub use io::{read_mission_csv, read_profiles_csv, write_mission_csv, write_profiles_csv, MissionCsv, ProfileTable};
pub use profiles::{synthetic_profiles, SyntheticConfig, SyntheticProfiles};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LinearizedGrid, C64};
use crate::mip::{solve_misocp, BnBConfig, MipStatus};
use crate::program::{build_program, BuildOptions, CardinalityLimit, ConverterSpec, Layout, TimestepInput, TimestepModel};
use crate::solver::{check_relaxation_tightness, ConicSolution, SocpSolver, SolveStatus};

/// Relative EC tolerance: a fraction of the total converter capacity.
pub const EC_RELATIVE_TOLERANCE: f64 = 1e-5;

/// Number of entries strictly greater than `eps`.
pub fn electrical_cardinality(row: &[f64], eps: f64) -> Result<usize> {
    if !(eps > 0.0) {
        return Err(Error::Validation(format!("EC tolerance must be positive, got {eps}")));
    }
    if let Some(bad) = row.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Validation(format!("apparent power must be nonnegative, got {bad}")));
    }
    Ok(row.iter().filter(|&&v| v > eps).count())
}

/// Maximum electrical cardinality of a profile.
pub fn mec(profile: &MissionProfile) -> Result<usize> {
    profile
        .ec_series
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Validation("mission profile is empty".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepStatus {
    Optimal,
    GapReached,
    NodeLimit,
    Infeasible,
    NumericalFailure,
}

impl TimestepStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TimestepStatus::Optimal => "optimal",
            TimestepStatus::GapReached => "gap_reached",
            TimestepStatus::NodeLimit => "node_limit",
            TimestepStatus::Infeasible => "infeasible",
            TimestepStatus::NumericalFailure => "numerical_failure",
        }
    }

    pub fn has_solution(self) -> bool {
        matches!(self, TimestepStatus::Optimal | TimestepStatus::GapReached | TimestepStatus::NodeLimit)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "optimal" => TimestepStatus::Optimal,
            "gap_reached" => TimestepStatus::GapReached,
            "node_limit" => TimestepStatus::NodeLimit,
            "infeasible" => TimestepStatus::Infeasible,
            "numerical_failure" => TimestepStatus::NumericalFailure,
            other => return Err(Error::Validation(format!("unknown timestep status '{other}'"))),
        })
    }
}

impl std::fmt::Display for TimestepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inputs over a horizon of `tau` timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonInput {
    /// Peak demand per non-slack bus, pu (positive: consumption).
    pub peak_demand: Vec<C64>,
    /// Demand multipliers, `[t][bus]`.
    pub demand: Vec<Vec<f64>>,
    /// Real generation injected at network buses, pu, `[t][bus]`.
    pub generation: Vec<Vec<f64>>,
    /// DER output on the converter's dc link, pu, per timestep.
    pub dc_der: Vec<f64>,
    pub timestep_hours: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub cardinality: CardinalityLimit,
    pub monitored: Option<Vec<usize>>,
}

impl HorizonInput {
    pub fn tau(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        let tau = self.tau();
        if tau == 0 {
            return Err(Error::Validation("horizon has no timesteps".into()));
        }
        let nb = self.peak_demand.len();
        if self.generation.len() != tau || self.dc_der.len() != tau {
            return Err(Error::Validation(format!(
                "series lengths differ: demand {tau}, generation {}, dc DER {}",
                self.generation.len(),
                self.dc_der.len()
            )));
        }
        for (t, (d, g)) in self.demand.iter().zip(&self.generation).enumerate() {
            if d.len() != nb || g.len() != nb {
                return Err(Error::Validation(format!("timestep {t}: expected {nb} buses")));
            }
            if let Some(v) = d.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(Error::Validation(format!("timestep {t}: demand multiplier {v} is not >= 0")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("timestep {t}: non-finite generation")));
            }
        }
        if !(self.timestep_hours > 0.0) {
            return Err(Error::Validation("timestep duration must be positive".into()));
        }
        Ok(())
    }

    /// Net background injection at every non-slack bus for timestep `t`.
    pub fn background(&self, t: usize) -> Vec<C64> {
        self.peak_demand
            .iter()
            .zip(&self.demand[t])
            .zip(&self.generation[t])
            .map(|((peak, &mult), &gen)| C64::new(gen, 0.0) - peak * mult)
            .collect()
    }

    pub fn timestep(&self, t: usize) -> TimestepInput {
        TimestepInput {
            background: self.background(t),
            p_der: self.dc_der[t],
            v_min: self.v_min,
            v_max: self.v_max,
            cardinality: self.cardinality,
            monitored: self.monitored.clone(),
        }
    }
}

/// Scheduled transfers over a horizon. Powers are in kW/kvar/kVA; the
/// per-timestep objective and losses are average powers in kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionProfile {
    pub label: String,
    pub cardinality: CardinalityLimit,
    pub terminals: Vec<String>,
    pub s_total_kva: f64,
    pub timestep_hours: f64,
    pub p_mp: Vec<Vec<f64>>,
    pub q_mp: Vec<Vec<f64>>,
    pub s_mp: Vec<Vec<f64>>,
    pub ec_series: Vec<usize>,
    pub mec: usize,
    pub status: Vec<TimestepStatus>,
    pub objective: Vec<f64>,
    pub ntwk_loss: Vec<f64>,
    pub conv_loss: Vec<f64>,
    /// Network loss with no converter transfer, kW.
    pub baseline_loss: Vec<f64>,
    /// Relaxation tightness gap per timestep (absent when unsolved).
    pub tightness: Vec<Option<f64>>,
    /// Integer gap reported by branch-and-bound (0 for continuous solves).
    pub mip_gap_abs: Vec<f64>,
    pub mip_gap_rel: Vec<f64>,
}

impl MissionProfile {
    pub fn tau(&self) -> usize {
        self.ec_series.len()
    }

    pub fn m(&self) -> usize {
        self.terminals.len()
    }

    pub fn ec_tolerance(&self) -> f64 {
        EC_RELATIVE_TOLERANCE * self.s_total_kva
    }

    pub fn max_tightness(&self) -> f64 {
        self.tightness.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn infeasible_count(&self) -> usize {
        self.status.iter().filter(|s| !s.has_solution()).count()
    }
}

/// Outcome of one timestep in pu.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepResult {
    pub status: TimestepStatus,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub objective: f64,
    pub ntwk_loss: f64,
    pub conv_loss: f64,
    pub baseline_loss: f64,
    pub tightness: Option<f64>,
    pub mip_gap_abs: f64,
    pub mip_gap_rel: f64,
}

/// Builds and solves one timestep: a continuous solve when the cardinality
/// limit is vacuous, branch-and-bound otherwise. Infeasible timesteps report
/// zero transfers and the no-transfer loss.
pub fn solve_timestep(grid: &LinearizedGrid, conv: &ConverterSpec, ts: &TimestepInput, cfg: &BnBConfig) -> Result<TimestepResult> {
    let model = TimestepModel::new(grid, conv, ts)?;
    let ir = build_program(&model, BuildOptions::default())?;
    let m = conv.m();
    let baseline = model.folded.loss.sigma;
    let (status, sol, gap_abs, gap_rel): (TimestepStatus, Option<ConicSolution>, f64, f64) = if ir.n_binaries() == 0 {
        let sol = SocpSolver::new(cfg.solver.clone()).solve_fixed(&ir, &[]);
        match sol.status {
            SolveStatus::Optimal => (TimestepStatus::Optimal, Some(sol), 0.0, 0.0),
            SolveStatus::Infeasible => (TimestepStatus::Infeasible, None, 0.0, 0.0),
            SolveStatus::Unbounded | SolveStatus::NumericalFailure => (TimestepStatus::NumericalFailure, None, 0.0, 0.0),
        }
    } else {
        let mip = solve_misocp(&ir, cfg)?;
        let status = match mip.status {
            MipStatus::Optimal => TimestepStatus::Optimal,
            MipStatus::GapReached => TimestepStatus::GapReached,
            MipStatus::NodeLimit => TimestepStatus::NodeLimit,
            MipStatus::Infeasible => TimestepStatus::Infeasible,
            MipStatus::NumericalFailure => TimestepStatus::NumericalFailure,
        };
        if status == TimestepStatus::NodeLimit && mip.incumbent.is_none() {
            (TimestepStatus::NumericalFailure, None, f64::NAN, f64::NAN)
        } else {
            (status, mip.incumbent, mip.gap_abs, mip.gap_rel)
        }
    };
    let Some(sol) = sol else {
        return Ok(TimestepResult {
            status,
            p: vec![0.0; m],
            q: vec![0.0; m],
            objective: baseline,
            ntwk_loss: baseline,
            conv_loss: 0.0,
            baseline_loss: baseline,
            tightness: None,
            mip_gap_abs: 0.0,
            mip_gap_rel: 0.0,
        });
    };
    let layout = Layout::of(&ir)?;
    Ok(TimestepResult {
        status,
        p: layout.p_c.iter().map(|&i| sol.primal[i]).collect(),
        q: layout.q_c.iter().map(|&i| sol.primal[i]).collect(),
        objective: sol.objective,
        ntwk_loss: sol.primal[layout.p_loss_ntwk],
        conv_loss: layout.p_loss_conv.iter().map(|&i| sol.primal[i]).sum(),
        baseline_loss: baseline,
        tightness: check_relaxation_tightness(&ir, &sol),
        mip_gap_abs: gap_abs,
        mip_gap_rel: gap_rel,
    })
}

/// Schedules every timestep of the horizon. Timesteps are solved in
/// parallel; the output order follows the timestep index.
pub fn schedule_horizon(grid: &LinearizedGrid, conv: &ConverterSpec, horizon: &HorizonInput, cfg: &BnBConfig) -> Result<MissionProfile> {
    horizon.validate()?;
    conv.validate()?;
    cfg.validate()?;
    if horizon.peak_demand.len() != grid.bus_ids.len() {
        return Err(Error::Validation(format!(
            "horizon covers {} buses, network has {}",
            horizon.peak_demand.len(),
            grid.bus_ids.len()
        )));
    }
    let results: Vec<TimestepResult> = (0..horizon.tau())
        .into_par_iter()
        .map(|t| solve_timestep(grid, conv, &horizon.timestep(t), cfg))
        .collect::<Result<_>>()?;
    Ok(assemble(grid.s_base_kva, conv, horizon, &results))
}

fn assemble(s_base: f64, conv: &ConverterSpec, horizon: &HorizonInput, results: &[TimestepResult]) -> MissionProfile {
    let s_total_kva = conv.s_total * s_base;
    let eps = EC_RELATIVE_TOLERANCE * s_total_kva;
    let mut p = MissionProfile {
        label: horizon.cardinality.label(),
        cardinality: horizon.cardinality,
        terminals: conv.pcc_buses.clone(),
        s_total_kva,
        timestep_hours: horizon.timestep_hours,
        p_mp: Vec::new(),
        q_mp: Vec::new(),
        s_mp: Vec::new(),
        ec_series: Vec::new(),
        mec: 0,
        status: Vec::new(),
        objective: Vec::new(),
        ntwk_loss: Vec::new(),
        conv_loss: Vec::new(),
        baseline_loss: Vec::new(),
        tightness: Vec::new(),
        mip_gap_abs: Vec::new(),
        mip_gap_rel: Vec::new(),
    };
    for r in results {
        let pk: Vec<f64> = r.p.iter().map(|v| v * s_base).collect();
        let qk: Vec<f64> = r.q.iter().map(|v| v * s_base).collect();
        let sk: Vec<f64> = pk.iter().zip(&qk).map(|(a, b)| a.hypot(*b)).collect();
        let ec = electrical_cardinality(&sk, eps).expect("norms are nonnegative");
        p.p_mp.push(pk);
        p.q_mp.push(qk);
        p.s_mp.push(sk);
        p.ec_series.push(ec);
        p.status.push(r.status);
        p.objective.push(r.objective * s_base);
        p.ntwk_loss.push(r.ntwk_loss * s_base);
        p.conv_loss.push(r.conv_loss * s_base);
        p.baseline_loss.push(r.baseline_loss * s_base);
        p.tightness.push(r.tightness);
        p.mip_gap_abs.push(r.mip_gap_abs);
        p.mip_gap_rel.push(r.mip_gap_rel);
    }
    p.mec = p.ec_series.iter().copied().max().unwrap_or(0);
    p
}

/// Per-run figures of a [`Summary`]; energies in kWh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub timesteps: usize,
    pub total_loss_kwh: f64,
    pub network_loss_kwh: f64,
    pub converter_loss_kwh: f64,
    pub baseline_loss_kwh: f64,
    pub loss_reduction_kwh: f64,
    /// Loss reduction relative to the reference run's reduction.
    pub reduction_fraction: Option<f64>,
    pub ec_histogram: Vec<usize>,
    pub zero_ec_count: usize,
    pub zero_ec_fraction: f64,
    pub mec: usize,
    pub infeasible_timesteps: usize,
    pub max_relaxation_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Label of the run whose reduction the fractions are relative to.
    pub reference: String,
    pub runs: Vec<RunSummary>,
}

/// Summarizes runs against a baseline loss series (kW per timestep). The
/// reference for reduction fractions is the unconstrained run if present,
/// else the run with the loosest limit.
pub fn summarize(profiles: &[MissionProfile], baseline_loss: &[f64]) -> Result<Summary> {
    let Some(first) = profiles.first() else {
        return Err(Error::Validation("nothing to summarize".into()));
    };
    let tau = first.tau();
    if let Some(p) = profiles.iter().find(|p| p.tau() != tau) {
        return Err(Error::Validation(format!(
            "run '{}' has {} timesteps, expected {tau}",
            p.label,
            p.tau()
        )));
    }
    if baseline_loss.len() != tau {
        return Err(Error::Validation(format!(
            "baseline has {} timesteps, expected {tau}",
            baseline_loss.len()
        )));
    }
    let reference = profiles
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            let key = |p: &MissionProfile| match p.cardinality {
                CardinalityLimit::Unconstrained => usize::MAX,
                CardinalityLimit::AtMost(n) => n,
            };
            key(a).cmp(&key(b)).then(ib.cmp(ia))
        })
        .map(|(i, _)| i)
        .unwrap();
    let mut runs: Vec<RunSummary> = profiles.iter().map(|p| run_summary(p, baseline_loss)).collect();
    let ref_reduction = runs[reference].loss_reduction_kwh;
    for r in &mut runs {
        r.reduction_fraction = (ref_reduction != 0.0).then(|| r.loss_reduction_kwh / ref_reduction);
    }
    Ok(Summary {
        reference: profiles[reference].label.clone(),
        runs,
    })
}

fn run_summary(p: &MissionProfile, baseline_loss: &[f64]) -> RunSummary {
    let h = p.timestep_hours;
    let sum = |v: &[f64]| v.iter().sum::<f64>() * h;
    let total = sum(&p.objective);
    let baseline = sum(baseline_loss);
    let mut hist = vec![0; p.m() + 1];
    for &ec in &p.ec_series {
        hist[ec.min(p.m())] += 1;
    }
    RunSummary {
        label: p.label.clone(),
        timesteps: p.tau(),
        total_loss_kwh: total,
        network_loss_kwh: sum(&p.ntwk_loss),
        converter_loss_kwh: sum(&p.conv_loss),
        baseline_loss_kwh: baseline,
        loss_reduction_kwh: baseline - total,
        reduction_fraction: None,
        zero_ec_count: hist[0],
        zero_ec_fraction: hist[0] as f64 / p.tau().max(1) as f64,
        ec_histogram: hist,
        mec: p.mec,
        infeasible_timesteps: p.infeasible_count(),
        max_relaxation_gap: p.max_tightness(),
    }
}
