//! The `run` command: one mission profile per cardinality limit, plus
//! summaries and plots.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mpcard_core::mip::solve_misocp;
use mpcard_core::mission::{summarize, write_mission_csv, MissionProfile, RunSummary};
use mpcard_core::program::build_timestep_program;
use mpcard_core::solver::SocpSolver;
use mpcard_core::Study;
use rayon::prelude::*;

use crate::plot::{self, Chart, Series, Style};
use crate::Loaded;

pub struct Options {
    pub dump_ir: bool,
    pub solver_trace: bool,
    pub mip_trace: bool,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn execute(loaded: &Loaded, opts: &Options) -> Result<()> {
    let study = &loaded.study;
    if study.cardinality.is_empty() {
        log::warn!("no cardinality limits requested; no outputs written");
        return Ok(());
    }
    let out = &loaded.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("config.json"), loaded.config.to_json() + "\n")?;

    let mut profiles = Vec::with_capacity(study.cardinality.len());
    for &card in &study.cardinality {
        log::info!("scheduling {} timesteps with limit {card}", study.horizon.tau());
        let p = study.run(card)?;
        let infeasible = p.infeasible_count();
        if infeasible > 0 {
            log::warn!("{}: {infeasible} timesteps had no feasible schedule", p.label);
        }
        profiles.push(p);
    }

    let baseline = profiles[0].baseline_loss.clone();
    let summary = summarize(&profiles, &baseline)?;
    for (p, s) in profiles.iter().zip(&summary.runs) {
        let mut csv = Vec::new();
        write_mission_csv(&mut csv, p)?;
        write(&out.join(format!("mission_{}.csv", p.label)), csv)?;
        write(&out.join(format!("summary_{}.json", p.label)), serde_json::to_string_pretty(s)? + "\n")?;
        write_plots(out, p, s)?;
        eprintln!(
            "{:>14}: loss {:.3} kWh, reduction {:.3} kWh, MEC {}, EC=0 in {} of {} steps",
            p.label, s.total_loss_kwh, s.loss_reduction_kwh, s.mec, s.zero_ec_count, s.timesteps
        );
    }
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let reference = profiles.iter().find(|p| p.label == summary.reference).expect("reference is one of the runs");
    write(&out.join("loss_reduction_fraction.svg"), reduction_plot(&profiles, reference))?;

    if opts.dump_ir || opts.solver_trace || opts.mip_trace {
        for &card in &study.cardinality {
            diagnostics(study, card, out, opts)?;
        }
    }
    Ok(())
}

fn write_plots(out: &Path, p: &MissionProfile, s: &RunSummary) -> Result<()> {
    let terminal = |i: usize| format!("terminal {} (bus {})", i + 1, p.terminals[i]);
    let power = Chart {
        title: format!("Terminal active power, {}", p.label),
        x_label: "timestep".into(),
        y_label: "P (kW)".into(),
        style: Style::Line,
        series: (0..p.m())
            .map(|i| Series { name: terminal(i), y: p.p_mp.iter().map(|row| row[i]).collect() })
            .collect(),
    };
    write(&out.join(format!("power_{}.svg", p.label)), plot::render(&power))?;

    let ec = Chart {
        title: format!("Electrical cardinality, {}", p.label),
        x_label: "timestep".into(),
        y_label: "EC".into(),
        style: Style::Step,
        series: vec![Series { name: "EC".into(), y: p.ec_series.iter().map(|&v| v as f64).collect() }],
    };
    write(&out.join(format!("ec_{}.svg", p.label)), plot::render(&ec))?;

    let categories: Vec<String> = (0..s.ec_histogram.len()).map(|i| i.to_string()).collect();
    let hist = plot::render_bars(
        &format!("EC histogram, {}", p.label),
        "EC",
        "timesteps",
        &categories,
        &[Series { name: p.label.clone(), y: s.ec_histogram.iter().map(|&c| c as f64).collect() }],
    );
    write(&out.join(format!("ec_histogram_{}.svg", p.label)), hist)
}

/// Per-timestep loss reduction of each run over the reference run's;
/// undefined where the reference saves less than a milliwatt.
pub fn reduction_series(p: &MissionProfile, reference: &MissionProfile) -> Vec<f64> {
    (0..p.tau())
        .map(|t| {
            let r = reference.baseline_loss[t] - reference.objective[t];
            if r.abs() < 1e-6 {
                f64::NAN
            } else {
                (p.baseline_loss[t] - p.objective[t]) / r
            }
        })
        .collect()
}

fn reduction_plot(profiles: &[MissionProfile], reference: &MissionProfile) -> String {
    plot::render(&Chart {
        title: format!("Loss reduction relative to {}", reference.label),
        x_label: "timestep".into(),
        y_label: "fraction".into(),
        style: Style::Line,
        series: profiles
            .iter()
            .filter(|p| p.label != reference.label)
            .map(|p| Series { name: p.label.clone(), y: reduction_series(p, reference) })
            .collect(),
    })
}

/// Rebuilds every timestep program for IR dumps and traces.
fn diagnostics(study: &Study, card: mpcard_core::CardinalityLimit, out: &Path, opts: &Options) -> Result<()> {
    let horizon = study.horizon(card);
    let dir = out.join("diagnostics").join(card.label());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut cfg = study.bnb.clone();
    cfg.trace = opts.mip_trace;
    cfg.solver.trace = opts.solver_trace;
    let files: Vec<Vec<(String, Vec<u8>)>> = (0..horizon.tau())
        .into_par_iter()
        .map(|t| -> Result<Vec<(String, Vec<u8>)>> {
            let ir = build_timestep_program(&study.grid, &study.converter, &horizon.timestep(t))?;
            let mut files = Vec::new();
            if opts.dump_ir {
                files.push((format!("ir_t{t:05}.json"), ir.to_json().into_bytes()));
            }
            if !(opts.solver_trace || opts.mip_trace) {
                return Ok(files);
            }
            let (sol, log) = if ir.n_binaries() == 0 {
                (Some(SocpSolver::new(cfg.solver.clone()).solve_fixed(&ir, &[])), None)
            } else {
                let mip = solve_misocp(&ir, &cfg)?;
                let mut log = Vec::new();
                mip.write_log(&mut log)?;
                (mip.incumbent, Some(log))
            };
            if opts.solver_trace {
                if let Some(sol) = sol {
                    let mut buf = Vec::new();
                    sol.write_trace(&mut buf)?;
                    files.push((format!("solver_t{t:05}.csv"), buf));
                }
            }
            if let (true, Some(log)) = (opts.mip_trace, log) {
                files.push((format!("mip_t{t:05}.csv"), log));
            }
            Ok(files)
        })
        .collect::<Result<_>>()?;
    for (name, bytes) in files.into_iter().flatten() {
        write(&dir.join(name), bytes)?;
    }
    Ok(())
}
