//! Study configuration: network, converter, generation and profile sources
//! for a batch of horizon runs, and its preparation into solver inputs.
//!
//! A configuration is a single JSON document. Paths inside it are resolved
//! against the directory of the document; `builtin:ieee33` and
//! `builtin:two_feeder_5bus` name the shipped networks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::grid::{BusNetwork, LinearizedGrid, C64};
use crate::mip::BnBConfig;
use crate::mission::{read_profiles_csv, schedule_horizon, synthetic_profiles, HorizonInput, MissionProfile, ProfileTable, SyntheticConfig};
use crate::program::{CardinalityLimit, ConverterSpec};
use crate::solver::SolverSettings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Solar,
    Wind,
}

impl SourceKind {
    fn column(self) -> &'static str {
        match self {
            SourceKind::Solar => "solar",
            SourceKind::Wind => "wind",
        }
    }
}

/// Generation at network buses, driven by the solar or wind series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: SourceKind,
    /// Buses with a unit; empty means every load bus.
    #[serde(default)]
    pub buses: Vec<String>,
    /// Rating of each unit, kW.
    #[serde(default)]
    pub capacity_kw: Option<f64>,
    /// Rating of each unit as a multiple of its bus's peak real demand.
    #[serde(default)]
    pub peak_ratio: Option<f64>,
}

/// DER on the converter's dc link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DcDerConfig {
    pub kind: SourceKind,
    pub capacity_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterConfig {
    pub pcc_buses: Vec<String>,
    pub s_total_kva: f64,
    #[serde(default = "default_loss_coeff")]
    pub loss_coeff: f64,
    #[serde(default)]
    pub dc_der: Option<DcDerConfig>,
}

fn default_loss_coeff() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MipConfig {
    #[serde(default = "default_rel_gap")]
    pub rel_gap: f64,
    #[serde(default = "default_abs_gap")]
    pub abs_gap: f64,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
}

fn default_rel_gap() -> f64 {
    1e-4
}

fn default_abs_gap() -> f64 {
    1e-5
}

fn default_node_limit() -> usize {
    10_000
}

impl Default for MipConfig {
    fn default() -> Self {
        Self {
            rel_gap: default_rel_gap(),
            abs_gap: default_abs_gap(),
            node_limit: default_node_limit(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub label: Option<String>,
    /// Network JSON path or `builtin:<name>`.
    pub network: String,
    /// Profile CSV; synthetic series are generated when absent.
    #[serde(default)]
    pub profiles: Option<String>,
    /// Step length of a profile CSV, hours.
    #[serde(default)]
    pub timestep_hours: Option<f64>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    pub converter: ConverterConfig,
    #[serde(default)]
    pub generators: Vec<GeneratorConfig>,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    /// Buses with voltage limits; all load buses when absent.
    #[serde(default)]
    pub monitored_buses: Option<Vec<String>>,
    #[serde(default = "default_cardinality")]
    pub cardinality: Vec<CardinalityLimit>,
    #[serde(default)]
    pub mip: MipConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_v_min() -> f64 {
    0.9
}

fn default_v_max() -> f64 {
    1.045
}

fn default_cardinality() -> Vec<CardinalityLimit> {
    vec![CardinalityLimit::Unconstrained]
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn bnb_config(&self) -> BnBConfig {
        BnBConfig {
            rel_gap: self.mip.rel_gap,
            abs_gap: self.mip.abs_gap,
            node_limit: self.mip.node_limit,
            solver: SolverSettings::default(),
            ..BnBConfig::default()
        }
    }
}

/// Reads a configuration; relative paths inside it are later resolved
/// against the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<(RunConfig, PathBuf)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let cfg = RunConfig::from_json(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, dir))
}

pub fn load_network(source: &str, base_dir: &Path) -> Result<BusNetwork> {
    match source.strip_prefix("builtin:") {
        Some("ieee33") => Ok(fixtures::ieee33()),
        Some("two_feeder_5bus") => Ok(fixtures::two_feeder_5bus()),
        Some(other) => Err(Error::Validation(format!("unknown builtin network '{other}'"))),
        None => {
            let path = base_dir.join(source);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            BusNetwork::from_json(&text)
        }
    }
}

/// A configuration resolved against its network and series.
#[derive(Clone, Debug)]
pub struct Study {
    pub label: String,
    pub network: BusNetwork,
    pub grid: LinearizedGrid,
    pub converter: ConverterSpec,
    /// Horizon with an unconstrained limit; see [`Study::horizon`].
    pub horizon: HorizonInput,
    pub cardinality: Vec<CardinalityLimit>,
    pub bnb: BnBConfig,
}

impl Study {
    pub fn prepare(cfg: &RunConfig, base_dir: &Path) -> Result<Self> {
        let network = load_network(&cfg.network, base_dir)?;
        let load_ids = network.load_bus_ids();
        let position = |id: &str, what: &str| {
            network
                .load_bus_position(id)
                .ok_or_else(|| Error::Validation(format!("{what} references unknown or slack bus '{id}'")))
        };

        let conv_cfg = &cfg.converter;
        for b in &conv_cfg.pcc_buses {
            position(b, "converter")?;
        }
        let s_base = network.s_base_kva;
        let mut converter = ConverterSpec::new(conv_cfg.pcc_buses.clone(), conv_cfg.s_total_kva / s_base);
        converter.loss_coeff = conv_cfg.loss_coeff;
        converter.has_dc_der = conv_cfg.dc_der.is_some();
        converter.validate()?;
        let m = converter.m();
        if cfg.cardinality.is_empty() {
            log::warn!("cardinality list is empty; nothing to run");
        }
        for c in &cfg.cardinality {
            if let CardinalityLimit::AtMost(n) = *c {
                if n > m {
                    return Err(Error::Validation(format!("cardinality {n} exceeds the {m} converter terminals")));
                }
            }
        }
        if !(cfg.v_min < cfg.v_max && cfg.v_min > 0.0) {
            return Err(Error::Validation(format!("voltage band [{}, {}] is empty", cfg.v_min, cfg.v_max)));
        }
        let monitored = match &cfg.monitored_buses {
            None => None,
            Some(ids) => Some(ids.iter().map(|b| position(b, "monitored_buses")).collect::<Result<Vec<_>>>()?),
        };
        let bnb = cfg.bnb_config();
        bnb.validate()?;

        let series = match &cfg.profiles {
            Some(path) => {
                let path = base_dir.join(path);
                let file = std::fs::File::open(&path)
                    .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
                let table = read_profiles_csv(file)?;
                let hours = cfg.timestep_hours.unwrap_or(0.5);
                Series::from_table(&table, &load_ids, hours)?
            }
            None => {
                let p = synthetic_profiles(&cfg.synthetic, load_ids.len())?;
                Series {
                    timestep_hours: p.timestep_hours(),
                    demand: p.demand,
                    solar: Some(p.solar),
                    wind: Some(p.wind),
                }
            }
        };
        let tau = series.demand.len();

        let peak_demand: Vec<C64> = network.peak_demand_injection().iter().map(|s| -s).collect();
        let mut generation = vec![vec![0.0; load_ids.len()]; tau];
        for (gi, g) in cfg.generators.iter().enumerate() {
            let what = format!("generator {gi}");
            let shape = series.source(g.kind, &what)?;
            let buses: Vec<usize> = if g.buses.is_empty() {
                (0..load_ids.len()).collect()
            } else {
                g.buses.iter().map(|b| position(b, &what)).collect::<Result<_>>()?
            };
            for &b in &buses {
                let rating = match (g.capacity_kw, g.peak_ratio) {
                    (Some(kw), None) => kw / s_base,
                    (None, Some(r)) => r * peak_demand[b].re,
                    _ => return Err(Error::Validation(format!("{what}: give exactly one of capacity_kw and peak_ratio"))),
                };
                if !(rating >= 0.0) {
                    return Err(Error::Validation(format!("{what}: rating must be nonnegative")));
                }
                for t in 0..tau {
                    generation[t][b] += rating * shape[t];
                }
            }
        }
        let dc_der = match &conv_cfg.dc_der {
            None => vec![0.0; tau],
            Some(d) => {
                let shape = series.source(d.kind, "dc_der")?;
                shape.iter().map(|v| v * d.capacity_kw / s_base).collect()
            }
        };

        let grid = LinearizedGrid::build(&network, &converter.pcc_buses)?;
        let horizon = HorizonInput {
            peak_demand,
            demand: series.demand,
            generation,
            dc_der,
            timestep_hours: series.timestep_hours,
            v_min: cfg.v_min,
            v_max: cfg.v_max,
            cardinality: CardinalityLimit::Unconstrained,
            monitored,
        };
        horizon.validate()?;
        Ok(Self {
            label: cfg.label.clone().unwrap_or_else(|| "study".into()),
            network,
            grid,
            converter,
            horizon,
            cardinality: cfg.cardinality.clone(),
            bnb,
        })
    }

    pub fn horizon(&self, cardinality: CardinalityLimit) -> HorizonInput {
        HorizonInput {
            cardinality,
            ..self.horizon.clone()
        }
    }

    pub fn run(&self, cardinality: CardinalityLimit) -> Result<MissionProfile> {
        schedule_horizon(&self.grid, &self.converter, &self.horizon(cardinality), &self.bnb)
    }
}

/// Normalized series behind a horizon.
struct Series {
    timestep_hours: f64,
    demand: Vec<Vec<f64>>,
    solar: Option<Vec<f64>>,
    wind: Option<Vec<f64>>,
}

impl Series {
    /// Columns: `demand` (every bus) or `demand:<bus>`, plus optional
    /// `solar` and `wind` capacity factors.
    fn from_table(table: &ProfileTable, load_ids: &[String], timestep_hours: f64) -> Result<Self> {
        if !(timestep_hours > 0.0) {
            return Err(Error::Validation("timestep_hours must be positive".into()));
        }
        for c in &table.columns {
            let known = c == "demand"
                || c == "solar"
                || c == "wind"
                || c.strip_prefix("demand:").is_some_and(|b| load_ids.iter().any(|id| id == b));
            if !known {
                return Err(Error::Validation(format!("profile column '{c}' is not recognized")));
            }
        }
        let shared = table.column("demand");
        let mut per_bus = Vec::with_capacity(load_ids.len());
        for id in load_ids {
            match table.column(&format!("demand:{id}")).or_else(|| shared.clone()) {
                Some(col) => per_bus.push(col),
                None => return Err(Error::Validation(format!("no demand column covers bus '{id}'"))),
            }
        }
        let tau = table.tau();
        let demand = (0..tau).map(|t| per_bus.iter().map(|col| col[t]).collect()).collect();
        Ok(Self {
            timestep_hours,
            demand,
            solar: table.column("solar"),
            wind: table.column("wind"),
        })
    }

    fn source(&self, kind: SourceKind, what: &str) -> Result<&[f64]> {
        let col = match kind {
            SourceKind::Solar => &self.solar,
            SourceKind::Wind => &self.wind,
        };
        col.as_deref()
            .ok_or_else(|| Error::Validation(format!("{what} needs a '{}' profile column", kind.column())))
    }
}
