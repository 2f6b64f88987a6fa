//! Seeded synthetic demand, solar and wind series.
//!
//! Demand follows residential or commercial daily shapes with a seasonal
//! swing and AR(1) noise. Solar is a clipped sine between sunrise and
//! sunset scaled by a random daily clearness; wind is an AR(1) latent speed
//! pushed through a logistic power curve. Days are spread evenly over a
//! year so a handful of days gives an annual-style mix.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub days: usize,
    pub steps_per_day: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            days: 12,
            steps_per_day: 48,
        }
    }
}

/// Normalized series: demand multipliers `[t][bus]`, and solar and wind
/// capacity factors in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticProfiles {
    pub demand: Vec<Vec<f64>>,
    pub solar: Vec<f64>,
    pub wind: Vec<f64>,
    pub steps_per_day: usize,
}

impl SyntheticProfiles {
    pub fn tau(&self) -> usize {
        self.solar.len()
    }

    pub fn timestep_hours(&self) -> f64 {
        24.0 / self.steps_per_day as f64
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    let d = (hour - centre) / width;
    (-0.5 * d * d).exp()
}

fn residential(hour: f64) -> f64 {
    0.16 + 0.3 * bump(hour, 8.0, 1.5) + 0.7 * bump(hour, 19.0, 2.0)
}

fn commercial(hour: f64) -> f64 {
    0.1 + 0.8 * bump(hour, 13.0, 3.5)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream simple.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

pub fn synthetic_profiles(cfg: &SyntheticConfig, n_bus: usize) -> Result<SyntheticProfiles> {
    if cfg.days == 0 || cfg.steps_per_day == 0 {
        return Err(Error::Validation("synthetic horizon needs at least one day and one step".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let commercial_bus: Vec<bool> = (0..n_bus).map(|_| rng.gen_bool(0.3)).collect();
    let bus_scale: Vec<f64> = (0..n_bus).map(|_| rng.gen_range(0.85..1.15)).collect();
    let spd = cfg.steps_per_day;
    let dt = 24.0 / spd as f64;
    let tau = cfg.days * spd;

    let mut demand = vec![vec![0.0; n_bus]; tau];
    let mut solar = vec![0.0; tau];
    let mut wind = vec![0.0; tau];
    let mut noise = vec![0.0; n_bus];
    let mut wind_state = standard_normal(&mut rng);

    for day in 0..cfg.days {
        // Day of year in [0, 1); 0 is mid-winter.
        let phase = (day as f64 + 0.5) / cfg.days as f64;
        let winter = (2.0 * PI * phase).cos();
        let season = 1.0 + 0.25 * winter;
        let clearness = rng.gen_range(0.25..1.0);
        let half_daylight = 6.0 - 2.0 * winter;
        for step in 0..spd {
            let t = day * spd + step;
            let hour = (step as f64 + 0.5) * dt;
            for b in 0..n_bus {
                noise[b] = 0.8 * noise[b] + 0.04 * standard_normal(&mut rng);
                let shape = if commercial_bus[b] { commercial(hour) } else { residential(hour) };
                demand[t][b] = (shape * season * bus_scale[b] * (1.0 + noise[b])).max(0.0);
            }
            let from_noon = (hour - 12.0).abs();
            let sun = if from_noon < half_daylight {
                (PI / 2.0 * (1.0 - from_noon / half_daylight)).sin()
            } else {
                0.0
            };
            let cloud = 1.0 - 0.2 * rng.gen::<f64>();
            solar[t] = (sun * clearness * cloud).clamp(0.0, 1.0);
            wind_state = 0.95 * wind_state + 0.31 * standard_normal(&mut rng);
            let speed = 7.0 + 3.0 * wind_state + 1.5 * winter;
            wind[t] = 1.0 / (1.0 + (-(speed - 8.0) / 1.5).exp());
        }
    }
    Ok(SyntheticProfiles {
        demand,
        solar,
        wind,
        steps_per_day: spd,
    })
}
