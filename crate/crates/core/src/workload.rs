//! Synthetic seasonal workloads and the linear workload-to-demand model.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngSeed;
use crate::series::{TimeGrid, TimeSeries};

/// Daily and weekly sinusoids, a linear trend, and i.i.d. Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadRecipe {
    pub base_level: f64,
    #[serde(default)]
    pub daily_amplitude: f64,
    #[serde(default)]
    pub weekly_amplitude: f64,
    #[serde(default)]
    pub trend_per_step: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Overridden by the simulation engine to cover the run plus one horizon.
    #[serde(default)]
    pub len_steps: usize,
    #[serde(default = "default_step_minutes")]
    pub step_minutes: u32,
    #[serde(default = "default_true")]
    pub floor_at_zero: bool,
}

fn default_step_minutes() -> u32 {
    5
}

fn default_true() -> bool {
    true
}

impl WorkloadRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_level.is_finite() && self.base_level > 0.0) {
            return Err(invalid("base_level", "must be positive"));
        }
        for (field, v) in [
            ("daily_amplitude", self.daily_amplitude),
            ("weekly_amplitude", self.weekly_amplitude),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        if !self.trend_per_step.is_finite() {
            return Err(invalid("trend_per_step", "must be finite"));
        }
        if self.step_minutes == 0 || 1440 % self.step_minutes != 0 {
            return Err(invalid("step_minutes", "must be a positive divisor of 1440"));
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (1440 / self.step_minutes) as usize
    }

    pub fn steps_per_week(&self) -> usize {
        7 * self.steps_per_day()
    }

    /// Noise-free value at step `t`, before flooring.
    pub fn deterministic_level(&self, t: usize) -> f64 {
        let t = t as f64;
        let day = self.steps_per_day() as f64;
        let week = self.steps_per_week() as f64;
        self.base_level
            + self.daily_amplitude * (2.0 * PI * t / day).sin()
            + self.weekly_amplitude * (2.0 * PI * t / week).sin()
            + self.trend_per_step * t
    }
}

/// Hosts per workload unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadModel {
    pub xi: f64,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        Self { xi: 1.0 }
    }
}

impl WorkloadModel {
    pub fn new(xi: f64) -> Result<Self> {
        if !(xi.is_finite() && xi > 0.0) {
            return Err(invalid("xi", "must be positive"));
        }
        Ok(Self { xi })
    }
}

pub fn generate_workload(recipe: &WorkloadRecipe, seed: &RngSeed) -> Result<TimeSeries> {
    recipe.validate()?;
    let mut rng = seed.rng();
    let noise = Normal::new(0.0, recipe.noise_sigma)
        .map_err(|e| invalid("noise_sigma", e.to_string()))?;
    let values = (0..recipe.len_steps)
        .map(|t| {
            let eps = if recipe.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let v = recipe.deterministic_level(t) + eps;
            if recipe.floor_at_zero {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect();
    let grid = TimeGrid::new(0, recipe.step_minutes, recipe.len_steps)?;
    TimeSeries::new(grid, values)
}

pub fn demand_from_workload(v: &TimeSeries, model: &WorkloadModel) -> Result<TimeSeries> {
    WorkloadModel::new(model.xi)?;
    TimeSeries::new(*v.grid(), v.values().iter().map(|x| x * model.xi).collect())
}
