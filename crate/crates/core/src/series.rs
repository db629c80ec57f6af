//! Time indexing, workload series, and sample-path forecasts.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Evenly spaced integer time steps. `origin` is the index of the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub origin: i64,
    pub step_minutes: u32,
    pub len: usize,
}

impl TimeGrid {
    pub fn new(origin: i64, step_minutes: u32, len: usize) -> Result<Self> {
        if step_minutes == 0 {
            return Err(invalid("step_minutes", "must be positive"));
        }
        Ok(Self {
            origin,
            step_minutes,
            len,
        })
    }

    /// Index one past the last step.
    pub fn end(&self) -> i64 {
        self.origin + self.len as i64
    }

    pub fn contains(&self, step: i64) -> bool {
        step >= self.origin && step < self.end()
    }

    pub fn steps_per_day(&self) -> usize {
        (1440 / self.step_minutes).max(1) as usize
    }

    pub fn ensure_same(&self, other: &TimeGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Scalar measurements on a grid; values are finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len {
            return Err(Error::LengthMismatch {
                expected: grid.len,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid("values", format!("{bad} is not a finite non-negative value")));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at an absolute step index.
    pub fn at(&self, step: i64) -> Option<f64> {
        if self.grid.contains(step) {
            Some(self.values[(step - self.grid.origin) as usize])
        } else {
            None
        }
    }

    /// Values for absolute steps in `[from, to)`, clipped to the grid.
    pub fn window(&self, from: i64, to: i64) -> &[f64] {
        let lo = (from.max(self.grid.origin) - self.grid.origin) as usize;
        let hi = (to.min(self.grid.end()) - self.grid.origin).max(0) as usize;
        if lo >= hi {
            &[]
        } else {
            &self.values[lo..hi]
        }
    }

    /// The prefix of the series up to and including `step`.
    pub fn history_through(&self, step: i64) -> TimeSeries {
        let values = self.window(self.grid.origin, step + 1).to_vec();
        TimeSeries {
            grid: TimeGrid {
                len: values.len(),
                ..self.grid
            },
            values,
        }
    }
}

/// S sample paths over an n-step horizon. The horizon starts one step after
/// `origin`, the last step whose data the forecaster could observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    origin: i64,
    grid: TimeGrid,
    samples: Vec<Vec<f64>>,
}

impl Forecast {
    pub fn new(origin: i64, step_minutes: u32, samples: Vec<Vec<f64>>) -> Result<Self> {
        let horizon = samples.first().map(Vec::len).unwrap_or(0);
        if samples.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        if let Some(bad) = samples.iter().find(|p| p.len() != horizon) {
            return Err(Error::LengthMismatch {
                expected: horizon,
                actual: bad.len(),
            });
        }
        if samples.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("samples", "entries must be finite and non-negative"));
        }
        let grid = TimeGrid::new(origin + 1, step_minutes, horizon)?;
        Ok(Self {
            origin,
            grid,
            samples,
        })
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn horizon(&self) -> usize {
        self.grid.len
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// All sample values for horizon step `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|p| p[j]).collect()
    }

    /// Keeps only the first `s` sample paths (at least one).
    pub fn truncated(&self, s: usize) -> Forecast {
        Forecast {
            origin: self.origin,
            grid: self.grid,
            samples: self.samples[..s.clamp(1, self.samples.len())].to_vec(),
        }
    }

    pub fn quantile_path(&self, alpha: f64) -> Result<Vec<f64>> {
        forecast_quantile_path(self, alpha)
    }
}

/// Lower empirical quantile: the `ceil(alpha * S)`-th smallest sample.
pub fn empirical_quantile(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    check_alpha(alpha)?;
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(invalid("samples", "entries must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), alpha)])
}

/// Position of the lower empirical `alpha`-quantile in a sorted sample of size `s`.
pub fn quantile_index(s: usize, alpha: f64) -> usize {
    let k = (alpha * s as f64).ceil() as i64 - 1;
    k.clamp(0, s as i64 - 1) as usize
}

pub fn forecast_quantile_path(fc: &Forecast, alpha: f64) -> Result<Vec<f64>> {
    (0..fc.horizon())
        .map(|j| empirical_quantile(&fc.column(j), alpha))
        .collect()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}
