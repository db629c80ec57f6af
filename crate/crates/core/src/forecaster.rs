//! Sample-path forecasters.
//!
//! [`ForecasterConfig::NoisyOracle`] perturbs the true future multiplicatively
//! and is only usable inside a simulation, where the truth is known. Its noise
//! grows linearly over the horizon, so forecast quality can be dialed from
//! perfect to useless. [`ForecasterConfig::SeasonalEmpirical`] needs no truth:
//! each step is resampled from past values at the same seasonal phase.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RngSeed;
use crate::series::{Forecast, TimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForecasterConfig {
    NoisyOracle {
        rel_noise_at_origin: f64,
        rel_noise_at_horizon: f64,
        n_samples: usize,
    },
    SeasonalEmpirical {
        season_steps: usize,
        n_samples: usize,
    },
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ForecasterConfig::NoisyOracle {
                rel_noise_at_origin,
                rel_noise_at_horizon,
                n_samples,
            } => {
                if !(rel_noise_at_origin >= 0.0 && rel_noise_at_horizon >= 0.0)
                    || !rel_noise_at_origin.is_finite()
                    || !rel_noise_at_horizon.is_finite()
                {
                    return Err(invalid("rel_noise", "must be finite and non-negative"));
                }
                if n_samples == 0 {
                    return Err(invalid("n_samples", "must be at least 1"));
                }
            }
            ForecasterConfig::SeasonalEmpirical {
                season_steps,
                n_samples,
            } => {
                if season_steps == 0 {
                    return Err(invalid("season_steps", "must be at least 1"));
                }
                if n_samples == 0 {
                    return Err(invalid("n_samples", "must be at least 1"));
                }
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        match *self {
            ForecasterConfig::NoisyOracle { n_samples, .. }
            | ForecasterConfig::SeasonalEmpirical { n_samples, .. } => n_samples,
        }
    }

    /// Forecast for the `horizon_n` steps after `origin`.
    ///
    /// `demand` is the full true demand path. The seasonal forecaster only
    /// reads it up to and including `origin`; the oracle reads the future.
    pub fn forecast(
        &self,
        demand: &TimeSeries,
        origin: i64,
        horizon_n: usize,
        seed: &RngSeed,
    ) -> Result<Forecast> {
        self.validate()?;
        if horizon_n == 0 {
            return Err(invalid("horizon_n", "must be at least 1"));
        }
        let mut rng = seed.child(origin).rng();
        let step_minutes = demand.grid().step_minutes;
        let samples = match *self {
            ForecasterConfig::NoisyOracle {
                rel_noise_at_origin,
                rel_noise_at_horizon,
                n_samples,
            } => {
                let truth = demand.window(origin + 1, origin + 1 + horizon_n as i64);
                if truth.len() < horizon_n {
                    return Err(invalid(
                        "horizon_n",
                        format!("true demand ends before step {}", origin + horizon_n as i64),
                    ));
                }
                let sigma: Vec<f64> = (0..horizon_n)
                    .map(|j| {
                        let frac = if horizon_n > 1 {
                            j as f64 / (horizon_n - 1) as f64
                        } else {
                            0.0
                        };
                        rel_noise_at_origin + frac * (rel_noise_at_horizon - rel_noise_at_origin)
                    })
                    .collect();
                (0..n_samples)
                    .map(|_| {
                        truth
                            .iter()
                            .zip(&sigma)
                            .map(|(z, s)| {
                                let eta: f64 = StandardNormal.sample(&mut rng);
                                (z * (1.0 + s * eta)).max(0.0)
                            })
                            .collect()
                    })
                    .collect()
            }
            ForecasterConfig::SeasonalEmpirical {
                season_steps,
                n_samples,
            } => {
                let history = demand.history_through(origin);
                let past = history.values();
                if past.len() < season_steps {
                    return Err(Error::InsufficientHistory {
                        needed: season_steps,
                        available: past.len(),
                    });
                }
                let first = history.grid().origin;
                // Donors for each phase, indexed by absolute step modulo the season.
                let mut donors: Vec<Vec<f64>> = vec![Vec::new(); season_steps];
                for (i, v) in past.iter().enumerate() {
                    let phase = (first + i as i64).rem_euclid(season_steps as i64) as usize;
                    donors[phase].push(*v);
                }
                (0..n_samples)
                    .map(|_| {
                        (0..horizon_n)
                            .map(|j| {
                                let step = origin + 1 + j as i64;
                                let pool = &donors[step.rem_euclid(season_steps as i64) as usize];
                                pool[rng.random_range(0..pool.len())]
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        Forecast::new(origin, step_minutes, samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{empirical_quantile, TimeGrid};

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new(TimeGrid::new(0, 5, values.len()).unwrap(), values).unwrap()
    }

    #[test]
    fn zero_noise_oracle_is_the_truth() {
        let truth = series((0..40).map(|t| t as f64).collect());
        let fc = ForecasterConfig::NoisyOracle {
            rel_noise_at_origin: 0.0,
            rel_noise_at_horizon: 0.0,
            n_samples: 5,
        }
        .forecast(&truth, 9, 10, &RngSeed::new(1, "f"))
        .unwrap();
        for path in fc.samples() {
            assert_eq!(path.as_slice(), &truth.values()[10..20]);
        }
        assert_eq!(fc.grid().origin, 10);
    }

    #[test]
    fn oracle_median_tracks_truth() {
        let truth = series(vec![100.0; 30]);
        let fc = ForecasterConfig::NoisyOracle {
            rel_noise_at_origin: 0.1,
            rel_noise_at_horizon: 0.1,
            n_samples: 2000,
        }
        .forecast(&truth, 0, 20, &RngSeed::new(5, "f"))
        .unwrap();
        // Standard error of the median is about 1.25 * 10 / sqrt(2000) = 0.28.
        for j in 0..20 {
            let med = empirical_quantile(&fc.column(j), 0.5).unwrap();
            assert!((med - 100.0).abs() < 1.0, "step {j}: {med}");
        }
    }

    #[test]
    fn oracle_samples_are_non_negative() {
        let truth = series(vec![1.0; 30]);
        let fc = ForecasterConfig::NoisyOracle {
            rel_noise_at_origin: 2.0,
            rel_noise_at_horizon: 3.0,
            n_samples: 200,
        }
        .forecast(&truth, 0, 20, &RngSeed::new(5, "f"))
        .unwrap();
        assert!(fc.samples().iter().flatten().all(|v| *v >= 0.0));
        assert!(fc.samples().iter().flatten().any(|v| *v == 0.0));
    }

    #[test]
    fn origins_use_fresh_draws() {
        let truth = series(vec![50.0; 40]);
        let cfg = ForecasterConfig::NoisyOracle {
            rel_noise_at_origin: 0.2,
            rel_noise_at_horizon: 0.2,
            n_samples: 3,
        };
        let seed = RngSeed::new(5, "f");
        let a = cfg.forecast(&truth, 1, 10, &seed).unwrap();
        let b = cfg.forecast(&truth, 2, 10, &seed).unwrap();
        assert_ne!(a.samples()[0][1..], b.samples()[0][..9]);
        assert_eq!(a, cfg.forecast(&truth, 1, 10, &seed).unwrap());
    }

    #[test]
    fn single_donor_season_repeats() {
        let hist = series(vec![3.0, 1.0, 4.0, 1.0]);
        let fc = ForecasterConfig::SeasonalEmpirical {
            season_steps: 4,
            n_samples: 6,
        }
        .forecast(&hist, 3, 6, &RngSeed::new(2, "f"))
        .unwrap();
        for path in fc.samples() {
            assert_eq!(path, &vec![3.0, 1.0, 4.0, 1.0, 3.0, 1.0]);
        }
    }

    #[test]
    fn seasonal_ignores_the_future() {
        let mut v = vec![10.0, 20.0, 10.0, 20.0];
        v.extend([1e6; 10]);
        let fc = ForecasterConfig::SeasonalEmpirical {
            season_steps: 2,
            n_samples: 20,
        }
        .forecast(&series(v), 3, 4, &RngSeed::new(2, "f"))
        .unwrap();
        for path in fc.samples() {
            assert_eq!(path, &vec![10.0, 20.0, 10.0, 20.0]);
        }
    }

    #[test]
    fn errors() {
        let hist = series(vec![1.0; 3]);
        let seasonal = ForecasterConfig::SeasonalEmpirical {
            season_steps: 10,
            n_samples: 1,
        };
        assert_eq!(
            seasonal.forecast(&hist, 2, 4, &RngSeed::new(0, "f")),
            Err(Error::InsufficientHistory {
                needed: 10,
                available: 3
            })
        );
        let oracle = ForecasterConfig::NoisyOracle {
            rel_noise_at_origin: 0.0,
            rel_noise_at_horizon: 0.0,
            n_samples: 1,
        };
        assert!(oracle.forecast(&hist, 0, 0, &RngSeed::new(0, "f")).is_err());
        assert!(oracle.forecast(&hist, 0, 5, &RngSeed::new(0, "f")).is_err());
    }
}
