//! Quantile loss, policy cost, and fleet-size estimation from planned actions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::provider::DelayDistribution;
use crate::rng::RngSeed;
use crate::series::{check_alpha, Forecast};

/// Quantile level expressing how much costlier under-capacity is than
/// over-capacity.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RiskAversion(f64);

impl RiskAversion {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RiskAversion {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RiskAversion> for f64 {
    fn from(a: RiskAversion) -> f64 {
        a.0
    }
}

/// What a policy believes about the provider: a delay histogram and a
/// throughput in hosts per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEstimate {
    pub delay_hat: DelayDistribution,
    pub rho_hat: f64,
}

impl ProviderEstimate {
    pub fn new(delay_hat: DelayDistribution, rho_hat: f64) -> Result<Self> {
        if rho_hat.is_nan() || rho_hat <= 0.0 {
            return Err(invalid("rho_hat", "must be positive"));
        }
        Ok(Self { delay_hat, rho_hat })
    }

    /// Zero delay, unlimited throughput.
    pub fn unconstrained() -> Self {
        Self {
            delay_hat: DelayDistribution::deterministic(0),
            rho_hat: f64::INFINITY,
        }
    }
}

/// Pinball loss: `(1 - α)(r - z)` when over-provisioned, `α(z - r)` otherwise.
pub fn pinball_loss(r: f64, z: f64, alpha: RiskAversion) -> f64 {
    let a = alpha.value();
    if r > z {
        (1.0 - a) * (r - z)
    } else {
        a * (z - r)
    }
}

/// Loss of a host trajectory against the true demand.
pub fn actual_cost(r: &[f64], r_star: &[f64], alpha: RiskAversion) -> Result<f64> {
    if r.len() != r_star.len() {
        return Err(Error::LengthMismatch {
            expected: r_star.len(),
            actual: r.len(),
        });
    }
    Ok(r
        .iter()
        .zip(r_star)
        .map(|(a, b)| pinball_loss(*a, *b, alpha))
        .sum())
}

/// Sample-average expected loss of a trajectory under a forecast.
pub fn expected_cost_mc(r: &[f64], fc: &Forecast, alpha: RiskAversion) -> Result<f64> {
    if r.len() != fc.horizon() {
        return Err(Error::LengthMismatch {
            expected: fc.horizon(),
            actual: r.len(),
        });
    }
    let total: f64 = fc
        .samples()
        .iter()
        .map(|path| {
            r.iter()
                .zip(path)
                .map(|(a, z)| pinball_loss(*a, *z, alpha))
                .sum::<f64>()
        })
        .sum();
    Ok(total / fc.n_samples() as f64)
}

/// Expected fleet size at step `t`: each request made at `i` is counted with
/// weight `P(i + τ̂ <= t)`, releases count in full. Actions are indexed from 0.
pub fn estimate_resources_expectation(
    r_init: f64,
    q: &[f64],
    f: &[f64],
    delay_hat: &DelayDistribution,
    t: usize,
) -> f64 {
    let mut r = r_init;
    for i in 0..=t {
        let qi = q.get(i).copied().unwrap_or(0.0);
        let fi = f.get(i).copied().unwrap_or(0.0);
        r += qi * delay_hat.cdf(t as i64 - i as i64) - fi;
    }
    r
}

/// [`estimate_resources_expectation`] for every step `0..len`.
pub fn expected_trajectory(
    r_init: f64,
    q: &[f64],
    f: &[f64],
    delay_hat: &DelayDistribution,
    len: usize,
) -> Vec<f64> {
    let max_d = delay_hat.max_delay() as usize;
    let mut out = Vec::with_capacity(len);
    // Requests with i + max_d <= t have fully arrived; track them cumulatively.
    let mut settled = r_init;
    for t in 0..len {
        settled -= f.get(t).copied().unwrap_or(0.0);
        if t >= max_d {
            settled += q.get(t - max_d).copied().unwrap_or(0.0);
        }
        let partial: f64 = (t.saturating_sub(max_d.saturating_sub(1))..=t)
            .filter(|&i| i + max_d > t)
            .map(|i| q.get(i).copied().unwrap_or(0.0) * delay_hat.cdf((t - i) as i64))
            .sum();
        out.push(settled + partial);
    }
    out
}

/// Monte-Carlo draws of the fleet size at step `t`, realizing an independent
/// delay for every requested host.
pub fn estimate_resources_sampled(
    r_init: u64,
    q: &[u64],
    f: &[u64],
    delay_hat: &DelayDistribution,
    t: usize,
    n_draws: usize,
    seed: &RngSeed,
) -> Result<Vec<f64>> {
    if n_draws == 0 {
        return Err(invalid("n_draws", "must be at least 1"));
    }
    let mut rng = seed.rng();
    let released: u64 = f.iter().take(t + 1).sum();
    let base = r_init as f64 - released as f64;
    Ok((0..n_draws)
        .map(|_| {
            let mut arrived = 0u64;
            for (i, &qi) in q.iter().enumerate().take(t + 1) {
                for _ in 0..qi {
                    if i as u64 + delay_hat.sample(&mut rng) as u64 <= t as u64 {
                        arrived += 1;
                    }
                }
            }
            base + arrived as f64
        })
        .collect())
}
