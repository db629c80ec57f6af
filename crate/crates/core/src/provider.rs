//! Discrete-time cloud provider.
//!
//! Requests join a queue of `R` outstanding hosts. A fixed number of
//! provisioning slots take hosts off the queue; each host becomes live after a
//! random delay drawn from a histogram. Releases are granted instantly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RngSeed;

/// Histogram of provisioning delays in whole steps.
///
/// A zero delay is allowed and means the host is live in the step it enters a
/// slot; with zero delay the slot count no longer limits throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct DelayDistribution {
    support: Vec<(u32, f64)>,
}

impl DelayDistribution {
    pub fn new(support: Vec<(u32, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(invalid("delay", "support must not be empty"));
        }
        let mut merged: Vec<(u32, f64)> = Vec::new();
        let mut sorted = support;
        sorted.sort_by_key(|(d, _)| *d);
        for (d, p) in sorted {
            if !(p.is_finite() && p > 0.0) {
                return Err(invalid("delay", format!("probability {p} must be positive")));
            }
            match merged.last_mut() {
                Some((last, q)) if *last == d => *q += p,
                _ => merged.push((d, p)),
            }
        }
        let total: f64 = merged.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid("delay", format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { support: merged })
    }

    pub fn deterministic(steps: u32) -> Self {
        Self {
            support: vec![(steps, 1.0)],
        }
    }

    /// Builds a histogram from `(minutes, probability)` pairs, rounding each
    /// delay up to whole steps.
    pub fn from_minutes(pairs: &[(f64, f64)], step_minutes: u32) -> Result<Self> {
        let support = pairs
            .iter()
            .map(|&(minutes, p)| {
                if !(minutes.is_finite() && minutes >= 0.0) {
                    return Err(invalid("delay", format!("{minutes} minutes is not a valid delay")));
                }
                Ok(((minutes / step_minutes as f64 - 1e-9).ceil().max(0.0) as u32, p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(support)
    }

    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|(d, p)| *d as f64 * p).sum()
    }

    pub fn min_delay(&self) -> u32 {
        self.support[0].0
    }

    pub fn max_delay(&self) -> u32 {
        self.support[self.support.len() - 1].0
    }

    /// P(τ <= d). Exactly 1 at and beyond the largest delay.
    pub fn cdf(&self, d: i64) -> f64 {
        if d >= self.max_delay() as i64 {
            return 1.0;
        }
        self.support
            .iter()
            .take_while(|(s, _)| (*s as i64) <= d)
            .map(|(_, p)| p)
            .sum()
    }

    /// Smallest delay `d` with P(τ <= d) >= level.
    pub fn quantile(&self, level: f64) -> u32 {
        let mut acc = 0.0;
        for (d, p) in &self.support {
            acc += p;
            if acc >= level - 1e-12 {
                return *d;
            }
        }
        self.max_delay()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (d, p) in &self.support {
            acc += p;
            if u < acc {
                return *d;
            }
        }
        self.max_delay()
    }
}

impl TryFrom<Vec<(u32, f64)>> for DelayDistribution {
    type Error = crate::error::Error;

    fn try_from(v: Vec<(u32, f64)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DelayDistribution> for Vec<(u32, f64)> {
    fn from(d: DelayDistribution) -> Self {
        d.support
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub n_slots: usize,
    pub delay: DelayDistribution,
}

impl ProviderConfig {
    pub fn new(n_slots: usize, delay: DelayDistribution) -> Result<Self> {
        if n_slots == 0 {
            return Err(invalid("n_slots", "must be at least 1"));
        }
        Ok(Self { n_slots, delay })
    }

    /// Long-run hosts per step under saturation, `n_slots / E[τ]`.
    pub fn throughput(&self) -> f64 {
        let mean = self.delay.mean();
        if mean <= 0.0 {
            f64::INFINITY
        } else {
            self.n_slots as f64 / mean
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderEvent {
    Requested { step: i64, count: u64 },
    Released { step: i64, count: u64 },
    Arrived { step: i64, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderState {
    pub pending_requests: u64,
    /// Completion step of the host in each occupied slot.
    pub slots: Vec<Option<i64>>,
    pub live_hosts: u64,
    pub initial_hosts: u64,
}

impl ProviderState {
    pub fn occupied_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    /// Hosts requested but not yet live: the queue plus hosts in slots.
    pub fn in_flight(&self) -> u64 {
        self.pending_requests + self.occupied_slots() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SubmitOutcome {
    pub granted_releases: u64,
    pub shortfall: u64,
}

/// A provider simulation owning its state, its delay stream, and an event log.
#[derive(Debug, Clone)]
pub struct Provider {
    config: ProviderConfig,
    state: ProviderState,
    rng: ChaCha8Rng,
    now: i64,
    log: Vec<ProviderEvent>,
}

impl Provider {
    pub fn new(config: ProviderConfig, initial_hosts: u64, seed: &RngSeed) -> Self {
        let state = ProviderState {
            pending_requests: 0,
            slots: vec![None; config.n_slots],
            live_hosts: initial_hosts,
            initial_hosts,
        };
        Self {
            config,
            state,
            rng: seed.rng(),
            now: 0,
            log: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn state(&self) -> &ProviderState {
        &self.state
    }

    pub fn log(&self) -> &[ProviderEvent] {
        &self.log
    }

    /// Queue `requests` new hosts and release up to `releases` live hosts.
    pub fn submit(&mut self, now: i64, requests: u64, releases: u64) -> SubmitOutcome {
        self.now = now;
        if requests > 0 {
            self.state.pending_requests += requests;
            self.log.push(ProviderEvent::Requested {
                step: now,
                count: requests,
            });
        }
        let granted = releases.min(self.state.live_hosts);
        self.state.live_hosts -= granted;
        if granted > 0 {
            self.log.push(ProviderEvent::Released {
                step: now,
                count: granted,
            });
        }
        SubmitOutcome {
            granted_releases: granted,
            shortfall: releases - granted,
        }
    }

    /// Advance to step `now`: finish due provisions, then fill free slots.
    /// Returns the number of hosts that became live.
    pub fn tick(&mut self, now: i64) -> u64 {
        self.now = now;
        let mut arrivals = 0u64;
        for slot in self.state.slots.iter_mut() {
            if matches!(slot, Some(done) if *done <= now) {
                *slot = None;
                arrivals += 1;
            }
        }
        for slot in self.state.slots.iter_mut() {
            while slot.is_none() && self.state.pending_requests > 0 {
                self.state.pending_requests -= 1;
                let tau = self.config.delay.sample(&mut self.rng);
                if tau == 0 {
                    arrivals += 1;
                } else {
                    *slot = Some(now + tau as i64);
                }
            }
            if self.state.pending_requests == 0 {
                break;
            }
        }
        self.state.live_hosts += arrivals;
        if arrivals > 0 {
            self.log.push(ProviderEvent::Arrived {
                step: now,
                count: arrivals,
            });
        }
        arrivals
    }
}

/// Live host count implied by an event log.
pub fn replay_live_hosts(initial_hosts: u64, log: &[ProviderEvent]) -> u64 {
    let mut live = initial_hosts as i128;
    for e in log {
        match e {
            ProviderEvent::Arrived { count, .. } => live += *count as i128,
            ProviderEvent::Released { count, .. } => live -= *count as i128,
            ProviderEvent::Requested { .. } => {}
        }
    }
    live as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn provider(n_slots: usize, delay: DelayDistribution, live: u64) -> Provider {
        Provider::new(
            ProviderConfig::new(n_slots, delay).unwrap(),
            live,
            &RngSeed::new(0, "provider"),
        )
    }

    #[test]
    fn releases_are_instant_and_clamped() {
        let mut p = provider(1, DelayDistribution::deterministic(3), 10);
        let out = p.submit(0, 0, 3);
        assert_eq!(p.state().live_hosts, 7);
        assert_eq!(out.granted_releases, 3);

        let mut p = provider(1, DelayDistribution::deterministic(3), 2);
        let out = p.submit(0, 0, 5);
        assert_eq!(p.state().live_hosts, 0);
        assert_eq!(out, SubmitOutcome { granted_releases: 2, shortfall: 3 });
    }

    #[test]
    fn requests_are_not_hosts_yet() {
        let mut p = provider(1, DelayDistribution::deterministic(3), 5);
        p.submit(0, 4, 0);
        assert_eq!(p.state().live_hosts, 5);
        assert_eq!(p.state().pending_requests, 4);
    }

    #[test]
    fn single_slot_reuse() {
        let mut p = provider(1, DelayDistribution::deterministic(3), 0);
        p.submit(0, 2, 0);
        let arrivals: Vec<u64> = (0..8).map(|t| p.tick(t)).collect();
        assert_eq!(arrivals, vec![0, 0, 0, 1, 0, 0, 1, 0]);
        let arrived_at: Vec<i64> = p
            .log()
            .iter()
            .filter_map(|e| match e {
                ProviderEvent::Arrived { step, .. } => Some(*step),
                _ => None,
            })
            .collect();
        assert_eq!(arrived_at, vec![3, 6]);
        assert_eq!(replay_live_hosts(0, p.log()), 2);
    }

    #[test]
    fn idle_provider() {
        let mut p = provider(3, DelayDistribution::deterministic(2), 4);
        let before = p.state().clone();
        assert_eq!(p.tick(0), 0);
        assert_eq!(p.state(), &before);
    }

    #[test]
    fn zero_delay_is_immediate() {
        let mut p = provider(1, DelayDistribution::deterministic(0), 0);
        p.submit(0, 5, 0);
        assert_eq!(p.tick(0), 5);
        assert_eq!(p.state().live_hosts, 5);
    }

    #[test]
    fn steady_state_rate_deterministic() {
        // Brute-force long run against n_slots / d.
        for (k, d) in [(1usize, 3u32), (4, 3), (5, 2), (3, 7)] {
            let mut p = provider(k, DelayDistribution::deterministic(d), 0);
            p.submit(0, 1_000_000, 0);
            let steps = 10_000;
            let total: u64 = (0..steps).map(|t| p.tick(t)).sum();
            let rate = total as f64 / steps as f64;
            let expected = k as f64 / d as f64;
            assert!((rate - expected).abs() / expected < 0.01, "{k}/{d}: {rate}");
        }
    }

    #[test]
    fn delay_distribution_moments() {
        let d = DelayDistribution::new(vec![(1, 0.5), (2, 0.5)]).unwrap();
        assert_eq!(d.mean(), 1.5);
        assert_eq!(d.cdf(0), 0.0);
        assert_eq!(d.cdf(1), 0.5);
        assert_eq!(d.cdf(2), 1.0);
        assert_eq!(d.cdf(100), 1.0);
        assert_eq!(d.quantile(0.5), 1);
        assert_eq!(d.quantile(0.9), 2);
        assert!(DelayDistribution::new(vec![(1, 0.5)]).is_err());
        assert!(DelayDistribution::new(vec![(1, 1.5), (2, -0.5)]).is_err());
        assert!(DelayDistribution::new(vec![]).is_err());
        let m = DelayDistribution::from_minutes(&[(5.0, 0.25), (12.0, 0.75)], 5).unwrap();
        assert_eq!(m.support(), &[(1, 0.25), (3, 0.75)]);
        assert!(ProviderConfig::new(0, m).is_err());
    }

    #[test]
    fn random_sequences_conserve_hosts() {
        let delay = DelayDistribution::new(vec![(1, 0.2), (3, 0.5), (6, 0.3)]).unwrap();
        let mut rng = RngSeed::new(11, "actions").rng();
        for _ in 0..50 {
            let mut p = provider(3, delay.clone(), rng.random_range(0..20));
            for t in 0..200 {
                p.submit(t, rng.random_range(0..4), rng.random_range(0..4));
                p.tick(t);
                assert!(p.state().occupied_slots() <= 3);
            }
            assert_eq!(
                replay_live_hosts(p.state().initial_hosts, p.log()),
                p.state().live_hosts
            );
        }
    }
}
