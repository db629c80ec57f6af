//! Scaling policies.
//!
//! Every policy turns a [`PolicyContext`] into a [`ScalingPlan`]: integer
//! requests and releases for the steps starting at `now`. Plans never request
//! and release at the same step. Hosts already requested but not yet live are
//! credited as if they were live, so replanning does not order them twice.

use serde::{Deserialize, Serialize};

use crate::cost::{ProviderEstimate, RiskAversion};
use crate::error::{invalid, Error, Result};
use crate::optimizer::{self, SaaProblem};
use crate::rng::RngSeed;
use crate::series::{Forecast, TimeSeries};

/// Ceiling that ignores float noise just above an integer.
fn ceil_hosts(x: f64) -> f64 {
    (x - 1e-9).ceil().max(0.0)
}

#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub now: i64,
    pub live_hosts: u64,
    pub pending_requests: u64,
    /// `ξ v_now`.
    pub current_demand_estimate: f64,
    pub forecast: Option<&'a Forecast>,
    pub estimate: &'a ProviderEstimate,
    pub alpha: RiskAversion,
    pub replan_interval: usize,
}

impl PolicyContext<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.replan_interval == 0 {
            return Err(invalid("replan_interval", "must be at least 1"));
        }
        if let Some(fc) = self.forecast {
            if fc.horizon() < self.replan_interval {
                return Err(invalid(
                    "horizon_n",
                    format!(
                        "forecast horizon {} is shorter than the replan interval {}",
                        fc.horizon(),
                        self.replan_interval
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Hosts the fleet will have once everything in flight has arrived.
    pub fn committed_hosts(&self) -> u64 {
        self.live_hosts + self.pending_requests
    }

    fn require_forecast(&self, policy: &'static str) -> Result<&Forecast> {
        self.forecast.ok_or(Error::MissingForecast { policy })
    }
}

/// Integer actions for consecutive steps from `start`, plus the capacity the
/// policy was aiming at for each step (for plotting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    start: i64,
    q: Vec<u64>,
    f: Vec<u64>,
    target: Vec<f64>,
}

impl ScalingPlan {
    pub fn new(start: i64, q: Vec<u64>, f: Vec<u64>, target: Vec<f64>) -> Result<Self> {
        if f.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                actual: f.len(),
            });
        }
        if target.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                actual: target.len(),
            });
        }
        if let Some(t) = q.iter().zip(&f).position(|(a, b)| *a > 0 && *b > 0) {
            return Err(invalid(
                "plan",
                format!("step {} both requests and releases", start + t as i64),
            ));
        }
        Ok(Self { start, q, f, target })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn requests(&self) -> &[u64] {
        &self.q
    }

    pub fn releases(&self) -> &[u64] {
        &self.f
    }

    pub fn targets(&self) -> &[f64] {
        &self.target
    }

    /// `(q, f, target)` at an absolute step, if the plan covers it.
    pub fn at(&self, step: i64) -> Option<(u64, u64, f64)> {
        let j = usize::try_from(step - self.start).ok()?;
        (j < self.len()).then(|| (self.q[j], self.f[j], self.target[j]))
    }

    /// One-step plan moving committed hosts toward `target`.
    ///
    /// Queued requests cannot be cancelled, so only live hosts above the
    /// target are released. Releasing below it to offset pending hosts would
    /// trade capacity now for capacity later.
    fn toward(ctx: &PolicyContext, target: f64) -> Self {
        let goal = ceil_hosts(target) as u64;
        let committed = ctx.committed_hosts();
        let (q, f) = if goal >= committed {
            (goal - committed, 0)
        } else {
            (0, ctx.live_hosts.saturating_sub(goal))
        };
        Self {
            start: ctx.now,
            q: vec![q],
            f: vec![f],
            target: vec![target],
        }
    }
}

/// Keeps capacity at the largest demand seen over the trailing `window` steps,
/// including the current one.
pub fn plan_max_window(
    ctx: &PolicyContext,
    window: usize,
    demand_history: &TimeSeries,
) -> Result<ScalingPlan> {
    ctx.validate()?;
    if window == 0 {
        return Err(invalid("window", "must be at least 1"));
    }
    let values = demand_history.window(ctx.now + 1 - window as i64, ctx.now + 1);
    if values.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: window,
            available: 0,
        });
    }
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingPlan::toward(ctx, peak))
}

/// Targets `γ` times the current demand estimate.
pub fn plan_reactive(ctx: &PolicyContext, gamma: f64) -> Result<ScalingPlan> {
    ctx.validate()?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(invalid("gamma", "must be positive"));
    }
    Ok(ScalingPlan::toward(ctx, gamma * ctx.current_demand_estimate))
}

/// How far requests are moved ahead of the step that needs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// `round(E[τ̂])` steps.
    #[default]
    Mean,
    /// The `α`-quantile of `τ̂`, so requests arrive in time with probability
    /// at least `α`.
    DelayQuantile,
}

/// Raises `path` to the smallest path above it that never climbs faster than
/// `rho` per step.
pub fn backward_pass(path: &mut [f64], rho: f64) {
    if !rho.is_finite() {
        return;
    }
    for j in (0..path.len().saturating_sub(1)).rev() {
        path[j] = path[j].max(path[j + 1] - rho);
    }
}

/// Splits a capacity path into requests and releases relative to `start`
/// hosts.
fn split_changes(path: &[f64], start: f64) -> (Vec<u64>, Vec<u64>) {
    let mut prev = start;
    path.iter()
        .map(|&z| {
            let delta = z - prev;
            prev = z;
            if delta >= 0.0 {
                (delta as u64, 0)
            } else {
                (0, (-delta) as u64)
            }
        })
        .unzip()
}

/// Keeps releases from cutting live hosts while requested ones are still
/// on their way.
///
/// The split counts in-flight hosts as if they were live. They cannot be
/// cancelled, so a release scheduled while the backlog is expected to be
/// draining (at `rho` hosts per step) would trade a live host for a late
/// one. Such releases become a credit that cancels later requests instead;
/// any surplus left when the backlog lands is released at a later replan.
fn defer_releases(q: &mut [u64], f: &mut [u64], in_flight: u64, rho: f64) {
    let mut outstanding = in_flight as f64;
    let mut credit = 0u64;
    for (qj, fj) in q.iter_mut().zip(f.iter_mut()) {
        let used = credit.min(*qj);
        *qj -= used;
        credit -= used;
        outstanding += *qj as f64;
        let held = (*fj).min(outstanding.ceil() as u64);
        *fj -= held;
        credit += held;
        outstanding = (outstanding - rho).max(0.0);
    }
}

/// Full-horizon forecast-shifting plan; [`plan_forecast_shifting`] truncates it.
pub fn forecast_shifting_full(ctx: &PolicyContext, mode: ShiftMode) -> Result<ScalingPlan> {
    ctx.validate()?;
    let fc = ctx.require_forecast("forecast_shifting")?;
    let alpha = ctx.alpha.value();
    let quantiles = fc.quantile_path(alpha)?;
    let mut path = quantiles.clone();
    backward_pass(&mut path, ctx.estimate.rho_hat);
    for z in &mut path {
        *z = ceil_hosts(*z);
    }
    let (q, mut f) = split_changes(&path, ctx.committed_hosts() as f64);
    let delay = &ctx.estimate.delay_hat;
    let shift = match mode {
        ShiftMode::Mean => delay.mean().round() as usize,
        ShiftMode::DelayQuantile => delay.quantile(alpha) as usize,
    };
    let mut shifted = vec![0u64; q.len()];
    for (j, qj) in q.iter().enumerate() {
        shifted[j.saturating_sub(shift)] += qj;
    }
    optimizer::net_simultaneous(&mut shifted, &mut f);
    defer_releases(&mut shifted, &mut f, ctx.pending_requests, ctx.estimate.rho_hat);
    ScalingPlan::new(ctx.now, shifted, f, quantiles)
}

/// Quantile the forecast, smooth it for throughput, split into requests and
/// releases, and move requests ahead by the expected delay.
pub fn plan_forecast_shifting(ctx: &PolicyContext, mode: ShiftMode) -> Result<ScalingPlan> {
    let full = forecast_shifting_full(ctx, mode)?;
    truncate(full, ctx.replan_interval)
}

fn truncate(plan: ScalingPlan, k: usize) -> Result<ScalingPlan> {
    let k = k.min(plan.len());
    ScalingPlan::new(
        plan.start,
        plan.q[..k].to_vec(),
        plan.f[..k].to_vec(),
        plan.target[..k].to_vec(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Forecast samples used in the sample average.
    #[serde(default = "default_saa_samples")]
    pub n_samples: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_saa_samples() -> usize {
    20
}

fn default_max_iterations() -> usize {
    500
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_samples: default_saa_samples(),
            max_iterations: default_max_iterations(),
        }
    }
}

/// Solves the sample-average problem over the forecast horizon and keeps
/// `k` steps, where `k` is the replan interval (or the horizon if `k` is
/// larger). `seed` drives the rounding.
pub fn plan_optimizing_prefix(
    ctx: &PolicyContext,
    opt: &OptimizerConfig,
    k: usize,
    seed: &RngSeed,
) -> Result<ScalingPlan> {
    ctx.validate()?;
    if opt.n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let fc = ctx.require_forecast("optimizing")?;
    let problem = SaaProblem::from_forecast(
        fc,
        opt.n_samples,
        ctx.committed_hosts() as f64,
        ctx.estimate,
        ctx.alpha,
    )?;
    let k = k.min(fc.horizon());
    let plan = optimizer::solve(&problem, k, opt.max_iterations, seed)
        .map_err(|e| Error::Solver(format!("optimizing policy at step {}: {e}", ctx.now)))?;
    let target = fc.quantile_path(ctx.alpha.value())?[..k].to_vec();
    ScalingPlan::new(ctx.now, plan.q, plan.f, target)
}

pub fn plan_optimizing(
    ctx: &PolicyContext,
    opt: &OptimizerConfig,
    seed: &RngSeed,
) -> Result<ScalingPlan> {
    plan_optimizing_prefix(ctx, opt, ctx.replan_interval, seed)
}

/// A policy and its parameters, as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    MaxWindow {
        window_steps: usize,
    },
    Reactive {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    ForecastShifting {
        #[serde(default)]
        shift_mode: ShiftMode,
    },
    Optimizing {
        #[serde(default = "default_saa_samples")]
        n_samples: usize,
        #[serde(default = "default_max_iterations")]
        max_iterations: usize,
    },
}

fn default_gamma() -> f64 {
    1.0
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PolicyConfig::MaxWindow { window_steps } if window_steps == 0 => {
                Err(invalid("window_steps", "must be at least 1"))
            }
            PolicyConfig::Reactive { gamma } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(invalid("gamma", "must be positive"))
            }
            PolicyConfig::Optimizing { n_samples: 0, .. } => {
                Err(invalid("n_samples", "must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn needs_forecast(&self) -> bool {
        matches!(
            self,
            PolicyConfig::ForecastShifting { .. } | PolicyConfig::Optimizing { .. }
        )
    }

    /// Baselines react every step; forecast policies replan on an interval.
    pub fn replans_every_step(&self) -> bool {
        !self.needs_forecast()
    }

    pub fn plan(
        &self,
        ctx: &PolicyContext,
        demand_history: &TimeSeries,
        seed: &RngSeed,
    ) -> Result<ScalingPlan> {
        match self {
            PolicyConfig::MaxWindow { window_steps } => {
                plan_max_window(ctx, *window_steps, demand_history)
            }
            PolicyConfig::Reactive { gamma } => plan_reactive(ctx, *gamma),
            PolicyConfig::ForecastShifting { shift_mode } => plan_forecast_shifting(ctx, *shift_mode),
            PolicyConfig::Optimizing {
                n_samples,
                max_iterations,
            } => plan_optimizing(
                ctx,
                &OptimizerConfig {
                    n_samples: *n_samples,
                    max_iterations: *max_iterations,
                },
                seed,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::DelayDistribution;
    use crate::series::TimeGrid;

    fn ctx<'a>(
        live: u64,
        pending: u64,
        demand: f64,
        forecast: Option<&'a Forecast>,
        estimate: &'a ProviderEstimate,
    ) -> PolicyContext<'a> {
        PolicyContext {
            now: 10,
            live_hosts: live,
            pending_requests: pending,
            current_demand_estimate: demand,
            forecast,
            estimate,
            alpha: RiskAversion::new(0.9).unwrap(),
            replan_interval: 3,
        }
    }

    fn history(values: Vec<f64>) -> TimeSeries {
        TimeSeries::new(TimeGrid::new(0, 5, values.len()).unwrap(), values).unwrap()
    }

    #[test]
    fn max_window_examples() {
        let est = ProviderEstimate::unconstrained();
        let mut v = vec![50.0; 11];
        v[7] = 100.0;
        let h = history(v);
        let plan = |live, pending| {
            plan_max_window(&ctx(live, pending, 0.0, None, &est), 5, &h).unwrap()
        };
        assert_eq!(plan(100, 0).requests(), &[0]);
        assert_eq!(plan(100, 0).releases(), &[0]);
        assert_eq!(plan(80, 5).requests(), &[15]);
        assert_eq!(plan(120, 0).releases(), &[20]);
        // The peak leaves the window after five steps.
        let short = plan_max_window(&ctx(100, 0, 0.0, None, &est), 3, &h).unwrap();
        assert_eq!(short.releases(), &[50]);
        assert!(plan_max_window(&ctx(1, 0, 0.0, None, &est), 0, &h).is_err());
    }

    #[test]
    fn reactive_examples() {
        let est = ProviderEstimate::unconstrained();
        let p = plan_reactive(&ctx(50, 0, 50.2, None, &est), 1.0).unwrap();
        assert_eq!((p.requests(), p.releases()), (&[1][..], &[0][..]));
        let p = plan_reactive(&ctx(120, 0, 100.0, None, &est), 1.2).unwrap();
        assert_eq!((p.requests(), p.releases()), (&[0][..], &[0][..]));
        let p = plan_reactive(&ctx(50, 0, 40.0, None, &est), 1.0).unwrap();
        assert_eq!((p.requests(), p.releases()), (&[0][..], &[10][..]));
        // Pending requests count toward the target.
        let p = plan_reactive(&ctx(40, 8, 50.0, None, &est), 1.0).unwrap();
        assert_eq!(p.requests(), &[2]);
    }

    #[test]
    fn backward_pass_example() {
        let mut path = vec![1.0, 5.0, 2.0];
        backward_pass(&mut path, 2.0);
        assert_eq!(path, vec![3.0, 5.0, 2.0]);
    }

    fn single_path(values: Vec<f64>) -> Forecast {
        Forecast::new(9, 5, vec![values]).unwrap()
    }

    #[test]
    fn shifting_tracks_quantiles_when_unconstrained() {
        let fc = single_path(vec![4.0, 9.0, 6.0, 6.0, 12.0]);
        let est = ProviderEstimate::unconstrained();
        let mut c = ctx(4, 0, 4.0, Some(&fc), &est);
        c.replan_interval = 5;
        let p = plan_forecast_shifting(&c, ShiftMode::Mean).unwrap();
        assert_eq!(p.requests(), &[0, 5, 0, 0, 6]);
        assert_eq!(p.releases(), &[0, 0, 3, 0, 0]);
        assert_eq!(p.targets(), &[4.0, 9.0, 6.0, 6.0, 12.0]);
    }

    #[test]
    fn shifting_constant_path_is_idle() {
        let fc = single_path(vec![7.0; 6]);
        let est = ProviderEstimate::new(DelayDistribution::deterministic(2), 1.0).unwrap();
        let p = plan_forecast_shifting(&ctx(5, 2, 7.0, Some(&fc), &est), ShiftMode::Mean).unwrap();
        assert!(p.requests().iter().chain(p.releases()).all(|v| *v == 0));
        assert_eq!(p.len(), 3);
    }

    #[test]
    fn shifting_moves_requests_ahead() {
        let fc = single_path(vec![2.0, 2.0, 2.0, 6.0, 6.0, 6.0]);
        let est = ProviderEstimate::new(DelayDistribution::deterministic(2), 2.0).unwrap();
        let mut c = ctx(2, 0, 2.0, Some(&fc), &est);
        c.replan_interval = 6;
        // Throughput 2 spreads the rise over steps 2 and 3; the delay of 2
        // moves both requests two steps earlier.
        let p = plan_forecast_shifting(&c, ShiftMode::Mean).unwrap();
        assert_eq!(p.requests(), &[2, 2, 0, 0, 0, 0]);
        // Requests that would have to go out before `now` are sent at once.
        let est = ProviderEstimate::new(DelayDistribution::deterministic(5), 2.0).unwrap();
        let c = PolicyContext { estimate: &est, ..c };
        assert_eq!(
            plan_forecast_shifting(&c, ShiftMode::Mean).unwrap().requests(),
            &[4, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn delay_quantile_mode_shifts_further() {
        let fc = single_path(vec![0.0, 0.0, 0.0, 0.0, 3.0, 3.0]);
        let delay = DelayDistribution::new(vec![(1, 0.5), (3, 0.5)]).unwrap();
        let est = ProviderEstimate::new(delay, f64::INFINITY).unwrap();
        let mut c = ctx(0, 0, 0.0, Some(&fc), &est);
        c.replan_interval = 6;
        assert_eq!(
            plan_forecast_shifting(&c, ShiftMode::Mean).unwrap().requests(),
            &[0, 0, 3, 0, 0, 0]
        );
        assert_eq!(
            plan_forecast_shifting(&c, ShiftMode::DelayQuantile).unwrap().requests(),
            &[0, 3, 0, 0, 0, 0]
        );
    }

    #[test]
    fn forecast_policies_need_a_forecast() {
        let est = ProviderEstimate::unconstrained();
        let c = ctx(1, 0, 1.0, None, &est);
        assert_eq!(
            plan_forecast_shifting(&c, ShiftMode::Mean),
            Err(Error::MissingForecast {
                policy: "forecast_shifting"
            })
        );
        assert!(plan_optimizing(&c, &OptimizerConfig::default(), &RngSeed::new(0, "r")).is_err());
    }

    #[test]
    fn optimizing_tracks_noiseless_forecast() {
        let path = vec![4.0, 9.0, 6.0, 6.0, 12.0];
        let fc = single_path(path.clone());
        let est = ProviderEstimate::unconstrained();
        let mut c = ctx(4, 0, 4.0, Some(&fc), &est);
        c.replan_interval = 5;
        let p = plan_optimizing(&c, &OptimizerConfig::default(), &RngSeed::new(0, "r")).unwrap();
        let shift = plan_forecast_shifting(&c, ShiftMode::Mean).unwrap();
        assert_eq!(p.requests(), shift.requests());
        assert_eq!(p.releases(), shift.releases());
    }

    #[test]
    fn plan_invariants_are_enforced() {
        assert!(ScalingPlan::new(0, vec![1], vec![1], vec![0.0]).is_err());
        assert!(ScalingPlan::new(0, vec![1, 0], vec![0], vec![0.0]).is_err());
        let p = ScalingPlan::new(5, vec![1, 0], vec![0, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(p.at(6), Some((0, 2, 2.0)));
        assert_eq!(p.at(7), None);
        assert_eq!(p.at(4), None);
    }

    #[test]
    fn config_round_trip() {
        let json = r#"[{"kind":"max_window","window_steps":288},
            {"kind":"reactive","gamma":1.1},
            {"kind":"forecast_shifting"},
            {"kind":"optimizing","max_iterations":50}]"#;
        let cfgs: Vec<PolicyConfig> = serde_json::from_str(json).unwrap();
        assert_eq!(
            cfgs[3],
            PolicyConfig::Optimizing {
                n_samples: 20,
                max_iterations: 50
            }
        );
        assert_eq!(
            cfgs[2],
            PolicyConfig::ForecastShifting {
                shift_mode: ShiftMode::Mean
            }
        );
        assert!(serde_json::from_str::<PolicyConfig>(r#"{"kind":"reactive","gama":1}"#).is_err());
    }

    #[test]
    fn releases_wait_for_the_backlog() {
        // Four hosts in flight draining at two per step: the dip at step 1
        // is held back and cancels the request at step 3.
        let mut q = vec![0, 0, 0, 3, 0, 0];
        let mut f = vec![0, 2, 0, 0, 0, 1];
        defer_releases(&mut q, &mut f, 4, 2.0);
        assert_eq!(q, vec![0, 0, 0, 1, 0, 0]);
        assert_eq!(f, vec![0, 0, 0, 0, 0, 1]);
        // Nothing in flight: releases go through.
        let mut q = vec![0, 1];
        let mut f = vec![2, 0];
        defer_releases(&mut q, &mut f, 0, 2.0);
        assert_eq!((q, f), (vec![0, 1], vec![2, 0]));
    }

    #[test]
    fn shifting_does_not_release_live_hosts_for_pending_ones() {
        let est = ProviderEstimate::new(DelayDistribution::deterministic(2), 1.0).unwrap();
        let fc = Forecast::new(9, 5, vec![vec![12.0; 6]]).unwrap();
        // 10 live and 5 in flight against a flat target of 12.
        let plan = forecast_shifting_full(&ctx(10, 5, 12.0, Some(&fc), &est), ShiftMode::Mean).unwrap();
        assert!(plan.releases().iter().all(|f| *f == 0));
        assert!(plan.requests().iter().all(|q| *q == 0));
    }
}
