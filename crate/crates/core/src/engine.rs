//! Receding-horizon simulation loop.
//!
//! Each run generates one workload path, then walks the control period step
//! by step: replan when due, submit the step's actions, tick the provider and
//! charge the pinball loss of the live fleet against true demand. Steps before
//! `warmup_steps` only provide history and are never charged.
//!
//! Random streams are derived from the master seed by component name, so two
//! policies run with the same seed see the same workload and forecasts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::{pinball_loss, ProviderEstimate, RiskAversion};
use crate::error::{invalid, Error, Result};
use crate::forecaster::ForecasterConfig;
use crate::policies::{PolicyConfig, PolicyContext, ScalingPlan};
use crate::provider::{DelayDistribution, Provider, ProviderConfig};
use crate::rng::RngSeed;
use crate::series::TimeSeries;
use crate::workload::{demand_from_workload, generate_workload, WorkloadModel, WorkloadRecipe};

/// True provider behavior, with delays in minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub n_slots: usize,
    /// `(minutes, probability)` pairs.
    pub delay_minutes: Vec<(f64, f64)>,
}

/// What policies are told about the provider. Missing fields fall back to the
/// true delay histogram and the true throughput.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    #[serde(default)]
    pub delay_minutes: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub rho_hat: Option<f64>,
}

/// Everything about a scenario except the policy under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub workload: WorkloadRecipe,
    #[serde(default)]
    pub model: WorkloadModel,
    pub forecaster: ForecasterConfig,
    pub provider: ProviderSpec,
    #[serde(default)]
    pub estimate: EstimateSpec,
    #[serde(default = "default_horizon")]
    pub horizon_n: usize,
    #[serde(default = "default_replan")]
    pub replan_interval: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_length")]
    pub sim_length: usize,
    /// Fleet size when control starts; defaults to the demand at that step.
    #[serde(default)]
    pub initial_hosts: Option<u64>,
}

fn default_horizon() -> usize {
    576
}

fn default_replan() -> usize {
    12
}

fn default_warmup() -> usize {
    2016
}

fn default_length() -> usize {
    2016 + 2 * 2016
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        WorkloadModel::new(self.model.xi)?;
        self.forecaster.validate()?;
        if self.replan_interval == 0 {
            return Err(invalid("replan_interval", "must be at least 1"));
        }
        if self.horizon_n < self.replan_interval {
            return Err(invalid("horizon_n", "must be at least replan_interval"));
        }
        if self.sim_length <= self.warmup_steps {
            return Err(invalid("sim_length", "must exceed warmup_steps"));
        }
        self.provider_config()?;
        self.provider_estimate()?;
        Ok(())
    }

    pub fn provider_config(&self) -> Result<ProviderConfig> {
        let delay =
            DelayDistribution::from_minutes(&self.provider.delay_minutes, self.workload.step_minutes)?;
        ProviderConfig::new(self.provider.n_slots, delay)
    }

    pub fn provider_estimate(&self) -> Result<ProviderEstimate> {
        let truth = self.provider_config()?;
        let delay = match &self.estimate.delay_minutes {
            Some(pairs) => DelayDistribution::from_minutes(pairs, self.workload.step_minutes)?,
            None => truth.delay.clone(),
        };
        let rho = self.estimate.rho_hat.unwrap_or_else(|| truth.throughput());
        ProviderEstimate::new(delay, rho)
    }

    /// Steps of workload generated: the run plus one forecast horizon.
    pub fn generated_steps(&self) -> usize {
        self.sim_length + self.horizon_n
    }
}

/// One simulation: an environment, a policy, a risk level and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Label of the policy under test, used to group results.
    pub name: String,
    pub env: Environment,
    pub policy: PolicyConfig,
    pub alpha: RiskAversion,
    pub master_seed: u64,
}

/// Seeds of the per-component streams, echoed into traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub workload: RngSeed,
    pub forecast: RngSeed,
    pub provider: RngSeed,
    pub rounding: RngSeed,
}

impl SeedStreams {
    pub fn from_master(seed: u64) -> Self {
        let root = RngSeed::new(seed, "scalesim");
        Self {
            workload: root.child("workload"),
            forecast: root.child("forecast"),
            provider: root.child("provider"),
            rounding: root.child("rounding"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: i64,
    pub workload: f64,
    pub demand: f64,
    /// Capacity the policy was aiming at for this step.
    pub target: f64,
    pub live_hosts: u64,
    /// Hosts requested but not yet live, after this step's tick.
    pub pending: u64,
    pub requested: u64,
    pub released: u64,
    pub arrivals: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub scenario: Scenario,
    pub seeds: SeedStreams,
    pub initial_hosts: u64,
    pub records: Vec<StepRecord>,
    pub total_loss: f64,
}

impl SimulationTrace {
    pub fn mean_step_loss(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.total_loss / self.records.len() as f64
        }
    }
}

/// A failed run and whatever had been simulated before the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub error: Error,
    pub partial: SimulationTrace,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} (after {} simulated steps)",
            self.error,
            self.partial.records.len()
        )
    }
}

impl std::error::Error for RunError {}

/// Workload and true demand for a scenario's seed.
pub fn generate_paths(env: &Environment, seeds: &SeedStreams) -> Result<(TimeSeries, TimeSeries)> {
    let recipe = WorkloadRecipe {
        len_steps: env.generated_steps(),
        ..env.workload.clone()
    };
    let v = generate_workload(&recipe, &seeds.workload)?;
    let z = demand_from_workload(&v, &env.model)?;
    Ok((v, z))
}

pub fn run(scenario: &Scenario) -> std::result::Result<SimulationTrace, Box<RunError>> {
    let seeds = SeedStreams::from_master(scenario.master_seed);
    let mut trace = SimulationTrace {
        scenario: scenario.clone(),
        seeds: seeds.clone(),
        initial_hosts: 0,
        records: Vec::new(),
        total_loss: 0.0,
    };
    match simulate(scenario, &seeds, &mut trace) {
        Ok(()) => Ok(trace),
        Err(error) => Err(Box::new(RunError {
            error,
            partial: trace,
        })),
    }
}

fn simulate(scenario: &Scenario, seeds: &SeedStreams, trace: &mut SimulationTrace) -> Result<()> {
    let env = &scenario.env;
    env.validate()?;
    scenario.policy.validate()?;
    let provider_config = env.provider_config()?;
    let estimate = env.provider_estimate()?;
    let (v, z) = generate_paths(env, seeds)?;
    let start = env.warmup_steps as i64;
    let end = env.sim_length as i64;
    let demand = |t: i64| z.values()[t as usize];

    let initial = env
        .initial_hosts
        .unwrap_or_else(|| (demand(start) - 1e-9).ceil().max(0.0) as u64);
    trace.initial_hosts = initial;
    let mut provider = Provider::new(provider_config, initial, &seeds.provider);
    let every_step = scenario.policy.replans_every_step();
    let mut plan: Option<ScalingPlan> = None;

    for t in start..end {
        let due = every_step
            || plan.as_ref().and_then(|p| p.at(t)).is_none()
            || (t - start) % env.replan_interval as i64 == 0;
        if due {
            let forecast = if scenario.policy.needs_forecast() {
                Some(env.forecaster.forecast(&z, t - 1, env.horizon_n, &seeds.forecast)?)
            } else {
                None
            };
            let state = provider.state();
            let ctx = PolicyContext {
                now: t,
                live_hosts: state.live_hosts,
                pending_requests: state.in_flight(),
                current_demand_estimate: demand(t),
                forecast: forecast.as_ref(),
                estimate: &estimate,
                alpha: scenario.alpha,
                replan_interval: env.replan_interval,
            };
            plan = Some(scenario.policy.plan(&ctx, &z, &seeds.rounding.child(t))?);
        }
        let (q, f, target) = plan
            .as_ref()
            .and_then(|p| p.at(t))
            .ok_or_else(|| Error::Solver(format!("plan does not cover step {t}")))?;
        provider.submit(t, q, f);
        let arrivals = provider.tick(t);
        let state = provider.state();
        let loss = pinball_loss(state.live_hosts as f64, demand(t), scenario.alpha);
        trace.total_loss += loss;
        trace.records.push(StepRecord {
            t,
            workload: v.values()[t as usize],
            demand: demand(t),
            target,
            live_hosts: state.live_hosts,
            pending: state.in_flight(),
            requested: q,
            released: f,
            arrivals,
            loss,
        });
    }
    Ok(())
}

/// Live hosts obtained by feeding the recorded actions to a fresh provider
/// with the trace's seed.
pub fn replay(trace: &SimulationTrace) -> Result<Vec<u64>> {
    let config = trace.scenario.env.provider_config()?;
    let mut provider = Provider::new(config, trace.initial_hosts, &trace.seeds.provider);
    Ok(trace
        .records
        .iter()
        .map(|r| {
            provider.submit(r.t, r.requested, r.released);
            provider.tick(r.t);
            provider.state().live_hosts
        })
        .collect())
}

/// Box-plot statistics with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyDistribution);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            n: v.len(),
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Total-loss distribution per policy name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub alpha: RiskAversion,
    pub policies: BTreeMap<String, BoxStats>,
}

pub fn evaluate(traces: &[SimulationTrace], alpha: RiskAversion) -> Result<LossReport> {
    if traces.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for tr in traces {
        if tr.scenario.alpha != alpha {
            return Err(invalid(
                "alpha",
                format!(
                    "trace for {} uses alpha {}, expected {}",
                    tr.scenario.name,
                    tr.scenario.alpha.value(),
                    alpha.value()
                ),
            ));
        }
        grouped
            .entry(tr.scenario.name.clone())
            .or_default()
            .push(tr.total_loss);
    }
    let policies = grouped
        .into_iter()
        .map(|(name, losses)| Ok((name, BoxStats::from_values(&losses)?)))
        .collect::<Result<_>>()?;
    Ok(LossReport { alpha, policies })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flat_env(level: f64) -> Environment {
        Environment {
            workload: WorkloadRecipe {
                base_level: level,
                daily_amplitude: 0.0,
                weekly_amplitude: 0.0,
                trend_per_step: 0.0,
                noise_sigma: 0.0,
                len_steps: 0,
                step_minutes: 5,
                floor_at_zero: true,
            },
            model: WorkloadModel::default(),
            forecaster: ForecasterConfig::NoisyOracle {
                rel_noise_at_origin: 0.0,
                rel_noise_at_horizon: 0.0,
                n_samples: 4,
            },
            provider: ProviderSpec {
                n_slots: 2,
                delay_minutes: vec![(0.0, 1.0)],
            },
            estimate: EstimateSpec::default(),
            horizon_n: 24,
            replan_interval: 6,
            warmup_steps: 300,
            sim_length: 400,
            initial_hosts: None,
        }
    }

    fn scenario(env: Environment, policy: PolicyConfig, alpha: f64) -> Scenario {
        Scenario {
            name: "p".into(),
            env,
            policy,
            alpha: RiskAversion::new(alpha).unwrap(),
            master_seed: 7,
        }
    }

    #[test]
    fn constant_demand_reactive_is_lossless() {
        let trace = run(&scenario(
            flat_env(40.0),
            PolicyConfig::Reactive { gamma: 1.0 },
            0.9,
        ))
        .unwrap();
        assert_eq!(trace.records.len(), 100);
        assert_eq!(trace.records[0].t, 300);
        assert_eq!(trace.total_loss, 0.0);
    }

    #[test]
    fn cold_start_ramps_under_throughput_limit() {
        let mut env = flat_env(40.0);
        env.initial_hosts = Some(0);
        env.provider.delay_minutes = vec![(10.0, 1.0)];
        let trace = run(&scenario(env, PolicyConfig::Reactive { gamma: 1.0 }, 0.5)).unwrap();
        // Two slots with a two-step delay: one host per step from step 2 on.
        let live: Vec<u64> = trace.records.iter().take(6).map(|r| r.live_hosts).collect();
        assert_eq!(live, vec![0, 0, 2, 2, 4, 4]);
        assert_eq!(trace.records[99].live_hosts, 40);
        assert_eq!(replay(&trace).unwrap(), trace.records.iter().map(|r| r.live_hosts).collect::<Vec<_>>());
    }

    #[test]
    fn evaluate_statistics() {
        let base = run(&scenario(flat_env(10.0), PolicyConfig::Reactive { gamma: 1.5 }, 0.9)).unwrap();
        let a = RiskAversion::new(0.9).unwrap();
        let single = evaluate(std::slice::from_ref(&base), a).unwrap();
        let s = single.policies["p"];
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (s.mean, s.mean, s.mean, s.mean, s.mean));
        assert_eq!(s.mean, base.total_loss);
        let twice = evaluate(&[base.clone(), base.clone()], a).unwrap();
        assert_eq!(twice.policies["p"].iqr(), 0.0);
        assert!(evaluate(&[], a).is_err());
        assert!(evaluate(&[base], RiskAversion::new(0.5).unwrap()).is_err());
    }

    #[test]
    fn box_stats_interpolate() {
        let s = BoxStats::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 1.75, 2.5, 3.25, 4.0));
    }

    #[test]
    fn invalid_scenarios_fail_with_partial_trace() {
        let mut env = flat_env(10.0);
        env.sim_length = 10;
        let err = run(&scenario(env, PolicyConfig::Reactive { gamma: 1.0 }, 0.5)).unwrap_err();
        assert!(err.partial.records.is_empty());
        // Too little history for one season fails at the first replan.
        let mut env = flat_env(10.0);
        env.forecaster = ForecasterConfig::SeasonalEmpirical {
            season_steps: 310,
            n_samples: 2,
        };
        let err = run(&scenario(
            env,
            PolicyConfig::ForecastShifting {
                shift_mode: Default::default(),
            },
            0.5,
        ))
        .unwrap_err();
        assert!(err.partial.records.is_empty());
        assert_eq!(err.partial.initial_hosts, 10);
        assert!(matches!(err.error, Error::InsufficientHistory { .. }));
    }
}
