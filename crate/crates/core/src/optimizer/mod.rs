//! Sample-average approximation of the lookahead scaling problem.
//!
//! The expected cost over forecast samples is a sum over steps of convex
//! piecewise-linear functions of the expected host trajectory `r̂_t`, which is
//! itself linear in the relaxed decisions `(q, f)`. [`build_lp`] writes that as
//! one slack variable `s_t = r̂_t` per step carrying the averaged pinball cost,
//! so breakpoints come from the samples and no per-sample variables are needed.
//! [`solve`] then rounds the relaxed plan to integers.

pub mod simplex;

use rand::Rng;

use crate::cost::{pinball_loss, ProviderEstimate, RiskAversion};
use crate::error::{invalid, Error, Result};
use crate::provider::DelayDistribution;
use crate::rng::RngSeed;
use crate::series::Forecast;

pub use simplex::SolveStatus;
use simplex::{Column, Lp, LpVariable, PwlCost};

#[derive(Debug, Clone, PartialEq)]
pub struct SaaProblem {
    samples: Vec<Vec<f64>>,
    r_init: f64,
    past_requests: Vec<(i64, f64)>,
    cdf: Vec<f64>,
    rho_hat: f64,
    alpha: RiskAversion,
}

impl SaaProblem {
    /// `samples` is S × n. `past_requests` holds `(offset, count)` pairs with
    /// negative offsets; they are credited through the same delay CDF as
    /// planned requests. Past releases are assumed folded into `r_init`.
    pub fn new(
        samples: Vec<Vec<f64>>,
        r_init: f64,
        past_requests: Vec<(i64, f64)>,
        delay_hat: &DelayDistribution,
        rho_hat: f64,
        alpha: RiskAversion,
    ) -> Result<Self> {
        let n = samples.first().map_or(0, Vec::len);
        if samples.is_empty() || n == 0 {
            return Err(Error::EmptyDistribution);
        }
        if let Some(bad) = samples.iter().find(|p| p.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        if samples.iter().flatten().any(|z| !(z.is_finite() && *z >= 0.0)) {
            return Err(invalid("samples", "must be finite and non-negative"));
        }
        if !(r_init.is_finite() && r_init >= 0.0) {
            return Err(invalid("r_init", "must be finite and non-negative"));
        }
        if past_requests
            .iter()
            .any(|&(i, c)| i >= 0 || !(c.is_finite() && c >= 0.0))
        {
            return Err(invalid("past_requests", "need negative offsets and counts >= 0"));
        }
        if !(rho_hat >= 0.0) {
            return Err(invalid("rho_hat", "must be non-negative"));
        }
        let cdf = (0..=n as i64).map(|d| delay_hat.cdf(d)).collect();
        Ok(Self {
            samples,
            r_init,
            past_requests,
            cdf,
            rho_hat,
            alpha,
        })
    }

    /// Uses the first `max_samples` paths of `fc`.
    pub fn from_forecast(
        fc: &Forecast,
        max_samples: usize,
        r_init: f64,
        est: &ProviderEstimate,
        alpha: RiskAversion,
    ) -> Result<Self> {
        let s = max_samples.clamp(1, fc.n_samples());
        Self::new(
            fc.samples()[..s].to_vec(),
            r_init,
            Vec::new(),
            &est.delay_hat,
            est.rho_hat,
            alpha,
        )
    }

    pub fn horizon(&self) -> usize {
        self.samples[0].len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// `c_d = P{τ̂ <= d}` for `d = 0..=n`.
    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn rho_hat(&self) -> f64 {
        self.rho_hat
    }

    pub fn alpha(&self) -> RiskAversion {
        self.alpha
    }

    fn c(&self, d: i64) -> f64 {
        if d < 0 {
            0.0
        } else {
            self.cdf[(d as usize).min(self.cdf.len() - 1)]
        }
    }

    /// Expected hosts at step `t` with no planned actions.
    pub fn baseline(&self, t: usize) -> f64 {
        self.r_init
            + self
                .past_requests
                .iter()
                .map(|&(i, count)| count * self.c(t as i64 - i))
                .sum::<f64>()
    }

    /// Expected trajectory `r̂_0..r̂_{n-1}` under a (possibly relaxed) plan.
    pub fn trajectory(&self, q: &[f64], f: &[f64]) -> Vec<f64> {
        let n = self.horizon();
        // Requests older than the longest delay have surely arrived.
        let settled = self.cdf.iter().position(|c| *c >= 1.0).unwrap_or(self.cdf.len());
        let mut out = Vec::with_capacity(n);
        let mut released = 0.0;
        let mut arrived_for_sure = 0.0;
        for t in 0..n {
            released += f.get(t).copied().unwrap_or(0.0);
            if t >= settled {
                arrived_for_sure += q.get(t - settled).copied().unwrap_or(0.0);
            }
            let recent: f64 = (t.saturating_sub(settled.saturating_sub(1))..=t)
                .filter(|&i| t - i < settled)
                .map(|i| q.get(i).copied().unwrap_or(0.0) * self.c((t - i) as i64))
                .sum();
            out.push(self.baseline(t) + arrived_for_sure + recent - released);
        }
        out
    }

    /// Sample-average cost `(1/S) Σ_s Σ_t Λ_α(r̂_t, z_t^(s))`.
    pub fn objective_of_trajectory(&self, r: &[f64]) -> f64 {
        let s = self.n_samples() as f64;
        self.samples
            .iter()
            .map(|path| {
                path.iter()
                    .zip(r)
                    .map(|(z, rt)| pinball_loss(*rt, *z, self.alpha))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / s
    }

    pub fn objective(&self, q: &[f64], f: &[f64]) -> f64 {
        self.objective_of_trajectory(&self.trajectory(q, f))
    }
}

/// LP for a [`SaaProblem`]. Variables are ordered `q_0..q_{n-1}`,
/// `f_0..f_{n-1}`, `s_0..s_{n-1}`; row `t` reads
/// `s_t - Σ_{i<=t} c_{t-i} q_i + Σ_{i<=t} f_i = baseline(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaLp {
    pub lp: Lp,
    pub n: usize,
}

impl SaaLp {
    pub fn q_index(&self, i: usize) -> usize {
        i
    }

    pub fn f_index(&self, i: usize) -> usize {
        self.n + i
    }

    pub fn s_index(&self, t: usize) -> usize {
        2 * self.n + t
    }
}

/// Averaged pinball cost of one step as a function of the host count.
fn step_cost(column: &mut [f64], alpha: f64) -> Result<PwlCost> {
    column.sort_by(f64::total_cmp);
    let s = column.len() as f64;
    let mut breakpoints = Vec::new();
    let mut slopes = vec![-alpha];
    let mut i = 0;
    while i < column.len() {
        let v = column[i];
        while i < column.len() && column[i] == v {
            i += 1;
        }
        breakpoints.push(v);
        slopes.push(i as f64 / s - alpha);
    }
    let at_zero = alpha * column.iter().sum::<f64>() / s;
    PwlCost::new(breakpoints, slopes, 0.0, at_zero)
}

pub fn build_lp(problem: &SaaProblem) -> Result<SaaLp> {
    let n = problem.horizon();
    let alpha = problem.alpha.value();
    let max_delay = problem.cdf.iter().position(|c| *c >= 1.0).unwrap_or(n + 1);
    let mut vars = Vec::with_capacity(3 * n);
    for i in 0..n {
        let head = (i..n.min(i + max_delay))
            .filter_map(|t| {
                let c = problem.cdf[t - i];
                (c > 0.0).then_some((t, -c))
            })
            .collect();
        let tail_start = i + max_delay;
        vars.push(LpVariable {
            column: Column {
                head,
                tail: (tail_start < n).then_some((tail_start, -1.0)),
            },
            cost: PwlCost::linear(0.0),
            lower: 0.0,
            upper: problem.rho_hat,
        });
    }
    for i in 0..n {
        vars.push(LpVariable {
            column: Column {
                head: Vec::new(),
                tail: Some((i, 1.0)),
            },
            cost: PwlCost::linear(0.0),
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    for t in 0..n {
        let mut column: Vec<f64> = problem.samples.iter().map(|p| p[t]).collect();
        vars.push(LpVariable {
            column: Column::unit(t),
            cost: step_cost(&mut column, alpha)?,
            lower: 0.0,
            upper: f64::INFINITY,
        });
    }
    Ok(SaaLp {
        lp: Lp {
            n_rows: n,
            vars,
            rhs: (0..n).map(|t| problem.baseline(t)).collect(),
            start_basis: (2 * n..3 * n).collect(),
        },
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub q: Vec<f64>,
    pub f: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// Solves the relaxation, stopping after `max_iterations` simplex steps.
pub fn solve_lp(lp: &SaaLp, max_iterations: usize) -> Result<LpSolution> {
    let res = simplex::solve(&lp.lp, max_iterations)?;
    let n = lp.n;
    Ok(LpSolution {
        q: res.x[..n].iter().map(|v| v.max(0.0)).collect(),
        f: res.x[n..2 * n].iter().map(|v| v.max(0.0)).collect(),
        objective: res.objective,
        status: res.status,
        iterations: res.iterations,
    })
}

fn snap(x: f64) -> f64 {
    let x = x.max(0.0);
    let nearest = x.round();
    if (x - nearest).abs() < 1e-9 {
        nearest
    } else {
        x
    }
}

/// Systematic rounding: `R_i = floor(C_i + u)` on the cumulative sums `C_i`
/// for a uniform offset `u`. Each value still rounds to
/// `floor(x) + Bernoulli(frac(x))`, but the rounding errors of a prefix never
/// add up to a full unit, which matters because the host trajectory
/// integrates the requests.
fn round_sequence(xs: &[f64], u: f64) -> Vec<u64> {
    let mut cum = 0.0;
    let mut prev = 0.0;
    xs.iter()
        .map(|x| {
            cum = snap(cum + snap(*x));
            let rounded = (cum + u).floor();
            let out = (rounded - prev).max(0.0) as u64;
            prev = rounded;
            out
        })
        .collect()
}

/// Rounds each value to `floor(x) + Bernoulli(frac(x))` (see
/// [`round_sequence`]) and caps requests at `ceil(ρ̂)`.
///
/// With a fractional throughput the cap is an average rate, not a per-step
/// one: rounded prefix sums stay within one host of the relaxed ones, so
/// capping at `floor(ρ̂)` would throw away the fractional part for good.
pub fn round_relaxed(q: &[f64], f: &[f64], rho_hat: f64, seed: &RngSeed) -> (Vec<u64>, Vec<u64>) {
    // One offset for both sequences keeps the prefix errors of requests and
    // releases in the same half-open unit interval, so they largely cancel.
    let u: f64 = seed.rng().random();
    let cap = if rho_hat.is_finite() {
        rho_hat.ceil() as u64
    } else {
        u64::MAX
    };
    let qi = round_sequence(q, u).into_iter().map(|v| v.min(cap)).collect();
    let fi = round_sequence(f, u);
    (qi, fi)
}

/// Cancels requests against releases at the same step.
///
/// With a non-zero delay this is not neutral: the relaxed optimum may release
/// hosts now and request replacements that arrive later, and netting keeps
/// the old hosts instead.
pub fn net_simultaneous(q: &mut [u64], f: &mut [u64]) {
    for (a, b) in q.iter_mut().zip(f.iter_mut()) {
        let m = (*a).min(*b);
        *a -= m;
        *b -= m;
    }
}

/// [`round_relaxed`] followed by [`net_simultaneous`].
pub fn randomized_round(q: &[f64], f: &[f64], rho_hat: f64, seed: &RngSeed) -> (Vec<u64>, Vec<u64>) {
    let (mut qi, mut fi) = round_relaxed(q, f, rho_hat, seed);
    net_simultaneous(&mut qi, &mut fi);
    (qi, fi)
}

/// Lowers releases until the expected trajectory stays non-negative.
fn repair_releases(problem: &SaaProblem, q: &[u64], f: &mut [u64]) {
    let qf: Vec<f64> = q.iter().map(|v| *v as f64).collect();
    let ff: Vec<f64> = f.iter().map(|v| *v as f64).collect();
    let traj = problem.trajectory(&qf, &ff);
    let mut raised = 0u64;
    for t in 0..traj.len() {
        let cur = traj[t] + raised as f64;
        if cur < -1e-9 {
            let mut need = (-cur - 1e-9).ceil() as u64;
            for j in (0..=t).rev() {
                let d = need.min(f[j]);
                f[j] -= d;
                need -= d;
                raised += d;
                if need == 0 {
                    break;
                }
            }
        }
    }
}

fn integer_objective(problem: &SaaProblem, q: &[u64], f: &[u64]) -> f64 {
    let qf: Vec<f64> = q.iter().map(|v| *v as f64).collect();
    let ff: Vec<f64> = f.iter().map(|v| *v as f64).collect();
    problem.objective(&qf, &ff)
}

/// Leaves every step either requesting or releasing.
///
/// Netting is not always the cheapest fix: with a delay the relaxed optimum
/// can release hosts now and order replacements that only arrive later, and
/// netting keeps the old hosts through the gap instead. Each conflicting step
/// tries netting, dropping either side, and moving either side one step
/// later, and keeps the plan with the lowest sample-average cost.
fn resolve_conflicts(problem: &SaaProblem, q: &mut [u64], f: &mut [u64]) {
    let n = q.len();
    let cap = if problem.rho_hat.is_finite() {
        problem.rho_hat.ceil() as u64
    } else {
        u64::MAX
    };
    let cost = |q: &[u64], f: &[u64]| {
        let mut f = f.to_vec();
        repair_releases(problem, q, &mut f);
        integer_objective(problem, q, &f)
    };
    for t in 0..n {
        if q[t] == 0 || f[t] == 0 {
            continue;
        }
        let (qt, ft) = (q[t], f[t]);
        let m = qt.min(ft);
        // (q_t, f_t, requests moved to t + 1, releases moved to t + 1)
        let mut options = vec![(qt - m, ft - m, 0, 0), (0, ft, 0, 0), (qt, 0, 0, 0)];
        if t + 1 < n {
            if q[t + 1].saturating_add(qt) <= cap {
                options.push((0, ft, qt, 0));
            }
            options.push((qt, 0, 0, ft));
        }
        let apply = |q: &mut [u64], f: &mut [u64], (a, b, dq, df): (u64, u64, u64, u64), sign: bool| {
            if sign {
                q[t] = a;
                f[t] = b;
                if t + 1 < n {
                    q[t + 1] += dq;
                    f[t + 1] += df;
                }
            } else if t + 1 < n {
                q[t + 1] -= dq;
                f[t + 1] -= df;
            }
        };
        let mut best: Option<(f64, (u64, u64, u64, u64))> = None;
        for opt in options {
            apply(q, f, opt, true);
            let c = cost(q, f);
            apply(q, f, opt, false);
            if best.is_none_or(|(bc, _)| c < bc - 1e-12) {
                best = Some((c, opt));
            }
        }
        apply(q, f, best.expect("at least one option").1, true);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedPlan {
    pub q: Vec<u64>,
    pub f: Vec<u64>,
    pub relaxed: LpSolution,
    /// Sample-average cost of the full-horizon rounded plan.
    pub rounded_objective: f64,
}

/// Relax, solve, round and keep the first `k` steps.
pub fn solve(
    problem: &SaaProblem,
    k: usize,
    max_iterations: usize,
    seed: &RngSeed,
) -> Result<OptimizedPlan> {
    let n = problem.horizon();
    if k == 0 || k > n {
        return Err(invalid("k", format!("must be in 1..={n}")));
    }
    let lp = build_lp(problem)?;
    let relaxed = solve_lp(&lp, max_iterations)?;
    let (mut q, mut f) = round_relaxed(&relaxed.q, &relaxed.f, problem.rho_hat, seed);
    resolve_conflicts(problem, &mut q, &mut f);
    repair_releases(problem, &q, &mut f);
    let rounded_objective = integer_objective(problem, &q, &f);
    Ok(OptimizedPlan {
        q: q[..k].to_vec(),
        f: f[..k].to_vec(),
        relaxed,
        rounded_objective,
    })
}
