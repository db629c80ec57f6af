//! Independent reference implementations used as test oracles.
//!
//! Nothing here shares code with the library: the LP oracle is a textbook
//! two-phase tableau simplex over the per-sample auxiliary-variable model, and
//! the integer oracle enumerates every schedule.

#![allow(dead_code)]

/// `min cᵀx` subject to `A x <= b`, `x >= 0`.
pub struct DenseLp {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

const EPS: f64 = 1e-10;

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, col: usize) {
    let p = t[r][col];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let row = t[r].clone();
    for (i, ti) in t.iter_mut().enumerate() {
        if i != r && ti[col].abs() > 0.0 {
            let f = ti[col];
            for (v, rv) in ti.iter_mut().zip(&row) {
                *v -= f * rv;
            }
        }
    }
    basis[r] = col;
}

/// Bland's rule simplex on a tableau whose last column is the rhs.
/// Returns false if unbounded.
fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], allowed: &[bool]) -> bool {
    let width = t[0].len() - 1;
    loop {
        let mut enter = None;
        for j in 0..width {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let d = cost[j] - t.iter().zip(basis.iter()).map(|(row, &bj)| cost[bj] * row[j]).sum::<f64>();
            if d < -1e-9 {
                enter = Some(j);
                break;
            }
        }
        let Some(j) = enter else {
            return true;
        };
        let mut leave: Option<(usize, f64)> = None;
        for (i, row) in t.iter().enumerate() {
            if row[j] > EPS {
                let ratio = row[width] / row[j];
                let better = match leave {
                    None => true,
                    Some((li, lr)) => ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((r, _)) = leave else {
            return false;
        };
        pivot(t, basis, r, j);
    }
}

/// Optimal objective and point, or `None` if infeasible or unbounded.
pub fn solve_dense(lp: &DenseLp) -> Option<(f64, Vec<f64>)> {
    let m = lp.a.len();
    let n = lp.c.len();
    // Columns: x (n), slacks (m), artificials (m), rhs.
    let width = n + 2 * m;
    let mut t = vec![vec![0.0; width + 1]; m];
    let mut basis = vec![0; m];
    for i in 0..m {
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * lp.a[i][j];
        }
        t[i][n + i] = sign;
        t[i][width] = sign * lp.b[i];
        if sign > 0.0 {
            basis[i] = n + i;
        } else {
            t[i][n + m + i] = 1.0;
            basis[i] = n + m + i;
        }
    }
    let mut cost1 = vec![0.0; width];
    for c in cost1.iter_mut().skip(n + m) {
        *c = 1.0;
    }
    let all = vec![true; width];
    run(&mut t, &mut basis, &cost1, &all);
    let infeas: f64 = t.iter().zip(&basis).filter(|(_, &b)| b >= n + m).map(|(row, _)| row[width]).sum();
    if infeas > 1e-7 {
        return None;
    }
    for r in 0..m {
        if basis[r] >= n + m {
            if let Some(j) = (0..n + m).find(|&j| t[r][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, r, j);
            }
        }
    }
    let mut cost2 = vec![0.0; width];
    cost2[..n].copy_from_slice(&lp.c);
    let allowed: Vec<bool> = (0..width).map(|j| j < n + m).collect();
    if !run(&mut t, &mut basis, &cost2, &allowed) {
        return None;
    }
    let mut x = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            x[b] = t[i][width];
        }
    }
    let obj = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Some((obj, x))
}

/// Tiny SAA instance in plain numbers.
#[derive(Debug, Clone)]
pub struct Instance {
    pub samples: Vec<Vec<f64>>,
    pub r_init: f64,
    /// `cdf[d] = P{τ <= d}` for `d = 0..=n`.
    pub cdf: Vec<f64>,
    pub rho: f64,
    pub alpha: f64,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.samples[0].len()
    }

    pub fn trajectory(&self, q: &[f64], f: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|t| {
                let mut r = self.r_init;
                for i in 0..=t {
                    r += q[i] * self.cdf[t - i] - f[i];
                }
                r
            })
            .collect()
    }

    pub fn cost(&self, r: &[f64]) -> f64 {
        let a = self.alpha;
        let s = self.samples.len() as f64;
        self.samples
            .iter()
            .map(|path| {
                path.iter()
                    .zip(r)
                    .map(|(z, x)| if x > z { (1.0 - a) * (x - z) } else { a * (z - x) })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / s
    }

    /// Per-sample auxiliary-variable LP: variables q, f, then u_{s,t}.
    pub fn dense_lp(&self) -> DenseLp {
        let n = self.n();
        let s = self.samples.len();
        let nv = 2 * n + s * n;
        let u = |si: usize, t: usize| 2 * n + si * n + t;
        let mut c = vec![0.0; nv];
        for si in 0..s {
            for t in 0..n {
                c[u(si, t)] = 1.0 / s as f64;
            }
        }
        // Linear part of r̂_t without the constant.
        let lin = |t: usize| {
            let mut row = vec![0.0; nv];
            for i in 0..=t {
                row[i] = self.cdf[t - i];
                row[n + i] = -1.0;
            }
            row
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        let al = self.alpha;
        for (si, path) in self.samples.iter().enumerate() {
            for (t, &z) in path.iter().enumerate() {
                let base = lin(t);
                let mut over: Vec<f64> = base.iter().map(|v| (1.0 - al) * v).collect();
                over[u(si, t)] = -1.0;
                a.push(over);
                b.push((1.0 - al) * (z - self.r_init));
                let mut under: Vec<f64> = base.iter().map(|v| -al * v).collect();
                under[u(si, t)] = -1.0;
                a.push(under);
                b.push(al * (self.r_init - z));
            }
        }
        for t in 0..n {
            a.push(lin(t).iter().map(|v| -v).collect());
            b.push(self.r_init);
        }
        if self.rho.is_finite() {
            for i in 0..n {
                let mut row = vec![0.0; nv];
                row[i] = 1.0;
                a.push(row);
                b.push(self.rho);
            }
        }
        DenseLp { c, a, b }
    }

    /// Exhaustive integer optimum over `q_t <= min(floor ρ̂, q_max)` and all
    /// releases that keep the expected trajectory non-negative. With
    /// `exclusive`, a step may not both request and release.
    pub fn integer_optimum(&self, q_max: u64, exclusive: bool) -> f64 {
        let cap = if self.rho.is_finite() {
            (self.rho.floor() as u64).min(q_max)
        } else {
            q_max
        };
        let n = self.n();
        let mut best = f64::INFINITY;
        let mut q = vec![0.0; n];
        let mut f = vec![0.0; n];
        self.dfs(0, cap, exclusive, &mut q, &mut f, &mut best);
        best
    }

    fn dfs(&self, t: usize, cap: u64, exclusive: bool, q: &mut Vec<f64>, f: &mut Vec<f64>, best: &mut f64) {
        let n = self.n();
        if t == n {
            let c = self.cost(&self.trajectory(q, f));
            if c < *best {
                *best = c;
            }
            return;
        }
        for qt in 0..=cap {
            q[t] = qt as f64;
            f[t] = 0.0;
            let pre = self.trajectory(q, f)[t];
            let max_f = if exclusive && qt > 0 { 0 } else { (pre + 1e-9).floor().max(0.0) as u64 };
            for ft in 0..=max_f {
                f[t] = ft as f64;
                if self.trajectory(q, f)[t] < -1e-9 {
                    continue;
                }
                self.dfs(t + 1, cap, exclusive, q, f, best);
            }
            f[t] = 0.0;
        }
        q[t] = 0.0;
    }
}

/// Pointwise-minimal path that dominates `x` and rises by at most `rho` per step.
pub fn minimal_envelope(x: &[f64], rho: f64) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            (t..x.len())
                .map(|s| if s == t { x[t] } else { x[s] - (s - t) as f64 * rho })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}
