//! Primal simplex for linear programs with convex piecewise-linear costs.
//!
//! Problems have the form `min Σ_j c_j(x_j)` subject to `A x = b` and
//! `l_j <= x_j <= u_j`, where each `c_j` is convex and piecewise linear.
//! Breakpoints of `c_j` are handled directly by the ratio test: the entering
//! variable keeps moving through breakpoints of basic variables for as long as
//! the directional derivative stays negative. One iteration is one basis change
//! or one move of the entering variable to another of its own breakpoints.
//!
//! The basis inverse is kept as an explicit dense matrix (column-major) and
//! updated in product form; it is refactorized from scratch periodically.
//!
//! Columns may carry a constant tail: a value repeated on every row from some
//! index onward. That represents cumulative effects without storing them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const RATE_TOL: f64 = 1e-9;
const PRICE_TOL: f64 = 1e-9;
const RECOMPUTE_EVERY: usize = 100;
const REFACTOR_EVERY: usize = 2000;
const DEGENERATE_STREAK_FOR_BLAND: usize = 50;
const MAX_INCREMENTAL_SLOPE_CHANGES: usize = 32;

/// Sparse column with an optional constant tail `(start_row, value)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Column {
    pub head: Vec<(usize, f64)>,
    pub tail: Option<(usize, f64)>,
}

impl Column {
    pub fn unit(row: usize) -> Self {
        Self {
            head: vec![(row, 1.0)],
            tail: None,
        }
    }

    /// `πᵀ a`, given the suffix sums `suffix[k] = Σ_{i >= k} π_i`.
    fn dot(&self, suffix: &[f64]) -> f64 {
        let mut acc: f64 = self
            .head
            .iter()
            .map(|&(i, v)| v * (suffix[i] - suffix[i + 1]))
            .sum();
        if let Some((start, v)) = self.tail {
            if start + 1 < suffix.len() {
                acc += v * suffix[start];
            }
        }
        acc
    }

    fn add_to(&self, dense: &mut [f64], scale: f64) {
        for &(i, v) in &self.head {
            dense[i] += scale * v;
        }
        if let Some((start, v)) = self.tail {
            for d in dense.iter_mut().skip(start) {
                *d += scale * v;
            }
        }
    }
}

/// Convex piecewise-linear function of one variable.
///
/// `slopes[k]` applies between `breakpoints[k-1]` and `breakpoints[k]`; the
/// first and last slopes extend to infinity. `value_at_anchor` fixes the
/// additive constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlCost {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    anchor: f64,
    value_at_anchor: f64,
}

impl PwlCost {
    pub fn linear(slope: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            slopes: vec![slope],
            anchor: 0.0,
            value_at_anchor: 0.0,
        }
    }

    pub fn new(
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        anchor: f64,
        value_at_anchor: f64,
    ) -> Result<Self> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(Error::Solver("need one more slope than breakpoints".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|b| !b.is_finite())
        {
            return Err(Error::Solver("breakpoints must be finite and increasing".into()));
        }
        if slopes.windows(2).any(|w| w[0] > w[1]) || slopes.iter().any(|s| !s.is_finite()) {
            return Err(Error::Solver("slopes must be finite and non-decreasing".into()));
        }
        Ok(Self {
            breakpoints,
            slopes,
            anchor,
            value_at_anchor,
        })
    }

    /// Slope just to the right of `x`.
    pub fn slope_right_of(&self, x: f64) -> f64 {
        self.slopes[self.breakpoints.partition_point(|b| *b <= x)]
    }

    pub fn value(&self, x: f64) -> f64 {
        let (lo, hi, sign) = if x >= self.anchor {
            (self.anchor, x, 1.0)
        } else {
            (x, self.anchor, -1.0)
        };
        let mut acc = 0.0;
        let mut cur = lo;
        let mut k = self.breakpoints.partition_point(|b| *b <= lo);
        while cur < hi {
            let next = self.breakpoints.get(k).copied().unwrap_or(f64::INFINITY).min(hi);
            acc += self.slopes[k] * (next - cur);
            cur = next;
            k += 1;
        }
        self.value_at_anchor + sign * acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpVariable {
    pub column: Column,
    pub cost: PwlCost,
    pub lower: f64,
    pub upper: f64,
}

/// An equality-form LP together with a starting basis.
///
/// `start_basis[i]` names the variable that is basic in row `i`; its column
/// must be the unit vector `e_i`. All other variables start at their (finite)
/// lower bounds, and the implied basic values must be feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct Lp {
    pub n_rows: usize,
    pub vars: Vec<LpVariable>,
    pub rhs: Vec<f64>,
    pub start_basis: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl Lp {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(x).map(|(v, xi)| v.cost.value(*xi)).sum()
    }

    /// Largest violation of `A x = b`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.n_rows];
        for (v, xi) in self.vars.iter().zip(x) {
            v.column.add_to(&mut ax, *xi);
        }
        ax.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Kinks of one variable: bounds plus the breakpoints strictly between them.
#[derive(Debug, Clone)]
struct Kinks {
    at: Vec<f64>,
    /// Slope of segment `k`, between `at[k]` and `at[k + 1]`.
    slope: Vec<f64>,
}

impl Kinks {
    fn new(var: &LpVariable) -> Self {
        let mut at = vec![var.lower];
        at.extend(
            var.cost
                .breakpoints
                .iter()
                .copied()
                .filter(|b| *b > var.lower && *b < var.upper),
        );
        at.push(var.upper);
        let slope = at[..at.len() - 1]
            .iter()
            .enumerate()
            .map(|(k, x)| {
                if k == 0 && !x.is_finite() {
                    var.cost.slopes[0]
                } else {
                    var.cost.slope_right_of(*x)
                }
            })
            .collect();
        Self { at, slope }
    }

    fn last(&self) -> usize {
        self.at.len() - 1
    }

    fn segment_of(&self, x: f64) -> usize {
        let k = self.at.partition_point(|a| *a <= x);
        k.saturating_sub(1).min(self.slope.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic { row: usize, seg: usize },
    AtKink(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mover {
    Basic(usize),
    Entering,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    theta: f64,
    var: usize,
    who: Mover,
    kink: usize,
    hard: bool,
    jump: f64,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that `BinaryHeap` pops the smallest step first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .theta
            .total_cmp(&self.theta)
            .then_with(|| other.var.cmp(&self.var))
    }
}

struct Simplex<'a> {
    lp: &'a Lp,
    m: usize,
    kinks: Vec<Kinks>,
    state: Vec<VarState>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Suffix sums of the columns of `B⁻¹`: column `k` of `p` is
    /// `Σ_{k' >= k} B⁻¹ e_{k'}`, stored column-major with a zero column `m`.
    /// Tail columns then cost one column read in FTRAN.
    p: Vec<f64>,
    /// `y_k = c_Bᵀ p_k`. The simplex multipliers are `π_k = y_k - y_{k+1}`,
    /// so `y` is also the suffix sum of `π`.
    y: Vec<f64>,
}

pub fn solve(lp: &Lp, max_iterations: usize) -> Result<SimplexResult> {
    let mut s = Simplex::new(lp)?;
    let (status, iterations) = s.run(max_iterations)?;
    s.recompute_basic_values();
    let objective = lp.objective(&s.x);
    Ok(SimplexResult {
        x: s.x,
        objective,
        status,
        iterations,
    })
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a Lp) -> Result<Self> {
        let m = lp.n_rows;
        if lp.rhs.len() != m || lp.start_basis.len() != m {
            return Err(Error::Solver("row count mismatch".into()));
        }
        let kinks: Vec<Kinks> = lp.vars.iter().map(Kinks::new).collect();
        let mut state = Vec::with_capacity(lp.vars.len());
        let mut x = Vec::with_capacity(lp.vars.len());
        for v in &lp.vars {
            if !(v.lower <= v.upper) {
                return Err(Error::Solver("empty variable range".into()));
            }
            state.push(VarState::AtKink(0));
            x.push(v.lower);
        }
        for (row, &j) in lp.start_basis.iter().enumerate() {
            let col = &lp.vars[j].column;
            if col.head != [(row, 1.0)] || col.tail.is_some() {
                return Err(Error::Solver(format!("start basis column {j} is not e_{row}")));
            }
            state[j] = VarState::Basic { row, seg: 0 };
        }
        for (j, v) in lp.vars.iter().enumerate() {
            if matches!(state[j], VarState::AtKink(_)) && !v.lower.is_finite() {
                return Err(Error::Solver(format!("variable {j} starts at an infinite bound")));
            }
        }
        // Identity basis: p_k is the indicator of rows >= k.
        let mut p = vec![0.0; m * (m + 1)];
        for k in 0..m {
            for v in &mut p[k * m + k..(k + 1) * m] {
                *v = 1.0;
            }
        }
        let mut s = Self {
            lp,
            m,
            kinks,
            state,
            x,
            basis: lp.start_basis.clone(),
            p,
            y: vec![0.0; m + 1],
        };
        s.recompute_basic_values();
        for row in 0..m {
            let j = s.basis[row];
            let v = &lp.vars[j];
            let xj = s.x[j];
            let tol = 1e-9 * (1.0 + xj.abs());
            if xj < v.lower - tol || xj > v.upper + tol {
                return Err(Error::Solver(format!(
                    "infeasible start: basic variable {j} = {xj} outside [{}, {}]",
                    v.lower, v.upper
                )));
            }
            s.state[j] = VarState::Basic {
                row,
                seg: s.kinks[j].segment_of(xj),
            };
        }
        s.recompute_multipliers();
        Ok(s)
    }

    fn pcol(&self, k: usize) -> &[f64] {
        &self.p[k * self.m..(k + 1) * self.m]
    }

    fn ftran(&self, column: &Column) -> Vec<f64> {
        let m = self.m;
        let mut w = vec![0.0; m];
        let mut axpy = |k: usize, v: f64| {
            for (wi, pik) in w.iter_mut().zip(self.pcol(k)) {
                *wi += v * pik;
            }
        };
        // a = Σ head v e_i + v_tail Σ_{i >= start} e_i, and B⁻¹ e_i = p_i - p_{i+1}.
        for &(i, v) in &column.head {
            axpy(i, v);
            if i + 1 < m {
                axpy(i + 1, -v);
            }
        }
        if let Some((start, v)) = column.tail {
            if start < m {
                axpy(start, v);
            }
        }
        w
    }

    fn basic_slope(&self, row: usize) -> f64 {
        let j = self.basis[row];
        match self.state[j] {
            VarState::Basic { seg, .. } => self.kinks[j].slope[seg],
            VarState::AtKink(_) => unreachable!("basis out of sync"),
        }
    }

    fn recompute_multipliers(&mut self) {
        let cb: Vec<f64> = (0..self.m).map(|r| self.basic_slope(r)).collect();
        for k in 0..self.m {
            self.y[k] = dot(&cb, self.pcol(k));
        }
        self.y[self.m] = 0.0;
    }

    /// Adds `delta · (row i of p)` to `y` after a basic slope change in row `i`.
    fn shift_multipliers(&mut self, row: usize, delta: f64) {
        let m = self.m;
        for k in 0..m {
            self.y[k] += delta * self.p[k * m + row];
        }
    }

    fn recompute_basic_values(&mut self) {
        let mut rhs = self.lp.rhs.clone();
        for (j, v) in self.lp.vars.iter().enumerate() {
            if matches!(self.state[j], VarState::AtKink(_)) && self.x[j] != 0.0 {
                v.column.add_to(&mut rhs, -self.x[j]);
            }
        }
        // B⁻¹ b = Σ_k (b_k - b_{k-1}) p_k.
        let mut xb = vec![0.0; self.m];
        let mut prev = 0.0;
        for (k, &rk) in rhs.iter().enumerate() {
            let d = rk - prev;
            prev = rk;
            if d != 0.0 {
                for (xi, pik) in xb.iter_mut().zip(self.pcol(k)) {
                    *xi += d * pik;
                }
            }
        }
        for (row, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[row];
        }
    }

    /// Rebuilds `p` from the basis by Gauss-Jordan elimination with partial pivoting.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        let width = 2 * m;
        // Row-major augmented copy [B | I].
        let mut a = vec![0.0; m * width];
        for (k, &j) in self.basis.iter().enumerate() {
            let mut dense = vec![0.0; m];
            self.lp.vars[j].column.add_to(&mut dense, 1.0);
            for (i, v) in dense.iter().enumerate() {
                a[i * width + k] = *v;
            }
        }
        for i in 0..m {
            a[i * width + m + i] = 1.0;
        }
        for c in 0..m {
            let pr = (c..m)
                .max_by(|&r1, &r2| a[r1 * width + c].abs().total_cmp(&a[r2 * width + c].abs()))
                .unwrap();
            let piv = a[pr * width + c];
            if piv.abs() < 1e-12 {
                return Err(Error::Solver("singular basis".into()));
            }
            if pr != c {
                for k in 0..width {
                    a.swap(pr * width + k, c * width + k);
                }
            }
            let inv = 1.0 / piv;
            for k in 0..width {
                a[c * width + k] *= inv;
            }
            let pivot_row: Vec<f64> = a[c * width..(c + 1) * width].to_vec();
            for r in 0..m {
                if r != c {
                    let factor = a[r * width + c];
                    if factor != 0.0 {
                        for (ark, pk) in a[r * width..(r + 1) * width].iter_mut().zip(&pivot_row) {
                            *ark -= factor * pk;
                        }
                    }
                }
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for k in (0..m).rev() {
                acc += a[i * width + m + k];
                self.p[k * m + i] = acc;
            }
        }
        Ok(())
    }

    /// Replaces the basic variable in row `r` by one whose column has
    /// `w = B⁻¹ a` and whose slope is `c_new`. Keeps `y` in step when
    /// `update_y` is set.
    fn pivot(&mut self, r: usize, w: &[f64], c_new: f64, update_y: bool) {
        let m = self.m;
        let wr = w[r];
        let mut u: Vec<f64> = w.iter().map(|wi| wi / wr).collect();
        u[r] = (wr - 1.0) / wr;
        let c_old = self.basic_slope(r);
        let gamma = if update_y {
            // c'ᵀw with the new basic slope in row r.
            let cw: f64 = (0..m).map(|i| self.basic_slope(i) * w[i]).sum::<f64>()
                + (c_new - c_old) * wr;
            (c_new - c_old) - (cw - c_new) / wr
        } else {
            0.0
        };
        for k in 0..m {
            let sigma = self.p[k * m + r];
            if sigma != 0.0 {
                for (pik, ui) in self.p[k * m..(k + 1) * m].iter_mut().zip(&u) {
                    *pik -= sigma * ui;
                }
                if update_y {
                    self.y[k] += gamma * sigma;
                }
            }
        }
    }

    /// Best entering candidate as `(var, direction, reduced cost)`.
    fn price(&self, bland: bool) -> Option<(usize, f64, f64)> {
        let y = &self.y;
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, v) in self.lp.vars.iter().enumerate() {
            let VarState::AtKink(p) = self.state[j] else {
                continue;
            };
            let kinks = &self.kinks[j];
            let pa = v.column.dot(y);
            let mut consider = |dir: f64, d: f64| {
                if d < -PRICE_TOL && best.is_none_or(|(_, _, bd)| !bland && d < bd) {
                    best = Some((j, dir, d));
                }
            };
            if p < kinks.last() {
                consider(1.0, kinks.slope[p] - pa);
            }
            if p > 0 {
                consider(-1.0, pa - kinks.slope[p - 1]);
            }
            if bland && best.is_some() {
                break;
            }
        }
        best
    }

    fn basic_event(&self, row: usize, rate: f64) -> Option<Event> {
        let j = self.basis[row];
        let VarState::Basic { seg, .. } = self.state[j] else {
            unreachable!("basis out of sync")
        };
        let kinks = &self.kinks[j];
        let (kink, hard, jump) = if rate > 0.0 {
            let kink = seg + 1;
            let hard = kink == kinks.last();
            let jump = if hard {
                f64::INFINITY
            } else {
                kinks.slope[seg + 1] - kinks.slope[seg]
            };
            (kink, hard, jump)
        } else {
            let hard = seg == 0;
            let jump = if hard {
                f64::INFINITY
            } else {
                kinks.slope[seg] - kinks.slope[seg - 1]
            };
            (seg, hard, jump)
        };
        let target = kinks.at[kink];
        if !target.is_finite() {
            return None;
        }
        let theta = ((target - self.x[j]) / rate).max(0.0);
        Some(Event {
            theta,
            var: j,
            who: Mover::Basic(row),
            kink,
            hard,
            jump,
        })
    }

    fn entering_event(&self, j: usize, from: usize, kink: usize) -> Option<Event> {
        let kinks = &self.kinks[j];
        let target = kinks.at[kink];
        if !target.is_finite() {
            return None;
        }
        let (hard, jump) = if kink > from {
            let hard = kink == kinks.last();
            (hard, if hard { f64::INFINITY } else { kinks.slope[kink] - kinks.slope[kink - 1] })
        } else {
            let hard = kink == 0;
            (hard, if hard { f64::INFINITY } else { kinks.slope[kink] - kinks.slope[kink - 1] })
        };
        Some(Event {
            theta: (target - kinks.at[from]).abs(),
            var: j,
            who: Mover::Entering,
            kink,
            hard,
            jump,
        })
    }

    fn run(&mut self, max_iterations: usize) -> Result<(SolveStatus, usize)> {
        let mut degenerate_streak = 0usize;
        let mut iterations = 0usize;
        loop {
            let bland = degenerate_streak >= DEGENERATE_STREAK_FOR_BLAND;
            let Some((enter, dir, reduced)) = self.price(bland) else {
                return Ok((SolveStatus::Optimal, iterations));
            };
            if iterations >= max_iterations {
                return Ok((SolveStatus::IterationLimit, iterations));
            }
            iterations += 1;

            let w = self.ftran(&self.lp.vars[enter].column);
            let VarState::AtKink(start) = self.state[enter] else {
                unreachable!("entering variable is basic")
            };

            let mut heap = BinaryHeap::new();
            for (row, wi) in w.iter().enumerate() {
                if wi.abs() > RATE_TOL {
                    if let Some(e) = self.basic_event(row, -dir * wi) {
                        heap.push(e);
                    }
                }
            }
            let step = if dir > 0.0 { 1isize } else { -1 };
            let next_own = |k: usize| (k as isize + step) as usize;
            if let Some(e) = self.entering_event(enter, start, next_own(start)) {
                heap.push(e);
            }

            // Walk the breakpoints in order until the derivative turns non-negative.
            let mut derivative = reduced;
            let mut crossed_own = 0usize;
            let mut slope_changes: Vec<(usize, f64)> = Vec::new();
            let stop = loop {
                let Some(e) = heap.pop() else {
                    return Err(Error::Solver("unbounded direction".into()));
                };
                let rate = match e.who {
                    Mover::Basic(row) => (dir * w[row]).abs(),
                    Mover::Entering => 1.0,
                };
                if e.hard {
                    break e;
                }
                derivative += rate * e.jump;
                if derivative >= -PRICE_TOL * 1e-3 {
                    break e;
                }
                match e.who {
                    Mover::Basic(row) => {
                        let j = self.basis[row];
                        let VarState::Basic { seg, .. } = self.state[j] else {
                            unreachable!()
                        };
                        let new_seg = if e.kink > seg { seg + 1 } else { seg - 1 };
                        self.state[j] = VarState::Basic { row, seg: new_seg };
                        let slopes = &self.kinks[j].slope;
                        slope_changes.push((row, slopes[new_seg] - slopes[seg]));
                        if let Some(next) = self.basic_event(row, -dir * w[row]) {
                            heap.push(next);
                        }
                    }
                    Mover::Entering => {
                        crossed_own += 1;
                        if let Some(next) = self.entering_event(enter, start, next_own(e.kink))
                        {
                            heap.push(next);
                        }
                    }
                }
            };

            let theta = stop.theta;
            if theta <= 0.0 {
                degenerate_streak += 1;
            } else {
                degenerate_streak = 0;
            }
            for (row, &j) in self.basis.iter().enumerate() {
                self.x[j] -= dir * theta * w[row];
            }
            self.x[enter] += dir * theta;

            // Few slope changes are cheaper to apply row by row than to redo y.
            let dirty = slope_changes.len() > MAX_INCREMENTAL_SLOPE_CHANGES;
            if !dirty {
                for &(row, delta) in &slope_changes {
                    self.shift_multipliers(row, delta);
                }
            }

            match stop.who {
                Mover::Entering => {
                    self.state[enter] = VarState::AtKink(stop.kink);
                    self.x[enter] = self.kinks[enter].at[stop.kink];
                }
                Mover::Basic(row) => {
                    let leaving = self.basis[row];
                    let seg = if dir > 0.0 {
                        start + crossed_own
                    } else {
                        start - 1 - crossed_own
                    };
                    let c_new = self.kinks[enter].slope[seg];
                    self.pivot(row, &w, c_new, !dirty);
                    self.state[leaving] = VarState::AtKink(stop.kink);
                    self.x[leaving] = self.kinks[leaving].at[stop.kink];
                    self.state[enter] = VarState::Basic { row, seg };
                    self.basis[row] = enter;
                }
            }

            if iterations % REFACTOR_EVERY == 0 {
                self.refactor()?;
            }
            if iterations % RECOMPUTE_EVERY == 0 {
                self.recompute_basic_values();
            }
            if dirty || iterations % RECOMPUTE_EVERY == 0 {
                self.recompute_multipliers();
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}
