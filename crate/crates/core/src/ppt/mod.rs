//! First and second moments of passage percolation times (PPTs) from a
//! fixed start state, and the reachable space they induce.
//!
//! For each target `j` the expected passage time solves
//!
//! ```text
//! E_s = sum_s'' P[s][s''] * (h(s, s'') + alpha * E_s'')   for s != j,   E_j = 0
//! ```
//!
//! where row `s` of `P` is the policy's spatial transition distribution
//! evaluated at the slot nearest the row's current expected arrival time.
//! Variances follow from the total-variance recursion
//!
//! ```text
//! V_s = sum_s'' P'[s][s''] * (alpha * V_s'' + (h'(s, s'') + E_s'' - E_s)^2),   V_j = 0
//! ```
//!
//! with `P'` evaluated at the freshly computed expected times.
//!
//! Two routes solve the `N - 1` systems:
//!
//! * [`SolveStrategy::PerTarget`] factors one system per target (dense LU up
//!   to [`DENSE_LIMIT`] unknowns, Gauss-Seidel above). With `alpha = 1` the
//!   unknowns are restricted to states that reach the target almost surely.
//! * [`SolveStrategy::RankOne`] factors `I - alpha P` once and obtains every
//!   target's solution by a Sherman-Morrison update, since pinning `E_j = 0`
//!   only replaces row `j`. It needs `alpha < 1`.

mod linalg;
mod reachable;

use std::fs::File;
use std::io::Write;
use std::path::Path;

pub use linalg::{gauss_seidel, DenseLu};
pub use reachable::{build_reachable_space, ReachableSpace};

use crate::error::{Error, Result};
use crate::model::{Policy, StateId, TvmdpModel};
use crate::par::Workers;

/// Largest system solved by dense LU on the per-target route.
pub const DENSE_LIMIT: usize = 400;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStrategy {
    /// Rank-one updates when `alpha < 1`, per-target systems otherwise.
    #[default]
    Auto,
    PerTarget,
    RankOne,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentOptions {
    /// Discount applied to successor passage times inside the systems.
    pub alpha: f64,
    pub strategy: SolveStrategy,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            strategy: SolveStrategy::Auto,
        }
    }
}

impl MomentOptions {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.strategy == SolveStrategy::RankOne && self.alpha >= 1.0 {
            return Err(Error::InvalidArgument(
                "rank-one moment solves need alpha < 1".into(),
            ));
        }
        Ok(())
    }

    fn rank_one(&self) -> bool {
        match self.strategy {
            SolveStrategy::Auto => self.alpha < 1.0,
            SolveStrategy::PerTarget => false,
            SolveStrategy::RankOne => true,
        }
    }
}

/// Value reported for the expected passage time of unreachable targets.
pub fn unreachable_sentinel(model: &TvmdpModel) -> f64 {
    model.time_grid().horizon().max(1.0) * 10.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub to: usize,
    pub prob: f64,
    pub travel_time: f64,
}

/// Spatial Markov chain induced by a policy, with each row's transition law
/// frozen at one slot.
#[derive(Clone, Debug)]
pub struct PolicyChain {
    rows: Vec<Vec<Edge>>,
}

impl PolicyChain {
    /// Row `s` uses the slot nearest `row_times[s]` and the policy's action
    /// there.
    pub fn build(model: &TvmdpModel, policy: &Policy, row_times: &[f64]) -> Result<Self> {
        let tg = model.time_grid();
        let mut rows = Vec::with_capacity(model.state_count());
        for s in model.grid().states() {
            let slot = tg.snap(row_times[s.0]);
            let a = policy.action(s, slot);
            let law = model.transition_law(s, slot, a)?;
            let mut row: Vec<Edge> = Vec::with_capacity(law.len());
            for t in law.iter() {
                match row.iter_mut().find(|e| e.to == t.state.0) {
                    Some(e) => e.prob += t.prob,
                    None => row.push(Edge {
                        to: t.state.0,
                        prob: t.prob,
                        travel_time: t.travel_time,
                    }),
                }
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<Vec<Edge>>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, s: usize) -> &[Edge] {
        &self.rows[s]
    }

    /// Expected one-step travel time of each row.
    fn step_costs(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|e| e.prob * e.travel_time).sum())
            .collect()
    }

    /// States reachable from `start` along positive-probability edges.
    pub fn forward_reachable(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            for e in &self.rows[s] {
                if e.prob > 0.0 && !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        seen
    }

    /// States other than `target` from which `target` is reached with
    /// probability one.
    pub fn almost_sure_set(&self, target: usize) -> Vec<bool> {
        let n = self.len();
        let mut keep = vec![true; n];
        keep[target] = false;
        loop {
            // Drop states with an edge leaving keep + {target}.
            let mut changed = false;
            for s in 0..n {
                if keep[s]
                    && self.rows[s]
                        .iter()
                        .any(|e| e.prob > 0.0 && e.to != target && !keep[e.to])
                {
                    keep[s] = false;
                    changed = true;
                }
            }
            // Keep only states with a path to the target inside the set.
            let mut hits = vec![false; n];
            hits[target] = true;
            let mut grew = true;
            while grew {
                grew = false;
                for s in 0..n {
                    if keep[s]
                        && !hits[s]
                        && self.rows[s].iter().any(|e| e.prob > 0.0 && hits[e.to])
                    {
                        hits[s] = true;
                        grew = true;
                    }
                }
            }
            for s in 0..n {
                if keep[s] && !hits[s] {
                    keep[s] = false;
                    changed = true;
                }
            }
            if !changed {
                return keep;
            }
        }
    }
}

/// Solves `x_s - alpha * sum P[s][k] x_k = rhs_s` over the `unknown` states
/// with `x = 0` at `target`. Returns the full vector (infinite outside the
/// unknowns) or `None` when the system is singular.
fn solve_pinned(
    chain: &PolicyChain,
    target: usize,
    alpha: f64,
    rhs: &[f64],
    unknown: &[bool],
) -> Option<Vec<f64>> {
    let n = chain.len();
    let mut index = vec![usize::MAX; n];
    let mut order = Vec::new();
    for s in 0..n {
        if unknown[s] {
            index[s] = order.len();
            order.push(s);
        }
    }
    let m = order.len();
    let b: Vec<f64> = order.iter().map(|&s| rhs[s]).collect();
    let solution = if m > DENSE_LIMIT {
        let rows: Vec<Vec<(usize, f64)>> = order
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut row = vec![(i, 1.0)];
                for e in chain.row(s) {
                    if e.to != target && unknown[e.to] {
                        row.push((index[e.to], -alpha * e.prob));
                    }
                }
                row
            })
            .collect();
        gauss_seidel(&rows, &b, 1e-8, 10 * m)?
    } else {
        let mut a = vec![0.0; m * m];
        for (i, &s) in order.iter().enumerate() {
            a[i * m + i] += 1.0;
            for e in chain.row(s) {
                if e.to != target && unknown[e.to] {
                    a[i * m + index[e.to]] -= alpha * e.prob;
                }
            }
        }
        DenseLu::factor(m, a)?.solve(&b)
    };
    let mut full = vec![f64::INFINITY; n];
    full[target] = 0.0;
    for (i, &s) in order.iter().enumerate() {
        full[s] = solution[i];
    }
    Some(full)
}

fn unknown_set(chain: &PolicyChain, target: usize, alpha: f64) -> Vec<bool> {
    if alpha < 1.0 {
        let mut u = vec![true; chain.len()];
        u[target] = false;
        u
    } else {
        chain.almost_sure_set(target)
    }
}

/// `(I - alpha P)^{-1}` stored by columns, plus the factorization.
struct Inverse {
    n: usize,
    lu: DenseLu,
    /// `cols[j * n + k] = G[k][j]`
    cols: Vec<f64>,
}

impl Inverse {
    fn new(chain: &PolicyChain, alpha: f64, workers: &Workers) -> Option<Self> {
        let n = chain.len();
        let mut a = vec![0.0; n * n];
        for s in 0..n {
            a[s * n + s] += 1.0;
            for e in chain.row(s) {
                a[s * n + e.to] -= alpha * e.prob;
            }
        }
        let lu = DenseLu::factor(n, a)?;
        let columns = workers.map(n, |j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            lu.solve(&e)
        });
        Some(Self {
            n,
            lu,
            cols: columns.concat(),
        })
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    #[inline]
    fn at(&self, row: usize, col: usize) -> f64 {
        self.cols[col * self.n + row]
    }
}

/// Expected passage times from `s0` to every state.
#[derive(Clone, Debug)]
pub struct ExpectedPassage {
    /// `mu[j] = E[H_{s0, j}]`, or the sentinel when unreachable.
    pub mu: Vec<f64>,
    pub unreachable: Vec<bool>,
    /// Solution vectors: `times[j * n + s] = E[H_{s, j}]` (infinite where
    /// undefined).
    times: Vec<f64>,
    n: usize,
}

impl ExpectedPassage {
    /// `E[H_{s, target}]` for every `s`.
    pub fn to_target(&self, target: usize) -> &[f64] {
        &self.times[target * self.n..(target + 1) * self.n]
    }

    pub fn unreachable_count(&self) -> usize {
        self.unreachable.iter().filter(|u| **u).count()
    }
}

/// Expected PPTs under `policy`, with row laws evaluated at the slots
/// nearest `prev_mu` (the previous iteration's estimates).
pub fn expected_ppt(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    prev_mu: &[f64],
    opts: &MomentOptions,
    workers: &Workers,
) -> Result<ExpectedPassage> {
    opts.validate()?;
    check_len(model, prev_mu)?;
    let chain = PolicyChain::build(model, policy, prev_mu)?;
    Ok(expected_on_chain(
        &chain,
        s0.0,
        opts,
        unreachable_sentinel(model),
        workers,
    ))
}

/// [`expected_ppt`] on an explicit chain.
pub fn expected_on_chain(
    chain: &PolicyChain,
    s0: usize,
    opts: &MomentOptions,
    sentinel: f64,
    workers: &Workers,
) -> ExpectedPassage {
    let n = chain.len();
    let alpha = opts.alpha;
    let costs = chain.step_costs();
    let reach = chain.forward_reachable(s0);
    let inverse = if opts.rank_one() {
        Inverse::new(chain, alpha, workers)
    } else {
        None
    };
    let g = inverse.as_ref().map(|inv| inv.lu.solve(&costs));

    let per_target: Vec<Option<Vec<f64>>> = workers.map(n, |j| {
        if j == s0 {
            let mut v = vec![f64::INFINITY; n];
            v[j] = 0.0;
            return Some(v);
        }
        if !reach[j] {
            return None;
        }
        match (&inverse, &g) {
            (Some(inv), Some(g)) => {
                let gj = inv.col(j);
                let cj = costs[j];
                let (mut p_gj, mut p_g) = (0.0, 0.0);
                for e in chain.row(j) {
                    p_gj += e.prob * gj[e.to];
                    p_g += e.prob * g[e.to];
                }
                let denom = 1.0 + alpha * p_gj;
                if denom.abs() < 1e-14 {
                    return None;
                }
                let coef = alpha * (p_g - cj * p_gj) / denom;
                let mut v: Vec<f64> = (0..n).map(|k| g[k] - (cj + coef) * gj[k]).collect();
                v[j] = 0.0;
                Some(v)
            }
            _ => {
                let unknown = unknown_set(chain, j, alpha);
                if !unknown[s0] {
                    return None;
                }
                let mut rhs = costs.clone();
                rhs[j] = 0.0;
                solve_pinned(chain, j, alpha, &rhs, &unknown)
            }
        }
    });

    let mut mu = vec![sentinel; n];
    let mut unreachable = vec![false; n];
    let mut times = Vec::with_capacity(n * n);
    for (j, sol) in per_target.into_iter().enumerate() {
        match sol {
            Some(v) if v[s0].is_finite() => {
                mu[j] = v[s0];
                times.extend(v);
            }
            _ => {
                unreachable[j] = true;
                times.extend(std::iter::repeat_n(f64::INFINITY, n));
            }
        }
    }
    mu[s0] = 0.0;
    ExpectedPassage {
        mu,
        unreachable,
        times,
        n,
    }
}

/// PPT variances from `s0`.
#[derive(Clone, Debug)]
pub struct PassageVariance {
    pub var: Vec<f64>,
    pub unreachable: Vec<bool>,
    /// Number of targets whose raw solution was negative and got clamped.
    pub negative_clamped: usize,
    /// Smallest raw (pre-clamp) variance over reachable targets.
    pub min_raw: f64,
}

/// Variances of the PPTs under `policy`, with row laws evaluated at the
/// slots nearest `expected.mu`.
pub fn ppt_variance(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    expected: &ExpectedPassage,
    opts: &MomentOptions,
    workers: &Workers,
) -> Result<PassageVariance> {
    opts.validate()?;
    check_len(model, &expected.mu)?;
    let chain = PolicyChain::build(model, policy, &expected.mu)?;
    Ok(variance_on_chain(&chain, s0.0, expected, opts, workers))
}

/// [`ppt_variance`] on an explicit chain.
pub fn variance_on_chain(
    chain: &PolicyChain,
    s0: usize,
    expected: &ExpectedPassage,
    opts: &MomentOptions,
    workers: &Workers,
) -> PassageVariance {
    let n = chain.len();
    let alpha = opts.alpha;
    let inverse = if opts.rank_one() {
        Inverse::new(chain, alpha, workers)
    } else {
        None
    };
    // Row-major copy of the inverse for row-times-vector products.
    let rows_major: Option<Vec<f64>> = inverse.as_ref().map(|inv| {
        let mut m = vec![0.0; n * n];
        for j in 0..n {
            for (k, v) in inv.col(j).iter().enumerate() {
                m[k * n + j] = *v;
            }
        }
        m
    });

    let raw: Vec<Option<f64>> = workers.map(n, |j| {
        if j == s0 {
            return Some(0.0);
        }
        if expected.unreachable[j] {
            return None;
        }
        let times = expected.to_target(j);
        let unknown = match inverse {
            Some(_) => None,
            None => {
                let u = unknown_set(chain, j, alpha);
                if !u[s0] {
                    return None;
                }
                Some(u)
            }
        };
        // Conditional-mean spread term of every row.
        let mut rhs = vec![0.0; n];
        for s in 0..n {
            if s == j || unknown.as_ref().is_some_and(|u| !u[s]) {
                continue;
            }
            let mut acc = 0.0;
            for e in chain.row(s) {
                let dev = e.travel_time + times[e.to] - times[s];
                acc += e.prob * dev * dev;
            }
            if !acc.is_finite() {
                return None;
            }
            rhs[s] = acc;
        }
        match (&inverse, &rows_major) {
            (Some(inv), Some(rm)) => {
                let dot_row = |k: usize| -> f64 {
                    rm[k * n..(k + 1) * n]
                        .iter()
                        .zip(&rhs)
                        .map(|(a, b)| a * b)
                        .sum()
                };
                let (mut p_gj, mut p_gd) = (0.0, 0.0);
                for e in chain.row(j) {
                    p_gj += e.prob * inv.at(e.to, j);
                    p_gd += e.prob * dot_row(e.to);
                }
                let denom = 1.0 + alpha * p_gj;
                if denom.abs() < 1e-14 {
                    return None;
                }
                Some(dot_row(s0) - inv.at(s0, j) * alpha * p_gd / denom)
            }
            _ => solve_pinned(chain, j, alpha, &rhs, unknown.as_ref().unwrap()).map(|v| v[s0]),
        }
    });

    let mut var = vec![0.0; n];
    let mut unreachable = vec![false; n];
    let mut negative_clamped = 0;
    let mut min_raw = f64::INFINITY;
    for (j, r) in raw.into_iter().enumerate() {
        match r {
            Some(v) if v.is_finite() => {
                min_raw = min_raw.min(v);
                if v < 0.0 {
                    negative_clamped += 1;
                }
                var[j] = v.max(0.0);
            }
            _ => unreachable[j] = true,
        }
    }
    var[s0] = 0.0;
    PassageVariance {
        var,
        unreachable,
        negative_clamped,
        min_raw,
    }
}

fn check_len(model: &TvmdpModel, v: &[f64]) -> Result<()> {
    if v.len() != model.state_count() {
        return Err(Error::InvalidArgument(format!(
            "expected {} per-state times, got {}",
            model.state_count(),
            v.len()
        )));
    }
    Ok(())
}

/// Mean and variance of the PPT from `s0` to every state.
#[derive(Clone, Debug, PartialEq)]
pub struct PptMoments {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub alpha: f64,
    pub unreachable: Vec<bool>,
    pub negative_clamped: usize,
    pub min_raw_variance: f64,
}

impl PptMoments {
    pub fn sigma(&self, s: StateId) -> f64 {
        self.var[s.0].sqrt()
    }

    pub fn unreachable_count(&self) -> usize {
        self.unreachable.iter().filter(|u| **u).count()
    }

    /// Writes `s,mu,sigma2,unreachable` rows after a `#` comment line.
    pub fn write_csv(&self, path: &Path, header_comment: &str) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = format!("# {header_comment}\ns,mu,sigma2,unreachable\n");
        for s in 0..self.mu.len() {
            text.push_str(&format!(
                "{},{},{},{}\n",
                s, self.mu[s], self.var[s], self.unreachable[s] as u8
            ));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Runs [`expected_ppt`] then [`ppt_variance`].
pub fn compute_moments(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    prev_mu: &[f64],
    opts: &MomentOptions,
    workers: &Workers,
) -> Result<(PptMoments, ExpectedPassage)> {
    let expected = expected_ppt(model, policy, s0, prev_mu, opts, workers)?;
    let variance = ppt_variance(model, policy, s0, &expected, opts, workers)?;
    let unreachable: Vec<bool> = expected
        .unreachable
        .iter()
        .zip(&variance.unreachable)
        .map(|(a, b)| *a || *b)
        .collect();
    let sentinel = unreachable_sentinel(model);
    let mu = expected
        .mu
        .iter()
        .zip(&unreachable)
        .map(|(m, u)| if *u { sentinel } else { *m })
        .collect();
    let var = variance
        .var
        .iter()
        .zip(&unreachable)
        .map(|(v, u)| if *u { 0.0 } else { *v })
        .collect();
    Ok((
        PptMoments {
            mu,
            var,
            alpha: opts.alpha,
            unreachable,
            negative_clamped: variance.negative_clamped,
            min_raw_variance: variance.min_raw,
        },
        expected,
    ))
}
