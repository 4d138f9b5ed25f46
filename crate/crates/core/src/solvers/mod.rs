//! Value-iteration solvers for time-varying MDPs.
//!
//! * [`solve_full_st_vi`]: value iteration over every `(state, slot)` pair.
//! * [`solve_expected_ppt_vi`]: value iteration on the spatial grid with the
//!   law of each state frozen at its expected arrival time.
//! * [`solve_reachable_vi`]: value iteration restricted to the reachable
//!   space, rebuilt each outer iteration from passage-time moments.
//! * [`solve_non_iterative`]: a single reachable-space pass solved to
//!   convergence.

mod expected;
mod full;
mod reachable;
mod reconstruct;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use expected::{solve_expected_ppt_vi, ExpectedSolution};
pub use full::solve_full_st_vi;
pub use reachable::{map_action, solve_non_iterative, solve_reachable_vi};
pub use reconstruct::{reconstruct, ReconstructedLaw};

use crate::error::{Error, Result};
use crate::model::{Heading, Policy, StateId, TvmdpModel, ValueTable};
use crate::par::Workers;
use crate::ppt::{MomentOptions, ReachableSpace, SolveStrategy};

/// Q-values within this distance of the best count as ties; ties go to
/// the lowest heading index.
pub const TIE_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Convergence threshold on the max-norm value change.
    pub tol: f64,
    /// Cap on value-iteration sweeps within one solve.
    pub max_sweeps: usize,
    /// Cap on outer iterations of the expected-time solver.
    pub max_iterations: usize,
    /// Expected-time iterations used to seed the reachable-space solver.
    pub burn_in: usize,
    /// Outer iterations of the reachable-space solver.
    pub outer: usize,
    /// Restricted sweeps per outer iteration.
    pub inner: usize,
    /// Width of the reachable window in standard deviations.
    pub m_r: f64,
    /// Discount inside the passage-time systems.
    pub alpha: f64,
    pub strategy: SolveStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_sweeps: 10_000,
            max_iterations: 100,
            burn_in: 3,
            outer: 20,
            inner: 30,
            m_r: 2.0,
            alpha: 0.99,
            strategy: SolveStrategy::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_sweeps == 0 || self.max_iterations == 0 {
            return bad("max_sweeps and max_iterations must be at least 1".into());
        }
        if self.burn_in == 0 || self.outer == 0 || self.inner == 0 {
            return bad("burn_in, outer and inner must be at least 1".into());
        }
        if !(self.m_r >= 1.0 && self.m_r.is_finite()) {
            return bad(format!("m_r must be >= 1, got {}", self.m_r));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        Ok(())
    }

    pub fn moment_options(&self) -> MomentOptions {
        MomentOptions {
            alpha: self.alpha,
            strategy: self.strategy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    FullSt,
    Alg1,
    Alg2,
    NonIter,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::FullSt,
        SolverKind::Alg1,
        SolverKind::Alg2,
        SolverKind::NonIter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::FullSt => "full_st",
            SolverKind::Alg1 => "alg1",
            SolverKind::Alg2 => "alg2",
            SolverKind::NonIter => "non_iter",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SolverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown solver '{s}'")))
    }
}

/// Timing and size of one outer iteration. Full-space value iteration has a
/// single outer iteration covering the whole solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seconds: f64,
    pub moment_seconds: f64,
    pub vi_seconds: f64,
    pub sweeps: usize,
    /// Max-norm value change at the end of the iteration.
    pub delta: f64,
    /// Reachable-space size, when one was built.
    pub reachable_size: Option<usize>,
    /// Distinct state-time pairs that were members in any iteration so far.
    pub cumulative_visited: Option<usize>,
    /// Actions changed on reachable members relative to the previous policy.
    pub policy_changes: usize,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub kind: SolverKind,
    pub policy: Policy,
    pub values: ValueTable,
    /// Last reachable space (reachable-space solvers only).
    pub reachable: Option<ReachableSpace>,
    pub iterations: Vec<IterationRecord>,
    /// Seconds spent in the expected-time burn-in.
    pub burn_in_seconds: f64,
    pub converged: bool,
    /// Outer iterations that fell back to full-space sweeps.
    pub fallback_iterations: usize,
}

impl Solution {
    /// Mean wall clock per outer iteration.
    pub fn seconds_per_iteration(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().map(|r| r.seconds).sum::<f64>() / self.iterations.len() as f64
    }
}

/// Runs the selected solver from start state `s0`.
pub fn solve(
    model: &TvmdpModel,
    kind: SolverKind,
    s0: StateId,
    cfg: &SolverConfig,
    workers: &Workers,
) -> Result<Solution> {
    match kind {
        SolverKind::FullSt => solve_full_st_vi(model, cfg, workers),
        SolverKind::Alg1 => {
            solve_expected_ppt_vi(model, s0, cfg, workers).map(ExpectedSolution::into_solution)
        }
        SolverKind::Alg2 => solve_reachable_vi(model, s0, cfg, workers),
        SolverKind::NonIter => solve_non_iterative(model, s0, cfg, workers),
    }
}

/// Picks the best action; ties within [`TIE_EPS`] go to the lowest index.
pub(crate) fn argmax(q: &[(Heading, f64)]) -> Option<(Heading, f64)> {
    let best = q.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    q.iter()
        .filter(|x| x.1 >= best - TIE_EPS)
        .min_by_key(|x| x.0.index())
        .copied()
}

/// Greedy action and value of `(s, slot)` against a spatiotemporal value
/// table laid out as `values[state * slots + slot]`.
pub(crate) fn greedy_st(
    model: &TvmdpModel,
    values: &[f64],
    s: StateId,
    slot: usize,
) -> Result<Option<(Heading, f64)>> {
    let slots = model.slot_count();
    let gamma = model.discount();
    let mut q = Vec::with_capacity(8);
    for a in model.feasible_actions(s, slot).iter() {
        let law = model.transition_law(s, slot, a)?;
        let ev: f64 = law
            .iter()
            .map(|t| t.prob * values[t.state.0 * slots + t.slot])
            .sum();
        q.push((a, model.reward(s, slot, a) + gamma * ev));
    }
    Ok(argmax(&q))
}

/// Value table with terminal states set to their values and zero elsewhere.
pub(crate) fn initial_st_values(model: &TvmdpModel) -> Vec<f64> {
    let slots = model.slot_count();
    let mut v = vec![0.0; model.state_count() * slots];
    for s in model.grid().states() {
        if let Some(x) = model.terminal_value(s) {
            v[s.0 * slots..(s.0 + 1) * slots].fill(x);
        }
    }
    v
}

/// Writes `s,t_slot,action` for every state and slot.
pub fn write_policy_csv(
    policy: &Policy,
    slots: usize,
    path: &Path,
    header_comment: &str,
) -> Result<()> {
    let mut w = crate::harness::csv_writer(path, header_comment)?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["s", "t_slot", "action"]).map_err(io)?;
    for s in 0..policy.state_count() {
        for k in 0..slots {
            let a = policy.action(StateId(s), k);
            w.write_record([s.to_string(), k.to_string(), a.name().to_string()])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a policy written by [`write_policy_csv`].
pub fn read_policy_csv(path: &Path, states: usize, slots: usize) -> Result<Policy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut actions: Vec<Option<Heading>> = vec![None; states * slots];
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        message,
    };
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        if !header_seen {
            if raw != "s,t_slot,action" {
                return Err(parse_err(
                    line,
                    format!("expected header 's,t_slot,action', got '{raw}'"),
                ));
            }
            header_seen = true;
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected 3 columns, got {}", cols.len()),
            ));
        }
        let s: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad state '{}'", cols[0])))?;
        let k: usize = cols[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad slot '{}'", cols[1])))?;
        let a: Heading = cols[2]
            .parse()
            .map_err(|_| parse_err(line, format!("bad action '{}'", cols[2])))?;
        if s >= states || k >= slots {
            return Err(parse_err(
                line,
                format!("entry ({s}, {k}) outside {states} states x {slots} slots"),
            ));
        }
        actions[s * slots + k] = Some(a);
    }
    let missing = actions.iter().position(|a| a.is_none());
    if let Some(i) = missing {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("no action for state {} slot {}", i / slots, i % slots),
        });
    }
    Ok(Policy::SpatioTemporal {
        slots,
        actions: actions.into_iter().map(|a| a.unwrap()).collect(),
    })
}

/// Writes `s,t_slot,value` for every state and slot.
pub fn write_value_csv(
    values: &ValueTable,
    slots: usize,
    path: &Path,
    header_comment: &str,
) -> Result<()> {
    let mut w = crate::harness::csv_writer(path, header_comment)?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["s", "t_slot", "value"]).map_err(io)?;
    for s in 0..values.state_count() {
        for k in 0..slots {
            w.write_record([
                s.to_string(),
                k.to_string(),
                values.get(StateId(s), k).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
