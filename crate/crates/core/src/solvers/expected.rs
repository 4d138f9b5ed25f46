use std::time::Instant;

use super::{argmax, IterationRecord, Solution, SolverConfig, SolverKind};
use crate::error::Result;
use crate::model::{Heading, Policy, StateId, TvmdpModel, ValueTable};
use crate::par::Workers;
use crate::ppt::expected_ppt;

/// Result of the expected-time solver.
#[derive(Clone, Debug)]
pub struct ExpectedSolution {
    pub policy: Policy,
    pub values: Vec<f64>,
    /// Expected passage times from the start under the final policy, used
    /// as the freeze times of the next iteration.
    pub mu: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

impl ExpectedSolution {
    pub fn into_solution(self) -> Solution {
        Solution {
            kind: SolverKind::Alg1,
            policy: self.policy,
            values: ValueTable::Spatial(self.values),
            reachable: None,
            iterations: self.iterations,
            burn_in_seconds: 0.0,
            converged: self.converged,
            fallback_iterations: 0,
        }
    }
}

/// Value iteration on the spatial grid with each state's law frozen at the
/// slot nearest its expected arrival time.
///
/// Each outer iteration solves the frozen spatial problem to convergence,
/// then refreshes the expected passage times under the new policy. Stops
/// when the outer value change drops below `cfg.tol` or after
/// `cfg.max_iterations` iterations.
pub fn solve_expected_ppt_vi(
    model: &TvmdpModel,
    s0: StateId,
    cfg: &SolverConfig,
    workers: &Workers,
) -> Result<ExpectedSolution> {
    run(model, s0, cfg, cfg.max_iterations, workers)
}

pub(super) fn run(
    model: &TvmdpModel,
    s0: StateId,
    cfg: &SolverConfig,
    max_iterations: usize,
    workers: &Workers,
) -> Result<ExpectedSolution> {
    cfg.validate()?;
    let n = model.state_count();
    let opts = cfg.moment_options();
    let mut values: Vec<f64> = (0..n)
        .map(|s| model.terminal_value(StateId(s)).unwrap_or(0.0))
        .collect();
    let mut mu = vec![0.0; n];
    let mut policy = Policy::spatial(
        (0..n)
            .map(|s| {
                model
                    .feasible_actions(StateId(s), 0)
                    .first()
                    .unwrap_or(Heading::N)
            })
            .collect(),
    );
    let mut iterations = Vec::new();
    let mut converged = false;
    for it in 0..max_iterations {
        let start = Instant::now();
        let frozen = FrozenProblem::build(model, &mu, workers)?;
        let (new_values, sweeps) = frozen.solve(model, &values, cfg.tol, cfg.max_sweeps, workers);
        let delta = max_change(&values, &new_values);
        values = new_values;
        let next = frozen.greedy(model, &values, &policy);
        let changes = count_changes(&policy, &next, n);
        policy = next;
        let vi_seconds = start.elapsed().as_secs_f64();
        let m0 = Instant::now();
        mu = expected_ppt(model, &policy, s0, &mu, &opts, workers)?.mu;
        let moment_seconds = m0.elapsed().as_secs_f64();
        iterations.push(IterationRecord {
            iteration: it,
            seconds: start.elapsed().as_secs_f64(),
            moment_seconds,
            vi_seconds,
            sweeps,
            delta,
            reachable_size: None,
            cumulative_visited: None,
            policy_changes: changes,
        });
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(ExpectedSolution {
        policy,
        values,
        mu,
        iterations,
        converged,
    })
}

fn max_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn count_changes(a: &Policy, b: &Policy, n: usize) -> usize {
    (0..n)
        .filter(|&s| a.action(StateId(s), 0) != b.action(StateId(s), 0))
        .count()
}

/// Spatial rows of every feasible action, each evaluated at one slot per
/// state.
struct FrozenProblem {
    /// Per state: `(action, reward, [(successor, prob)])`.
    rows: Vec<Vec<(Heading, f64, Vec<(usize, f64)>)>>,
}

impl FrozenProblem {
    fn build(model: &TvmdpModel, freeze_times: &[f64], workers: &Workers) -> Result<Self> {
        let tg = model.time_grid();
        let rows = workers.map(model.state_count(), |s| -> Result<_> {
            let s = StateId(s);
            if model.is_terminal(s) {
                return Ok(Vec::new());
            }
            let slot = tg.snap(freeze_times[s.0]);
            let mut out = Vec::new();
            for a in model.feasible_actions(s, slot).iter() {
                let law = model.transition_law(s, slot, a)?;
                let mut succ: Vec<(usize, f64)> = Vec::with_capacity(law.len());
                for t in law.iter() {
                    match succ.iter_mut().find(|e| e.0 == t.state.0) {
                        Some(e) => e.1 += t.prob,
                        None => succ.push((t.state.0, t.prob)),
                    }
                }
                out.push((a, model.reward(s, slot, a), succ));
            }
            Ok(out)
        });
        Ok(Self {
            rows: rows.into_iter().collect::<Result<_>>()?,
        })
    }

    fn q_values(&self, gamma: f64, values: &[f64], s: usize) -> Vec<(Heading, f64)> {
        self.rows[s]
            .iter()
            .map(|(a, r, succ)| {
                (
                    *a,
                    r + gamma * succ.iter().map(|(j, p)| p * values[*j]).sum::<f64>(),
                )
            })
            .collect()
    }

    /// Jacobi sweeps from `init` until the change drops below `tol`.
    fn solve(
        &self,
        model: &TvmdpModel,
        init: &[f64],
        tol: f64,
        max_sweeps: usize,
        workers: &Workers,
    ) -> (Vec<f64>, usize) {
        let gamma = model.discount();
        let mut v = init.to_vec();
        for sweep in 1..=max_sweeps {
            let next: Vec<f64> = workers.map(v.len(), |s| {
                if self.rows[s].is_empty() {
                    v[s]
                } else {
                    argmax(&self.q_values(gamma, &v, s)).map_or(v[s], |x| x.1)
                }
            });
            let delta = max_change(&v, &next);
            v = next;
            if delta < tol {
                return (v, sweep);
            }
        }
        (v, max_sweeps)
    }

    fn greedy(&self, model: &TvmdpModel, values: &[f64], prev: &Policy) -> Policy {
        let gamma = model.discount();
        Policy::spatial(
            (0..values.len())
                .map(|s| {
                    argmax(&self.q_values(gamma, values, s))
                        .map_or_else(|| prev.action(StateId(s), 0), |x| x.0)
                })
                .collect(),
        )
    }
}
