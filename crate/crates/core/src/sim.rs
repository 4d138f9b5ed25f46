//! Policy rollouts in the stochastic environment and summary statistics.
//!
//! Rollouts always sample the model's own transition law. Each rollout
//! draws from a ChaCha stream selected by `(seed, stream)`, so batches are
//! reproducible and independent of worker count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Heading, Policy, StateId, Terminal, TvmdpModel};
use crate::par::Workers;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: StateId,
    pub slot: usize,
    pub action: Heading,
    pub reward: f64,
    /// Local transition time of the move taken from this step.
    pub travel_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Goal,
    Obstacle,
    HorizonExhausted,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Goal => "goal",
            Outcome::Obstacle => "obstacle",
            Outcome::HorizonExhausted => "horizon_exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub steps: Vec<Step>,
    /// State and slot after the last step.
    pub final_state: StateId,
    pub final_slot: usize,
    pub outcome: Outcome,
    pub elapsed_time: f64,
    /// Euclidean distance travelled, in grid units of `cell_size`.
    pub trajectory_length: f64,
    /// `sum_k gamma^k step_k + gamma^K terminal_value`.
    pub discounted_return: f64,
}

impl Rollout {
    pub fn transitions(&self) -> usize {
        self.steps.len()
    }

    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Goal
    }

    /// Visited `(state, slot)` pairs including the final one.
    pub fn path(&self) -> impl Iterator<Item = (StateId, usize)> + '_ {
        self.steps
            .iter()
            .map(|s| (s.state, s.slot))
            .chain(std::iter::once((self.final_state, self.final_slot)))
    }
}

/// Default step cap: twice the number of slots.
pub fn default_max_steps(model: &TvmdpModel) -> usize {
    2 * model.slot_count()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs `policy` from `(s0, slot 0)` until absorption or `max_steps`
/// transitions.
pub fn rollout(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    seed: u64,
    stream: u64,
    max_steps: usize,
) -> Result<Rollout> {
    if max_steps == 0 {
        return Err(Error::InvalidArgument(
            "max_steps must be at least 1".into(),
        ));
    }
    if s0.0 >= model.state_count() {
        return Err(Error::InvalidArgument(format!(
            "start state {s0} is off the grid"
        )));
    }
    let mut rng = rng_for(seed, stream);
    let gamma = model.discount();
    let mut state = s0;
    let mut slot = 0;
    let mut steps = Vec::new();
    let mut elapsed = 0.0;
    let mut length = 0.0;
    let mut ret = 0.0;
    let mut discount = 1.0;
    let outcome = loop {
        match model.terminal(state) {
            Some(term) => {
                ret += discount * model.terminal_value(state).unwrap_or(0.0);
                break match term {
                    Terminal::Goal => Outcome::Goal,
                    Terminal::Obstacle => Outcome::Obstacle,
                };
            }
            None if steps.len() >= max_steps => break Outcome::HorizonExhausted,
            None => {}
        }
        let action = policy.action(state, slot);
        let law = model.transition_law(state, slot, action)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = law[law.len() - 1];
        for t in law.iter() {
            acc += t.prob;
            if u < acc {
                pick = *t;
                break;
            }
        }
        let reward = model.reward(state, slot, action);
        ret += discount * reward;
        discount *= gamma;
        steps.push(Step {
            state,
            slot,
            action,
            reward,
            travel_time: pick.travel_time,
        });
        elapsed += pick.travel_time;
        length += model.grid().distance(state, pick.state);
        state = pick.state;
        slot = pick.slot;
    };
    Ok(Rollout {
        steps,
        final_state: state,
        final_slot: slot,
        outcome,
        elapsed_time: elapsed,
        trajectory_length: length,
        discounted_return: ret,
    })
}

/// `n` rollouts on streams `0..n`, returned in stream order.
pub fn rollouts(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    seed: u64,
    n: usize,
    max_steps: usize,
    workers: &Workers,
) -> Result<Vec<Rollout>> {
    workers
        .map(n, |i| rollout(model, policy, s0, seed, i as u64, max_steps))
        .into_iter()
        .collect()
}

/// Monte Carlo estimate of the discounted return from `(s0, slot 0)` over
/// `n` rollouts of at most [`default_max_steps`] transitions.
pub fn evaluate_policy_return(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    n: usize,
    seed: u64,
    workers: &Workers,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one rollout".into()));
    }
    let runs = rollouts(
        model,
        policy,
        s0,
        seed,
        n,
        default_max_steps(model),
        workers,
    )?;
    Ok(runs.iter().map(|r| r.discounted_return).sum::<f64>() / n as f64)
}

/// Running mean and variance of first-visit times for one state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VisitStats {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl VisitStats {
    /// Standard error of the mean.
    pub fn mean_se(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Empirical first-visit (passage) times from `s0` to every state over `n`
/// rollouts: the elapsed time at the first arrival in each state.
pub fn first_visit_times(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    seed: u64,
    n: usize,
    max_steps: usize,
    workers: &Workers,
) -> Result<Vec<VisitStats>> {
    let states = model.state_count();
    let per_run = workers.map(n, |i| -> Result<Vec<f64>> {
        let r = rollout(model, policy, s0, seed, i as u64, max_steps)?;
        let mut first = vec![f64::NAN; states];
        let mut t = 0.0;
        for (k, (s, _)) in r.path().enumerate() {
            if first[s.0].is_nan() {
                first[s.0] = t;
            }
            if let Some(step) = r.steps.get(k) {
                t += step.travel_time;
            }
        }
        Ok(first)
    });
    let mut sum = vec![0.0; states];
    let mut sum_sq = vec![0.0; states];
    let mut count = vec![0usize; states];
    for run in per_run {
        for (s, t) in run?.into_iter().enumerate() {
            if !t.is_nan() {
                sum[s] += t;
                sum_sq[s] += t * t;
                count[s] += 1;
            }
        }
    }
    Ok((0..states)
        .map(|s| {
            let c = count[s];
            if c == 0 {
                return VisitStats::default();
            }
            let mean = sum[s] / c as f64;
            let variance = if c > 1 {
                ((sum_sq[s] - c as f64 * mean * mean) / (c as f64 - 1.0)).max(0.0)
            } else {
                0.0
            };
            VisitStats {
                count: c,
                mean,
                variance,
            }
        })
        .collect())
}

/// Summary of one policy over a batch of rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStats {
    pub name: String,
    pub rollouts: usize,
    pub success_rate: f64,
    /// Transitions and lengths are averaged over successful runs only.
    pub mean_transitions: f64,
    pub sd_transitions: f64,
    pub mean_length: f64,
    pub sd_length: f64,
    pub mean_elapsed: f64,
    /// Discounted return averaged over all runs.
    pub mean_return: f64,
    pub sd_return: f64,
    /// Per-rollout transition counts, in stream order (failed runs included).
    pub transitions: Vec<usize>,
    pub successes: Vec<bool>,
    pub returns: Vec<f64>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl PolicyStats {
    pub fn from_rollouts(name: &str, runs: &[Rollout]) -> Self {
        let ok: Vec<&Rollout> = runs.iter().filter(|r| r.succeeded()).collect();
        let trans: Vec<f64> = ok.iter().map(|r| r.transitions() as f64).collect();
        let lens: Vec<f64> = ok.iter().map(|r| r.trajectory_length).collect();
        let elapsed: Vec<f64> = ok.iter().map(|r| r.elapsed_time).collect();
        let returns: Vec<f64> = runs.iter().map(|r| r.discounted_return).collect();
        let (mean_transitions, sd_transitions) = mean_sd(&trans);
        let (mean_length, sd_length) = mean_sd(&lens);
        let (mean_return, sd_return) = mean_sd(&returns);
        Self {
            name: name.to_string(),
            rollouts: runs.len(),
            success_rate: ok.len() as f64 / runs.len().max(1) as f64,
            mean_transitions,
            sd_transitions,
            mean_length,
            sd_length,
            mean_elapsed: mean_sd(&elapsed).0,
            mean_return,
            sd_return,
            transitions: runs.iter().map(|r| r.transitions()).collect(),
            successes: runs.iter().map(|r| r.succeeded()).collect(),
            returns,
        }
    }
}

/// Evaluates each named policy on the same `n` rollout streams.
pub fn benchmark(
    model: &TvmdpModel,
    policies: &[(String, Policy)],
    s0: StateId,
    n: usize,
    seed: u64,
    max_steps: usize,
    workers: &Workers,
) -> Result<Vec<PolicyStats>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "benchmark needs at least one rollout".into(),
        ));
    }
    policies
        .iter()
        .map(|(name, p)| {
            let runs = rollouts(model, p, s0, seed, n, max_steps, workers)?;
            Ok(PolicyStats::from_rollouts(name, &runs))
        })
        .collect()
}

/// Writes one row per step and a final row per rollout:
/// `rollout,step,x,y,t,action,outcome`.
pub fn write_traces(
    model: &TvmdpModel,
    runs: &[Rollout],
    path: &Path,
    header_comment: &str,
) -> Result<()> {
    let grid = model.grid();
    let mut w = crate::harness::csv_writer(path, header_comment)?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["rollout", "step", "x", "y", "t", "action", "outcome"])
        .map_err(io)?;
    for (i, r) in runs.iter().enumerate() {
        let mut t = 0.0;
        let rows = r
            .steps
            .iter()
            .map(|s| (s.state, Some(s.action), s.travel_time))
            .chain(std::iter::once((r.final_state, None, 0.0)));
        for (k, (s, a, h)) in rows.enumerate() {
            let (x, y) = grid.position(s);
            let action = a.map_or("", |a| a.name());
            let outcome = if a.is_none() { r.outcome.name() } else { "" };
            w.write_record([
                i.to_string(),
                k.to_string(),
                x.to_string(),
                y.to_string(),
                t.to_string(),
                action.to_string(),
                outcome.to_string(),
            ])
            .map_err(io)?;
            t += h;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
