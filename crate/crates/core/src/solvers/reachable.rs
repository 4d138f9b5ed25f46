use std::time::Instant;

use super::expected;
use super::full;
use super::reconstruct::{reconstruct, ReconstructedLaw};
use super::{argmax, greedy_st, IterationRecord, Solution, SolverConfig, SolverKind};
use crate::error::Result;
use crate::model::{Grid, Heading, Policy, StateId, TvmdpModel, ValueTable};
use crate::par::Workers;
use crate::ppt::{compute_moments, ReachableSpace};

/// Value iteration restricted to the reachable space.
///
/// A short expected-time burn-in (`cfg.burn_in` iterations) gives a
/// time-independent policy that is copied to every slot. Each outer
/// iteration then computes passage-time moments under the current policy,
/// builds the reachable space (goal and obstacles are members at every
/// slot), reconstructs the law on it and runs `cfg.inner` sweeps over its
/// members, warm-started from the previous values. Actions at non-members
/// are copied from the nearest member at the same slot. The loop stops
/// when no member's action changes or after `cfg.outer` iterations.
pub fn solve_reachable_vi(
    model: &TvmdpModel,
    s0: StateId,
    cfg: &SolverConfig,
    workers: &Workers,
) -> Result<Solution> {
    run(
        model,
        s0,
        cfg,
        cfg.outer,
        InnerStop::Sweeps(cfg.inner),
        SolverKind::Alg2,
        workers,
    )
}

/// One reachable-space pass with the restricted problem solved to
/// convergence.
pub fn solve_non_iterative(
    model: &TvmdpModel,
    s0: StateId,
    cfg: &SolverConfig,
    workers: &Workers,
) -> Result<Solution> {
    run(
        model,
        s0,
        cfg,
        1,
        InnerStop::Converge,
        SolverKind::NonIter,
        workers,
    )
}

#[derive(Clone, Copy)]
enum InnerStop {
    Sweeps(usize),
    Converge,
}

fn run(
    model: &TvmdpModel,
    s0: StateId,
    cfg: &SolverConfig,
    outer: usize,
    inner: InnerStop,
    kind: SolverKind,
    workers: &Workers,
) -> Result<Solution> {
    cfg.validate()?;
    let n = model.state_count();
    let slots = model.slot_count();
    let tg = model.time_grid();
    let opts = cfg.moment_options();

    let burn_start = Instant::now();
    let burn = expected::run(model, s0, cfg, cfg.burn_in, workers)?;
    let burn_in_seconds = burn_start.elapsed().as_secs_f64();

    let mut policy = burn.policy.replicate(slots);
    let mut values: Vec<f64> = burn
        .values
        .iter()
        .flat_map(|v| std::iter::repeat_n(*v, slots))
        .collect();
    let mut prev_mu = burn.mu;
    let mut visited = vec![false; n * slots];
    let mut visited_count = 0;
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut fallback_iterations = 0;
    let mut last_rs = None;

    for j in 0..outer {
        let start = Instant::now();
        let (moments, _) = compute_moments(model, &policy, s0, &prev_mu, &opts, workers)?;
        let moment_seconds = start.elapsed().as_secs_f64();
        prev_mu = moments.mu.clone();
        let mut rs = ReachableSpace::from_moments(&moments, cfg.m_r, tg)?;
        for s in model.grid().states().filter(|s| model.is_terminal(*s)) {
            rs.include_always(s);
        }
        for (s, k) in rs.members() {
            if !visited[s.0 * slots + k] {
                visited[s.0 * slots + k] = true;
                visited_count += 1;
            }
        }

        let vi_start = Instant::now();
        let by_slot = eligible_by_slot(model, &rs);
        let limit = match inner {
            InnerStop::Sweeps(i) => i,
            InnerStop::Converge => cfg.max_sweeps,
        };
        let mut sweeps = 0;
        let mut delta = f64::INFINITY;
        let mut next = policy.clone();
        let changes;
        if by_slot.iter().all(|v| v.is_empty()) {
            // Nothing but absorbing states is reachable: sweep the full space.
            fallback_iterations += 1;
            while sweeps < limit {
                delta = full::sweep(model, &mut values, workers)?;
                sweeps += 1;
                if matches!(inner, InnerStop::Converge) && delta < cfg.tol {
                    break;
                }
            }
            for k in 0..slots {
                for s in model.grid().states() {
                    if let Some((a, _)) = greedy_st(model, &values, s, k)? {
                        next.set(s, k, a);
                    }
                }
            }
            changes = count_changes(&policy, &next, n, slots, |_, _| true);
        } else {
            let law = reconstruct(model, &rs, workers)?;
            while sweeps < limit {
                delta = restricted_sweep(model, &law, &by_slot, &mut values, workers);
                sweeps += 1;
                if matches!(inner, InnerStop::Converge) && delta < cfg.tol {
                    break;
                }
            }
            for (k, members) in by_slot.iter().enumerate() {
                let picks = workers.map(members.len(), |i| {
                    greedy_restricted(model, &law, &values, members[i], k)
                });
                for (s, pick) in members.iter().zip(picks) {
                    if let Some((a, _)) = pick {
                        next.set(*s, k, a);
                    }
                }
            }
            changes = count_changes(&policy, &next, n, slots, |s, k| {
                !model.is_terminal(s) && rs.contains(s, k)
            });
            fill_non_members(model, &rs, &by_slot, &mut next);
        }
        let vi_seconds = vi_start.elapsed().as_secs_f64();
        iterations.push(IterationRecord {
            iteration: j,
            seconds: start.elapsed().as_secs_f64(),
            moment_seconds,
            vi_seconds,
            sweeps,
            delta,
            reachable_size: Some(rs.size()),
            cumulative_visited: Some(visited_count),
            policy_changes: changes,
        });
        policy = next;
        last_rs = Some(rs);
        match inner {
            InnerStop::Sweeps(_) if changes == 0 => {
                converged = true;
                break;
            }
            InnerStop::Sweeps(_) => {}
            InnerStop::Converge => converged = delta < cfg.tol,
        }
    }

    Ok(Solution {
        kind,
        policy,
        values: ValueTable::SpatioTemporal { slots, values },
        reachable: last_rs,
        iterations,
        burn_in_seconds,
        converged,
        fallback_iterations,
    })
}

/// Non-absorbing members of each slot.
fn eligible_by_slot(model: &TvmdpModel, rs: &ReachableSpace) -> Vec<Vec<StateId>> {
    (0..model.slot_count())
        .map(|k| {
            rs.members_at(k)
                .filter(|s| !model.is_terminal(*s))
                .collect()
        })
        .collect()
}

fn count_changes(
    a: &Policy,
    b: &Policy,
    n: usize,
    slots: usize,
    on: impl Fn(StateId, usize) -> bool,
) -> usize {
    let mut c = 0;
    for s in 0..n {
        for k in 0..slots {
            let s = StateId(s);
            if on(s, k) && a.action(s, k) != b.action(s, k) {
                c += 1;
            }
        }
    }
    c
}

fn greedy_restricted(
    model: &TvmdpModel,
    law: &ReconstructedLaw,
    values: &[f64],
    s: StateId,
    slot: usize,
) -> Option<(Heading, f64)> {
    let slots = model.slot_count();
    let gamma = model.discount();
    let q: Vec<(Heading, f64)> = law
        .actions(s, slot)?
        .iter()
        .map(|(a, row)| {
            let ev: f64 = row
                .iter()
                .map(|t| t.prob * values[t.state.0 * slots + t.slot])
                .sum();
            (*a, model.reward(s, slot, *a) + gamma * ev)
        })
        .collect();
    argmax(&q)
}

/// One backward sweep over the members. Returns the max-norm change.
fn restricted_sweep(
    model: &TvmdpModel,
    law: &ReconstructedLaw,
    by_slot: &[Vec<StateId>],
    values: &mut [f64],
    workers: &Workers,
) -> f64 {
    let slots = model.slot_count();
    let mut delta: f64 = 0.0;
    for (k, members) in by_slot.iter().enumerate().rev() {
        let updates = workers.map(members.len(), |i| {
            greedy_restricted(model, law, values, members[i], k).map(|x| x.1)
        });
        for (s, u) in members.iter().zip(updates) {
            if let Some(v) = u {
                let cell = &mut values[s.0 * slots + k];
                delta = delta.max((v - *cell).abs());
                *cell = v;
            }
        }
    }
    delta
}

/// Nearest candidate to `s`: the closest member at `slot`, or if `slot`
/// has none, at the nearest slot that does (earlier slot first on equal
/// distance). Ties in distance go to the lowest state index.
fn nearest(
    grid: &Grid,
    by_slot: &[Vec<StateId>],
    s: StateId,
    slot: usize,
) -> Option<(StateId, usize)> {
    let slots = by_slot.len();
    for d in 0..slots {
        let mut candidates = Vec::with_capacity(2);
        if d == 0 {
            candidates.push(slot);
        } else {
            if slot >= d {
                candidates.push(slot - d);
            }
            if slot + d < slots {
                candidates.push(slot + d);
            }
            if candidates.is_empty() {
                break;
            }
        }
        for k in candidates {
            let best = by_slot[k].iter().map(|m| (grid.distance(s, *m), *m)).fold(
                None,
                |acc: Option<(f64, StateId)>, c| match acc {
                    Some(b) if b.0 < c.0 || (b.0 == c.0 && b.1 .0 < c.1 .0) => Some(b),
                    _ => Some(c),
                },
            );
            if let Some((_, m)) = best {
                return Some((m, k));
            }
        }
    }
    None
}

/// Action for a non-member `(s, slot)`: the policy's action at the nearest
/// member of the same slot (see [`nearest`] for ties and empty slots).
/// Returns `None` only for an entirely empty reachable space.
pub fn map_action(
    policy: &Policy,
    rs: &ReachableSpace,
    grid: &Grid,
    s: StateId,
    slot: usize,
) -> Option<Heading> {
    debug_assert!(!rs.contains(s, slot), "map_action called on a member");
    let by_slot: Vec<Vec<StateId>> = (0..rs.slot_count())
        .map(|k| rs.members_at(k).collect())
        .collect();
    nearest(grid, &by_slot, s, slot).map(|(m, k)| policy.action(m, k))
}

/// Feasible action at `(s, slot)` closest in angle to `a`; ties go to the
/// lowest heading index.
fn closest_feasible(model: &TvmdpModel, s: StateId, slot: usize, a: Heading) -> Heading {
    let feasible = model.feasible_actions(s, slot);
    if feasible.contains(a) {
        return a;
    }
    feasible
        .iter()
        .min_by_key(|b| {
            let d = (b.index() as i64 - a.index() as i64).rem_euclid(8);
            (d.min(8 - d), b.index())
        })
        .unwrap_or(a)
}

fn fill_non_members(
    model: &TvmdpModel,
    rs: &ReachableSpace,
    by_slot: &[Vec<StateId>],
    policy: &mut Policy,
) {
    let grid = model.grid();
    for k in 0..model.slot_count() {
        for s in grid.states() {
            if rs.contains(s, k) || model.is_terminal(s) {
                continue;
            }
            if let Some((m, mk)) = nearest(grid, by_slot, s, k) {
                let a = closest_feasible(model, s, k, policy.action(m, mk));
                policy.set(s, k, a);
            }
        }
    }
}
