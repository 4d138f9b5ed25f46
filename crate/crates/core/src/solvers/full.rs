use std::time::Instant;

use super::{greedy_st, initial_st_values, IterationRecord, Solution, SolverConfig, SolverKind};
use crate::error::Result;
use crate::model::{Heading, Policy, StateId, TvmdpModel, ValueTable};
use crate::par::Workers;

/// Value iteration over `S x T`.
///
/// Each sweep visits slots from last to first; states within a slot are
/// updated together from the table as it stood when the slot began. The
/// last slot's successors stay in the last slot, so its values are
/// self-consistent. Sweeps stop once the max-norm change drops below
/// `cfg.tol`; hitting `cfg.max_sweeps` returns the current table with
/// `converged = false`.
pub fn solve_full_st_vi(
    model: &TvmdpModel,
    cfg: &SolverConfig,
    workers: &Workers,
) -> Result<Solution> {
    cfg.validate()?;
    let start = Instant::now();
    let n = model.state_count();
    let slots = model.slot_count();
    let mut values = initial_st_values(model);
    let mut converged = false;
    let mut sweeps = 0;
    let mut delta = f64::INFINITY;
    while sweeps < cfg.max_sweeps {
        delta = sweep(model, &mut values, workers)?;
        sweeps += 1;
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    let mut policy = Policy::spatio_temporal(n, slots, Heading::N);
    for slot in 0..slots {
        let picks = workers.map(n, |s| greedy_st(model, &values, StateId(s), slot));
        for (s, pick) in picks.into_iter().enumerate() {
            if let Some((a, _)) = pick? {
                policy.set(StateId(s), slot, a);
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(Solution {
        kind: SolverKind::FullSt,
        policy,
        values: ValueTable::SpatioTemporal { slots, values },
        reachable: None,
        iterations: vec![IterationRecord {
            iteration: 0,
            seconds,
            moment_seconds: 0.0,
            vi_seconds: seconds,
            sweeps,
            delta,
            reachable_size: Some(n * slots),
            cumulative_visited: Some(n * slots),
            policy_changes: 0,
        }],
        burn_in_seconds: 0.0,
        converged,
        fallback_iterations: 0,
    })
}

/// One backward sweep over all slots. Returns the max-norm change.
pub(super) fn sweep(model: &TvmdpModel, values: &mut [f64], workers: &Workers) -> Result<f64> {
    let n = model.state_count();
    let slots = model.slot_count();
    let mut delta: f64 = 0.0;
    for slot in (0..slots).rev() {
        let updates = workers.map(n, |s| -> Result<Option<f64>> {
            let s = StateId(s);
            if model.is_terminal(s) {
                return Ok(None);
            }
            Ok(greedy_st(model, values, s, slot)?.map(|(_, v)| v))
        });
        for (s, u) in updates.into_iter().enumerate() {
            if let Some(v) = u? {
                let cell = &mut values[s * slots + slot];
                delta = delta.max((v - *cell).abs());
                *cell = v;
            }
        }
    }
    Ok(delta)
}
