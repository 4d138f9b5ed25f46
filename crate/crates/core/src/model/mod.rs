//! TVMDP domain types: spatial grid, time grid, transition law, rewards,
//! policies and value tables.

mod grid;
mod policy;
mod tabular;
mod time;

use std::borrow::Cow;
use std::sync::{Arc, OnceLock};

pub use grid::{ActionId, ActionSet, Grid, Heading, StateId};
pub use policy::{Policy, ValueTable};
pub use tabular::TabularDynamics;
pub use time::TimeGrid;

use crate::error::{Error, Result};

/// Tolerance used when checking that a transition row is a distribution.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One spatial successor of a state-time-action triple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialOutcome {
    pub state: StateId,
    pub prob: f64,
    /// Local transition time `h(s, t, s')`.
    pub travel_time: f64,
}

/// One entry of the spatiotemporal transition law `T(s, t, a; s', t')`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub slot: usize,
    pub prob: f64,
    pub travel_time: f64,
}

/// Source of the time-varying spatial dynamics of a model.
///
/// Implementations return a spatial successor distribution together with
/// the local transition time of each successor; [`TvmdpModel`] turns that
/// into a spatiotemporal law by advancing the clock.
pub trait Dynamics: Send + Sync {
    fn feasible_actions(&self, s: StateId, slot: usize) -> ActionSet;

    /// Appends the successor distribution of `(s, slot, a)` to `out`.
    /// Probabilities must sum to one.
    fn successors(&self, s: StateId, slot: usize, a: Heading, out: &mut Vec<SpatialOutcome>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terminal {
    Goal,
    Obstacle,
}

/// Step reward for every non-terminal action plus the values received on
/// entering the goal or an obstacle.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardScheme {
    pub step: f64,
    pub goal: f64,
    pub obstacle: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self {
            step: -0.1,
            goal: 1.0,
            obstacle: -1.0,
        }
    }
}

/// A time-varying MDP over `grid x time`.
///
/// The law is evaluated lazily from the [`Dynamics`]; an optional memo
/// keeps each `(s, t, a)` row after its first evaluation.
pub struct TvmdpModel {
    grid: Grid,
    time: TimeGrid,
    dynamics: Arc<dyn Dynamics>,
    rewards: RewardScheme,
    discount: f64,
    goal: Option<StateId>,
    terminal: Vec<Option<Terminal>>,
    cache: Option<Vec<OnceLock<Box<[Transition]>>>>,
}

impl std::fmt::Debug for TvmdpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TvmdpModel")
            .field("grid", &self.grid)
            .field("slots", &self.time.len())
            .field("rewards", &self.rewards)
            .field("discount", &self.discount)
            .field("goal", &self.goal)
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

pub struct ModelBuilder {
    grid: Grid,
    time: TimeGrid,
    dynamics: Arc<dyn Dynamics>,
    rewards: RewardScheme,
    discount: f64,
    goal: Option<StateId>,
    obstacles: Vec<StateId>,
    cached: bool,
}

impl ModelBuilder {
    pub fn rewards(mut self, rewards: RewardScheme) -> Self {
        self.rewards = rewards;
        self
    }

    pub fn discount(mut self, gamma: f64) -> Self {
        self.discount = gamma;
        self
    }

    pub fn goal(mut self, s: StateId) -> Self {
        self.goal = Some(s);
        self
    }

    pub fn obstacles(mut self, obstacles: impl IntoIterator<Item = StateId>) -> Self {
        self.obstacles.extend(obstacles);
        self
    }

    /// Memoize transition rows after first evaluation.
    pub fn cached(mut self, cached: bool) -> Self {
        self.cached = cached;
        self
    }

    pub fn build(self) -> Result<TvmdpModel> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidModel(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        let n = self.grid.len();
        let mut terminal = vec![None; n];
        if let Some(g) = self.goal {
            if g.0 >= n {
                return Err(Error::InvalidModel(format!("goal {g} outside the grid")));
            }
            terminal[g.0] = Some(Terminal::Goal);
        }
        for o in self.obstacles {
            if o.0 >= n {
                return Err(Error::InvalidModel(format!(
                    "obstacle {o} outside the grid"
                )));
            }
            if terminal[o.0] == Some(Terminal::Goal) {
                return Err(Error::InvalidModel(format!(
                    "state {o} is both goal and obstacle"
                )));
            }
            terminal[o.0] = Some(Terminal::Obstacle);
        }
        let cache = self.cached.then(|| {
            let len = n * self.time.len() * 8;
            (0..len).map(|_| OnceLock::new()).collect()
        });
        Ok(TvmdpModel {
            grid: self.grid,
            time: self.time,
            dynamics: self.dynamics,
            rewards: self.rewards,
            discount: self.discount,
            goal: self.goal,
            terminal,
            cache,
        })
    }
}

impl TvmdpModel {
    pub fn builder(grid: Grid, time: TimeGrid, dynamics: Arc<dyn Dynamics>) -> ModelBuilder {
        ModelBuilder {
            grid,
            time,
            dynamics,
            rewards: RewardScheme::default(),
            discount: 0.95,
            goal: None,
            obstacles: Vec::new(),
            cached: true,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time
    }

    pub fn state_count(&self) -> usize {
        self.grid.len()
    }

    pub fn slot_count(&self) -> usize {
        self.time.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn rewards(&self) -> &RewardScheme {
        &self.rewards
    }

    pub fn goal(&self) -> Option<StateId> {
        self.goal
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn obstacles(&self) -> impl Iterator<Item = StateId> + '_ {
        self.terminal
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Some(Terminal::Obstacle))
            .map(|(i, _)| StateId(i))
    }

    #[inline]
    pub fn terminal(&self, s: StateId) -> Option<Terminal> {
        self.terminal[s.0]
    }

    #[inline]
    pub fn is_terminal(&self, s: StateId) -> bool {
        self.terminal[s.0].is_some()
    }

    /// Value held by a terminal state (the reward received on entering it).
    pub fn terminal_value(&self, s: StateId) -> Option<f64> {
        self.terminal[s.0].map(|t| match t {
            Terminal::Goal => self.rewards.goal,
            Terminal::Obstacle => self.rewards.obstacle,
        })
    }

    pub fn feasible_actions(&self, s: StateId, slot: usize) -> ActionSet {
        self.dynamics
            .feasible_actions(s, slot.min(self.time.last_slot()))
    }

    pub fn is_feasible(&self, s: StateId, slot: usize, a: Heading) -> bool {
        self.feasible_actions(s, slot).contains(a)
    }

    /// `R(s, t, a)`: the step reward for non-terminal states, zero once
    /// absorbed.
    #[inline]
    pub fn reward(&self, s: StateId, _slot: usize, _a: Heading) -> f64 {
        if self.is_terminal(s) {
            0.0
        } else {
            self.rewards.step
        }
    }

    /// `T(s, t, a; ., .)` as a list of `(s', t')` entries.
    ///
    /// Each spatial successor occupies exactly one target slot. Terminal
    /// states return a probability-one self loop at the same slot.
    pub fn transition_law(
        &self,
        s: StateId,
        slot: usize,
        a: Heading,
    ) -> Result<Cow<'_, [Transition]>> {
        let slot = slot.min(self.time.last_slot());
        if s.0 >= self.grid.len() || !self.feasible_actions(s, slot).contains(a) {
            return Err(Error::InfeasibleAction {
                state: s,
                slot,
                action: a,
            });
        }
        match &self.cache {
            Some(cache) => {
                let key = (s.0 * self.time.len() + slot) * 8 + a.index();
                let row =
                    cache[key].get_or_init(|| self.compute_law(s, slot, a).into_boxed_slice());
                Ok(Cow::Borrowed(&row[..]))
            }
            None => Ok(Cow::Owned(self.compute_law(s, slot, a))),
        }
    }

    fn compute_law(&self, s: StateId, slot: usize, a: Heading) -> Vec<Transition> {
        if self.is_terminal(s) {
            return vec![Transition {
                state: s,
                slot,
                prob: 1.0,
                travel_time: 0.0,
            }];
        }
        let mut spatial = Vec::with_capacity(8);
        self.dynamics.successors(s, slot, a, &mut spatial);
        let mut row: Vec<Transition> = Vec::with_capacity(spatial.len());
        for o in spatial {
            if o.prob <= 0.0 {
                continue;
            }
            let target = self.time.advance(slot, o.travel_time);
            match row
                .iter_mut()
                .find(|t| t.state == o.state && t.slot == target)
            {
                Some(t) => t.prob += o.prob,
                None => row.push(Transition {
                    state: o.state,
                    slot: target,
                    prob: o.prob,
                    travel_time: o.travel_time,
                }),
            }
        }
        row
    }

    /// Checks the normalization and time-monotonicity invariants of every
    /// feasible row. Intended for tests and after loading external data.
    pub fn validate(&self) -> Result<()> {
        for s in self.grid.states() {
            for slot in 0..self.time.len() {
                let actions = self.feasible_actions(s, slot);
                if actions.is_empty() {
                    return Err(Error::InvalidModel(format!(
                        "state {s} has no feasible action at slot {slot}"
                    )));
                }
                for a in actions.iter() {
                    let row = self.transition_law(s, slot, a)?;
                    check_row(&row, slot)
                        .map_err(|m| Error::InvalidModel(format!("row ({s}, {slot}, {a}): {m}")))?;
                }
            }
        }
        Ok(())
    }
}

fn check_row(row: &[Transition], slot: usize) -> std::result::Result<(), String> {
    let mut total = 0.0;
    for t in row {
        if !(t.prob >= 0.0) {
            return Err(format!("negative probability {}", t.prob));
        }
        if t.slot < slot {
            return Err(format!("targets earlier slot {}", t.slot));
        }
        total += t.prob;
    }
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(format!("probabilities sum to {total}"));
    }
    Ok(())
}
