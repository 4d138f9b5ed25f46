use std::collections::HashMap;

use super::{ActionSet, Dynamics, Heading, SpatialOutcome, StateId};

/// Explicit successor tables, mainly for small hand-built fixtures.
///
/// Rows are keyed by `(state, action)` and may change from a given slot
/// onward, which gives piecewise-constant time variation.
#[derive(Clone, Debug, Default)]
pub struct TabularDynamics {
    states: usize,
    rows: HashMap<(usize, Heading), Vec<(usize, Vec<SpatialOutcome>)>>,
}

impl TabularDynamics {
    pub fn new(states: usize) -> Self {
        Self {
            states,
            rows: HashMap::new(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    /// Adds a successor valid from slot 0 onward.
    pub fn edge(&mut self, s: StateId, a: Heading, next: StateId, prob: f64, h: f64) -> &mut Self {
        self.edge_from(0, s, a, next, prob, h)
    }

    /// Adds a successor to the row that takes effect at `from_slot`.
    pub fn edge_from(
        &mut self,
        from_slot: usize,
        s: StateId,
        a: Heading,
        next: StateId,
        prob: f64,
        h: f64,
    ) -> &mut Self {
        let versions = self.rows.entry((s.0, a)).or_default();
        let pos = match versions.binary_search_by_key(&from_slot, |(k, _)| *k) {
            Ok(i) => i,
            Err(i) => {
                versions.insert(i, (from_slot, Vec::new()));
                i
            }
        };
        versions[pos].1.push(SpatialOutcome {
            state: next,
            prob,
            travel_time: h,
        });
        self
    }

    fn row(&self, s: StateId, slot: usize, a: Heading) -> Option<&[SpatialOutcome]> {
        let versions = self.rows.get(&(s.0, a))?;
        versions
            .iter()
            .rev()
            .find(|(k, _)| *k <= slot)
            .map(|(_, row)| row.as_slice())
    }
}

impl Dynamics for TabularDynamics {
    fn feasible_actions(&self, s: StateId, _slot: usize) -> ActionSet {
        let set: ActionSet = Heading::ALL
            .into_iter()
            .filter(|a| self.rows.contains_key(&(s.0, *a)))
            .collect();
        if set.is_empty() {
            // Rowless states (normally terminals) still expose one action.
            ActionSet::single(Heading::E)
        } else {
            set
        }
    }

    fn successors(&self, s: StateId, slot: usize, a: Heading, out: &mut Vec<SpatialOutcome>) {
        if let Some(row) = self.row(s, slot, a) {
            out.extend_from_slice(row);
        }
    }
}
