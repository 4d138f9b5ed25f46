use super::{Heading, StateId, TvmdpModel};
use crate::error::{Error, Result};

/// Deterministic Markov policy.
///
/// `Spatial` policies ignore time (the output of expected-time value
/// iteration); `SpatioTemporal` policies store one action per
/// `(state, slot)` pair. Slot lookups past the last slot clamp.
#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Spatial(Vec<Heading>),
    SpatioTemporal { slots: usize, actions: Vec<Heading> },
}

impl Policy {
    pub fn spatial(actions: Vec<Heading>) -> Self {
        Policy::Spatial(actions)
    }

    pub fn spatio_temporal(states: usize, slots: usize, fill: Heading) -> Self {
        Policy::SpatioTemporal {
            slots,
            actions: vec![fill; states * slots],
        }
    }

    /// First feasible action everywhere.
    pub fn first_feasible(model: &TvmdpModel) -> Self {
        let slots = model.slot_count();
        let mut actions = Vec::with_capacity(model.state_count() * slots);
        for s in model.grid().states() {
            for slot in 0..slots {
                actions.push(
                    model
                        .feasible_actions(s, slot)
                        .first()
                        .unwrap_or(Heading::E),
                );
            }
        }
        Policy::SpatioTemporal { slots, actions }
    }

    pub fn state_count(&self) -> usize {
        match self {
            Policy::Spatial(a) => a.len(),
            Policy::SpatioTemporal { slots, actions } => actions.len() / slots,
        }
    }

    pub fn is_spatial(&self) -> bool {
        matches!(self, Policy::Spatial(_))
    }

    #[inline]
    pub fn action(&self, s: StateId, slot: usize) -> Heading {
        match self {
            Policy::Spatial(a) => a[s.0],
            Policy::SpatioTemporal { slots, actions } => actions[s.0 * slots + slot.min(slots - 1)],
        }
    }

    /// Overwrites one entry. Spatial policies ignore `slot`.
    pub fn set(&mut self, s: StateId, slot: usize, a: Heading) {
        match self {
            Policy::Spatial(v) => v[s.0] = a,
            Policy::SpatioTemporal { slots, actions } => actions[s.0 * *slots + slot] = a,
        }
    }

    /// Copies a spatial policy onto every slot.
    pub fn replicate(&self, slots: usize) -> Policy {
        match self {
            Policy::Spatial(a) => Policy::SpatioTemporal {
                slots,
                actions: a
                    .iter()
                    .flat_map(|x| std::iter::repeat_n(*x, slots))
                    .collect(),
            },
            other => other.clone(),
        }
    }

    /// Verifies every stored action is feasible where it is stored.
    pub fn check_feasible(&self, model: &TvmdpModel) -> Result<()> {
        for s in model.grid().states() {
            let slots = match self {
                Policy::Spatial(_) => 0..model.slot_count(),
                Policy::SpatioTemporal { slots, .. } => 0..*slots,
            };
            for slot in slots {
                let a = self.action(s, slot);
                if !model.is_feasible(s, slot, a) {
                    return Err(Error::InfeasibleAction {
                        state: s,
                        slot,
                        action: a,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Value function over `S` or `S x T`.
#[derive(Clone, Debug, PartialEq)]
pub enum ValueTable {
    Spatial(Vec<f64>),
    SpatioTemporal { slots: usize, values: Vec<f64> },
}

impl ValueTable {
    pub fn get(&self, s: StateId, slot: usize) -> f64 {
        match self {
            ValueTable::Spatial(v) => v[s.0],
            ValueTable::SpatioTemporal { slots, values } => {
                values[s.0 * slots + slot.min(slots - 1)]
            }
        }
    }

    pub fn state_count(&self) -> usize {
        match self {
            ValueTable::Spatial(v) => v.len(),
            ValueTable::SpatioTemporal { slots, values } => values.len() / slots,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ValueTable::Spatial(v) => v.iter().all(|x| x.is_finite()),
            ValueTable::SpatioTemporal { values, .. } => values.iter().all(|x| x.is_finite()),
        }
    }
}
