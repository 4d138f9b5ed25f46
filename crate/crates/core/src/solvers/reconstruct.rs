use crate::error::Result;
use crate::model::{Heading, StateId, Transition, TvmdpModel};
use crate::par::Workers;
use crate::ppt::ReachableSpace;

/// Transition law of every feasible action at every reachable member,
/// rewritten so that all mass lands on members.
///
/// For each successor `s'` of a member `(s, t)`:
///
/// * mass arriving before the window of `s'` moves to the first member
///   slot of `s'`;
/// * mass inside the window stays;
/// * mass after the window, or into a state with no window, is dropped,
///   and the row is renormalized over what is kept.
///
/// If nothing is kept, each successor that has a window receives its
/// original mass at its first member slot; if no successor has a window,
/// the row becomes a self loop at `(s, t)`. Rows that needed no change are
/// stored unchanged.
#[derive(Clone, Debug)]
pub struct ReconstructedLaw {
    slots: usize,
    /// `index[s * slots + slot]`: position in `rows`, or `usize::MAX`.
    index: Vec<usize>,
    rows: Vec<Vec<(Heading, Box<[Transition]>)>>,
    modified: usize,
    redirected: usize,
}

impl ReconstructedLaw {
    /// Reconstructed rows of `(s, slot)`, or `None` for non-members.
    pub fn actions(&self, s: StateId, slot: usize) -> Option<&[(Heading, Box<[Transition]>)]> {
        match self.index[s.0 * self.slots + slot] {
            usize::MAX => None,
            i => Some(&self.rows[i]),
        }
    }

    pub fn row(&self, s: StateId, slot: usize, a: Heading) -> Option<&[Transition]> {
        self.actions(s, slot)?
            .iter()
            .find(|(b, _)| *b == a)
            .map(|(_, r)| &r[..])
    }

    /// Number of `(s, t, a)` rows that differ from the original law.
    pub fn modified_rows(&self) -> usize {
        self.modified
    }

    /// Rows that kept no mass and were redirected.
    pub fn redirected_rows(&self) -> usize {
        self.redirected
    }

    pub fn member_count(&self) -> usize {
        self.rows.len()
    }
}

enum Rebuilt {
    Unchanged,
    Modified(Vec<Transition>),
    Redirected(Vec<Transition>),
}

fn rebuild_row(rs: &ReachableSpace, s: StateId, slot: usize, law: &[Transition]) -> Rebuilt {
    let mut out: Vec<Transition> = Vec::with_capacity(law.len());
    let push = |out: &mut Vec<Transition>, t: Transition| match out
        .iter_mut()
        .find(|o| o.state == t.state && o.slot == t.slot)
    {
        Some(o) => o.prob += t.prob,
        None => out.push(t),
    };
    let mut changed = false;
    for t in law {
        match rs.window(t.state) {
            Some((lo, hi)) if t.slot <= hi => {
                if t.slot < lo {
                    changed = true;
                    push(&mut out, Transition { slot: lo, ..*t });
                } else {
                    push(&mut out, *t);
                }
            }
            _ => changed = true,
        }
    }
    let kept: f64 = out.iter().map(|t| t.prob).sum();
    if !changed {
        return Rebuilt::Unchanged;
    }
    if kept > 0.0 {
        for t in &mut out {
            t.prob /= kept;
        }
        return Rebuilt::Modified(out);
    }
    out.clear();
    for t in law {
        if let Some((lo, _)) = rs.window(t.state) {
            push(&mut out, Transition { slot: lo, ..*t });
        }
    }
    let total: f64 = out.iter().map(|t| t.prob).sum();
    if total > 0.0 {
        for t in &mut out {
            t.prob /= total;
        }
    } else {
        out = vec![Transition {
            state: s,
            slot,
            prob: 1.0,
            travel_time: 0.0,
        }];
    }
    Rebuilt::Redirected(out)
}

/// Builds the reconstructed law over every member of `rs`.
pub fn reconstruct(
    model: &TvmdpModel,
    rs: &ReachableSpace,
    workers: &Workers,
) -> Result<ReconstructedLaw> {
    let slots = model.slot_count();
    let members: Vec<(StateId, usize)> = rs.members().collect();
    let built = workers.map(members.len(), |i| -> Result<_> {
        let (s, slot) = members[i];
        let mut actions = Vec::new();
        let (mut modified, mut redirected) = (0, 0);
        for a in model.feasible_actions(s, slot).iter() {
            let law = model.transition_law(s, slot, a)?;
            let row = match rebuild_row(rs, s, slot, &law) {
                Rebuilt::Unchanged => law.to_vec(),
                Rebuilt::Modified(r) => {
                    modified += 1;
                    r
                }
                Rebuilt::Redirected(r) => {
                    modified += 1;
                    redirected += 1;
                    r
                }
            };
            actions.push((a, row.into_boxed_slice()));
        }
        Ok((actions, modified, redirected))
    });
    let mut index = vec![usize::MAX; model.state_count() * slots];
    let mut rows = Vec::with_capacity(members.len());
    let (mut modified, mut redirected) = (0, 0);
    for ((s, slot), b) in members.iter().zip(built) {
        let (actions, m, r) = b?;
        index[s.0 * slots + slot] = rows.len();
        rows.push(actions);
        modified += m;
        redirected += r;
    }
    Ok(ReconstructedLaw {
        slots,
        index,
        rows,
        modified,
        redirected,
    })
}
