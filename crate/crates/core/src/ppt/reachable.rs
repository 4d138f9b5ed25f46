use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::PptMoments;
use crate::error::{Error, Result};
use crate::model::{StateId, TimeGrid};

/// State-time pairs whose slot time lies within `m_r` standard deviations
/// of the state's expected passage time from the start.
///
/// Windows are contiguous slot ranges. States marked always-reachable
/// (absorbing states, whose value does not depend on time) are members at
/// every slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachableSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Inclusive slot range per state.
    windows: Vec<Option<(usize, usize)>>,
    always: Vec<bool>,
    m_r: f64,
    slots: usize,
}

/// Builds the reachable space from moment estimates.
///
/// A state whose window contains no slot time (zero or tiny variance
/// between two slots) is widened to the slot nearest its mean, so every
/// reachable state owns at least one slot. Unreachable states get no
/// window.
pub fn build_reachable_space(
    mu: &[f64],
    var: &[f64],
    unreachable: &[bool],
    m_r: f64,
    time: &TimeGrid,
) -> Result<ReachableSpace> {
    if !(m_r >= 1.0 && m_r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "m_r must be >= 1, got {m_r}"
        )));
    }
    let n = mu.len();
    if var.len() != n || unreachable.len() != n {
        return Err(Error::InvalidArgument(
            "moment vectors differ in length".into(),
        ));
    }
    let times = time.slot_times();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut windows = Vec::with_capacity(n);
    for s in 0..n {
        let sigma = var[s].max(0.0).sqrt();
        let l = mu[s] - m_r * sigma;
        let b = mu[s] + m_r * sigma;
        lower.push(l);
        upper.push(b);
        if unreachable[s] {
            windows.push(None);
            continue;
        }
        let first = times.partition_point(|&t| t < l);
        let end = times.partition_point(|&t| t <= b);
        if first < end {
            windows.push(Some((first, end - 1)));
        } else {
            let k = time.snap(mu[s]);
            windows.push(Some((k, k)));
        }
    }
    Ok(ReachableSpace {
        lower,
        upper,
        windows,
        always: vec![false; n],
        m_r,
        slots: time.len(),
    })
}

impl ReachableSpace {
    pub fn from_moments(moments: &PptMoments, m_r: f64, time: &TimeGrid) -> Result<Self> {
        build_reachable_space(&moments.mu, &moments.var, &moments.unreachable, m_r, time)
    }

    /// Makes `s` a member at every slot.
    pub fn include_always(&mut self, s: StateId) {
        self.always[s.0] = true;
    }

    pub fn m_r(&self) -> f64 {
        self.m_r
    }

    pub fn state_count(&self) -> usize {
        self.windows.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    /// Lower time bound `l_s`.
    pub fn lower(&self, s: StateId) -> f64 {
        self.lower[s.0]
    }

    /// Upper time bound `b_s`.
    pub fn upper(&self, s: StateId) -> f64 {
        self.upper[s.0]
    }

    /// Member slot range of `s` (all slots for always-members).
    pub fn window(&self, s: StateId) -> Option<(usize, usize)> {
        if self.always[s.0] {
            Some((0, self.slots - 1))
        } else {
            self.windows[s.0]
        }
    }

    #[inline]
    pub fn contains(&self, s: StateId, slot: usize) -> bool {
        self.window(s).is_some_and(|(a, b)| a <= slot && slot <= b)
    }

    /// Number of member state-time pairs.
    pub fn size(&self) -> usize {
        (0..self.windows.len())
            .filter_map(|s| self.window(StateId(s)))
            .map(|(a, b)| b - a + 1)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// Members in `(state, slot)` order.
    pub fn members(&self) -> impl Iterator<Item = (StateId, usize)> + '_ {
        (0..self.windows.len()).flat_map(move |s| {
            let w = self.window(StateId(s));
            w.into_iter()
                .flat_map(move |(a, b)| (a..=b).map(move |k| (StateId(s), k)))
        })
    }

    /// Members at one slot.
    pub fn members_at(&self, slot: usize) -> impl Iterator<Item = StateId> + '_ {
        (0..self.windows.len())
            .map(StateId)
            .filter(move |s| self.contains(*s, slot))
    }

    /// Writes `s,t_slot` for every member.
    pub fn write_csv(&self, path: &Path, header_comment: &str) -> Result<()> {
        let mut text = format!("# {header_comment}\ns,t_slot\n");
        for (s, k) in self.members() {
            text.push_str(&format!("{},{}\n", s.0, k));
        }
        File::create(path)
            .and_then(|mut f| f.write_all(text.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}
