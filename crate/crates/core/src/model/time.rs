use crate::error::{Error, Result};

/// Discrete time slots `t_0 = 0 < t_1 < ... < t_{K-1} <= horizon`.
///
/// Queries past the last slot clamp to it: the final slot repeats its
/// transition and reward data indefinitely.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    slot_times: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(slot_times: Vec<f64>, horizon: f64) -> Result<Self> {
        if slot_times.is_empty() {
            return Err(Error::InvalidModel(
                "time grid needs at least one slot".into(),
            ));
        }
        if slot_times[0] != 0.0 {
            return Err(Error::InvalidModel(format!(
                "first slot time must be 0, got {}",
                slot_times[0]
            )));
        }
        if slot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidModel(
                "slot times must be strictly increasing".into(),
            ));
        }
        let last = *slot_times.last().unwrap();
        if !(horizon.is_finite() && last <= horizon) {
            return Err(Error::InvalidModel(format!(
                "last slot time {last} exceeds horizon {horizon}"
            )));
        }
        Ok(Self {
            slot_times,
            horizon,
        })
    }

    /// `slot_count` slots spaced `step` apart, horizon at the last slot.
    pub fn uniform(slot_count: usize, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "slot step must be positive, got {step}"
            )));
        }
        let times: Vec<f64> = (0..slot_count).map(|k| k as f64 * step).collect();
        let horizon = times.last().copied().unwrap_or(0.0);
        Self::new(times, horizon)
    }

    pub fn len(&self) -> usize {
        self.slot_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_times.is_empty()
    }

    pub fn last_slot(&self) -> usize {
        self.slot_times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn slot_times(&self) -> &[f64] {
        &self.slot_times
    }

    /// Real time of `slot`, clamped to the last slot.
    #[inline]
    pub fn time(&self, slot: usize) -> f64 {
        self.slot_times[slot.min(self.last_slot())]
    }

    /// Nearest slot to `t`; exact midpoints go to the later slot.
    pub fn snap(&self, t: f64) -> usize {
        let times = &self.slot_times;
        if t.is_nan() || t <= times[0] {
            return 0;
        }
        let last = self.last_slot();
        if t >= times[last] {
            return last;
        }
        // First slot with time > t.
        let hi = times.partition_point(|&x| x <= t);
        let lo = hi - 1;
        if t - times[lo] < times[hi] - t {
            lo
        } else {
            hi
        }
    }

    /// Slot reached after leaving `slot` and travelling for `h`.
    ///
    /// Non-zero travel always advances at least one slot so that time is
    /// strictly monotone along trajectories; the last slot absorbs
    /// everything past the horizon.
    pub fn advance(&self, slot: usize, h: f64) -> usize {
        let last = self.last_slot();
        if h <= 0.0 {
            return slot.min(last);
        }
        let snapped = self.snap(self.time(slot) + h);
        snapped.max(slot + 1).min(last)
    }
}
