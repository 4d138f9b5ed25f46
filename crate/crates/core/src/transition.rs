//! Builds the time-varying transition law of a grid world from a current
//! field, a Gaussian heading-noise model and a table of local transition
//! times.

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::disturbance::DisturbanceField;
use crate::error::{Error, Result};
use crate::model::{ActionSet, Dynamics, Grid, Heading, SpatialOutcome, StateId, TimeGrid};
use crate::par::Workers;

/// Angular deviation of the realised heading is Gaussian with this
/// variance (rad^2), discretised over the eight neighbours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianHeadingModel {
    variance: f64,
}

impl GaussianHeadingModel {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "heading variance must be positive, got {variance}"
            )));
        }
        Ok(Self { variance })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleModel {
    pub max_speed: f64,
    pub cell_size: f64,
}

impl VehicleModel {
    pub fn new(max_speed: f64, cell_size: f64) -> Result<Self> {
        if !(max_speed > 0.0 && max_speed.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "max speed must be positive, got {max_speed}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        Ok(Self {
            max_speed,
            cell_size,
        })
    }
}

/// Wraps an angle into `(-pi, pi]`.
fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Direction of travel when commanding `a` at speed `speed` into current
/// `current`. A zero net velocity falls back to the commanded heading.
pub fn net_heading(a: Heading, speed: f64, current: (f64, f64)) -> f64 {
    let (ux, uy) = a.unit();
    let vx = speed * ux + current.0;
    let vy = speed * uy + current.1;
    if vx.hypot(vy) < 1e-12 {
        a.angle()
    } else {
        vy.atan2(vx)
    }
}

/// Spatial successor distribution of commanding `a` from `s` at real time
/// `t`.
///
/// Every in-grid neighbour `d` gets weight `exp(-dtheta^2 / (2 var))`,
/// where `dtheta` is the wrapped angle between `d` and the net heading;
/// weights are normalised to one.
pub fn build_transition(
    grid: &Grid,
    field: &DisturbanceField,
    model: &GaussianHeadingModel,
    speed: f64,
    s: StateId,
    t: f64,
    a: Heading,
) -> Vec<(StateId, Heading, f64)> {
    let (x, y) = grid.position(s);
    let theta = net_heading(a, speed, field.velocity_at(x, y, t));
    let mut out: Vec<(StateId, Heading, f64)> = Heading::ALL
        .into_iter()
        .filter_map(|d| {
            let next = grid.neighbor(s, d)?;
            let dt = wrap_angle(d.angle() - theta);
            Some((next, d, -dt * dt / (2.0 * model.variance)))
        })
        .collect();
    // Log-sum-exp keeps far-off-heading boundary cells from underflowing.
    let max = out.iter().map(|o| o.2).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        o.2 = (o.2 - max).exp();
        total += o.2;
    }
    for o in out.iter_mut() {
        o.2 /= total;
    }
    out
}

/// Local transition times `h(s, t, s')` for adjacent cells.
#[derive(Clone, Debug)]
pub struct LocalTimeTable {
    states: usize,
    slots: usize,
    /// `[(s * slots + slot) * 8 + heading]`, NaN where the neighbour is off
    /// the grid.
    h: Vec<f64>,
    clipped: usize,
}

/// Compares the stored times only; the clip count is not persisted.
impl PartialEq for LocalTimeTable {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
            && self.slots == other.slots
            && self.h.len() == other.h.len()
            && self
                .h
                .iter()
                .zip(&other.h)
                .all(|(a, b)| a == b || (a.is_nan() && b.is_nan()))
    }
}

impl LocalTimeTable {
    /// `h = 1` for every connected pair at every slot.
    pub fn unit(grid: &Grid, time: &TimeGrid) -> Self {
        let slots = time.len();
        let mut h = vec![f64::NAN; grid.len() * slots * 8];
        for s in grid.states() {
            for d in grid.inbound_headings(s).iter() {
                for slot in 0..slots {
                    h[(s.0 * slots + slot) * 8 + d.index()] = 1.0;
                }
            }
        }
        Self {
            states: grid.len(),
            slots,
            h,
            clipped: 0,
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn slot_count(&self) -> usize {
        self.slots
    }

    /// Number of entries whose estimate hit the speed floor or the clip
    /// range.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    #[inline]
    pub fn by_heading(&self, s: StateId, slot: usize, d: Heading) -> Option<f64> {
        let slot = slot.min(self.slots - 1);
        let v = self.h[(s.0 * self.slots + slot) * 8 + d.index()];
        (!v.is_nan()).then_some(v)
    }

    /// `h(s, slot, next)`; an error for pairs that are not adjacent.
    pub fn get(&self, grid: &Grid, s: StateId, slot: usize, next: StateId) -> Result<f64> {
        grid.heading_between(s, next)
            .and_then(|d| self.by_heading(s, slot, d))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("states {s} and {next} are not connected"))
            })
    }

    fn matches(&self, grid: &Grid, time: &TimeGrid) -> bool {
        self.states == grid.len() && self.slots == time.len()
    }

    pub fn save(&self, grid: &Grid, path: &Path, header_comment: &str) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "# {header_comment}").map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(["s", "t_slot", "s'", "h"]).map_err(err)?;
        for s in 0..self.states {
            for slot in 0..self.slots {
                for d in Heading::ALL {
                    if let Some(h) = self.by_heading(StateId(s), slot, d) {
                        let next = grid.neighbor(StateId(s), d).expect("stored neighbour");
                        w.write_record([
                            s.to_string(),
                            slot.to_string(),
                            next.0.to_string(),
                            h.to_string(),
                        ])
                        .map_err(err)?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Loads a cache written by [`LocalTimeTable::save`]. Every connected
    /// pair at every slot must be present.
    pub fn load(grid: &Grid, time: &TimeGrid, path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(file);
        let slots = time.len();
        let mut h = vec![f64::NAN; grid.len() * slots * 8];
        let perr = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        for record in reader.records() {
            let record = record.map_err(|e| perr(0, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 4 {
                return Err(perr(line, "expected columns s,t_slot,s',h".into()));
            }
            let s: usize = record[0]
                .parse()
                .map_err(|e| perr(line, format!("s: {e}")))?;
            let slot: usize = record[1]
                .parse()
                .map_err(|e| perr(line, format!("t_slot: {e}")))?;
            let next: usize = record[2]
                .parse()
                .map_err(|e| perr(line, format!("s': {e}")))?;
            let v: f64 = record[3]
                .parse()
                .map_err(|e| perr(line, format!("h: {e}")))?;
            if s >= grid.len() || next >= grid.len() || slot >= slots {
                return Err(perr(line, "index out of range".into()));
            }
            let d = grid
                .heading_between(StateId(s), StateId(next))
                .ok_or_else(|| perr(line, format!("{s} and {next} are not adjacent")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(perr(line, format!("h must be positive, got {v}")));
            }
            h[(s * slots + slot) * 8 + d.index()] = v;
        }
        let table = Self {
            states: grid.len(),
            slots,
            h,
            clipped: 0,
        };
        for s in grid.states() {
            for d in grid.inbound_headings(s).iter() {
                if (0..slots).any(|k| table.by_heading(s, k, d).is_none()) {
                    return Err(Error::Config {
                        path: path.to_path_buf(),
                        message: format!("missing entries for state {s} heading {d}"),
                    });
                }
            }
        }
        Ok(table)
    }
}

/// Settings of the Monte Carlo local-time estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub trials: usize,
    pub seed: u64,
    /// Variance (rad^2) of the heading noise applied per trial. Zero makes
    /// every trial identical.
    pub heading_variance: f64,
}

/// Estimates `h(s, t, s')` for every connected pair by averaging
/// `d / max(eps, v_net . u)` over noisy-heading trials, where `v_net` is
/// the vehicle velocity plus the current at `(s, t)` and `u` points at
/// `s'`. The floor is `eps = 0.1 max_speed`; results are clipped to
/// `[0.1, 10] * d / max_speed`.
pub fn estimate_local_times_mc(
    field: &DisturbanceField,
    vehicle: &VehicleModel,
    grid: &Grid,
    time: &TimeGrid,
    settings: &McSettings,
    workers: &Workers,
) -> Result<LocalTimeTable> {
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let noise = if settings.heading_variance > 0.0 {
        Some(
            Normal::new(0.0, settings.heading_variance.sqrt())
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
        )
    } else {
        None
    };
    let slots = time.len();
    let floor = 0.1 * vehicle.max_speed;
    // One independent stream per state keeps the result worker-count free.
    let per_state: Vec<(Vec<f64>, usize)> = workers.map(grid.len(), |si| {
        let s = StateId(si);
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(si as u64);
        let mut out = vec![f64::NAN; slots * 8];
        let mut clipped = 0;
        let (x, y) = grid.position(s);
        for slot in 0..slots {
            let current = field.velocity_at(x, y, time.time(slot));
            for d in Heading::ALL {
                let Some(next) = grid.neighbor(s, d) else {
                    continue;
                };
                let dist = grid.distance(s, next);
                let (ux, uy) = d.unit();
                let base = d.angle();
                let mut sum = 0.0;
                let mut floored = false;
                for _ in 0..settings.trials {
                    let theta = base + noise.map_or(0.0, |n| n.sample(&mut rng));
                    let vx = vehicle.max_speed * theta.cos() + current.0;
                    let vy = vehicle.max_speed * theta.sin() + current.1;
                    let proj = vx * ux + vy * uy;
                    if proj < floor {
                        floored = true;
                    }
                    sum += dist / proj.max(floor);
                }
                let mean = sum / settings.trials as f64;
                let lo = 0.1 * dist / vehicle.max_speed;
                let hi = 10.0 * dist / vehicle.max_speed;
                if floored || mean < lo || mean > hi {
                    clipped += 1;
                }
                out[slot * 8 + d.index()] = mean.clamp(lo, hi);
            }
        }
        (out, clipped)
    });
    let mut h = Vec::with_capacity(grid.len() * slots * 8);
    let mut clipped = 0;
    for (row, c) in per_state {
        h.extend(row);
        clipped += c;
    }
    Ok(LocalTimeTable {
        states: grid.len(),
        slots,
        h,
        clipped,
    })
}

/// [`Dynamics`] of a vehicle on a grid under a current field.
pub struct GridDynamics {
    grid: Grid,
    time: TimeGrid,
    field: Arc<DisturbanceField>,
    heading: GaussianHeadingModel,
    vehicle: VehicleModel,
    local_times: LocalTimeTable,
}

impl GridDynamics {
    pub fn new(
        grid: Grid,
        time: TimeGrid,
        field: Arc<DisturbanceField>,
        heading: GaussianHeadingModel,
        vehicle: VehicleModel,
        local_times: LocalTimeTable,
    ) -> Result<Self> {
        if !local_times.matches(&grid, &time) {
            return Err(Error::InvalidModel(
                "local time table does not match the grid and time slots".into(),
            ));
        }
        if (vehicle.cell_size - grid.cell_size()).abs() > 1e-12 * grid.cell_size() {
            return Err(Error::InvalidModel(format!(
                "vehicle cell size {} differs from grid cell size {}",
                vehicle.cell_size,
                grid.cell_size()
            )));
        }
        Ok(Self {
            grid,
            time,
            field,
            heading,
            vehicle,
            local_times,
        })
    }

    pub fn local_times(&self) -> &LocalTimeTable {
        &self.local_times
    }

    pub fn field(&self) -> &DisturbanceField {
        &self.field
    }
}

impl Dynamics for GridDynamics {
    fn feasible_actions(&self, s: StateId, _slot: usize) -> ActionSet {
        self.grid.inbound_headings(s)
    }

    fn successors(&self, s: StateId, slot: usize, a: Heading, out: &mut Vec<SpatialOutcome>) {
        let t = self.time.time(slot);
        for (next, d, prob) in build_transition(
            &self.grid,
            &self.field,
            &self.heading,
            self.vehicle.max_speed,
            s,
            t,
            a,
        ) {
            let travel_time = self
                .local_times
                .by_heading(s, slot, d)
                .expect("in-grid neighbour has a local time");
            out.push(SpatialOutcome {
                state: next,
                prob,
                travel_time,
            });
        }
    }
}
