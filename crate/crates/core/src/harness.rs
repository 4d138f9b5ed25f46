//! Scenario files and the experiment commands built on them.
//!
//! A scenario is a TOML file. Unknown keys are rejected and every run
//! writes the fully resolved configuration next to its outputs. Each CSV
//! starts with a `# config_hash=<sha256>` line identifying the resolved
//! configuration. Wall-clock timings go to `<out>/logs/` so the other files
//! are identical across reruns.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disturbance::{DisturbanceField, GridDescriptor, GriddedField};
use crate::error::{Error, Result};
use crate::model::{Grid, Policy, RewardScheme, StateId, TimeGrid, TvmdpModel};
use crate::par::Workers;
use crate::ppt::{compute_moments, expected_ppt, MomentOptions, PptMoments};
use crate::sim::{self, PolicyStats};
use crate::solvers::{self, Solution, SolverConfig, SolverKind};
use crate::transition::{
    estimate_local_times_mc, GaussianHeadingModel, GridDynamics, LocalTimeTable, McSettings,
    VehicleModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid: GridConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub transition: TransitionConfig,
    pub vehicle: VehicleConfig,
    #[serde(default)]
    pub local_times: LocalTimesConfig,
    #[serde(default)]
    pub rewards: RewardScheme,
    #[serde(default = "default_discount")]
    pub discount: f64,
    pub task: TaskConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunConfig,
}

fn default_discount() -> f64 {
    0.95
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "one")]
    pub cell_size: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub slots: usize,
    #[serde(default = "one")]
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Uniform {
        vx: f64,
        vy: f64,
    },
    SelfSpinning {
        magnitude: f64,
        omega: f64,
    },
    Vortex {
        radius: f64,
        omega: f64,
        center_x: f64,
        center_y: f64,
    },
    /// Samples in a CSV plus a TOML lattice descriptor; relative paths are
    /// taken from the scenario file's directory.
    Gridded {
        csv: PathBuf,
        descriptor: PathBuf,
    },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Uniform { vx: 0.0, vy: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionConfig {
    /// Variance of the Gaussian heading model (rad^2).
    pub heading_variance: f64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            heading_variance: 0.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub max_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum LocalTimesConfig {
    /// `h = 1` everywhere.
    #[default]
    Unit,
    MonteCarlo {
        #[serde(default = "default_trials")]
        trials: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        heading_variance: f64,
    },
    /// A table written by `estimate-local-times`.
    File { path: PathBuf },
}

fn default_trials() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    /// `[row, col]` of the start cell.
    pub start: [usize; 2],
    pub goal: [usize; 2],
    #[serde(default)]
    pub obstacles: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub solvers: Vec<SolverKind>,
    pub rollouts: usize,
    pub seed: u64,
    /// Step cap per rollout; defaults to twice the slot count.
    pub max_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solvers: SolverKind::ALL.to_vec(),
            rollouts: 100,
            seed: 0,
            max_steps: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                text[..s.start.min(text.len())].matches('\n').count() as u64 + 1
            });
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate().map_err(|message| Error::Config {
            path: path.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let in_grid = |[r, c]: [usize; 2], what: &str| {
            if r < self.grid.rows && c < self.grid.cols {
                Ok(())
            } else {
                Err(format!(
                    "{what} ({r}, {c}) is outside the {}x{} grid",
                    self.grid.rows, self.grid.cols
                ))
            }
        };
        in_grid(self.task.start, "start")?;
        in_grid(self.task.goal, "goal")?;
        for o in &self.task.obstacles {
            in_grid(*o, "obstacle")?;
            if *o == self.task.goal || *o == self.task.start {
                return Err(format!(
                    "obstacle ({}, {}) overlaps the start or goal",
                    o[0], o[1]
                ));
            }
        }
        if self.time.slots == 0 {
            return Err("time.slots must be at least 1".into());
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return Err(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            ));
        }
        if self.run.rollouts == 0 {
            return Err("run.rollouts must be at least 1".into());
        }
        if self.run.solvers.is_empty() {
            return Err("run.solvers must name at least one solver".into());
        }
        self.solver.validate().map_err(|e| e.to_string())
    }

    /// The configuration with every default filled in.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    /// SHA-256 of [`Self::resolved_toml`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn header_comment(&self) -> String {
        format!("config_hash={}", self.hash())
    }
}

/// Creates `path` and writes `# {comment}` before handing out a CSV writer.
pub fn csv_writer(path: &Path, comment: &str) -> Result<csv::Writer<File>> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "# {comment}").map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

/// A scenario with its model built.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub model: TvmdpModel,
    pub start: StateId,
    pub field: Arc<DisturbanceField>,
    pub local_times: LocalTimeTable,
}

impl Scenario {
    /// Builds the model. Relative file paths resolve against `base_dir`.
    pub fn build(config: ScenarioConfig, base_dir: &Path, workers: &Workers) -> Result<Self> {
        let g = &config.grid;
        let grid = Grid::with_cell_size(g.rows, g.cols, g.cell_size)?;
        let time = TimeGrid::uniform(config.time.slots, config.time.step)?;
        let field = Arc::new(build_field(&config.field, base_dir)?);
        let vehicle = VehicleModel::new(config.vehicle.max_speed, g.cell_size)?;
        let local_times = match &config.local_times {
            LocalTimesConfig::Unit => LocalTimeTable::unit(&grid, &time),
            LocalTimesConfig::MonteCarlo {
                trials,
                seed,
                heading_variance,
            } => estimate_local_times_mc(
                &field,
                &vehicle,
                &grid,
                &time,
                &McSettings {
                    trials: *trials,
                    seed: *seed,
                    heading_variance: *heading_variance,
                },
                workers,
            )?,
            LocalTimesConfig::File { path } => {
                LocalTimeTable::load(&grid, &time, &base_dir.join(path))?
            }
        };
        let heading = GaussianHeadingModel::new(config.transition.heading_variance)?;
        let dynamics = GridDynamics::new(
            grid,
            time.clone(),
            field.clone(),
            heading,
            vehicle,
            local_times.clone(),
        )?;
        let cell = |[r, c]: [usize; 2]| grid.state(r, c).expect("validated cell");
        let start = cell(config.task.start);
        let model = TvmdpModel::builder(grid, time, Arc::new(dynamics))
            .rewards(config.rewards)
            .discount(config.discount)
            .goal(cell(config.task.goal))
            .obstacles(config.task.obstacles.iter().map(|o| cell(*o)))
            .build()?;
        Ok(Self {
            config,
            base_dir: base_dir.to_path_buf(),
            model,
            start,
            field,
            local_times,
        })
    }

    /// Loads and builds the scenario at `path`.
    pub fn load(path: &Path, workers: &Workers) -> Result<Self> {
        let config = ScenarioConfig::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::build(config, base, workers)
    }

    pub fn header_comment(&self) -> String {
        self.config.header_comment()
    }

    pub fn max_steps(&self) -> usize {
        self.config
            .run
            .max_steps
            .unwrap_or_else(|| sim::default_max_steps(&self.model))
    }

    pub fn solve(&self, kind: SolverKind, workers: &Workers) -> Result<Solution> {
        solvers::solve(&self.model, kind, self.start, &self.config.solver, workers)
    }
}

fn build_field(cfg: &FieldConfig, base_dir: &Path) -> Result<DisturbanceField> {
    match cfg {
        FieldConfig::Uniform { vx, vy } => Ok(DisturbanceField::Uniform { vx: *vx, vy: *vy }),
        FieldConfig::SelfSpinning { magnitude, omega } => {
            DisturbanceField::self_spinning(*magnitude, *omega)
        }
        FieldConfig::Vortex {
            radius,
            omega,
            center_x,
            center_y,
        } => DisturbanceField::vortex(*radius, *omega, *center_x, *center_y),
        FieldConfig::Gridded { csv, descriptor } => Ok(DisturbanceField::Gridded(
            GriddedField::load(&base_dir.join(csv), &base_dir.join(descriptor))?,
        )),
    }
}

/// Moments of a policy's passage times with each row evaluated at its own
/// expected arrival: the expected times are refreshed until they stop
/// changing (at most 50 rounds) before the variances are taken.
pub fn policy_moments(
    model: &TvmdpModel,
    policy: &Policy,
    s0: StateId,
    opts: &MomentOptions,
    workers: &Workers,
) -> Result<PptMoments> {
    let mut mu = vec![0.0; model.state_count()];
    for _ in 0..50 {
        let next = expected_ppt(model, policy, s0, &mu, opts, workers)?.mu;
        let tg = model.time_grid();
        let same_slots = next
            .iter()
            .zip(&mu)
            .all(|(a, b)| tg.snap(*a) == tg.snap(*b));
        mu = next;
        if same_slots {
            break;
        }
    }
    Ok(compute_moments(model, policy, s0, &mu, opts, workers)?.0)
}

fn prepare_out(out: &Path, cfg: &ScenarioConfig) -> Result<()> {
    fs::create_dir_all(out.join("logs")).map_err(|e| Error::io(out, e))?;
    let path = out.join("resolved_config.toml");
    fs::write(&path, cfg.resolved_toml()).map_err(|e| Error::io(&path, e))
}

/// Files written by one solver run.
#[derive(Clone, Debug)]
pub struct SolveOutputs {
    pub solution: Solution,
    pub moments: PptMoments,
    pub files: Vec<PathBuf>,
}

fn write_solution(
    scn: &Scenario,
    sol: &Solution,
    out: &Path,
    workers: &Workers,
) -> Result<SolveOutputs> {
    let comment = scn.header_comment();
    let slots = scn.model.slot_count();
    let name = sol.kind.name();
    let mut files = Vec::new();
    let p = out.join(format!("policy_{name}.csv"));
    solvers::write_policy_csv(&sol.policy, slots, &p, &comment)?;
    files.push(p);
    let p = out.join(format!("value_{name}.csv"));
    solvers::write_value_csv(&sol.values, slots, &p, &comment)?;
    files.push(p);
    let moments = policy_moments(
        &scn.model,
        &sol.policy,
        scn.start,
        &scn.config.solver.moment_options(),
        workers,
    )?;
    let p = out.join(format!("moments_{name}.csv"));
    moments.write_csv(&p, &comment)?;
    files.push(p);
    if let Some(rs) = &sol.reachable {
        let p = out.join(format!("reachable_{name}.csv"));
        rs.write_csv(&p, &comment)?;
        files.push(p);
    }
    Ok(SolveOutputs {
        solution: sol.clone(),
        moments,
        files,
    })
}

fn write_iterations(scn: &Scenario, solutions: &[&Solution], out: &Path) -> Result<()> {
    let comment = scn.header_comment();
    let full = scn.model.state_count() * scn.model.slot_count();
    let p = out.join("reduced_space.csv");
    let mut w = csv_writer(&p, &comment)?;
    let e = csv_err(&p);
    w.write_record([
        "solver",
        "iteration",
        "reachable_size",
        "full_size",
        "fraction",
        "cumulative_visited",
        "sweeps",
        "delta",
        "policy_changes",
    ])
    .map_err(&e)?;
    for sol in solutions {
        for r in &sol.iterations {
            let size = r.reachable_size.map_or(String::new(), |s| s.to_string());
            let frac = r
                .reachable_size
                .map_or(String::new(), |s| (s as f64 / full as f64).to_string());
            let visited = r
                .cumulative_visited
                .map_or(String::new(), |s| s.to_string());
            w.write_record([
                sol.kind.name().to_string(),
                r.iteration.to_string(),
                size,
                full.to_string(),
                frac,
                visited,
                r.sweeps.to_string(),
                r.delta.to_string(),
                r.policy_changes.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|err| Error::io(&p, err))?;

    let p = out.join("logs").join("timing.csv");
    let mut w = csv_writer(&p, &comment)?;
    let e = csv_err(&p);
    w.write_record([
        "solver",
        "iteration",
        "seconds",
        "moment_seconds",
        "vi_seconds",
        "burn_in_seconds",
    ])
    .map_err(&e)?;
    for sol in solutions {
        for r in &sol.iterations {
            w.write_record([
                sol.kind.name().to_string(),
                r.iteration.to_string(),
                r.seconds.to_string(),
                r.moment_seconds.to_string(),
                r.vi_seconds.to_string(),
                sol.burn_in_seconds.to_string(),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|err| Error::io(&p, err))
}

/// `solve`: runs one solver and writes its policy, values, moments and
/// reachable space.
pub fn run_solve(
    scn: &Scenario,
    kind: SolverKind,
    out: &Path,
    workers: &Workers,
) -> Result<SolveOutputs> {
    prepare_out(out, &scn.config)?;
    let sol = scn.solve(kind, workers)?;
    let outputs = write_solution(scn, &sol, out, workers)?;
    write_iterations(scn, &[&sol], out)?;
    Ok(outputs)
}

/// Moment-phase wall clock of the reachable-space solver's final policy
/// with a given worker count (best of `repeats`).
pub fn time_moment_phase(
    scn: &Scenario,
    policy: &Policy,
    workers: &Workers,
    repeats: usize,
) -> Result<f64> {
    let opts = scn.config.solver.moment_options();
    let mu = policy_moments(&scn.model, policy, scn.start, &opts, &Workers::serial())?.mu;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        compute_moments(&scn.model, policy, scn.start, &mu, &opts, workers)?;
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct BenchmarkOutputs {
    pub solutions: Vec<Solution>,
    pub stats: Vec<PolicyStats>,
}

/// `benchmark`: runs every configured solver, evaluates the policies on
/// the same rollout streams and writes `stats.csv`, `reduced_space.csv`
/// and timing logs.
pub fn run_benchmark(scn: &Scenario, out: &Path, workers: &Workers) -> Result<BenchmarkOutputs> {
    prepare_out(out, &scn.config)?;
    let mut solutions = Vec::new();
    for kind in &scn.config.run.solvers {
        let sol = scn.solve(*kind, workers)?;
        write_solution(scn, &sol, out, workers)?;
        solutions.push(sol);
    }
    let named: Vec<(String, Policy)> = solutions
        .iter()
        .map(|s| (s.kind.name().to_string(), s.policy.clone()))
        .collect();
    let run = &scn.config.run;
    let stats = sim::benchmark(
        &scn.model,
        &named,
        scn.start,
        run.rollouts,
        run.seed,
        scn.max_steps(),
        workers,
    )?;
    write_stats(scn, &solutions, &stats, &out.join("stats.csv"))?;
    write_iterations(scn, &solutions.iter().collect::<Vec<_>>(), out)?;

    if let Some(sol) = solutions.iter().find(|s| s.kind == SolverKind::Alg2) {
        let p = out.join("logs").join("moment_workers.csv");
        let mut w = csv_writer(&p, &scn.header_comment())?;
        let e = csv_err(&p);
        w.write_record(["workers", "moment_seconds"]).map_err(&e)?;
        let mut counts = vec![1];
        if workers.count() > 1 {
            counts.push(workers.count());
        }
        for c in counts {
            let secs = time_moment_phase(scn, &sol.policy, &Workers::new(c), 3)?;
            w.write_record([c.to_string(), secs.to_string()])
                .map_err(&e)?;
        }
        w.flush().map_err(|err| Error::io(&p, err))?;
    }
    Ok(BenchmarkOutputs { solutions, stats })
}

fn write_stats(
    scn: &Scenario,
    solutions: &[Solution],
    stats: &[PolicyStats],
    path: &Path,
) -> Result<()> {
    let mut w = csv_writer(path, &scn.header_comment())?;
    let e = csv_err(path);
    w.write_record([
        "solver",
        "rollouts",
        "success_rate",
        "mean_transitions",
        "sd_transitions",
        "mean_length",
        "sd_length",
        "mean_elapsed",
        "mean_return",
        "sd_return",
        "outer_iterations",
        "converged",
    ])
    .map_err(&e)?;
    for (sol, s) in solutions.iter().zip(stats) {
        w.write_record([
            s.name.clone(),
            s.rollouts.to_string(),
            s.success_rate.to_string(),
            s.mean_transitions.to_string(),
            s.sd_transitions.to_string(),
            s.mean_length.to_string(),
            s.sd_length.to_string(),
            s.mean_elapsed.to_string(),
            s.mean_return.to_string(),
            s.sd_return.to_string(),
            sol.iterations.len().to_string(),
            sol.converged.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

/// `rollout`: runs a policy file `n` times and writes per-step traces and a
/// per-rollout summary.
pub fn run_rollout(
    scn: &Scenario,
    policy_path: &Path,
    n: usize,
    seed: u64,
    out: &Path,
    workers: &Workers,
) -> Result<Vec<sim::Rollout>> {
    prepare_out(out, &scn.config)?;
    let policy =
        solvers::read_policy_csv(policy_path, scn.model.state_count(), scn.model.slot_count())?;
    policy.check_feasible(&scn.model)?;
    let runs = sim::rollouts(
        &scn.model,
        &policy,
        scn.start,
        seed,
        n,
        scn.max_steps(),
        workers,
    )?;
    let comment = scn.header_comment();
    sim::write_traces(&scn.model, &runs, &out.join("trajectories.csv"), &comment)?;
    let p = out.join("rollouts.csv");
    let mut w = csv_writer(&p, &comment)?;
    let e = csv_err(&p);
    w.write_record([
        "rollout",
        "success",
        "outcome",
        "transitions",
        "elapsed",
        "length",
        "return",
    ])
    .map_err(&e)?;
    for (i, r) in runs.iter().enumerate() {
        w.write_record([
            i.to_string(),
            (r.succeeded() as u8).to_string(),
            r.outcome.name().to_string(),
            r.transitions().to_string(),
            r.elapsed_time.to_string(),
            r.trajectory_length.to_string(),
            r.discounted_return.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|err| Error::io(&p, err))?;
    Ok(runs)
}

/// `estimate-local-times`: writes the scenario's local-time table.
pub fn run_estimate_local_times(scn: &Scenario, out: &Path) -> Result<PathBuf> {
    prepare_out(out, &scn.config)?;
    let p = out.join("local_times.csv");
    scn.local_times
        .save(scn.model.grid(), &p, &scn.header_comment())?;
    Ok(p)
}

/// `export-field`: samples the field at every cell centre and slot time
/// and writes it in the gridded format (`field.csv` plus `field.toml`).
pub fn run_export_field(scn: &Scenario, out: &Path) -> Result<(PathBuf, PathBuf)> {
    prepare_out(out, &scn.config)?;
    let g = scn.model.grid();
    let tg = scn.model.time_grid();
    let dt = if tg.len() > 1 {
        tg.time(1) - tg.time(0)
    } else {
        1.0
    };
    let desc = GridDescriptor {
        nx: g.cols(),
        ny: g.rows(),
        nt: tg.len(),
        x0: 0.0,
        y0: 0.0,
        t0: 0.0,
        dx: g.cell_size(),
        dy: g.cell_size(),
        dt,
    };
    let sampled = GriddedField::sample(&scn.field, desc)?;
    let csv = out.join("field.csv");
    let toml = out.join("field.toml");
    sampled.save(&csv, &toml, &scn.header_comment())?;
    Ok((csv, toml))
}
