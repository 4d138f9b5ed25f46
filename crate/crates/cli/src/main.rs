use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvmdp::harness::{self, Scenario};
use tvmdp::par::Workers;
use tvmdp::solvers::SolverKind;

#[derive(Parser)]
#[command(
    name = "tvmdp",
    version,
    about = "Plan in time-varying MDPs over gridded current fields"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out/<scenario name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for solvers and rollouts.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write policy, values, moments and reachable space.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "alg2", value_parser = parse_solver)]
        solver: SolverKind,
    },
    /// Run the configured solvers and compare them on paired rollouts.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one solver instead of `run.solvers`.
        #[arg(long, value_parser = parse_solver)]
        solver: Option<SolverKind>,
    },
    /// Roll out a policy file and write trajectories.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Policy CSV written by `solve`.
        #[arg(long)]
        policy: PathBuf,
        #[arg(short, long, default_value_t = 1)]
        n: usize,
        /// Overrides `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write the scenario's local transition times.
    EstimateLocalTimes {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the scenario's current field into the gridded CSV format.
    ExportField {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_solver(s: &str) -> Result<SolverKind, String> {
    s.parse().map_err(|e: tvmdp::Error| e.to_string())
}

fn out_dir(common: &Common, scn: &Scenario) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&scn.config.name))
}

fn load(
    common: &Common,
    workers: &Workers,
    seed: Option<u64>,
    solver: Option<SolverKind>,
) -> tvmdp::Result<Scenario> {
    let mut config = harness::ScenarioConfig::load(&common.config)?;
    if let Some(seed) = seed {
        config.run.seed = seed;
    }
    if let Some(kind) = solver {
        config.run.solvers = vec![kind];
    }
    let base = common.config.parent().unwrap_or(Path::new("."));
    Scenario::build(config, base, workers)
}

fn run(cli: Cli) -> tvmdp::Result<()> {
    match cli.command {
        Command::Solve { common, solver } => {
            let workers = Workers::new(common.workers);
            let scn = load(&common, &workers, None, None)?;
            let out = out_dir(&common, &scn);
            let res = harness::run_solve(&scn, solver, &out, &workers)?;
            let sol = &res.solution;
            println!(
                "{}: {} outer iterations, converged={}, wrote {} files to {}",
                solver,
                sol.iterations.len(),
                sol.converged,
                res.files.len(),
                out.display()
            );
        }
        Command::Benchmark {
            common,
            seed,
            solver,
        } => {
            let workers = Workers::new(common.workers);
            let scn = load(&common, &workers, seed, solver)?;
            let out = out_dir(&common, &scn);
            let res = harness::run_benchmark(&scn, &out, &workers)?;
            println!(
                "{:<10} {:>8} {:>12} {:>12} {:>10}",
                "solver", "success", "transitions", "return", "s/iter"
            );
            for (s, sol) in res.stats.iter().zip(&res.solutions) {
                println!(
                    "{:<10} {:>8.3} {:>12.3} {:>12.4} {:>10.4}",
                    s.name,
                    s.success_rate,
                    s.mean_transitions,
                    s.mean_return,
                    sol.seconds_per_iteration()
                );
            }
        }
        Command::Rollout {
            common,
            policy,
            n,
            seed,
        } => {
            let workers = Workers::new(common.workers);
            let scn = load(&common, &workers, seed, None)?;
            let out = out_dir(&common, &scn);
            let runs = harness::run_rollout(&scn, &policy, n, scn.config.run.seed, &out, &workers)?;
            let ok = runs.iter().filter(|r| r.succeeded()).count();
            println!(
                "{ok}/{} rollouts reached the goal; traces in {}",
                runs.len(),
                out.display()
            );
        }
        Command::EstimateLocalTimes { common } => {
            let workers = Workers::new(common.workers);
            let scn = load(&common, &workers, None, None)?;
            let out = out_dir(&common, &scn);
            let p = harness::run_estimate_local_times(&scn, &out)?;
            println!(
                "wrote {} ({} clipped entries)",
                p.display(),
                scn.local_times.clipped()
            );
        }
        Command::ExportField { common } => {
            let workers = Workers::new(common.workers);
            let scn = load(&common, &workers, None, None)?;
            let out = out_dir(&common, &scn);
            let (csv, desc) = harness::run_export_field(&scn, &out)?;
            println!("wrote {} and {}", csv.display(), desc.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
