use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dp_nash::bounds::{tune_parameters, TuningGrid, DEFAULT_TUNING_Q_BAR};
use dp_nash::harness::{self, output, Scenario};
use dp_nash::privacy::{epsilon_of, sensitivity_audit, AdjacentPair};
use dp_nash::{Execution, NoiseStream, Seeker};

#[derive(Parser)]
#[command(
    name = "dp-nash",
    version,
    about = "Differentially private distributed Nash equilibrium seeking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Worker threads for replica fan-out (results do not depend on it).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Single recorded execution, written to trace.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Which replica's noise stream to use.
        #[arg(long, default_value_t = 0)]
        replica: u64,
    },
    /// Monte Carlo statistics plus the bound comparison.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Terminal error across noise scales.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated noise scales.
        #[arg(long, value_delimiter = ',')]
        d: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Histograms of terminal actions and estimates.
    Dist {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = harness::DEFAULT_DISTRIBUTION_REPLICAS)]
        replicas: usize,
    },
    /// Closed-form bounds for the scenario.
    Bounds {
        #[command(flatten)]
        common: Common,
    },
    /// Grid search for the stepsize schedule at a privacy budget.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Target budget; defaults to the scenario's own.
        #[arg(long)]
        epsilon: Option<f64>,
        /// C_LO,C_HI,N_C,N_Q
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 10.0, 31.0, 49.0])]
        grid: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_TUNING_Q_BAR)]
        q_bar: f64,
    },
    /// Coupled-execution check of the privacy budget.
    Audit {
        #[command(flatten)]
        common: Common,
        /// 1-based player whose target is perturbed.
        #[arg(long, default_value_t = 1)]
        player: usize,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        delta: f64,
    },
}

impl Common {
    fn load(&self) -> anyhow::Result<Scenario> {
        let scenario = Scenario::load(&self.scenario)?;
        let scenario = match self.seed {
            Some(seed) => scenario.with_seed(seed),
            None => scenario,
        };
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(scenario)
    }

    fn execution(&self) -> anyhow::Result<Execution> {
        if self.jobs == Some(0) {
            bail!(dp_nash::Error::InvalidParameter(
                "--jobs must be positive".into()
            ));
        }
        #[cfg(feature = "parallel")]
        if let Some(jobs) = self.jobs {
            // Only the first call can set the global pool; later ones are no-ops.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global();
        }
        Ok(Execution::from_jobs(self.jobs))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn note_written(paths: &[&Path]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { common, replica } => {
            let s = common.load()?;
            let noise = NoiseStream::new(s.noise, s.seed(), replica);
            let trace = Seeker::new(&s.game, &s.mixing, s.params, noise)?
                .with_bound_box(&s.bound_box)
                .run(s.x0(), true)?;
            let path = common.path("trace.csv");
            output::write_trace_csv(&trace, &path)?;
            note_written(&[&path]);
            let last = trace.final_state();
            println!("x({}) = {:?}", last.k, last.x);
        }
        Command::Mc { common, replicas } => {
            let mut s = common.load()?;
            if let Some(r) = replicas {
                s = s.with_replicas(r)?;
            }
            let exec = common.execution()?;
            let summary = harness::run_monte_carlo(&s, &exec)?;
            let report = s.bound_report()?;
            let verdict = harness::compare_to_bounds(&summary, &report)?;
            let paths = [
                common.path("mc_summary.csv"),
                common.path("mc_summary.json"),
                common.path("bounds.json"),
                common.path("dominance.json"),
            ];
            output::write_summary_csv(&summary, &paths[0])?;
            output::write_json(&summary, &paths[1])?;
            output::write_json(&report, &paths[2])?;
            output::write_json(&verdict, &paths[3])?;
            note_written(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>());
            if let Some(t) = summary.terminal_mse() {
                println!(
                    "terminal E|x - x*|^2 = {:.6} +/- {:.6} over {} replicas (bound {:.6e})",
                    t.mean, t.stderr, summary.replicas, report.mse.total
                );
            }
            for c in &verdict.claims {
                println!(
                    "{:<18} {} (min margin {:.6e})",
                    c.claim,
                    if c.passed { "ok" } else { "VIOLATED" },
                    c.min_margin
                );
            }
            if !verdict.certified {
                println!(
                    "warning: {} replicas left the certified box",
                    summary.box_exits
                );
            }
            if !verdict.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Sweep {
            common,
            d,
            replicas,
        } => {
            let mut s = common.load()?;
            if let Some(r) = replicas {
                s = s.with_replicas(r)?;
            }
            let exec = common.execution()?;
            let d_values = d.unwrap_or_else(|| harness::DEFAULT_SWEEP.to_vec());
            let sweep = harness::sweep_noise_scale(&s, &d_values, &exec)?;
            let (csv, json) = (common.path("sweep.csv"), common.path("sweep.json"));
            output::write_sweep_csv(&sweep, &csv)?;
            output::write_json(&sweep, &json)?;
            note_written(&[&csv, &json]);
            for r in &sweep.rows {
                println!("d = {:<5} mse = {:.6} +/- {:.6}", r.d, r.mse, r.stderr);
            }
        }
        Command::Dist { common, replicas } => {
            let s = common.load()?;
            let exec = common.execution()?;
            let dist = harness::terminal_distribution(&s, replicas, &exec)?;
            let (csv, json) = (
                common.path("distribution.csv"),
                common.path("distribution.json"),
            );
            output::write_distribution_csv(&dist, &csv)?;
            output::write_json(&dist, &json)?;
            note_written(&[&csv, &json]);
            for p in &dist.players {
                println!(
                    "player {}: x mode {:.4} (x* = {:.4}), y mode {:.4} (mean x* = {:.4})",
                    p.player,
                    p.x.mode,
                    dist.equilibrium[p.player - 1],
                    p.y.mode,
                    dist.equilibrium_mean
                );
            }
        }
        Command::Bounds { common } => {
            let s = common.load()?;
            let report = s.bound_report()?;
            let path = common.path("bounds.json");
            output::write_json(&report, &path)?;
            note_written(&[&path]);
            println!("terminal mse bound D = {:.6e}", report.mse.total);
            if let Some(eps) = report.epsilon {
                println!("epsilon = {eps:.6}");
            }
        }
        Command::Tune {
            common,
            epsilon,
            grid,
            q_bar,
        } => {
            let [c_lo, c_hi, n_c, n_q] = grid[..] else {
                bail!(dp_nash::Error::InvalidParameter(format!(
                    "--grid takes C_LO,C_HI,N_C,N_Q, got {} values",
                    grid.len()
                )));
            };
            let s = common.load()?;
            common.execution()?;
            let inputs = s.bound_inputs()?;
            let epsilon = match epsilon {
                Some(e) => e,
                None => epsilon_of(
                    s.params.c,
                    s.params.q,
                    s.noise.d,
                    s.noise.q_bar,
                    inputs.gradient_bound,
                )
                .context("scenario has no privacy budget; pass --epsilon")?,
            };
            let grid = TuningGrid {
                q_bar,
                ..TuningGrid::new(c_lo, c_hi, n_c as usize, n_q as usize)
            };
            let result = tune_parameters(&inputs, epsilon, &grid)?;
            let path = common.path("tune.json");
            output::write_json(&result, &path)?;
            note_written(&[&path]);
            println!(
                "epsilon = {epsilon:.6}: c = {:.6}, q = {:.6}, d = {:.6}, D = {:.6e}",
                result.c, result.q, result.d, result.d_bound
            );
        }
        Command::Audit {
            common,
            player,
            delta,
        } => {
            let s = common.load()?;
            if player == 0 || player > s.n_players() {
                bail!(dp_nash::Error::PlayerIndex {
                    index: player,
                    n_players: s.n_players(),
                });
            }
            let i = player - 1;
            let variant = s.game.with_target(i, s.game.targets()[i] + delta)?;
            let pair = AdjacentPair::quadratic(s.game.clone(), variant)?;
            let report = sensitivity_audit(
                &pair,
                &s.mixing,
                &s.params,
                &s.noise,
                s.x0(),
                s.seed(),
                s.constants.gradient_bound,
            )?;
            let path = common.path("audit.json");
            output::write_json(&report, &path)?;
            note_written(&[&path]);
            println!(
                "observation gap {:.3e}, privacy loss {:.6} <= epsilon {:.6}: {}",
                report.observation_gap,
                report.privacy_loss,
                report.epsilon,
                if report.passed { "ok" } else { "FAILED" }
            );
            if !report.passed {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<dp_nash::Error>()
                .map_or(1, dp_nash::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
