//! Command-line front end. The `nes` binary only forwards to [`main_with_args`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::engine::{self, RunOptions, TrajectoryLog};
use crate::error::{NesError, Result};
use crate::game::{self, ORACLE_MAX_SWEEPS, ORACLE_TOL};
use crate::output::{self, OracleReport};
use crate::plot::{self, PlotKind};
use crate::scenario::{self, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "nes",
    version,
    about = "Distributed Nash equilibrium seeking simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Scenario file, or the name of a bundled scenario.
    pub scenario: String,
    /// Override a run parameter, e.g. `--set alpha=0.02`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate and write trajectory.csv, summary.json and plots.
    Run {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long)]
        no_plots: bool,
        /// Log every N-th round.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Check a scenario without running it.
    Validate { scenario: String },
    /// Synthesize and report the tracking gains.
    Gains {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Compute the equilibrium centrally.
    Oracle {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Run once per dropout fraction and tabulate convergence.
    SweepDropout {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5")]
        fractions: Vec<f64>,
        /// Summed equilibrium error counted as reached.
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
    },
    /// Run and render only the requested figures.
    Plot {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long = "kind", required = true)]
        kinds: Vec<String>,
        #[arg(long)]
        stride: Option<usize>,
    },
}

/// Reads a file, falling back to the bundled scenario of the same name.
pub fn resolve_scenario(arg: &str, overrides: &[String]) -> Result<Scenario> {
    let path = Path::new(arg);
    let base = if path.exists() {
        Scenario::load(path)?
    } else if let Some(text) = scenario::bundled(arg) {
        log::info!("using bundled scenario {arg}");
        scenario::parse_scenario(text.as_bytes())?
    } else {
        return Err(NesError::InvalidArgument(format!("no scenario at {arg:?}")));
    };
    if overrides.is_empty() {
        Ok(base)
    } else {
        base.with_overrides(overrides)
    }
}

fn exit_code(e: &NesError) -> i32 {
    match e {
        NesError::DivergenceDetected { .. } => EXIT_DIVERGED,
        _ => EXIT_INVALID,
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("NES_LOG_LEVEL", "error");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_options(s: &Scenario, stride: Option<usize>) -> RunOptions {
    let mut o = RunOptions::from_scenario(s);
    if let Some(st) = stride {
        o.stride = st;
    }
    o
}

fn write_run_outputs(log: &TrajectoryLog, out: &Path, plots: &[PlotKind]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    output::write_csv_file(log, out.join("trajectory.csv"))?;
    let summary = output::write_summary(log, &log.oracle)?;
    output::write_json(&summary, out.join("summary.json"))?;
    for &k in plots {
        plot::write_plot(log, k, out)?;
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Validate { scenario } => {
            let s = resolve_scenario(&scenario, &[])?;
            eprintln!(
                "{}: valid ({} agents, {} dimensions, {} links)",
                s.name(),
                s.n_agents(),
                s.dim(),
                s.graph.edge_count()
            );
            Ok(EXIT_OK)
        }
        Command::Run {
            common,
            no_plots,
            stride,
        } => {
            let s = resolve_scenario(&common.scenario, &common.set)?;
            let outcome = engine::run_with(&s, run_options(&s, stride))?;
            let plots: &[PlotKind] = if no_plots { &[] } else { &PlotKind::ALL };
            write_run_outputs(&outcome.log, &common.out, plots)?;
            let log = &outcome.log;
            eprintln!(
                "{}: {} rounds, converged = {}, summed error {:.3e}, wrote {}",
                s.name(),
                log.iterations,
                log.converged,
                log.last.ne_err_sum,
                common.out.display()
            );
            Ok(if log.converged {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Command::Gains { common } => {
            let s = resolve_scenario(&common.scenario, &common.set)?;
            let gains = engine::synthesize_all(&s)?;
            let report = output::gains_report(&s, &gains);
            for g in &report {
                eprintln!(
                    "agent {} channel {}: K = {:?}, Psi = {:?}, G = {:?}, residuals = ({:.1e}, {:.1e}), rho = {:.4}",
                    g.agent, g.channel, g.k, g.psi, g.g, g.residual_state, g.residual_output, g.spectral_radius
                );
            }
            std::fs::create_dir_all(&common.out)?;
            output::write_json(&report, common.out.join("gains.json"))?;
            Ok(EXIT_OK)
        }
        Command::Oracle { common } => {
            let s = resolve_scenario(&common.scenario, &common.set)?;
            let ne = game::compute_oracle(&s.game)?;
            let check = game::best_response_fixed_point(&s.game, ORACLE_TOL, ORACLE_MAX_SWEEPS)?;
            let gap = ne.sup_distance(&check);
            eprintln!(
                "{}: {:?} equilibrium, residual {:.1e}, best-response gap {:.1e}",
                s.name(),
                ne.method,
                ne.residual,
                gap
            );
            for (i, y) in ne.y_star.iter().enumerate() {
                eprintln!("  agent {i}: {:?}", y.as_slice());
            }
            std::fs::create_dir_all(&common.out)?;
            output::write_json(
                &OracleReport::new(&ne, Some(gap)),
                common.out.join("oracle.json"),
            )?;
            Ok(EXIT_OK)
        }
        Command::SweepDropout {
            common,
            fractions,
            threshold,
        } => {
            let base = resolve_scenario(&common.scenario, &common.set)?;
            sweep_dropout(&base, &fractions, threshold, &common.out)?;
            Ok(EXIT_OK)
        }
        Command::Plot {
            common,
            kinds,
            stride,
        } => {
            let kinds = kinds
                .iter()
                .map(|k| k.parse::<PlotKind>())
                .collect::<Result<Vec<_>>>()?;
            let s = resolve_scenario(&common.scenario, &common.set)?;
            let outcome = engine::run_with(&s, run_options(&s, stride))?;
            std::fs::create_dir_all(&common.out)?;
            for k in kinds {
                plot::write_plot(&outcome.log, k, &common.out)?;
            }
            Ok(EXIT_OK)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    /// First logged round whose summed error falls below the threshold.
    pub iterations_to_threshold: Option<usize>,
    pub final_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: String,
}

fn sweep_cell(base: &Scenario, fraction: f64, threshold: f64, dir: &Path) -> Result<SweepRow> {
    let s = base.with_overrides(&[format!("dropout_fraction={fraction}")])?;
    match engine::run(&s) {
        Ok(out) => {
            let log = &out.log;
            std::fs::create_dir_all(dir)?;
            plot::write_plot(log, PlotKind::ErrorSum, dir)?;
            let hit = log
                .rows
                .iter()
                .find(|r| r.ne_err_sum < threshold)
                .map(|r| r.step);
            Ok(SweepRow {
                fraction,
                iterations_to_threshold: hit,
                final_error: log.last.ne_err_sum,
                iterations: log.iterations,
                converged: log.converged,
                status: if log.converged {
                    "converged"
                } else {
                    "max_iters"
                }
                .into(),
            })
        }
        Err(NesError::DivergenceDetected { step, .. }) => Ok(SweepRow {
            fraction,
            iterations_to_threshold: None,
            final_error: f64::NAN,
            iterations: step,
            converged: false,
            status: "diverged".into(),
        }),
        Err(e) => Err(e),
    }
}

/// Runs every fraction in its own thread and writes `sweep.csv` plus a
/// per-fraction error plot under `out`.
pub fn sweep_dropout(
    base: &Scenario,
    fractions: &[f64],
    threshold: f64,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(NesError::InvalidArgument(
            "no dropout fractions given".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let rows: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = fractions
            .iter()
            .map(|&f| {
                let dir = out.join(format!("fraction_{f}"));
                scope.spawn(move || sweep_cell(base, f, threshold, &dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| {
                    Err(NesError::InvalidArgument("sweep worker panicked".into()))
                })
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record([
        "fraction",
        "iterations_to_threshold",
        "final_error",
        "iterations",
        "converged",
        "status",
    ])?;
    for r in &rows {
        w.write_record([
            format!("{:?}", r.fraction),
            r.iterations_to_threshold
                .map(|k| k.to_string())
                .unwrap_or_default(),
            format!("{:?}", r.final_error),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.status.clone(),
        ])?;
        eprintln!(
            "dropout {:.2}: {} rounds, summed error {:.3e}, {}",
            r.fraction, r.iterations, r.final_error, r.status
        );
    }
    w.flush()?;
    Ok(rows)
}
