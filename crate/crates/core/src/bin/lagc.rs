use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lagc_core::analysis::write_reports;
use lagc_core::experiment::{complexity_table, order_stat_oracle, run_experiment, ExperimentSpec, RunOptions, SeedSpec};
use lagc_core::timing::TimingModel;
use lagc_core::Error;

#[derive(Parser)]
#[command(name = "lagc", version, about = "Simulate and analyse straggler-tolerant lazy distributed GD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scheme over every seed and write traces, aggregates and the complexity table.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Output directory; defaults to `[run] output`, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent runs; defaults to the number of cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed count (`5`) or comma list (`1,4,9`), replacing `[run] seeds`.
        #[arg(long)]
        seeds: Option<String>,
        /// Write only complexity.csv.
        #[arg(long)]
        table_only: bool,
    },
    /// Print the predicted complexities, or write them with `--out`.
    Table {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an experiment file without running it.
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Compare closed-form order-statistic means with Monte Carlo estimates.
    Oracle {
        /// Take the timing law from an experiment file.
        #[arg(long, conflicts_with_all = ["eta", "shape"])]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        /// Pareto shape; exponential when absent.
        #[arg(long)]
        shape: Option<f64>,
        #[arg(long, default_value_t = 1)]
        load: usize,
        #[arg(long, default_value_t = 10)]
        max_b: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit 1 for bad input, 2 for failures while running.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) => 1,
        _ => 2,
    }
}

/// An unreadable spec file is bad input, not a runtime failure.
fn read_spec(spec: &Path) -> Result<ExperimentSpec, Error> {
    ExperimentSpec::from_file(spec).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read {}: {io}", spec.display())),
        other => other,
    })
}

fn load(spec: &Path, seeds: Option<&str>) -> Result<ExperimentSpec, Error> {
    let mut parsed = read_spec(spec)?;
    if let Some(text) = seeds {
        parsed.run.seeds = SeedSpec::parse(text)?;
        parsed.validate()?;
    }
    Ok(parsed)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            spec,
            out,
            jobs,
            seeds,
            table_only,
        } => {
            let parsed = load(&spec, seeds.as_deref())?;
            let out = out.or_else(|| parsed.run.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
            let summary = run_experiment(
                &parsed,
                &RunOptions {
                    out: out.clone(),
                    jobs,
                    table_only,
                },
            )?;
            println!("wrote {} files to {}", summary.files.len(), out.display());
        }
        Command::Table { spec, out } => {
            let parsed = load(&spec, None)?;
            let reports = complexity_table(&parsed, &parsed.dataset.generate()?)?;
            match out {
                Some(path) => write_reports(&path, &reports)?,
                None => {
                    println!("{:<24} {:>14} {:>14} {:>14} {:>14}  bound", "scheme", "I", "T", "C", "P");
                    for r in reports {
                        println!(
                            "{:<24} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}  {}",
                            r.scheme, r.iterations, r.time, r.communication, r.computation, r.is_bound_time
                        );
                    }
                }
            }
        }
        Command::Validate { spec } => {
            let parsed = load(&spec, None)?;
            for s in parsed.resolve_schemes()? {
                let c = s.config;
                println!(
                    "{}: M={} M_G={} r={} F={} xi={} D={} step_scale={}",
                    s.name, c.workers, c.group_size, c.redundancy, c.wait_for, c.xi, c.history_depth, s.step_scale
                );
            }
            println!("ok");
        }
        Command::Oracle {
            spec,
            eta,
            shape,
            load: r,
            max_b,
            samples,
            seed,
            out,
        } => {
            let model = match (spec, shape) {
                (Some(path), _) => read_spec(&path)?.timing,
                (None, Some(shape)) => TimingModel::pareto(eta, shape).map_err(|e| Error::Config(e.to_string()))?,
                (None, None) => TimingModel::exponential(eta).map_err(|e| Error::Config(e.to_string()))?,
            };
            let rows = order_stat_oracle(&model, r, max_b, samples, seed)?;
            match out {
                Some(path) => {
                    let mut w = csv::Writer::from_path(path)?;
                    for row in &rows {
                        w.serialize(row)?;
                    }
                    w.flush()?;
                }
                None => {
                    println!("{:>3} {:>3} {:>14} {:>14} {:>10}", "a", "b", "closed", "monte_carlo", "rel_err");
                    for row in &rows {
                        println!(
                            "{:>3} {:>3} {:>14.6e} {:>14.6e} {:>10.3e}",
                            row.a, row.b, row.closed_form, row.monte_carlo, row.relative_error
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
