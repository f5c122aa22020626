use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sitforge::config::load_config;
use sitforge::runner::{regenerate_reports, run_experiment, ExitStatus, RunOptions};

#[derive(Parser)]
#[command(name = "sitforge", version, about = "Continual-learning experiments on a dense network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its reports.
    Run {
        /// JSON config file, or `-` for standard input.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides `seed` in the config).
        #[arg(long)]
        seed_override: Option<u64>,
        /// Only print errors.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rebuild reports from persisted results.
    Report {
        #[arg(long)]
        from: PathBuf,
        /// Defaults to the `--from` directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .init();
}

fn exit(status: ExitStatus) -> ExitCode {
    ExitCode::from(status.code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            init_logging(false);
            match load_config(&config) {
                Ok(cfg) => {
                    let names: Vec<&str> = cfg.strategies.iter().map(|s| s.name.as_str()).collect();
                    println!("ok: {} ({} run(s) of {})", cfg.name, cfg.runs, names.join(", "));
                    exit(ExitStatus::Ok)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(ExitStatus::Input)
                }
            }
        }
        Command::Run {
            config,
            out,
            seed_override,
            quiet,
        } => {
            init_logging(quiet);
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit(ExitStatus::Input);
                }
            };
            let opts = RunOptions {
                seed_override,
                out_dir: out,
                threads: None,
            };
            match run_experiment(&cfg, &opts) {
                Ok(outcome) => {
                    if !quiet {
                        for s in &outcome.strategies {
                            println!(
                                "{:<16} final accuracy {}  BWT {}",
                                s.name,
                                fmt_stat(s.summary.final_accuracy, s.summary.final_accuracy_std),
                                fmt_stat(s.summary.bwt, s.summary.bwt_std)
                            );
                        }
                        if let Some(dir) = &outcome.out_dir {
                            println!("reports in {}", dir.display());
                        }
                    }
                    for f in &outcome.failures {
                        eprintln!("error: {f}");
                    }
                    exit(outcome.status())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(e.status)
                }
            }
        }
        Command::Report { from, out } => {
            init_logging(false);
            let out = out.unwrap_or_else(|| from.clone());
            match regenerate_reports(&from, &out) {
                Ok(summaries) => {
                    for s in &summaries {
                        println!("{}: final accuracy {}", s.name, fmt_stat(s.final_accuracy, s.final_accuracy_std));
                    }
                    exit(ExitStatus::Ok)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit(e.status)
                }
            }
        }
    }
}

fn fmt_stat(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.4} ± {s:.4}"),
        (Some(m), None) => format!("{m:.4}"),
        _ => "n/a".to_string(),
    }
}
