use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scalesim_cli::config::ExperimentConfig;
use scalesim_cli::losses::{format_csv, format_table, rank, read_losses};
use scalesim_cli::run::{run_experiment, RunOptions};
use scalesim_cli::{trace, CliError};

#[derive(Parser)]
#[command(name = "scalesim", version, about = "Predictive auto-scaling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy x alpha x seed combination of a config.
    Run {
        config: PathBuf,
        /// Worker threads (default: number of cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        /// Output directory (default: the config's, else out/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Overrides the config's master seed.
        #[arg(long, env = "SCALESIM_SEED")]
        seed: Option<u64>,
        /// Comma-separated subset of the config's policy names.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
        /// Comma-separated alphas replacing the config's list.
        #[arg(long = "alpha", value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Overrides the number of seeds.
        #[arg(long)]
        replications: Option<u64>,
        /// Skip per-run trace files.
        #[arg(long)]
        no_traces: bool,
    },
    /// Rank policies from one or more losses.csv files.
    Compare {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Plot-ready columns from a run trace.
    Plotdata {
        trace: PathBuf,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Run {
            config,
            jobs,
            out,
            seed_offset,
            seed,
            policies,
            alphas,
            replications,
            no_traces,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let opts = RunOptions {
                jobs,
                out,
                seed_offset,
                master_seed: seed,
                policies,
                alphas,
                replications,
                write_traces: no_traces.then_some(false),
            };
            let report = run_experiment(&cfg, &opts)?;
            let rows = report.rows();
            print!("{}", format_table(&rank(&rows)));
            eprintln!(
                "wrote {} runs to {}",
                report.summary.runs,
                report.out_dir.display()
            );
            if report.summary.failed > 0 {
                for f in &report.summary.failures {
                    eprintln!(
                        "run failed: policy {} alpha {} seed {} after {} steps: {}",
                        f.policy, f.alpha, f.seed, f.steps_completed, f.error
                    );
                }
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { files, format } => {
            let mut rows = Vec::new();
            for f in &files {
                rows.extend(read_losses(f)?);
            }
            let rankings = rank(&rows);
            let text = match format {
                Format::Table => format_table(&rankings),
                Format::Csv => format_csv(&rankings),
            };
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Plotdata { trace: path, out } => {
            match out {
                Some(o) => {
                    let file = std::fs::File::create(&o).map_err(|e| CliError::Io {
                        path: o.display().to_string(),
                        source: e,
                    })?;
                    trace::plotdata(&path, std::io::BufWriter::new(file))?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    trace::plotdata(&path, &mut lock)?;
                    lock.flush().ok();
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
