use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sparsim::Scale;
use sparsim_cli::{load_spec, report, sweep, CliError, ExperimentSpec};

#[derive(Parser)]
#[command(name = "sparsim", version, about = "Cycle-level simulator for two-sided sparse CNN accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant on every layer and write speedups and breakdowns.
    Run(Common),
    /// Turn features on one at a time starting from barista_no_opts.
    Isolate(Common),
    /// Run barista at three per-node buffer scales and report refetches.
    Sensitivity(Common),
    /// Check every variant's outputs against the direct convolution.
    OracleCheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Args)]
struct Common {
    /// Experiment spec (TOML). Without one the standard suite runs.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; overrides the spec's.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    #[arg(long, env = "SPARSIM_WORKERS")]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentSpec, usize), CliError> {
        let mut spec = match &self.spec {
            Some(p) => load_spec(p)?,
            None => ExperimentSpec::standard_suite(),
        };
        if let Some(o) = &self.out {
            spec.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            spec.seeds = vec![s];
        }
        if let Some(s) = self.scale {
            spec.scale = match s {
                ScaleArg::Desk => Scale::Desk,
                ScaleArg::Full => Scale::Full,
            };
        }
        let workers = match self.workers {
            Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Ok((spec, workers))
    }
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Run(c) => {
            let (spec, workers) = c.resolve()?;
            let results = sweep::run_sweep(&spec, workers)?;
            for a in report::aggregates(&results) {
                println!("{:<14} {:<18} {:>7.3}x", a.group, a.variant, a.speedup_vs_dense);
            }
            report::write_run(&spec.name, &results, &spec.formats, &spec.output_dir)
        }
        Command::Isolate(c) => {
            let (spec, workers) = c.resolve()?;
            let results = sweep::run_isolation(&spec, workers)?;
            for row in report::isolation_plot(&results).rows {
                println!("{:<14} {:<16} {:>7}x", row[0], row[2], row[3]);
            }
            report::write_isolation(&spec.name, &results, &spec.formats, &spec.output_dir)
        }
        Command::Sensitivity(c) => {
            let (spec, workers) = c.resolve()?;
            let results = sweep::run_sensitivity(&spec, workers)?;
            for row in report::refetch_plot(&results).rows {
                println!("{:<14} {:<7} {:>10} B {:>9} refetches/chunk", row[0], row[1], row[2], row[3]);
            }
            report::write_sensitivity(&spec.name, &results, &spec.formats, &spec.output_dir)
        }
        Command::OracleCheck(c) => {
            let (spec, workers) = c.resolve()?;
            let results = sweep::run_oracle_check(&spec, workers)?;
            let bad: Vec<_> = results.iter().filter(|r| !r.matches).collect();
            println!("{} of {} cells match the direct convolution", results.len() - bad.len(), results.len());
            if !bad.is_empty() {
                return Err(CliError::Cells(
                    bad.into_iter()
                        .map(|r| sparsim_cli::CellFailure {
                            cell: format!("{} layer {} seed {} {}", r.group, r.layer, r.seed, r.variant),
                            error: "outputs differ from the direct convolution".into(),
                        })
                        .collect(),
                ));
            }
            Ok(Vec::new())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
