use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssvep_xfer::transfer::Algorithm;
use ssvep_xfer_cli::{
    cmd_bench, cmd_eval, cmd_select_report, cmd_sweep, cmd_synth, resolve_config, Overrides, SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "ssvep-xfer",
    version,
    about = "Cross-subject SSVEP transfer learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// RunConfig JSON file; flags below override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Data length in seconds.
    #[arg(long)]
    d: Option<f64>,
    /// Number of channels, taken from the front of the channel order.
    #[arg(long)]
    nc: Option<usize>,
    /// Number of target training blocks.
    #[arg(long)]
    ntb: Option<usize>,
    /// Lower boundary of normalized similarity for subject selection.
    #[arg(long)]
    clb: Option<f64>,
    /// Similarity that triggers subject selection.
    #[arg(long)]
    gamma: Option<f64>,
    /// trca, itrca or ss-itrca.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            d: self.d,
            nc: self.nc,
            ntb: self.ntb,
            clb: self.clb,
            gamma: self.gamma,
            algo: self.algo,
            jobs: self.jobs,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-subject dataset from a JSON spec.
    Synth {
        #[arg(long, value_name = "PATH")]
        spec: PathBuf,
        /// Output directory for tensors and manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Leave-one-subject-out / leave-one-block-out evaluation.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Also write the per-trial feature vectors.
        #[arg(long)]
        export_features: bool,
        /// Output directory for report.json and summary.csv.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate over a list of values of one parameter.
    Sweep {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// d, nc, ntb or clb.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        /// Comma-separated algorithms; all three by default.
        #[arg(long, value_delimiter = ',')]
        algos: Vec<Algorithm>,
        /// Output CSV file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Source similarities and selected subjects as JSON lines.
    SelectReport {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Output JSON-lines file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Training and inference timing per algorithm.
    Bench {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',')]
        algos: Vec<Algorithm>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Output JSON file.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

fn algorithms_or_all(list: Vec<Algorithm>) -> Vec<Algorithm> {
    if list.is_empty() {
        Algorithm::ALL.to_vec()
    } else {
        list
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Synth { spec, out, seed } => {
            let manifest = cmd_synth(&spec, &out, seed)?;
            println!("wrote {} subjects to {}", manifest.subjects.len(), out.display());
            Ok(true)
        }
        Command::Eval {
            data,
            run,
            export_features,
            out,
        } => {
            let (mut cfg, jobs) = resolve_config(&run.overrides())?;
            cfg.export_features |= export_features;
            let report = cmd_eval(&data, &cfg, jobs, &out)?;
            println!(
                "{}: accuracy {:.4}, ITR {:.2} bits/min, {} failed folds",
                report.algorithm, report.accuracy, report.itr_bits_per_min, report.n_failed_folds
            );
            Ok(report.n_failed_folds == 0)
        }
        Command::Sweep {
            data,
            run,
            axis,
            values,
            algos,
            out,
        } => {
            let (cfg, jobs) = resolve_config(&run.overrides())?;
            let rows = cmd_sweep(&data, &cfg, jobs, axis, &values, &algorithms_or_all(algos), &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            Ok(rows.iter().all(|r| r.n_failed_folds == 0))
        }
        Command::SelectReport { data, run, out } => {
            let (cfg, jobs) = resolve_config(&run.overrides())?;
            let n = cmd_select_report(&data, &cfg, jobs, &out)?;
            println!("wrote {n} records to {}", out.display());
            Ok(true)
        }
        Command::Bench {
            data,
            run,
            algos,
            repeats,
            out,
        } => {
            let (cfg, jobs) = resolve_config(&run.overrides())?;
            let jobs = run.jobs.map_or(1, |_| jobs);
            let report = cmd_bench(&data, &cfg, jobs, &algorithms_or_all(algos), repeats, &out)?;
            for e in &report.entries {
                println!(
                    "{}: train {:.2} ± {:.2} ms, infer {:.2} ± {:.2} ms per block of {}",
                    e.algorithm,
                    e.train_ms.mean,
                    e.train_ms.sd,
                    e.infer_ms.mean,
                    e.infer_ms.sd,
                    e.trials_per_test_block
                );
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSVEP_XFER_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
