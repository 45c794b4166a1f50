//! `hdphase`: phase genotype files, simulate data, score results, check the
//! sampler against exact enumeration and run method comparisons.
//!
//! Exit codes: 0 success, 2 input error, 3 invariant violation or failed
//! check, 4 resource bound exceeded.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CheckFailed;
use settings::{parse_assignment, Settings};

#[derive(Parser)]
#[command(name = "hdphase", version, about = "Haplotype phasing with hierarchical Dirichlet process mixtures")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` settings file; command-line values take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any setting, as key=value. Repeatable.
    #[arg(long = "set", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Phase a genotype file.
    Phase {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        /// hdp or dp.
        #[arg(long)]
        model: Option<String>,
        /// hierarchical, pooled or per-population.
        #[arg(long)]
        mode: Option<String>,
        /// Use partition-ligation for long sequences.
        #[arg(long)]
        pl: bool,
        #[arg(long)]
        block_length: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// collapsed or exact.
        #[arg(long)]
        channel: Option<String>,
    },
    /// Generate a synthetic dataset with its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// conserved or diverse.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        loci: Option<usize>,
    },
    /// Score predicted haplotypes against the truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare sampler phase marginals with exact enumeration.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Dataset file of a small instance; the built-in instances when absent.
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Run the hierarchical and both flat modes over simulated seeds.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<String>,
        /// Number of seeds.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn push<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

fn resolve(defaults: &[(&str, String)], common: Common, mut flags: Vec<(String, String)>) -> anyhow::Result<Settings> {
    push(&mut flags, "out_dir", path_str(common.out_dir));
    push(&mut flags, "seed", common.seed);
    // named flags win over --set
    let mut all = common.set;
    all.extend(flags);
    Settings::resolve(defaults, common.config.as_deref(), &all)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut flags = Vec::new();
    match cli.command {
        Command::Phase {
            common,
            input,
            model,
            mode,
            pl,
            block_length,
            burn_in,
            samples,
            channel,
        } => {
            push(&mut flags, "input", path_str(input));
            push(&mut flags, "model", model);
            push(&mut flags, "mode", mode);
            push(&mut flags, "pl", pl.then_some(true));
            push(&mut flags, "block_length", block_length);
            push(&mut flags, "burn_in", burn_in);
            push(&mut flags, "samples", samples);
            push(&mut flags, "channel", channel);
            commands::cmd_phase(&resolve(&commands::phase_defaults(), common, flags)?)
        }
        Command::Simulate { common, preset, loci } => {
            push(&mut flags, "preset", preset);
            push(&mut flags, "n_loci", loci);
            commands::cmd_simulate(&resolve(&commands::simulate_defaults(), common, flags)?)
        }
        Command::Evaluate { common, pred, truth } => {
            push(&mut flags, "pred", path_str(pred));
            push(&mut flags, "truth", path_str(truth));
            commands::cmd_evaluate(&resolve(&commands::evaluate_defaults(), common, flags)?)
        }
        Command::OracleCheck {
            common,
            instance,
            samples,
            tolerance,
        } => {
            push(&mut flags, "instance", path_str(instance));
            push(&mut flags, "samples", samples);
            push(&mut flags, "tolerance", tolerance);
            commands::cmd_oracle_check(&resolve(&commands::oracle_defaults(), common, flags)?)
        }
        Command::Experiment {
            common,
            preset,
            seeds,
            burn_in,
            samples,
        } => {
            push(&mut flags, "preset", preset);
            push(&mut flags, "seeds", seeds);
            push(&mut flags, "burn_in", burn_in);
            push(&mut flags, "samples", samples);
            let mut common = common;
            // the experiment's seed setting is the first simulation seed
            push(&mut flags, "first_seed", common.seed.take());
            commands::cmd_experiment(&resolve(&commands::experiment_defaults(), common, flags)?)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<hdphase::Error>() {
        Some(hdphase::Error::ResourceBound { .. }) => 4,
        Some(hdphase::Error::InvalidDataset(_) | hdphase::Error::Sampler(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
