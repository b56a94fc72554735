use std::path::PathBuf;
use std::process::ExitCode;

use auctionbandit::experiment::{self, Command, ExperimentError, ExperimentSpec};
use auctionbandit::RecordLevel;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "auctionbandit", version, about = "Counterfactual simulator for learned-quality sponsored-search auctions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic market and write it as a log.
    Generate(RunArgs),
    /// Simulate one policy and report outcomes.
    Simulate(RunArgs),
    /// Sweep the uniform prior grid.
    Sweep(RunArgs),
    /// Sweep, then build the customized and uniform frontiers.
    Frontier(RunArgs),
    /// Estimate valuations and conversion rates from an auction log.
    Estimate(RunArgs),
    /// Per-auction bias of quality scores against true conversion rates.
    Bias(RunArgs),
    /// Derive budget caps from an uncapped run and replay under them.
    Caps(RunArgs),
    /// Re-run the experiment recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Aggregate,
    PerAuction,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Permit priors or policies outside the validity region. Outputs are stamped.
    #[arg(long)]
    allow_exploratory: bool,
    #[arg(long, value_enum)]
    record_level: Option<Level>,
}

fn prepare(command: Command, args: RunArgs) -> Result<(ExperimentSpec, PathBuf), ExperimentError> {
    let mut spec = ExperimentSpec::load(&args.config)?;
    match spec.command {
        Some(c) if c != command => {
            return Err(ExperimentError::InvalidSpec(format!(
                "command: config says {c:?} but {command:?} was requested"
            )))
        }
        _ => spec.command = Some(command),
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if args.jobs.is_some() {
        spec.jobs = args.jobs;
    }
    if args.allow_exploratory {
        spec.simulation.allow_exploratory = true;
    }
    if let Some(l) = args.record_level {
        spec.simulation.record_level = match l {
            Level::Aggregate => RecordLevel::Aggregate,
            Level::PerAuction => RecordLevel::PerAuction,
        };
    }
    let out = args
        .out
        .or_else(|| spec.out.clone())
        .ok_or_else(|| ExperimentError::InvalidSpec("out: no output directory given".into()))?;
    Ok((spec, out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Rerun {
            manifest,
            out,
            jobs,
        } => experiment::rerun(&manifest, &out, jobs),
        cmd => {
            let (command, args) = match cmd {
                Cmd::Generate(a) => (Command::Generate, a),
                Cmd::Simulate(a) => (Command::Simulate, a),
                Cmd::Sweep(a) => (Command::Sweep, a),
                Cmd::Frontier(a) => (Command::Frontier, a),
                Cmd::Estimate(a) => (Command::Estimate, a),
                Cmd::Bias(a) => (Command::Bias, a),
                Cmd::Caps(a) => (Command::Caps, a),
                Cmd::Rerun { .. } => unreachable!(),
            };
            prepare(command, args).and_then(|(spec, out)| experiment::run(&spec, &out))
        }
    };
    match result {
        Ok(report) => {
            let m = &report.manifest;
            if m.outside_validity_region {
                log::warn!("results are outside the validity region");
            }
            println!(
                "{} files written to {} (spec {})",
                m.outputs.len() + 1,
                report.out_dir.display(),
                &m.spec_sha256[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
