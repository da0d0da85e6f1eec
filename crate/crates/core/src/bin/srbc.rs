use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochastic_rbc::config::{ConfigMap, ExperimentKind, ExperimentSpec};
use stochastic_rbc::experiment::{self, RunOptions};
use stochastic_rbc::Error;

#[derive(Parser)]
#[command(name = "srbc", version, about = "Stochastic Rayleigh-Benard convection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Overrides the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the ensemble size.
    #[arg(long)]
    members: Option<usize>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a finite- or infinite-Prandtl trajectory ensemble.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop with a checkpoint once this step index is reached.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Continue an interrupted run from its checkpoints.
    Resume {
        #[command(flatten)]
        common: Common,
        /// Output directory of the interrupted run.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Nudged coupling ensemble.
    Couple(Common),
    /// Nusselt estimates and the background bound over parameter points.
    NusseltSweep(Common),
    /// Pathwise maximum-principle comparison runs.
    VerifyComparison(Common),
    /// Exponential martingale exceedance test.
    MartingaleTest(Common),
    /// Print the summary of a finished experiment.
    Report(Common),
}

fn load(common: &Common) -> Result<ExperimentSpec, Error> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut map = ConfigMap::parse(&text)?;
    if let Some(s) = common.seed {
        map.set("seed", s);
    }
    if let Some(m) = common.members {
        map.set("members", m);
    }
    ExperimentSpec::from_map(&map)
}

fn expect_kind(spec: &ExperimentSpec, allowed: &[ExperimentKind], command: &str) -> Result<(), Error> {
    if allowed.contains(&spec.kind) {
        Ok(())
    } else {
        Err(Error::Validation(vec![format!(
            "subcommand `{command}` cannot run kind = {}",
            spec.kind.name()
        )]))
    }
}

fn options(common: &Common, max_steps: Option<u64>) -> RunOptions {
    RunOptions {
        output: common.output.clone(),
        threads: common.threads,
        max_steps,
    }
}

fn finish(outcome: experiment::Outcome, output: &Path) {
    if outcome.complete {
        println!("{}", serde_json::to_string_pretty(&outcome.summary).unwrap_or_default());
        println!("artifacts written to {}", output.display());
    } else {
        println!("stopped early; checkpoints written under {}", output.display());
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    let runs = [ExperimentKind::RunFinitePr, ExperimentKind::RunInfinitePr];
    match cli.command {
        Command::Run { common, max_steps } => {
            let spec = load(&common)?;
            expect_kind(&spec, &runs, "run")?;
            finish(experiment::run(&spec, &options(&common, max_steps))?, &common.output);
        }
        Command::Resume { common, checkpoint } => {
            let spec = load(&common)?;
            expect_kind(&spec, &runs, "resume")?;
            finish(experiment::resume(&spec, &checkpoint, &options(&common, None))?, &common.output);
        }
        Command::Couple(common) => single(&common, ExperimentKind::Couple, "couple")?,
        Command::NusseltSweep(common) => single(&common, ExperimentKind::NusseltSweep, "nusselt-sweep")?,
        Command::VerifyComparison(common) => {
            single(&common, ExperimentKind::VerifyComparison, "verify-comparison")?
        }
        Command::MartingaleTest(common) => single(&common, ExperimentKind::MartingaleTest, "martingale-test")?,
        Command::Report(common) => {
            let spec = load(&common)?;
            let v = experiment::report(&spec, &common.output)?;
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
        }
    }
    Ok(())
}

fn single(common: &Common, kind: ExperimentKind, command: &str) -> Result<(), Error> {
    let spec = load(common)?;
    expect_kind(&spec, &[kind], command)?;
    finish(experiment::run(&spec, &options(common, None))?, &common.output);
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                eprintln!("the latest checkpoint, if any, is left in place");
                ExitCode::from(3)
            } else if matches!(e, Error::Io(_)) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
