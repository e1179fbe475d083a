use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use unfold_cli::commands::{self, FixtureFormat, LearnedSchedule};
use unfold_cli::spec::{preset, ExperimentSpec};
use unfold_cli::CliError;

#[derive(Parser)]
#[command(name = "unfold", version, about = "Learned step-size ISTA/IHT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Spec file (TOML).
    spec: Option<PathBuf>,
    /// Use a built-in preset instead of a spec file.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the spec's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shrink to n=100, m=70, T_max=30, 20x20 evaluation.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate L and train the step schedule.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the 1/L and 2.1/L baselines and any learned schedules.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Learned schedule CSVs, as `path` or `label=path`.
        #[arg(long = "schedule")]
        schedules: Vec<String>,
        /// Evaluation worker threads; results do not depend on this.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print the four built-in presets.
    Presets {
        #[arg(long)]
        desk_scale: bool,
    },
    /// Dump problem instances as fixtures.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn resolve(common: &Common) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let mut spec = match (&common.spec, &common.preset) {
        (Some(path), None) => ExperimentSpec::load(path)?,
        (None, Some(name)) => preset(name).ok_or_else(|| CliError::Spec(format!("unknown preset '{name}'")))?,
        _ => return Err(CliError::Spec("give a spec file or --preset".into())),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if common.desk_scale {
        spec = spec.desk_scale();
    }
    let out = common
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&spec.label));
    spec.out = Some(out.clone());
    Ok((spec, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common } => {
            let (spec, out) = resolve(&common)?;
            let stages = spec.train.t_max;
            let art = commands::run_train(&spec, &out, |stage, loss| {
                eprintln!("stage {stage}/{stages}  loss {loss:.6e}");
            })?;
            println!(
                "trained {} ({} updates, L = {:.6}) -> {}",
                spec.label,
                art.log.records.len(),
                art.lipschitz.l_avg,
                out.display()
            );
        }
        Command::Eval {
            common,
            schedules,
            threads,
        } => {
            let (spec, out) = resolve(&common)?;
            let learned: Vec<_> = schedules.iter().map(|s| LearnedSchedule::parse(s)).collect();
            let report = commands::run_eval(&spec, &learned, &out, threads.max(1))?;
            for v in &report.variants {
                println!(
                    "{:<24} final MSE {:>9.3} dB  objective {:>12.6}  divergent {}",
                    v.label,
                    v.final_mse_db(),
                    v.final_objective(),
                    v.divergent
                );
            }
        }
        Command::Presets { desk_scale } => print!("{}", commands::presets_text(desk_scale)),
        Command::Generate { common, count, format } => {
            let (spec, out) = resolve(&common)?;
            let format = match format {
                Format::Csv => FixtureFormat::Csv,
                Format::Bin => FixtureFormat::Binary,
            };
            for path in commands::run_generate(&spec, &out, count, format)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
