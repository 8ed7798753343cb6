//! `hinet`: generate cohorts, train, evaluate, predict, export latents and
//! run ablations.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hinet::data::CohortSpec;

use commands::SplitPart;
use config::{Layer, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric abort: {m}"),
        }
    }
}

impl From<hinet::Error> for CliError {
    fn from(e: hinet::Error) -> Self {
        match e {
            hinet::Error::Param(m) => CliError::Usage(m),
            hinet::Error::NumericAbort(m) => CliError::Numeric(m),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "hinet", version, about = "Intraoperative hypoxemia prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every model command. Precedence: these flags, then
/// `--set`, over `--config`, over defaults.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any configuration key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_assignment)]
    set: Vec<(String, String)>,
    /// Cohort directory or manifest.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// general | persistent
    #[arg(long)]
    outcome: Option<String>,
    /// full | mem_minus | f_minus | r_plus_f
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Comma-separated λ values, or `default`.
    #[arg(long)]
    lambda_grid: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    /// Count alarms on labelled minutes only.
    #[arg(long)]
    alarms_labeled_only: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut layers: Vec<Layer> = Vec::new();
        if let Some(path) = &self.config {
            layers.push(config::read_file(path)?);
        }
        let mut cli: Layer = self.set.clone();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("cohort", path(&self.cohort)),
            ("checkpoint", path(&self.checkpoint)),
            ("out", path(&self.out)),
            ("outcome", self.outcome.clone()),
            ("variant", self.variant.clone()),
            ("seed", self.seed.clone()),
            ("split_seed", self.split_seed.clone()),
            ("lambda", self.lambda.clone()),
            ("lambda_grid", self.lambda_grid.clone()),
            ("max_epochs", self.max_epochs.clone()),
            ("alarms_labeled_only", self.alarms_labeled_only.then(|| "true".to_string())),
        ];
        cli.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        layers.push(cli);
        RunConfig::resolve(&layers)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort with a prevalence report.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 89.0)]
        mean_duration: f64,
        #[arg(long, default_value_t = 0.24)]
        general_incidence: f64,
        #[arg(long, default_value_t = 0.019)]
        persistent_incidence: f64,
        #[arg(long, default_value_t = 0.02)]
        missing_rate: f64,
        #[arg(long, default_value_t = 0.25)]
        decoy_rate: f64,
    },
    /// Train one model, or one per λ with --lambda-grid.
    Train(RunArgs),
    /// Score a checkpoint on a cohort split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitPart,
    },
    /// Per-minute scores of one surgery CSV.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        surgery: PathBuf,
        /// Score CSV to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Latent vectors z and p of every window.
    ExportLatent {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitPart,
        /// Latent CSV to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Train and test every variant side by side.
    Ablate(RunArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            out,
            n,
            seed,
            mean_duration,
            general_incidence,
            persistent_incidence,
            missing_rate,
            decoy_rate,
        } => {
            let spec = CohortSpec {
                n_surgeries: n,
                mean_duration,
                general_incidence,
                persistent_incidence,
                missing_rate,
                decoy_rate,
                seed,
            };
            let stats = commands::generate(&spec, &out)?;
            println!(
                "{} surgeries, {} minutes; general incidence {:.4}, persistent incidence {:.4}",
                stats.n_surgeries, stats.total_minutes, stats.general_incidence, stats.persistent_incidence
            );
        }
        Command::Train(run) => commands::train_cmd(&run.resolve()?)?,
        Command::Eval { run, split } => commands::eval_cmd(&run.resolve()?, split)?,
        Command::Predict { run, surgery, output } => {
            let n = commands::predict_cmd(&run.resolve()?, &surgery, &output)?;
            println!("{n} minutes scored");
        }
        Command::ExportLatent { run, split, output } => {
            let n = commands::export_latent_cmd(&run.resolve()?, split, &output)?;
            println!("{n} windows exported");
        }
        Command::Ablate(run) => {
            commands::ablate_cmd(&run.resolve()?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hinet: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
