//! `huesearch`: survey preparation, color-name tree training, crop labeling
//! and attribute search from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use huesearch_core::{PoolingMode, Preprocess, RetinexParams};

use commands::{EvaluateOptions, LabelOptions, SynthOptions, TreeFormat};
use config::{PipelineConfig, SmoothingConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "huesearch", version, about = "Color-name search over pedestrian crops")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML pipeline config.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set smoothing.sigma=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Errors only.
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, clean, resample and restrict the raw survey.
    Prepare {
        #[arg(long)]
        survey: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        /// Skip outlier removal.
        #[arg(long)]
        no_clean: bool,
        /// Skip SMOTE resampling.
        #[arg(long)]
        no_smote: bool,
    },
    /// Train the color-name tree on the prepared dataset.
    Train,
    /// Label every identity in a crop manifest.
    Label {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Tree file; defaults to `<work_dir>/tree.json`.
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Semantic smoothing bandwidth in pixels.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        pooling: Option<PoolingMode>,
        /// `none` or `msrcp`; learned enhancement is set in the config.
        #[arg(long)]
        preprocess: Option<PreprocessFlag>,
        /// Record database to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add to the database instead of replacing it.
        #[arg(long)]
        append: bool,
    },
    /// Find identities matching `class=color` predicates.
    Search {
        /// e.g. `"upper=red lower=light_blue"`.
        query: String,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Score a record database against ground truth.
    Evaluate {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Also write the confusion matrix as CSV.
        #[arg(long, value_name = "PATH")]
        confusion: Option<PathBuf>,
    },
    /// Print or write the trained tree.
    ExportTree {
        #[arg(long, value_enum, default_value = "json")]
        format: TreeFormat,
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search the enhancement parameters on a validation set.
    Tune {
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Write a synthetic survey, crop fixture and config for trying things out.
    Synth {
        #[arg(long, default_value = "huesearch-demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 200_000)]
        survey_size: usize,
        #[arg(long, default_value_t = 40)]
        identities: usize,
    },
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum PreprocessFlag {
    None,
    Msrcp,
}

fn init_logging(global: &GlobalArgs) {
    let level = match (global.quiet, global.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn load_config(global: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let mut config = PipelineConfig::load(global.config.as_deref(), &global.overrides)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(dir) = &global.work_dir {
        config.paths.work_dir = dir.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth { out, survey_size, identities } = &cli.command {
        return commands::synth(&SynthOptions {
            out: out.clone(),
            survey_size: *survey_size,
            identities: *identities,
            seed: cli.global.seed.unwrap_or(0),
        });
    }
    let mut config = load_config(&cli.global)?;
    match &cli.command {
        Command::Prepare { survey, tau, no_clean, no_smote } => {
            if survey.is_some() {
                config.paths.survey.clone_from(survey);
            }
            if let Some(tau) = tau {
                config.survey.tau = *tau;
            }
            config.survey.clean &= !no_clean;
            config.survey.smote &= !no_smote;
        }
        Command::Label { manifest, sigma, pooling, preprocess, out, .. } => {
            if manifest.is_some() {
                config.paths.manifest.clone_from(manifest);
            }
            if let Some(sigma) = sigma {
                config.smoothing = Some(SmoothingConfig { sigma: *sigma });
            }
            if let Some(mode) = pooling {
                config.pooling.mode = *mode;
            }
            match preprocess {
                Some(PreprocessFlag::None) => config.preprocess = Preprocess::None,
                Some(PreprocessFlag::Msrcp) if !matches!(config.preprocess, Preprocess::Msrcp(_)) => {
                    config.preprocess = Preprocess::Msrcp(RetinexParams::default());
                }
                _ => {}
            }
            if out.is_some() {
                config.paths.records.clone_from(out);
            }
        }
        Command::Search { records, .. } if records.is_some() => config.paths.records.clone_from(records),
        Command::Evaluate { records, truth, .. } => {
            if records.is_some() {
                config.paths.records.clone_from(records);
            }
            if truth.is_some() {
                config.paths.truth.clone_from(truth);
            }
        }
        _ => {}
    }
    config.validate()?;

    match cli.command {
        Command::Prepare { .. } => commands::prepare(&config),
        Command::Train => commands::train(&config),
        Command::Label { tree, append, .. } => commands::label(&config, &LabelOptions { tree, append }),
        Command::Search { query, json, .. } => commands::search(&config, &query, json),
        Command::Evaluate { json, confusion, .. } => commands::evaluate(&config, &EvaluateOptions { json, confusion }),
        Command::ExportTree { format, tree, out } => {
            commands::export_tree(&config, tree.as_deref(), format, out.as_deref())
        }
        Command::Tune { tree } => commands::tune(&config, tree.as_deref()),
        Command::Synth { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(&cli.global);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
