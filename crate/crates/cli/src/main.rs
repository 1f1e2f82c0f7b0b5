use std::path::PathBuf;
use std::process::ExitCode;

use claire::training::TrainMode;
use claire::Result;
use claire_cli::{
    cmd_eval, cmd_explain, cmd_preprocess, cmd_project, cmd_synth, cmd_train, exit_code, parse_dataset, RunConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "claire",
    version,
    about = "Autoencoder + SVM fault detection with SHAP latent explanations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (format "claire-config/1").
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// secom:FEATURES,LABELS | tep:PATH[:FAULTS] | csv:PATH[:LABEL_COLUMN]
    #[arg(long)]
    dataset: Option<String>,
    /// claire | plain_ae | raw_svm
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Model bundle; defaults to OUT/model.json.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Split, clean and scale a dataset.
    Preprocess(Common),
    /// Train a model bundle.
    Train(Common),
    /// Accuracy and F1 on the model's train/test splits.
    Eval(WithModel),
    /// Kernel SHAP attributions of inputs to latent dimensions.
    Explain(WithModel),
    /// One-dimensional Fisher projection of the latent space.
    Project(WithModel),
    /// Write synthetic SECOM-shaped and TEP-shaped files.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(parse_dataset(d)?);
    }
    if let Some(m) = &c.mode {
        cfg.set_mode(m.parse::<TrainMode>()?);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(c) => cmd_preprocess(&resolve(&c)?).map(|_| ()),
        Command::Train(c) => cmd_train(&resolve(&c)?).map(|_| ()),
        Command::Eval(w) => {
            let (report, _) = cmd_eval(&resolve(&w.common)?, w.model.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Explain(w) => cmd_explain(&resolve(&w.common)?, w.model.as_deref()).map(|_| ()),
        Command::Project(w) => {
            let (summary, _) = cmd_project(&resolve(&w.common)?, w.model.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Synth { out, seed } => cmd_synth(&out, seed).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
