use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use attrib_cli::{CliError, PipelineConfig, Runner};
use attrib_core::study::{load_config as load_study_config, StudyStore, SystemClock};
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

/// Builds sentence-attribution training data and evaluates attribution
/// methods.
///
/// Exit codes: 0 success, 1 usage error, 2 stage failure, 3 endpoint failure.
#[derive(Parser)]
#[command(name = "attribench", version)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, default_value = "attribench.toml")]
    config: PathBuf,
    /// Overrides `work_dir`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Overrides `endpoint.mode`: live, record or replay.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Overrides `endpoint.backend`: http or offline.
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the corpus into the work directory's article store.
    Ingest,
    /// Sample multi-hop chains and dialogue contexts.
    HopSample,
    /// Generate QA pairs with attributions for every context.
    Generate,
    /// Embed articles and mine distractors for every pair.
    Distract,
    /// Flag training articles that nearly duplicate test documents.
    LeakCheck,
    /// Assemble validated training samples.
    Assemble,
    /// Write fine-tuning records and their hyperparameter manifest.
    ExportTrain,
    /// Rewrite dialogue turns as standalone QA pairs.
    Rephrase,
    /// Predict attributions with a configured method.
    Attribute {
        /// Method name from `[[methods]]`.
        #[arg(long)]
        method: String,
        /// Dataset to attribute; defaults to the assembled dataset.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Dataset used to fit unset method parameters.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Score a predictions file and update the report.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Dataset label in the report; defaults to the file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the evaluation report.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Print CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Serve the verification study over HTTP.
    StudyServe {
        /// Study configuration (JSON).
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Snapshot file for resumable state.
        #[arg(long)]
        state: Option<PathBuf>,
    },
    /// Run ingest through export-train.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = if cli.config.exists() {
        PipelineConfig::load(&cli.config)?
    } else if matches!(cli.command, Command::StudyServe { .. } | Command::Report { .. }) {
        PipelineConfig::default()
    } else {
        return Err(CliError::Usage(format!("config file {} not found", cli.config.display())));
    };
    if let Some(dir) = &cli.work_dir {
        config.work_dir = dir.clone();
    }
    if let Some(mode) = &cli.mode {
        config.endpoint.mode = mode.clone();
    }
    if let Some(backend) = &cli.backend {
        config.endpoint.backend = serde_json::from_value(serde_json::Value::String(backend.clone()))
            .map_err(|_| CliError::Usage("endpoint.backend: must be http or offline".into()))?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn study_serve(study: &Path, addr: SocketAddr, state: Option<&Path>) -> Result<(), CliError> {
    let config = load_config_file(study)?;
    let mut store = StudyStore::new(config, Arc::new(SystemClock)).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = state {
        store = store.with_state_file(path).map_err(CliError::stage)?;
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    tracing::info!(%addr, "serving study");
    runtime.block_on(attrib_study::serve(Arc::new(store), addr))?;
    Ok(())
}

fn load_config_file(path: &Path) -> Result<attrib_core::study::StudyConfig, CliError> {
    load_study_config(path).map_err(|e| CliError::Usage(format!("study config: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli)?;
    if let Command::StudyServe { study, addr, state } = &cli.command {
        return study_serve(study, *addr, state.as_deref());
    }
    let mut runner = Runner::new(config)?;
    match cli.command {
        Command::Ingest => runner.ingest(),
        Command::HopSample => runner.hop_sample(),
        Command::Generate => runner.generate(),
        Command::Distract => runner.distract(),
        Command::LeakCheck => runner.leak_check(),
        Command::Assemble => runner.assemble(),
        Command::ExportTrain => runner.export_train(),
        Command::Rephrase => runner.rephrase(),
        Command::Attribute { method, dataset, validation } => {
            runner.attribute(&method, dataset.as_deref(), validation.as_deref())
        }
        Command::Eval { predictions, dataset, name } => runner.eval(&predictions, dataset.as_deref(), name.as_deref()),
        Command::Report { input, csv } => {
            print!("{}", runner.report(input.as_deref(), csv)?);
            Ok(())
        }
        Command::Pipeline => runner.pipeline(),
        Command::StudyServe { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
