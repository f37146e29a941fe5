use clap::{Args, Parser, Subcommand};
use repgame::experiment::{
    generate_synthetic, ingest_trajectories, ConfigError, load_config, parse_config, run_pipeline, write_manifest,
    ExperimentConfig, PipelineError, Stage, MANIFEST,
};
use std::path::PathBuf;
use std::process::ExitCode;

const DEFAULT_CONFIG: &str = include_str!("../../../configs/pgg_default.json");

/// Repeated social-dilemma experiments with LLM and scripted agents, plus
/// strategy inference from the resulting trajectories.
#[derive(Parser)]
#[command(name = "repgame", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play every configured game instance and write trajectories.
    Run(Common),
    /// Generate the labelled synthetic dataset.
    GenSynthetic(Common),
    /// Fit the classifier suite on the synthetic dataset.
    Train(Common),
    /// Label encoded game sequences with the hybrid classifier.
    Classify(Common),
    /// Regenerate aggregate reports (CSV, JSON, SVG).
    Analyze(Common),
    /// Run several stages in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of run,encode,train,classify,analyze (or `all`).
        #[arg(long, default_value = "all")]
        stages: String,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the shipped PGG configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `outputDir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent game instances, overriding `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Master seed, overriding `masterSeed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace every endpoint backend with a scripted one.
    #[arg(long)]
    mock: bool,
    /// Recorded trajectories (JSON Lines or array) to ingest before the stages run.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn load(common: &Common) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => parse_config(DEFAULT_CONFIG, "configs/pgg_default.json")?,
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if common.mock {
        cfg.backends = cfg.backends.into_iter().map(|b| b.into_mock()).collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(common: &Common, stages: Vec<Stage>, synthetic_only: bool) -> Result<PathBuf, PipelineError> {
    let cfg = load(common)?;
    if let Some(input) = &common.input {
        if stages.contains(&Stage::Run) {
            return Err(PipelineError::Config(ConfigError::Invalid {
                field: "--input".into(),
                message: "cannot be combined with the run stage".into(),
            }));
        }
        std::fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::Io {
            path: cfg.output_dir.clone(),
            source,
        })?;
        let n = ingest_trajectories(input, &cfg.output_dir)?;
        log::info!("ingested {n} trajectories from {}", input.display());
    }
    if synthetic_only {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|source| PipelineError::Io {
            path: cfg.output_dir.clone(),
            source,
        })?;
        generate_synthetic(&cfg)?;
        write_manifest(&cfg, Vec::new())?;
    } else {
        run_pipeline(&cfg, &stages)?;
    }
    Ok(cfg.output_dir.join(MANIFEST))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(c) => execute(c, vec![Stage::Run], false),
        Command::GenSynthetic(c) => execute(c, Vec::new(), true),
        Command::Train(c) => execute(c, vec![Stage::Train], false),
        Command::Classify(c) => execute(c, vec![Stage::Classify], false),
        Command::Analyze(c) => execute(c, vec![Stage::Analyze], false),
        Command::Pipeline { common, stages } => match Stage::parse_list(stages) {
            Ok(stages) => execute(common, stages, false),
            Err(message) => Err(PipelineError::Config(ConfigError::Invalid {
                field: "--stages".into(),
                message,
            })),
        },
    };
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
