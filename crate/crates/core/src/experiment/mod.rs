//! Declarative experiment configuration, instance enumeration and the staged
//! pipeline: run, encode, train, classify, analyze.

mod config;
mod pipeline;

pub use config::{
    enumerate_instances, load_config, parse_config, personality_assignments, Backend, ConfigError,
    ExperimentConfig, ExperimentInstance, IntentSettings, PdSettings, PenaltyTable, PggSettings,
};
pub use pipeline::{
    analyze, classify_sequences, generate_synthetic, ingest_trajectories, model_path, run_pipeline,
    write_manifest, AgentClassification, Manifest, PipelineError, Stage, TrajectoryStats, INSTANCE_DIR,
    MANIFEST, MODEL_DIR, PREDICTIONS, REPORT_DIR, SEQUENCES, SYNTHETIC, TRAJECTORIES,
};
