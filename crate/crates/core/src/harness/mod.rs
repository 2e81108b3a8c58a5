//! Experiment orchestration: configuration, seeded episode loops and CSV
//! output.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{ConfigBuilder, ExperimentConfig, Init, PolicyKind, Scenario};
pub use metrics::{mean_stderr, phase_reward, read_csv, write_csv, write_summary, CsvSink, EpisodeMetrics, COLUMNS};
pub use runner::{
    initial_network, pretrained_weights_path, rng_stream, run_experiment, run_seed, seed_csv_path, summary_csv_path,
    Mode, Observer, Progress, SeedRun, Silent, Simulation, SlotTrace,
};
