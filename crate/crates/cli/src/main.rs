use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use edgesched_core::harness::{
    mean_stderr, phase_reward, run_experiment, seed_csv_path, CsvSink, EpisodeMetrics, Mode, Progress, SeedRun,
    Simulation,
};
use edgesched_core::{ConfigBuilder, Error, ExperimentConfig, Mlp};

#[derive(Parser, Debug)]
#[command(
    name = "edgesched",
    version,
    about = "Training-aware DRL scheduling on a simulated edge server"
)]
struct Cli {
    /// Print a progress line every N episodes (0 = quiet).
    #[arg(long, global = true, default_value_t = 50)]
    progress: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value`, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate every configured seed.
    Run(Common),
    /// Greedy evaluation of a saved network.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Repeat `run` for each value of one parameter.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
}

struct Report {
    every: usize,
    started: Instant,
}

impl Progress for Report {
    fn episode(&mut self, seed: u64, mode: Mode, m: &EpisodeMetrics) {
        if self.every == 0 || !(m.episode + 1).is_multiple_of(self.every) {
            return;
        }
        let phase = match mode {
            Mode::Train => "train",
            Mode::Eval => "eval",
        };
        eprintln!(
            "[{:>7.1}s] seed {seed} {phase} ep {:>4}  rho {:.3}  eps {:.3}  reward {:.4}  running {:.4}  train_jobs {}",
            self.started.elapsed().as_secs_f64(),
            m.episode + 1,
            m.rho,
            m.epsilon,
            m.mean_reward,
            m.running_mean_reward,
            m.training_jobs,
        );
    }
}

fn build(common: &Common, extra: &[(String, String)]) -> edgesched_core::Result<ExperimentConfig> {
    let mut b = ConfigBuilder::new().file(&common.config)?;
    for pair in &common.overrides {
        b = b.override_pair(pair)?;
    }
    for (k, v) in extra {
        b = b.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        b = b.set("seeds", &seed.to_string())?;
    }
    if let Some(out) = &common.out {
        let out = out
            .to_str()
            .ok_or_else(|| Error::config("output directory is not UTF-8"))?;
        b = b.set("out_dir", out)?;
    }
    b.build()
}

fn summarize(config: &ExperimentConfig, runs: &[SeedRun]) -> (f64, f64) {
    for r in runs {
        let (m, se) = phase_reward(&r.eval);
        let gate = r
            .gate
            .map(|g| format!("  gate pass {} fail {} warm-up {}", g.passed, g.failed, g.warmup))
            .unwrap_or_default();
        println!("{} seed {}: eval reward {m:.4} ± {se:.4}{gate}", config.name, r.seed);
    }
    let means: Vec<f64> = runs.iter().map(|r| phase_reward(&r.eval).0).collect();
    let (m, se) = mean_stderr(&means);
    println!(
        "{}: eval reward {m:.4} ± {se:.4} over {} seeds",
        config.name,
        runs.len()
    );
    (m, se)
}

fn eval_weights(config: &ExperimentConfig, weights: &Path, report: &mut Report) -> anyhow::Result<()> {
    if !config.policy.uses_agent() {
        return Err(Error::config(format!("policy `{}` does not use a network", config.policy.name())).into());
    }
    let net = Mlp::load(weights)?;
    let mut means = Vec::new();
    for &seed in &config.seeds {
        let mut sim = Simulation::new(config, seed, Some(net.clone()))?;
        let path = seed_csv_path(&config.out_dir, &config.name, seed, "eval");
        std::fs::create_dir_all(&config.out_dir).with_context(|| format!("creating {}", config.out_dir.display()))?;
        let mut sink = CsvSink::create(&path)?;
        let mut rows = Vec::with_capacity(config.n_test);
        for episode in 0..config.n_test {
            let mut m = sim.run_episode(episode, Mode::Eval, None)?;
            sink.push(&mut m)?;
            report.episode(seed, Mode::Eval, &m);
            rows.push(m);
        }
        let (m, se) = phase_reward(&rows);
        println!("{} seed {seed}: eval reward {m:.4} ± {se:.4}", config.name);
        means.push(m);
    }
    let (m, se) = mean_stderr(&means);
    println!(
        "{}: eval reward {m:.4} ± {se:.4} over {} seeds",
        config.name,
        means.len()
    );
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let mut report = Report {
        every: cli.progress,
        started: Instant::now(),
    };
    match cli.command {
        Command::Run(common) => {
            let config = build(&common, &[])?;
            let runs = run_experiment(&config, &mut report)?;
            summarize(&config, &runs);
        }
        Command::Eval { weights, common } => {
            let config = build(&common, &[])?;
            eval_weights(&config, &weights, &mut report)?;
        }
        Command::Sweep { param, values, common } => {
            let base = build(&common, &[])?;
            // Validate every point before spending time on any of them.
            let configs = values
                .iter()
                .map(|v| {
                    let name = format!("{}_{param}{v}", base.name);
                    build(&common, &[(param.clone(), v.clone()), ("name".into(), name)])
                })
                .collect::<edgesched_core::Result<Vec<_>>>()?;
            let mut table = Vec::new();
            for (value, config) in values.iter().zip(&configs) {
                let runs = run_experiment(config, &mut report)?;
                table.push((value, summarize(config, &runs)));
            }
            println!("{param},mean_eval_reward,stderr");
            for (value, (m, se)) in table {
                println!("{value},{m},{se}");
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
