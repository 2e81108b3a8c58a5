use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{DdqnAgent, ReplayBuffer, StateEncoder, Transition};
use crate::env::{Action, Job, SystemState};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Init, PolicyKind};
use crate::harness::metrics::{write_summary, CsvSink, EpisodeMetrics};
use crate::nn::Mlp;
use crate::sched::{Adaptive, GateStats, Periodic, TrainingDecision, TrainingJob, TrainingScheduler, ZeroCost};
use crate::sjf::sjf_select;
use crate::workload::{arrival_probability, sample_arrivals_into};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

// Independent ChaCha streams per run component, so that agent behaviour never
// perturbs the arrival sequence.
const STREAM_INIT: u64 = 1;
const STREAM_TRAIN_ARRIVALS: u64 = 2;
const STREAM_EXPLORE: u64 = 3;
const STREAM_REPLAY: u64 = 4;
const STREAM_EVAL_ARRIVALS: u64 = 5;

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// What happened in one slot, for observers.
pub struct SlotTrace<'a> {
    pub episode: usize,
    pub slot: usize,
    pub mode: Mode,
    pub decision: &'a TrainingDecision,
    /// State the policy acted on (after any training-job insertion).
    pub state: &'a SystemState,
    pub action: Action,
    pub arrivals: &'a [Job],
    pub reward: f64,
    pub next_state: &'a SystemState,
}

pub type Observer<'o> = dyn FnMut(&SlotTrace<'_>) + 'o;

/// One seeded run of one configuration.
pub struct Simulation {
    config: ExperimentConfig,
    seed: u64,
    encoder: StateEncoder,
    training_job: TrainingJob,
    agent: Option<DdqnAgent>,
    replay: Option<ReplayBuffer>,
    scheduler: TrainingScheduler,
    train_arrivals: ChaCha8Rng,
    eval_arrivals: ChaCha8Rng,
    explore: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    /// Training-phase slots elapsed, across episodes.
    train_slot: u64,
    last_td: f64,
}

impl Simulation {
    /// Builds the run. `initial` replaces the freshly initialized network.
    pub fn new(config: &ExperimentConfig, seed: u64, initial: Option<Mlp>) -> Result<Self> {
        config.validate()?;
        let encoder = StateEncoder::new(&config.env, config.workload.max_deadline());
        let actions = config.env.action_count();
        let agent = if config.policy.uses_agent() {
            let agent = match initial {
                Some(net) => {
                    if net.input_dim() != encoder.dim() || net.output_dim() != actions {
                        return Err(Error::config(format!(
                            "network shape {:?} does not fit {} features and {} actions",
                            net.sizes(),
                            encoder.dim(),
                            actions
                        )));
                    }
                    DdqnAgent::from_network(config.agent.clone(), net)
                }
                None => {
                    if config.policy == PolicyKind::Fixed {
                        return Err(Error::config("the fixed policy needs initial weights"));
                    }
                    let mut rng = rng_stream(seed, STREAM_INIT);
                    DdqnAgent::new(config.agent.clone(), encoder.dim(), actions, &mut rng)
                }
            };
            Some(agent)
        } else {
            None
        };
        let replay = config
            .policy
            .learns()
            .then(|| ReplayBuffer::new(config.agent.replay_capacity));
        let scheduler = match config.policy {
            PolicyKind::Sjf | PolicyKind::Fixed => TrainingScheduler::Never,
            PolicyKind::Pts => TrainingScheduler::Periodic(Periodic::new(config.train_period)),
            PolicyKind::Ats => TrainingScheduler::Adaptive(Adaptive::new(
                config.beta,
                config.psi_percentile,
                config.psi_capacity,
                config.train_period,
            )),
            PolicyKind::Ideal => TrainingScheduler::ZeroCost(ZeroCost {
                period: config.ideal_period,
            }),
        };
        Ok(Simulation {
            training_job: TrainingJob {
                demand: config.env.training_demand,
                capacity: config.env.capacity,
            },
            config: config.clone(),
            seed,
            encoder,
            agent,
            replay,
            scheduler,
            train_arrivals: rng_stream(seed, STREAM_TRAIN_ARRIVALS),
            eval_arrivals: rng_stream(seed, STREAM_EVAL_ARRIVALS),
            explore: rng_stream(seed, STREAM_EXPLORE),
            replay_rng: rng_stream(seed, STREAM_REPLAY),
            train_slot: 0,
            last_td: f64::INFINITY,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn agent(&self) -> Option<&DdqnAgent> {
        self.agent.as_ref()
    }

    pub fn scheduler(&self) -> &TrainingScheduler {
        &self.scheduler
    }

    pub fn gate_stats(&self) -> Option<GateStats> {
        match &self.scheduler {
            TrainingScheduler::Adaptive(a) => Some(a.stats),
            _ => None,
        }
    }

    pub fn into_agent(self) -> Option<DdqnAgent> {
        self.agent
    }

    fn epsilon(&self, episode: usize, mode: Mode) -> f64 {
        match (mode, self.config.policy) {
            (Mode::Eval, _) | (_, PolicyKind::Sjf) | (_, PolicyKind::Fixed) => 0.0,
            (Mode::Train, _) => self.config.epsilon_schedule().epsilon_at(episode),
        }
    }

    fn load(&self, episode: usize, mode: Mode) -> f64 {
        let schedule = self.config.load_schedule();
        match mode {
            Mode::Train => schedule.load_at(episode),
            Mode::Eval => schedule.final_load(),
        }
    }

    /// Simulates one episode of `n_slot` slots from an empty server.
    pub fn run_episode(
        &mut self,
        episode: usize,
        mode: Mode,
        mut observer: Option<&mut Observer<'_>>,
    ) -> Result<EpisodeMetrics> {
        let cfg = &self.config;
        let env = cfg.env.clone();
        let workload = cfg.workload.clone();
        let rho = self.load(episode, mode);
        let p = arrival_probability(rho, &workload)?;
        let epsilon = self.epsilon(episode, mode);
        let n_slot = cfg.n_slot;
        let learning = mode == Mode::Train && cfg.policy.learns();

        let mut metrics = EpisodeMetrics {
            episode,
            rho,
            epsilon,
            ..Default::default()
        };
        let mut state = SystemState::empty(&env);
        let mut arrivals = Vec::new();
        let mut features = Vec::with_capacity(self.encoder.dim());
        let mut next_features = Vec::with_capacity(self.encoder.dim());
        let mut reward_sum = 0.0;
        let mut td_sum = 0.0;
        let mut td_count = 0u64;
        let idle = TrainingDecision {
            train: false,
            reason: crate::sched::Reason::Disabled,
            training_state: None,
        };

        for t in 0..n_slot {
            let mut decision = None;
            if learning {
                let agent = self.agent.as_mut().expect("learning policies have an agent");
                let d = self.scheduler.decide(
                    self.train_slot,
                    agent,
                    &self.encoder,
                    &state,
                    self.last_td,
                    self.training_job,
                );
                if let Some(s) = &d.training_state {
                    state = s.clone();
                    metrics.training_jobs += 1;
                }
                decision = Some(d);
            }

            self.encoder.encode_into(&state, &mut features);
            let (action, greedy) = match self.agent.as_mut() {
                None => (sjf_select(&state, env.capacity), true),
                Some(agent) => {
                    let (index, greedy) = agent.select_action(&features, epsilon, &mut self.explore);
                    (Action::from_index(index, env.buffer_len), greedy)
                }
            };

            let rng = match mode {
                Mode::Train => &mut self.train_arrivals,
                Mode::Eval => &mut self.eval_arrivals,
            };
            sample_arrivals_into(rng, p, &workload, &mut arrivals);
            metrics.generated += arrivals.len() as u64;

            let before = observer.is_some().then(|| state.clone());
            let (reward, info) = state.step(action, &arrivals, &env);
            reward_sum += reward;
            metrics.served += info.served as u64;
            metrics.discarded += info.discarded as u64;
            metrics.rejected += info.rejected as u64;

            if let Some(agent) = self.agent.as_mut() {
                self.encoder.encode_into(&state, &mut next_features);
                let terminal = t + 1 == n_slot;
                let a = action.to_index(env.buffer_len);
                let td = agent.td_error(&features, a, reward, &next_features, terminal);
                td_sum += td.abs();
                td_count += 1;
                if learning {
                    if greedy {
                        self.last_td = td;
                    }
                    let replay = self.replay.as_mut().expect("learning policies have a replay buffer");
                    replay.push(Transition {
                        state: features.clone(),
                        action: a,
                        reward,
                        next_state: next_features.clone(),
                        terminal,
                    });
                    if decision.as_ref().is_some_and(|d| d.train)
                        && agent.train_once(replay, &mut self.replay_rng)?.is_some()
                    {
                        metrics.train_steps += 1;
                    }
                }
            }

            if let (Some(obs), Some(before)) = (observer.as_mut(), before.as_ref()) {
                obs(&SlotTrace {
                    episode,
                    slot: t,
                    mode,
                    decision: decision.as_ref().unwrap_or(&idle),
                    state: before,
                    action,
                    arrivals: &arrivals,
                    reward,
                    next_state: &state,
                });
            }
            if mode == Mode::Train {
                self.train_slot += 1;
            }
        }

        metrics.slots = n_slot as u64;
        metrics.left_in_buffer = state.buffer.occupied() as u64;
        metrics.mean_reward = reward_sum / n_slot as f64;
        metrics.mean_abs_td = if td_count > 0 {
            td_sum / td_count as f64
        } else {
            f64::NAN
        };
        metrics.param_checksum = self.agent.as_ref().map(|a| a.policy().checksum());
        debug_assert!(metrics.conserves_jobs());
        Ok(metrics)
    }
}

/// Output of one seed.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub train: Vec<EpisodeMetrics>,
    pub eval: Vec<EpisodeMetrics>,
    pub gate: Option<GateStats>,
    pub final_network: Option<Mlp>,
}

pub fn seed_csv_path(out_dir: &Path, name: &str, seed: u64, phase: &str) -> PathBuf {
    out_dir.join(format!("{name}_seed{seed}_{phase}.csv"))
}

pub fn summary_csv_path(out_dir: &Path, name: &str, phase: &str) -> PathBuf {
    out_dir.join(format!("{name}_summary_{phase}.csv"))
}

pub fn pretrained_weights_path(out_dir: &Path, name: &str, seed: u64) -> PathBuf {
    out_dir.join(format!("{name}_pretrained_seed{seed}.weights"))
}

/// Hooks into a seed run; all no-ops by default.
pub trait Progress {
    fn episode(&mut self, _seed: u64, _mode: Mode, _metrics: &EpisodeMetrics) {}
}

pub struct Silent;

impl Progress for Silent {}

/// Network the run starts from, pretraining one if the configuration asks for
/// a pretrained start and names no weights file.
pub fn initial_network(config: &ExperimentConfig, seed: u64, progress: &mut dyn Progress) -> Result<Option<Mlp>> {
    let needs = config.policy.uses_agent() && (config.init == Init::Pretrained || config.policy == PolicyKind::Fixed);
    if !needs {
        return Ok(None);
    }
    if let Some(path) = config.weights_path(seed) {
        return Mlp::load(&path).map(Some);
    }
    let pre = config.pretraining();
    let run = run_seed(&pre, seed, None, progress)?;
    let net = run.final_network.expect("pretraining uses an agent");
    net.save(&pretrained_weights_path(&config.out_dir, &config.name, seed))?;
    Ok(Some(net))
}

/// Runs the training phase and then the greedy evaluation phase of one seed,
/// writing `<name>_seed<S>_{train,eval}.csv` into the output directory.
pub fn run_seed(
    config: &ExperimentConfig,
    seed: u64,
    initial: Option<Mlp>,
    progress: &mut dyn Progress,
) -> Result<SeedRun> {
    let initial = match initial {
        Some(net) => Some(net),
        None => initial_network(config, seed, progress)?,
    };
    let mut sim = Simulation::new(config, seed, initial)?;
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut train = Vec::with_capacity(config.n_train);
    let mut sink = CsvSink::create(&seed_csv_path(out, &config.name, seed, "train"))?;
    for episode in 0..config.n_train {
        let mut m = sim.run_episode(episode, Mode::Train, None)?;
        sink.push(&mut m)?;
        progress.episode(seed, Mode::Train, &m);
        train.push(m);
    }

    let mut eval = Vec::with_capacity(config.n_test);
    let mut sink = CsvSink::create(&seed_csv_path(out, &config.name, seed, "eval"))?;
    for episode in 0..config.n_test {
        let mut m = sim.run_episode(episode, Mode::Eval, None)?;
        sink.push(&mut m)?;
        progress.episode(seed, Mode::Eval, &m);
        eval.push(m);
    }

    Ok(SeedRun {
        seed,
        gate: sim.gate_stats(),
        final_network: sim.into_agent().map(|a| a.policy().clone()),
        train,
        eval,
    })
}

/// Runs every configured seed and writes the per-seed CSVs plus the
/// across-seed summaries.
pub fn run_experiment(config: &ExperimentConfig, progress: &mut dyn Progress) -> Result<Vec<SeedRun>> {
    config.validate()?;
    let runs = config
        .seeds
        .iter()
        .map(|&seed| run_seed(config, seed, None, progress))
        .collect::<Result<Vec<_>>>()?;
    let out = &config.out_dir;
    let train: Vec<_> = runs.iter().map(|r| r.train.clone()).collect();
    let eval: Vec<_> = runs.iter().map(|r| r.eval.clone()).collect();
    write_summary(&train, &summary_csv_path(out, &config.name, "train"))?;
    write_summary(&eval, &summary_csv_path(out, &config.name, "eval"))?;
    Ok(runs)
}
