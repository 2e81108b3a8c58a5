//! Experiment configuration: a flat `key = value` file with `#` comments.
//! Every key has a default; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{AgentParams, EpsilonSchedule};
use crate::env::EnvParams;
use crate::error::{Error, Result};
use crate::workload::{arrival_probability, LoadSchedule, WorkloadParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Stationary,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Sjf,
    Pts,
    Ats,
    Ideal,
    Fixed,
}

impl PolicyKind {
    pub fn learns(self) -> bool {
        matches!(self, PolicyKind::Pts | PolicyKind::Ats | PolicyKind::Ideal)
    }

    pub fn uses_agent(self) -> bool {
        self != PolicyKind::Sjf
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Sjf => "sjf",
            PolicyKind::Pts => "pts",
            PolicyKind::Ats => "ats",
            PolicyKind::Ideal => "ideal",
            PolicyKind::Fixed => "fixed",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsilonKind {
    Sigmoid,
    Exponential,
    Constant,
}

/// Where the agent's initial network comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Scratch,
    Pretrained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub scenario: Scenario,
    pub policy: PolicyKind,
    pub env: EnvParams,
    pub workload: WorkloadParams,
    pub agent: AgentParams,

    pub epsilon_kind: EpsilonKind,
    pub epsilon_max: f64,
    pub epsilon_min: f64,
    pub epsilon_decay_end: usize,
    pub epsilon_tail: f64,
    /// Exploration rate of adapting agents in the dynamic scenario.
    pub dynamic_epsilon: f64,

    pub rho: f64,
    pub rho_start: f64,
    pub rho_end: f64,

    pub train_period: u64,
    pub beta: f64,
    pub psi_capacity: usize,
    pub psi_percentile: f64,
    pub ideal_period: u64,

    pub n_train: usize,
    pub n_test: usize,
    pub n_slot: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    pub init: Init,
    /// Initial network; `{seed}` is replaced by the run seed.
    pub weights: Option<String>,
    pub pretrain_rho: f64,
    pub pretrain_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let env = EnvParams::default();
        ExperimentConfig {
            name: "run".into(),
            scenario: Scenario::Stationary,
            policy: PolicyKind::Pts,
            workload: WorkloadParams::for_capacity(env.capacity, env.horizon as u32),
            env,
            agent: AgentParams::default(),
            epsilon_kind: EpsilonKind::Sigmoid,
            epsilon_max: 1.0,
            epsilon_min: 0.1,
            epsilon_decay_end: 350,
            epsilon_tail: 0.1,
            dynamic_epsilon: 0.1,
            rho: 0.3,
            rho_start: 0.1,
            rho_end: 0.3,
            train_period: 50,
            beta: 0.4,
            psi_capacity: 1000,
            psi_percentile: 0.99,
            ideal_period: 10,
            n_train: 1000,
            n_test: 100,
            n_slot: 1000,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("out"),
            init: Init::Scratch,
            weights: None,
            pretrain_rho: 0.1,
            pretrain_episodes: 1000,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

/// Keys accepted in config files and overrides.
pub const KEYS: &[&str] = &[
    "name",
    "scenario",
    "policy",
    "capacity",
    "buffer_len",
    "horizon",
    "sigma",
    "training_demand",
    "reward_scale",
    "users",
    "p_short",
    "short_exec_min",
    "short_exec_max",
    "long_exec_min",
    "long_exec_max",
    "demand_min",
    "demand_max",
    "short_deadline",
    "long_deadline",
    "rho",
    "rho_start",
    "rho_end",
    "gamma",
    "batch_size",
    "batches_per_job",
    "tau",
    "learning_rate",
    "replay_capacity",
    "hidden",
    "soft_update",
    "epsilon_schedule",
    "epsilon_max",
    "epsilon_min",
    "epsilon_decay_end",
    "epsilon_tail",
    "dynamic_epsilon",
    "T_ell",
    "beta",
    "psi_capacity",
    "psi_percentile",
    "ideal_period",
    "n_train",
    "n_test",
    "n_slot",
    "seeds",
    "out_dir",
    "init",
    "weights",
    "pretrain_rho",
    "pretrain_episodes",
];

/// Raw settings in file order, before defaults that depend on other keys are
/// resolved.
#[derive(Clone, Debug, Default)]
struct Raw {
    entries: Vec<(String, String)>,
}

impl Raw {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::config(format!("unknown key `{key}`")));
        }
        self.entries.retain(|(k, _)| k != key);
        self.entries.push((key.to_string(), value.to_string()));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
fn parse_lines(text: &str, raw: &mut Raw) -> Result<()> {
    for (n, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", n + 1)))?;
        raw.set(key.trim(), value.trim())
            .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
    }
    Ok(())
}

/// Config builder that accepts file text and `key=value` overrides.
#[derive(Clone, Debug, Default)]
pub struct ConfigBuilder {
    raw: Raw,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, text: &str) -> Result<Self> {
        parse_lines(text, &mut self.raw)?;
        Ok(self)
    }

    pub fn file(self, path: &Path) -> Result<Self> {
        // An unreadable config file is the user's input error, not a run failure.
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        self.text(&text)
    }

    pub fn set(mut self, key: &str, value: &str) -> Result<Self> {
        self.raw.set(key, value)?;
        Ok(self)
    }

    /// Applies an override of the form `key=value`.
    pub fn override_pair(self, pair: &str) -> Result<Self> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let raw = &self.raw;
        let mut c = ExperimentConfig::default();
        let get = |k: &str| raw.get(k);

        if let Some(v) = get("scenario") {
            c.scenario = match v {
                "stationary" => Scenario::Stationary,
                "dynamic" => Scenario::Dynamic,
                _ => return Err(Error::config(format!("unknown scenario `{v}`"))),
            };
        }
        if c.scenario == Scenario::Dynamic {
            c.n_train = 1500;
            c.init = Init::Pretrained;
        }
        if let Some(v) = get("policy") {
            c.policy = match v {
                "sjf" => PolicyKind::Sjf,
                "pts" => PolicyKind::Pts,
                "ats" => PolicyKind::Ats,
                "ideal" => PolicyKind::Ideal,
                "fixed" => PolicyKind::Fixed,
                _ => return Err(Error::config(format!("unknown policy `{v}`"))),
            };
        }
        if c.policy == PolicyKind::Fixed {
            c.init = Init::Pretrained;
        }

        for (key, value) in &raw.entries {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "scenario" | "policy" => {}
                "name" => c.name = v.to_string(),
                "capacity" => c.env.capacity = parse(k, v)?,
                "buffer_len" => c.env.buffer_len = parse(k, v)?,
                "horizon" => c.env.horizon = parse(k, v)?,
                "sigma" => c.env.expiry_weight = parse(k, v)?,
                "training_demand" => {}
                "reward_scale" => c.env.scale_reward = parse_bool(k, v)?,
                "users" => c.workload.users = parse(k, v)?,
                "p_short" => c.workload.p_short = parse(k, v)?,
                // Class ranges depend on capacity; resolved below.
                "short_exec_min" | "short_exec_max" | "long_exec_min" | "long_exec_max" | "demand_min"
                | "demand_max" | "short_deadline" | "long_deadline" => {}
                "rho" => c.rho = parse(k, v)?,
                "rho_start" => c.rho_start = parse(k, v)?,
                "rho_end" => c.rho_end = parse(k, v)?,
                "gamma" => c.agent.gamma = parse(k, v)?,
                "batch_size" => c.agent.batch_size = parse(k, v)?,
                "batches_per_job" => c.agent.batches_per_job = parse(k, v)?,
                "tau" => c.agent.tau = parse(k, v)?,
                "learning_rate" => c.agent.learning_rate = parse(k, v)?,
                "replay_capacity" => c.agent.replay_capacity = parse(k, v)?,
                "hidden" => c.agent.hidden = parse_list(k, v)?,
                "soft_update" => {
                    c.agent.soft_update_per_batch = match v {
                        "batch" => true,
                        "job" => false,
                        _ => return Err(Error::config(format!("soft_update must be batch or job, got `{v}`"))),
                    }
                }
                "epsilon_schedule" => {
                    c.epsilon_kind = match v {
                        "sigmoid" => EpsilonKind::Sigmoid,
                        "exponential" => EpsilonKind::Exponential,
                        "constant" => EpsilonKind::Constant,
                        _ => return Err(Error::config(format!("unknown epsilon_schedule `{v}`"))),
                    }
                }
                "epsilon_max" => c.epsilon_max = parse(k, v)?,
                "epsilon_min" => c.epsilon_min = parse(k, v)?,
                "epsilon_decay_end" => c.epsilon_decay_end = parse(k, v)?,
                "epsilon_tail" => c.epsilon_tail = parse(k, v)?,
                "dynamic_epsilon" => c.dynamic_epsilon = parse(k, v)?,
                "T_ell" => c.train_period = parse(k, v)?,
                "beta" => c.beta = parse(k, v)?,
                "psi_capacity" => c.psi_capacity = parse(k, v)?,
                "psi_percentile" => c.psi_percentile = parse(k, v)?,
                "ideal_period" => c.ideal_period = parse(k, v)?,
                "n_train" => c.n_train = parse(k, v)?,
                "n_test" => c.n_test = parse(k, v)?,
                "n_slot" => c.n_slot = parse(k, v)?,
                "seeds" => c.seeds = parse_list(k, v)?,
                "out_dir" => c.out_dir = PathBuf::from(v),
                "init" => {
                    c.init = match v {
                        "scratch" => Init::Scratch,
                        "pretrained" => Init::Pretrained,
                        _ => return Err(Error::config(format!("init must be scratch or pretrained, got `{v}`"))),
                    }
                }
                "weights" => c.weights = (!v.is_empty()).then(|| v.to_string()),
                "pretrain_rho" => c.pretrain_rho = parse(k, v)?,
                "pretrain_episodes" => c.pretrain_episodes = parse(k, v)?,
                _ => unreachable!("key list and match arms disagree on `{k}`"),
            }
        }

        c.env.training_demand = match get("training_demand") {
            Some(v) => parse("training_demand", v)?,
            None => c.env.capacity,
        };
        let users = c.workload.users;
        let p_short = c.workload.p_short;
        c.workload = WorkloadParams::for_capacity(c.env.capacity, c.env.horizon as u32);
        c.workload.users = users;
        c.workload.p_short = p_short;
        let w = &mut c.workload;
        let u32_key = |k: &str| get(k).map(|v| parse::<u32>(k, v)).transpose();
        if let Some(v) = u32_key("short_exec_min")? {
            w.short.exec_range.0 = v;
        }
        if let Some(v) = u32_key("short_exec_max")? {
            w.short.exec_range.1 = v;
        }
        if let Some(v) = u32_key("long_exec_min")? {
            w.long.exec_range.0 = v;
        }
        if let Some(v) = u32_key("long_exec_max")? {
            w.long.exec_range.1 = v;
        }
        if let Some(v) = u32_key("demand_min")? {
            w.short.demand_range.0 = v;
            w.long.demand_range.0 = v;
        }
        if let Some(v) = u32_key("demand_max")? {
            w.short.demand_range.1 = v;
            w.long.demand_range.1 = v;
        }
        if let Some(v) = u32_key("short_deadline")? {
            w.short.deadline = v;
        }
        if let Some(v) = u32_key("long_deadline")? {
            w.long.deadline = v;
        }
        c.validate()?;
        Ok(c)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        ConfigBuilder::new().file(path)?.build()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        ConfigBuilder::new().text(text)?.build()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.env;
        if e.capacity == 0 || e.buffer_len == 0 || e.horizon == 0 {
            return Err(Error::config("capacity, buffer_len and horizon must be positive"));
        }
        if e.training_demand == 0 || e.training_demand > e.capacity {
            return Err(Error::config(format!(
                "training_demand must be in 1..={}, got {}",
                e.capacity, e.training_demand
            )));
        }
        if !(e.expiry_weight >= 0.0 && e.expiry_weight.is_finite()) {
            return Err(Error::config("sigma must be a non-negative number"));
        }
        self.workload.validate()?;
        let a = &self.agent;
        if !(a.gamma > 0.0 && a.gamma < 1.0) {
            return Err(Error::config(format!("gamma must be in (0, 1), got {}", a.gamma)));
        }
        if a.batch_size == 0 || a.batches_per_job == 0 || a.replay_capacity == 0 {
            return Err(Error::config(
                "batch_size, batches_per_job and replay_capacity must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&a.tau) {
            return Err(Error::config("tau must be in [0, 1]"));
        }
        if a.hidden.contains(&0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        for (k, eps) in [
            ("epsilon_max", self.epsilon_max),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_tail", self.epsilon_tail),
            ("dynamic_epsilon", self.dynamic_epsilon),
        ] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::config(format!("{k} must be in [0, 1], got {eps}")));
            }
        }
        if self.epsilon_min > self.epsilon_max {
            return Err(Error::config("epsilon_min exceeds epsilon_max"));
        }
        if self.train_period == 0 || self.ideal_period == 0 {
            return Err(Error::config("T_ell and ideal_period must be at least 1"));
        }
        if self.psi_capacity == 0 || !(self.psi_percentile > 0.0 && self.psi_percentile < 1.0) {
            return Err(Error::config(
                "psi_capacity must be positive and psi_percentile in (0, 1)",
            ));
        }
        if self.beta < 0.0 {
            return Err(Error::config("beta must be non-negative"));
        }
        if self.n_slot == 0 {
            return Err(Error::config("n_slot must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        for rho in [self.rho, self.rho_start, self.rho_end, self.pretrain_rho] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::config(format!("load must be in (0, 1], got {rho}")));
            }
            arrival_probability(rho, &self.workload)?;
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name must be a non-empty file-name fragment"));
        }
        Ok(())
    }

    pub fn load_schedule(&self) -> LoadSchedule {
        match self.scenario {
            Scenario::Stationary => LoadSchedule::Constant(self.rho),
            Scenario::Dynamic => LoadSchedule::Ramp {
                start: self.rho_start,
                end: self.rho_end,
                episodes: self.n_train,
            },
        }
    }

    /// Exploration schedule for the training phase.
    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        if self.scenario == Scenario::Dynamic && self.init == Init::Pretrained {
            return EpsilonSchedule::Constant(self.dynamic_epsilon);
        }
        match self.epsilon_kind {
            EpsilonKind::Sigmoid => EpsilonSchedule::reverse_sigmoid(
                self.epsilon_max,
                self.epsilon_min,
                self.epsilon_decay_end,
                self.epsilon_tail,
            ),
            EpsilonKind::Exponential => EpsilonSchedule::Exponential {
                max: self.epsilon_max,
                min: self.epsilon_min,
                decay_end: self.epsilon_decay_end,
                tail: self.epsilon_tail,
            },
            EpsilonKind::Constant => EpsilonSchedule::Constant(self.epsilon_tail),
        }
    }

    pub fn weights_path(&self, seed: u64) -> Option<PathBuf> {
        self.weights
            .as_ref()
            .map(|w| PathBuf::from(w.replace("{seed}", &seed.to_string())))
    }

    /// Configuration used to pretrain the initial network: zero-cost
    /// training at `pretrain_rho`.
    pub fn pretraining(&self) -> ExperimentConfig {
        ExperimentConfig {
            name: format!("{}_pretrain", self.name),
            scenario: Scenario::Stationary,
            policy: PolicyKind::Ideal,
            rho: self.pretrain_rho,
            n_train: self.pretrain_episodes,
            n_test: 0,
            init: Init::Scratch,
            weights: None,
            ..self.clone()
        }
    }
}
