//! Decides, slot by slot, whether the agent trains and so whether a training
//! job takes server resources.
//!
//! * [`Periodic`] trains every `T_ℓ` slots regardless of state.
//! * [`Adaptive`] scores the state that would result from inserting a
//!   training job and trains when that score beats the 99th percentile of
//!   recent scores, as long as the Q-values look reliable; otherwise it falls
//!   back to the periodic rule.
//! * [`ZeroCost`] trains periodically without reserving resources.

use std::collections::VecDeque;

use crate::agent::{DdqnAgent, StateEncoder};
use crate::env::SystemState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Reason {
    /// Periodic rule (PTS, zero-cost cadence, or ATS warm-up).
    Periodic,
    /// ATS percentile rule with the reliability gate satisfied.
    Percentile,
    /// ATS gate failed; the periodic rule decided.
    GateFallback,
    /// No slot in the horizon could host the training job.
    NoCapacity,
    /// The scheduler never trains.
    Disabled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingDecision {
    pub train: bool,
    pub reason: Reason,
    /// State with the training job reserved; present exactly when resources
    /// must be taken for this training.
    pub training_state: Option<SystemState>,
}

impl TrainingDecision {
    fn idle(reason: Reason) -> Self {
        TrainingDecision {
            train: false,
            reason,
            training_state: None,
        }
    }

    fn with_state(train: bool, reason: Reason, state: SystemState) -> Self {
        TrainingDecision {
            train,
            reason,
            training_state: train.then_some(state),
        }
    }
}

/// Server-side parameters needed to build the training state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainingJob {
    pub demand: u32,
    pub capacity: u32,
}

impl TrainingJob {
    pub fn insert_into(&self, state: &SystemState) -> Option<SystemState> {
        state.with_training_job(self.demand, self.capacity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Periodic {
    pub period: u64,
}

impl Periodic {
    pub fn new(period: u64) -> Self {
        assert!(period >= 1, "training period must be at least one slot");
        Periodic { period }
    }

    pub fn due(&self, slot: u64) -> bool {
        slot.is_multiple_of(self.period)
    }

    pub fn decide(&self, slot: u64, state: &SystemState, job: TrainingJob) -> TrainingDecision {
        self.decide_as(slot, state, job, Reason::Periodic)
    }

    fn decide_as(&self, slot: u64, state: &SystemState, job: TrainingJob, reason: Reason) -> TrainingDecision {
        if !self.due(slot) {
            return TrainingDecision::idle(reason);
        }
        match job.insert_into(state) {
            Some(s) => TrainingDecision::with_state(true, reason, s),
            None => TrainingDecision::idle(Reason::NoCapacity),
        }
    }
}

/// Trains on a fixed cadence without occupying any resources.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroCost {
    pub period: u64,
}

impl ZeroCost {
    pub fn decide(&self, slot: u64) -> TrainingDecision {
        TrainingDecision {
            train: slot.is_multiple_of(self.period),
            reason: Reason::Periodic,
            training_state: None,
        }
    }
}

/// Linear-interpolated quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sliding window of ψ scores with an order-statistics view.
#[derive(Clone, Debug)]
pub struct PsiWindow {
    capacity: usize,
    recent: VecDeque<f64>,
    sorted: Vec<f64>,
}

impl PsiWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "psi window needs room for one score");
        PsiWindow {
            capacity,
            recent: VecDeque::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.recent.len() == self.capacity
    }

    pub fn push(&mut self, psi: f64) {
        assert!(!psi.is_nan(), "NaN psi score");
        if self.recent.len() == self.capacity {
            let old = self.recent.pop_front().unwrap();
            let at = self.sorted.partition_point(|&v| v < old);
            self.sorted.remove(at);
        }
        self.recent.push_back(psi);
        let at = self.sorted.partition_point(|&v| v < psi);
        self.sorted.insert(at, psi);
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.sorted, q)
    }
}

/// Q-based scores of one state and its training counterpart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateScores {
    pub max_q: f64,
    pub mean_q: f64,
    pub max_q_training: f64,
}

impl StateScores {
    /// `max Q(s*) + β·(max Q(s*) − max Q(s))`.
    pub fn psi(&self, beta: f64) -> f64 {
        self.max_q_training + beta * (self.max_q_training - self.max_q)
    }

    /// Reliability margin `max Q(s*) − mean_a Q(s, a)`.
    pub fn reliability(&self) -> f64 {
        self.max_q_training - self.mean_q
    }
}

/// Evaluates the policy network on `state` and on `training_state`.
pub fn score_states(
    agent: &mut DdqnAgent,
    encoder: &StateEncoder,
    state: &SystemState,
    training_state: &SystemState,
) -> StateScores {
    let q = agent.q_values(&encoder.encode(state));
    let max_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_q = q.iter().sum::<f64>() / q.len() as f64;
    let max_q_training = agent.max_q(&encoder.encode(training_state));
    StateScores {
        max_q,
        mean_q,
        max_q_training,
    }
}

/// ψ of `state`, or `None` if a training job cannot be inserted.
pub fn ats_psi(
    agent: &mut DdqnAgent,
    encoder: &StateEncoder,
    state: &SystemState,
    job: TrainingJob,
    beta: f64,
) -> Option<f64> {
    let s_star = job.insert_into(state)?;
    Some(score_states(agent, encoder, state, &s_star).psi(beta))
}

/// Reliability margin of `state`, or `None` if a training job cannot be
/// inserted.
pub fn phi_measure(
    agent: &mut DdqnAgent,
    encoder: &StateEncoder,
    state: &SystemState,
    job: TrainingJob,
) -> Option<f64> {
    let s_star = job.insert_into(state)?;
    Some(score_states(agent, encoder, state, &s_star).reliability())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GateStats {
    pub passed: u64,
    pub failed: u64,
    pub warmup: u64,
}

#[derive(Clone, Debug)]
pub struct Adaptive {
    pub beta: f64,
    pub percentile: f64,
    pub window: PsiWindow,
    pub fallback: Periodic,
    pub stats: GateStats,
}

impl Adaptive {
    pub fn new(beta: f64, percentile: f64, capacity: usize, fallback_period: u64) -> Self {
        assert!(percentile > 0.0 && percentile < 1.0, "percentile must be in (0, 1)");
        Adaptive {
            beta,
            percentile,
            window: PsiWindow::new(capacity),
            fallback: Periodic::new(fallback_period),
            stats: GateStats::default(),
        }
    }

    /// Core rule once `psi` is known: record it, then apply the percentile
    /// test if the window is full and the gate passes, or the periodic rule
    /// otherwise.
    pub fn decide_scored(
        &mut self,
        slot: u64,
        psi: f64,
        gate_passes: bool,
        training_state: SystemState,
    ) -> TrainingDecision {
        self.window.push(psi);
        if !self.window.is_full() {
            self.stats.warmup += 1;
            let train = self.fallback.due(slot);
            return TrainingDecision::with_state(train, Reason::Periodic, training_state);
        }
        if gate_passes {
            self.stats.passed += 1;
            let train = psi > self.window.quantile(self.percentile);
            TrainingDecision::with_state(train, Reason::Percentile, training_state)
        } else {
            self.stats.failed += 1;
            let train = self.fallback.due(slot);
            TrainingDecision::with_state(train, Reason::GateFallback, training_state)
        }
    }

    /// `last_td` is the most recent TD error from a greedy transition
    /// (infinite before the first one, which fails the gate).
    pub fn decide(
        &mut self,
        slot: u64,
        agent: &mut DdqnAgent,
        encoder: &StateEncoder,
        state: &SystemState,
        last_td: f64,
        job: TrainingJob,
    ) -> TrainingDecision {
        let Some(s_star) = job.insert_into(state) else {
            return TrainingDecision::idle(Reason::NoCapacity);
        };
        let scores = score_states(agent, encoder, state, &s_star);
        let gate = last_td.abs() <= scores.reliability();
        self.decide_scored(slot, scores.psi(self.beta), gate, s_star)
    }
}

#[derive(Clone, Debug)]
pub enum TrainingScheduler {
    Never,
    Periodic(Periodic),
    Adaptive(Adaptive),
    ZeroCost(ZeroCost),
}

impl TrainingScheduler {
    /// Whether the scheduler needs the TD error of greedy transitions.
    pub fn uses_td(&self) -> bool {
        matches!(self, TrainingScheduler::Adaptive(_))
    }

    pub fn decide(
        &mut self,
        slot: u64,
        agent: &mut DdqnAgent,
        encoder: &StateEncoder,
        state: &SystemState,
        last_td: f64,
        job: TrainingJob,
    ) -> TrainingDecision {
        match self {
            TrainingScheduler::Never => TrainingDecision::idle(Reason::Disabled),
            TrainingScheduler::Periodic(p) => p.decide(slot, state, job),
            TrainingScheduler::Adaptive(a) => a.decide(slot, agent, encoder, state, last_td, job),
            TrainingScheduler::ZeroCost(z) => z.decide(slot),
        }
    }
}
