//! Double DQN agent with reward-prioritized replay.

use rand::Rng;

use crate::env::{EnvParams, SystemState};
use crate::error::Result;
use crate::nn::{backward_and_step, Adam, Mlp, Sample, Scratch};

/// Flattens a [`SystemState`] into `4L + M` features in `[0, 1]`.
///
/// Per buffer position: `e/M, c/C, w/T_max, T/T_max` (zeros when empty),
/// followed by `g(m)/C` for every grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEncoder {
    pub buffer_len: usize,
    pub horizon: usize,
    pub capacity: u32,
    pub max_deadline: u32,
}

impl StateEncoder {
    pub fn new(env: &EnvParams, max_deadline: u32) -> Self {
        StateEncoder {
            buffer_len: env.buffer_len,
            horizon: env.horizon,
            capacity: env.capacity,
            max_deadline,
        }
    }

    pub fn dim(&self) -> usize {
        4 * self.buffer_len + self.horizon
    }

    pub fn encode_into(&self, state: &SystemState, out: &mut Vec<f64>) {
        out.clear();
        let m = self.horizon as f64;
        let c = self.capacity as f64;
        let t = self.max_deadline as f64;
        for slot in state.buffer.slots() {
            match slot {
                Some(job) => out.extend_from_slice(&[
                    job.exec_time as f64 / m,
                    job.demand as f64 / c,
                    (job.waited as f64 / t).min(1.0),
                    job.deadline as f64 / t,
                ]),
                None => out.extend_from_slice(&[0.0; 4]),
            }
        }
        out.extend(state.grid.cells().iter().map(|&g| g as f64 / c));
    }

    pub fn encode(&self, state: &SystemState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.encode_into(state, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Binary sum tree over leaf priorities.
#[derive(Clone, Debug)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two().max(1);
        SumTree {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, index: usize, priority: f64) {
        let mut i = self.leaves + index;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative-priority interval contains `mass`.
    fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.nodes[2 * i];
            if mass < left || self.nodes[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

/// FIFO experience store. Sampling probability of transition `i` is
/// proportional to `exp(r_i − max_j r_j)`.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    tree: SumTree,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
            tree: SumTree::new(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.items[index]
    }

    /// Stores `t`, evicting the oldest transition when full.
    pub fn push(&mut self, t: Transition) {
        // exp(r − max) ∝ exp(r): the shift cancels in the normalization, so
        // priorities never need refreshing when the maximum changes.
        let priority = t.reward.exp();
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.tree.set(self.next, priority);
        self.next = (self.next + 1) % self.capacity;
    }

    /// `exp(r_i − max_j r_j)` for every stored transition, in storage order.
    pub fn per_weights(&self) -> Vec<f64> {
        assert!(!self.items.is_empty(), "per_weights on an empty buffer");
        let max = self.items.iter().map(|t| t.reward).fold(f64::NEG_INFINITY, f64::max);
        self.items.iter().map(|t| (t.reward - max).exp()).collect()
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        let mass = rng.gen::<f64>() * self.tree.total();
        self.tree.find(mass).min(self.items.len() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonSchedule {
    /// `min + (max − min) / (1 + exp(k (t − midpoint)))` until `decay_end`,
    /// then `tail`.
    ReverseSigmoid {
        max: f64,
        min: f64,
        midpoint: f64,
        steepness: f64,
        decay_end: usize,
        tail: f64,
    },
    /// `max · (min/max)^(t/decay_end)` until `decay_end`, then `tail`.
    Exponential {
        max: f64,
        min: f64,
        decay_end: usize,
        tail: f64,
    },
    Constant(f64),
}

impl EpsilonSchedule {
    /// Reverse sigmoid centred on `decay_end / 2` with `k·midpoint = 7`, which
    /// keeps ε(0) within 1% of `max` and ε(decay_end) within 1% of `min`.
    pub fn reverse_sigmoid(max: f64, min: f64, decay_end: usize, tail: f64) -> Self {
        let midpoint = decay_end as f64 / 2.0;
        let steepness = if midpoint > 0.0 { 7.0 / midpoint } else { 0.0 };
        EpsilonSchedule::ReverseSigmoid {
            max,
            min,
            midpoint,
            steepness,
            decay_end,
            tail,
        }
    }

    pub fn epsilon_at(&self, episode: usize) -> f64 {
        match *self {
            EpsilonSchedule::ReverseSigmoid {
                max,
                min,
                midpoint,
                steepness,
                decay_end,
                tail,
            } => {
                if episode >= decay_end {
                    tail
                } else {
                    let t = episode as f64;
                    min + (max - min) / (1.0 + (steepness * (t - midpoint)).exp())
                }
            }
            EpsilonSchedule::Exponential {
                max,
                min,
                decay_end,
                tail,
            } => {
                if episode >= decay_end {
                    tail
                } else {
                    max * (min / max).powf(episode as f64 / decay_end as f64)
                }
            }
            EpsilonSchedule::Constant(eps) => eps,
        }
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::reverse_sigmoid(1.0, 0.1, 350, 0.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub gamma: f64,
    pub batch_size: usize,
    pub batches_per_job: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Soft-update the target after every batch rather than once per
    /// training job.
    pub soft_update_per_batch: bool,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            gamma: 0.95,
            batch_size: 16,
            batches_per_job: 10,
            tau: 0.005,
            learning_rate: 1e-3,
            replay_capacity: 100_000,
            hidden: vec![128, 128],
            soft_update_per_batch: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub batches: usize,
    pub mean_loss: f64,
}

#[derive(Clone, Debug)]
pub struct DdqnAgent {
    pub params: AgentParams,
    policy: Mlp,
    target: Mlp,
    adam: Adam,
    scratch: Scratch,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl DdqnAgent {
    pub fn new<R: Rng + ?Sized>(params: AgentParams, input_dim: usize, actions: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&params.hidden);
        sizes.push(actions);
        let policy = Mlp::new(&sizes, rng);
        Self::from_network(params, policy)
    }

    /// Agent whose policy and target both start from `policy`.
    pub fn from_network(params: AgentParams, policy: Mlp) -> Self {
        let adam = Adam::new(policy.param_count(), params.learning_rate);
        DdqnAgent {
            params,
            target: policy.clone(),
            policy,
            adam,
            scratch: Scratch::default(),
        }
    }

    pub fn policy(&self) -> &Mlp {
        &self.policy
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn policy_mut(&mut self) -> &mut Mlp {
        &mut self.policy
    }

    pub fn target_mut(&mut self) -> &mut Mlp {
        &mut self.target
    }

    pub fn actions(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn q_values(&mut self, features: &[f64]) -> Vec<f64> {
        self.policy.forward_with(features, &mut self.scratch).to_vec()
    }

    pub fn max_q(&mut self, features: &[f64]) -> f64 {
        max_of(self.policy.forward_with(features, &mut self.scratch))
    }

    pub fn greedy_action(&mut self, features: &[f64]) -> usize {
        argmax(self.policy.forward_with(features, &mut self.scratch))
    }

    /// ε-greedy choice. Returns the action index and whether it was greedy.
    pub fn select_action<R: Rng + ?Sized>(&mut self, features: &[f64], epsilon: f64, rng: &mut R) -> (usize, bool) {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            (rng.gen_range(0..self.actions()), false)
        } else {
            (self.greedy_action(features), true)
        }
    }

    /// Double-Q bootstrap target `r + γ·Q̂(s′, argmax_a′ Q(s′, a′))`, or `r`
    /// for a terminal transition.
    pub fn target_value(&mut self, reward: f64, next: &[f64], terminal: bool) -> f64 {
        if terminal {
            return reward;
        }
        let a_star = argmax(self.policy.forward_with(next, &mut self.scratch));
        let q_hat = self.target.forward_with(next, &mut self.scratch)[a_star];
        reward + self.params.gamma * q_hat
    }

    /// TD error `target − Q(s, a)`.
    pub fn td_error(&mut self, state: &[f64], action: usize, reward: f64, next: &[f64], terminal: bool) -> f64 {
        let target = self.target_value(reward, next, terminal);
        target - self.policy.forward_with(state, &mut self.scratch)[action]
    }

    /// Runs `batches_per_job` prioritized minibatch updates. Returns `None`
    /// (and does nothing) when the buffer holds fewer than `batch_size`
    /// transitions.
    pub fn train_once<R: Rng + ?Sized>(&mut self, replay: &ReplayBuffer, rng: &mut R) -> Result<Option<TrainStats>> {
        let b = self.params.batch_size;
        if replay.len() < b || b == 0 {
            return Ok(None);
        }
        let mut indices = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        let weights = vec![1.0; b];
        let mut loss_sum = 0.0;
        for _ in 0..self.params.batches_per_job {
            indices.clear();
            indices.extend((0..b).map(|_| replay.sample_index(rng)));
            targets.clear();
            for &i in &indices {
                let t = replay.get(i);
                targets.push(self.target_value(t.reward, &t.next_state, t.terminal));
            }
            let batch: Vec<Sample<'_>> = indices
                .iter()
                .zip(&targets)
                .map(|(&i, &target)| {
                    let t = replay.get(i);
                    Sample {
                        input: &t.state,
                        output: t.action,
                        target,
                    }
                })
                .collect();
            loss_sum += backward_and_step(&mut self.policy, &mut self.adam, &batch, &weights, &mut self.scratch)?;
            if self.params.soft_update_per_batch {
                self.target.soft_update(&self.policy, self.params.tau);
            }
        }
        if !self.params.soft_update_per_batch {
            self.target.soft_update(&self.policy, self.params.tau);
        }
        Ok(Some(TrainStats {
            batches: self.params.batches_per_job,
            mean_loss: loss_sum / self.params.batches_per_job as f64,
        }))
    }
}
