//! Simulator of a mobile-edge-computing job scheduler driven by a Double DQN
//! agent whose own training reserves server resources.
//!
//! The crate is organised bottom-up:
//!
//! * [`env`]: buffer and reservation grid, reward, slot dynamics.
//! * [`workload`]: Bernoulli arrivals and load schedules.
//! * [`nn`]: fully connected network, Adam, soft target updates.
//! * [`agent`]: state encoding, replay, ε schedules, DDQN updates.
//! * [`sched`]: when to train (periodic, adaptive, zero-cost).
//! * [`sjf`]: Shortest Job First baseline.
//! * [`harness`]: experiment configuration, runs and CSV output.

pub mod agent;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod sched;
pub mod sjf;
pub mod workload;

pub use agent::{AgentParams, DdqnAgent, EpsilonSchedule, ReplayBuffer, StateEncoder, Transition};
pub use env::{delay_penalty, Action, Buffer, EnvParams, Job, ResourceGrid, StepInfo, SystemState};
pub use error::{Error, Result};
pub use harness::{ConfigBuilder, ExperimentConfig, PolicyKind, Scenario};
pub use nn::{Adam, Mlp};
pub use sched::{Reason, TrainingDecision, TrainingJob, TrainingScheduler};
pub use sjf::sjf_select;
pub use workload::{arrival_probability, sample_arrivals, LoadSchedule, WorkloadParams};
