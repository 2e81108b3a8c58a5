//! Bernoulli job arrivals from a population of users and the load-to-rate
//! mapping.

use rand::Rng;

use crate::env::Job;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JobClass {
    Short,
    Long,
}

/// Distribution of one job class. Ranges are inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct JobClassSpec {
    pub class: JobClass,
    pub exec_range: (u32, u32),
    pub demand_range: (u32, u32),
    pub deadline: u32,
}

impl JobClassSpec {
    pub fn mean_exec(&self) -> f64 {
        (self.exec_range.0 + self.exec_range.1) as f64 / 2.0
    }

    pub fn mean_demand(&self) -> f64 {
        (self.demand_range.0 + self.demand_range.1) as f64 / 2.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Job {
        let e = rng.gen_range(self.exec_range.0..=self.exec_range.1);
        let c = rng.gen_range(self.demand_range.0..=self.demand_range.1);
        Job::new(e, c, self.deadline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadParams {
    pub users: u32,
    pub p_short: f64,
    pub short: JobClassSpec,
    pub long: JobClassSpec,
    pub capacity: u32,
    pub horizon: u32,
}

impl WorkloadParams {
    /// Short jobs take `{C/20..3C/20}` slots, long jobs `{2C/5..3C/5}`, both
    /// demand `{C/4..C/2}` units.
    pub fn for_capacity(capacity: u32, horizon: u32) -> Self {
        let demand_range = (capacity / 4, capacity / 2);
        WorkloadParams {
            users: 1000,
            p_short: 0.2,
            short: JobClassSpec {
                class: JobClass::Short,
                exec_range: ((capacity / 20).max(1), 3 * capacity / 20),
                demand_range,
                deadline: 4,
            },
            long: JobClassSpec {
                class: JobClass::Long,
                exec_range: (2 * capacity / 5, 3 * capacity / 5),
                demand_range,
                deadline: 8,
            },
            capacity,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(Error::config("users must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_short) {
            return Err(Error::config(format!(
                "p_short must be in [0, 1], got {}",
                self.p_short
            )));
        }
        for spec in [&self.short, &self.long] {
            let (e0, e1) = spec.exec_range;
            let (c0, c1) = spec.demand_range;
            if e0 == 0 || e0 > e1 || e1 > self.horizon {
                return Err(Error::config(format!(
                    "{:?} exec range {e0}..={e1} must lie in 1..={}",
                    spec.class, self.horizon
                )));
            }
            if c0 == 0 || c0 > c1 || c1 > self.capacity {
                return Err(Error::config(format!(
                    "{:?} demand range {c0}..={c1} must lie in 1..={}",
                    spec.class, self.capacity
                )));
            }
            if spec.deadline == 0 {
                return Err(Error::config(format!("{:?} deadline must be positive", spec.class)));
            }
        }
        Ok(())
    }

    pub fn mean_exec(&self) -> f64 {
        self.p_short * self.short.mean_exec() + (1.0 - self.p_short) * self.long.mean_exec()
    }

    pub fn mean_demand(&self) -> f64 {
        self.p_short * self.short.mean_demand() + (1.0 - self.p_short) * self.long.mean_demand()
    }

    /// Load produced per unit of per-user arrival probability:
    /// `N·E[c]·E[e] / (C·M)`. With the default classes at `C = M = 20` this
    /// equals `(3/8)·N·(1/2 − 2·p_short/5)`.
    pub fn load_per_unit_probability(&self) -> f64 {
        self.users as f64 * self.mean_demand() * self.mean_exec() / (self.capacity as f64 * self.horizon as f64)
    }

    pub fn max_deadline(&self) -> u32 {
        self.short.deadline.max(self.long.deadline)
    }
}

/// Per-user arrival probability that produces load `rho`.
pub fn arrival_probability(rho: f64, params: &WorkloadParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("load must be in [0, 1], got {rho}")));
    }
    let p = rho / params.load_per_unit_probability();
    if p >= 1.0 {
        return Err(Error::config(format!(
            "load {rho} needs per-user probability {p} >= 1 with {} users",
            params.users
        )));
    }
    Ok(p)
}

/// Draws this slot's arrivals, in user order.
pub fn sample_arrivals<R: Rng + ?Sized>(rng: &mut R, p: f64, params: &WorkloadParams) -> Vec<Job> {
    let mut jobs = Vec::new();
    sample_arrivals_into(rng, p, params, &mut jobs);
    jobs
}

pub fn sample_arrivals_into<R: Rng + ?Sized>(rng: &mut R, p: f64, params: &WorkloadParams, out: &mut Vec<Job>) {
    out.clear();
    if p <= 0.0 {
        return;
    }
    let mut emit = |rng: &mut R| {
        let spec = if rng.gen_bool(params.p_short) {
            &params.short
        } else {
            &params.long
        };
        out.push(spec.sample(rng));
    };
    if p >= 1.0 {
        for _ in 0..params.users {
            emit(rng);
        }
        return;
    }
    // Skip straight to the next user that fires: the gap between successes of
    // a Bernoulli(p) sequence is geometric, so this draws O(N·p) numbers
    // instead of N.
    let log_q = (-p).ln_1p();
    let users = params.users as u64;
    let mut user = 0u64;
    loop {
        let u: f64 = rng.gen();
        let gap = ((-u).ln_1p() / log_q).floor();
        if gap >= (users - user) as f64 {
            break;
        }
        user += gap as u64;
        emit(rng);
        user += 1;
        if user >= users {
            break;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadSchedule {
    Constant(f64),
    /// Linear from `start` at episode 0 to `end` at episode `episodes - 1`.
    Ramp {
        start: f64,
        end: f64,
        episodes: usize,
    },
}

impl LoadSchedule {
    pub fn load_at(&self, episode: usize) -> f64 {
        match *self {
            LoadSchedule::Constant(rho) => rho,
            LoadSchedule::Ramp { start, end, episodes } => {
                if episodes <= 1 || episode + 1 >= episodes {
                    return end;
                }
                start + (end - start) * episode as f64 / (episodes - 1) as f64
            }
        }
    }

    pub fn final_load(&self) -> f64 {
        match *self {
            LoadSchedule::Constant(rho) => rho,
            LoadSchedule::Ramp { end, .. } => end,
        }
    }
}
