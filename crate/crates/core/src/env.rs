//! Slotted MEC server model: a finite job buffer plus a reservation grid over
//! the next `M` slots.
//!
//! Grid index 0 is the slot that starts now. A job scheduled at the beginning
//! of a slot occupies `c` units on `[start, start + e)`; at the end of the slot
//! the grid shifts left by one and the last cell is cleared.

use std::fmt;

/// One user job as seen by the scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Job {
    /// Execution time in slots.
    pub exec_time: u32,
    /// Resource units held for the whole execution.
    pub demand: u32,
    /// Slots already spent in the buffer.
    pub waited: u32,
    /// Maximum tolerated wait in slots.
    pub deadline: u32,
}

impl Job {
    pub fn new(exec_time: u32, demand: u32, deadline: u32) -> Self {
        Job {
            exec_time,
            demand,
            waited: 0,
            deadline,
        }
    }

    pub fn with_waited(mut self, waited: u32) -> Self {
        self.waited = waited;
        self
    }

    /// Slots left before the deadline is reached.
    pub fn slack(&self) -> u32 {
        self.deadline.saturating_sub(self.waited)
    }

    /// True when this job will be dropped at the end of the current slot
    /// unless it is scheduled now.
    pub fn expires_next(&self) -> bool {
        self.waited + 1 > self.deadline
    }
}

/// Fixed-length job buffer; `None` marks an empty position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Buffer {
    slots: Vec<Option<Job>>,
}

impl Buffer {
    pub fn new(len: usize) -> Self {
        Buffer { slots: vec![None; len] }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied() == 0
    }

    pub fn get(&self, index: usize) -> Option<&Job> {
        self.slots[index].as_ref()
    }

    pub fn set(&mut self, index: usize, job: Option<Job>) {
        self.slots[index] = job;
    }

    pub fn take(&mut self, index: usize) -> Option<Job> {
        self.slots[index].take()
    }

    pub fn slots(&self) -> &[Option<Job>] {
        &self.slots
    }

    pub fn occupied(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn iter_jobs(&self) -> impl Iterator<Item = (usize, &Job)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|j| (i, j)))
    }

    /// Places `job` in the lowest-index empty position. Returns the job back
    /// if the buffer is full.
    pub fn admit(&mut self, job: Job) -> Result<usize, Job> {
        match self.slots.iter().position(|s| s.is_none()) {
            Some(i) => {
                self.slots[i] = Some(job);
                Ok(i)
            }
            None => Err(job),
        }
    }
}

/// Resources already reserved for each of the next `M` slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResourceGrid {
    cells: Vec<u32>,
}

impl ResourceGrid {
    pub fn new(horizon: usize) -> Self {
        ResourceGrid {
            cells: vec![0; horizon],
        }
    }

    pub fn from_cells(cells: Vec<u32>) -> Self {
        ResourceGrid { cells }
    }

    pub fn horizon(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn get(&self, m: usize) -> u32 {
        self.cells[m]
    }

    /// Earliest offset where `demand` units are free for `duration`
    /// consecutive slots.
    pub fn earliest_fit(&self, duration: u32, demand: u32, capacity: u32) -> Option<usize> {
        let duration = duration as usize;
        if duration == 0 || duration > self.cells.len() || demand > capacity {
            return None;
        }
        let limit = capacity - demand;
        let mut run = 0usize;
        for (m, &used) in self.cells.iter().enumerate() {
            if used <= limit {
                run += 1;
                if run == duration {
                    return Some(m + 1 - duration);
                }
            } else {
                run = 0;
            }
        }
        None
    }

    /// Adds `demand` units on `[start, start + duration)`.
    pub fn reserve(&mut self, start: usize, duration: u32, demand: u32) {
        for cell in &mut self.cells[start..start + duration as usize] {
            *cell += demand;
        }
    }

    /// End-of-slot shift: `g(m) <- g(m+1)`, last cell cleared.
    pub fn shift(&mut self) {
        if self.cells.is_empty() {
            return;
        }
        self.cells.rotate_left(1);
        *self.cells.last_mut().unwrap() = 0;
    }
}

/// Scheduler decision for one slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    /// Schedule the job in this buffer position.
    Schedule(usize),
    /// Schedule nothing.
    Void,
}

impl Action {
    /// Maps an output index of the Q-network to an action. Index `L` is the
    /// void action.
    pub fn from_index(index: usize, buffer_len: usize) -> Self {
        if index < buffer_len {
            Action::Schedule(index)
        } else {
            Action::Void
        }
    }

    pub fn to_index(self, buffer_len: usize) -> usize {
        match self {
            Action::Schedule(i) => i,
            Action::Void => buffer_len,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Schedule(i) => write!(f, "schedule({i})"),
            Action::Void => f.write_str("void"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvParams {
    /// Server capacity `C`.
    pub capacity: u32,
    /// Buffer length `L`.
    pub buffer_len: usize,
    /// Allocation horizon `M`.
    pub horizon: usize,
    /// Weight `σ` of each expired job in the reward.
    pub expiry_weight: f64,
    /// Resources reserved by one training job.
    pub training_demand: u32,
    /// Divide the served job's execution time by `C` in the reward.
    pub scale_reward: bool,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            capacity: 20,
            buffer_len: 10,
            horizon: 20,
            expiry_weight: 0.1,
            training_demand: 20,
            scale_reward: true,
        }
    }
}

impl EnvParams {
    pub fn action_count(&self) -> usize {
        self.buffer_len + 1
    }
}

/// Buffer plus reservation grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemState {
    pub buffer: Buffer,
    pub grid: ResourceGrid,
}

/// Outcome of the end-of-slot time advance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdvanceOutcome {
    /// Buffered jobs dropped for exceeding their deadline.
    pub discarded: u32,
    /// Arrivals dropped because the buffer was full.
    pub rejected: u32,
    /// Arrivals that entered the buffer.
    pub admitted: u32,
}

/// Per-slot bookkeeping returned by [`SystemState::step`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub valid: bool,
    /// Set when a job left the buffer by being scheduled.
    pub served: bool,
    /// Delay satisfaction of the served job, 0 if none.
    pub satisfaction: f64,
    pub discarded: u32,
    pub rejected: u32,
    pub admitted: u32,
}

/// Satisfaction of a job entering service after waiting `waited` slots out
/// of a tolerated `deadline`.
pub fn delay_penalty(waited: u32, deadline: u32) -> f64 {
    debug_assert!(deadline >= 1);
    let w = waited as f64;
    let t = deadline as f64;
    if 2.0 * w < t {
        1.0
    } else if w < t {
        2.0 * (1.0 - w / t)
    } else {
        0.0
    }
}

impl SystemState {
    pub fn empty(params: &EnvParams) -> Self {
        SystemState {
            buffer: Buffer::new(params.buffer_len),
            grid: ResourceGrid::new(params.horizon),
        }
    }

    /// Number of buffered jobs whose deadline expires at the end of this slot,
    /// not counting the job taken by `action`.
    pub fn deadline_count(&self, action: Action) -> u32 {
        let skip = match action {
            Action::Schedule(i) => Some(i),
            Action::Void => None,
        };
        self.buffer
            .iter_jobs()
            .filter(|&(i, job)| Some(i) != skip && job.demand > 0 && job.expires_next())
            .count() as u32
    }

    /// Start offset for the job at `index`, or `None` when the position is
    /// empty or no window of the job's length has room for it.
    ///
    /// Panics if `index` is not a buffer position.
    pub fn placement(&self, index: usize, capacity: u32) -> Option<usize> {
        assert!(
            index < self.buffer.len(),
            "buffer index {index} out of range 0..{}",
            self.buffer.len()
        );
        let job = self.buffer.get(index)?;
        self.grid.earliest_fit(job.exec_time, job.demand, capacity)
    }

    /// Validity of `action`; void is never valid.
    pub fn is_valid(&self, action: Action, capacity: u32) -> Option<usize> {
        match action {
            Action::Schedule(i) => self.placement(i, capacity),
            Action::Void => None,
        }
    }

    /// Invalid actions are treated as void.
    pub fn effective_action(&self, action: Action, capacity: u32) -> Action {
        match self.is_valid(action, capacity) {
            Some(_) => action,
            None => Action::Void,
        }
    }

    pub fn reward(&self, action: Action, params: &EnvParams) -> f64 {
        let action = self.effective_action(action, params.capacity);
        let expiry = params.expiry_weight * self.deadline_count(action) as f64;
        match action {
            Action::Schedule(i) => {
                let job = self.buffer.get(i).expect("valid action refers to a job");
                let weight = if params.scale_reward {
                    job.exec_time as f64 / params.capacity as f64
                } else {
                    job.exec_time as f64
                };
                weight * delay_penalty(job.waited, job.deadline) - expiry
            }
            Action::Void => -expiry,
        }
    }

    /// Moves the job at `index` onto the grid at its earliest feasible start.
    ///
    /// Panics if the action is not valid; [`SystemState::step`] downgrades
    /// invalid actions to void instead.
    pub fn schedule_job(&mut self, index: usize, capacity: u32) -> Job {
        let start = self
            .placement(index, capacity)
            .unwrap_or_else(|| panic!("schedule_job on invalid buffer index {index}"));
        let job = self.buffer.take(index).unwrap();
        self.grid.reserve(start, job.exec_time, job.demand);
        job
    }

    /// Reserves `demand` units for one slot at the earliest slot with room.
    /// Returns the chosen slot, or `None` (state untouched) if no slot in the
    /// horizon can host it.
    pub fn insert_training_job(&mut self, demand: u32, capacity: u32) -> Option<usize> {
        let slot = self.grid.earliest_fit(1, demand, capacity)?;
        self.grid.reserve(slot, 1, demand);
        Some(slot)
    }

    /// Copy of this state with a training job inserted, used for scoring.
    pub fn with_training_job(&self, demand: u32, capacity: u32) -> Option<SystemState> {
        let mut next = self.clone();
        next.insert_training_job(demand, capacity)?;
        Some(next)
    }

    /// End-of-slot dynamics: grid shift, waiting-time increment, deadline
    /// drops, then admission of `arrivals` in order.
    pub fn advance(&mut self, arrivals: &[Job]) -> AdvanceOutcome {
        let mut outcome = AdvanceOutcome::default();
        self.grid.shift();
        for slot in self.buffer.slots.iter_mut() {
            if let Some(job) = slot {
                job.waited += 1;
                if job.waited > job.deadline {
                    *slot = None;
                    outcome.discarded += 1;
                }
            }
        }
        for &job in arrivals {
            match self.buffer.admit(Job { waited: 0, ..job }) {
                Ok(_) => outcome.admitted += 1,
                Err(_) => outcome.rejected += 1,
            }
        }
        outcome
    }

    /// One full slot: reward, optional placement, then time advance.
    pub fn step(&mut self, action: Action, arrivals: &[Job], params: &EnvParams) -> (f64, StepInfo) {
        let reward = self.reward(action, params);
        let mut info = StepInfo::default();
        if let Action::Schedule(i) = self.effective_action(action, params.capacity) {
            let job = self.schedule_job(i, params.capacity);
            info.valid = true;
            info.served = true;
            info.satisfaction = delay_penalty(job.waited, job.deadline);
        }
        let adv = self.advance(arrivals);
        info.discarded = adv.discarded;
        info.rejected = adv.rejected;
        info.admitted = adv.admitted;
        (reward, info)
    }

    pub fn check_invariants(&self, params: &EnvParams) -> bool {
        self.buffer.len() == params.buffer_len
            && self.grid.horizon() == params.horizon
            && self.grid.cells().iter().all(|&g| g <= params.capacity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> EnvParams {
        EnvParams::default()
    }

    fn state_with(grid: Vec<u32>, jobs: &[(usize, Job)], p: &EnvParams) -> SystemState {
        let mut s = SystemState::empty(p);
        let mut cells = grid;
        cells.resize(p.horizon, 0);
        s.grid = ResourceGrid::from_cells(cells);
        for &(i, j) in jobs {
            s.buffer.set(i, Some(j));
        }
        s
    }

    #[test]
    fn delay_penalty_branches() {
        assert_eq!(delay_penalty(1, 4), 1.0);
        assert_eq!(delay_penalty(3, 4), 0.5);
        assert_eq!(delay_penalty(4, 4), 0.0);
        assert_eq!(delay_penalty(2, 4), 1.0);
        assert_eq!(delay_penalty(9, 8), 0.0);
        assert_eq!(delay_penalty(0, 1), 1.0);
        assert_eq!(delay_penalty(1, 1), 0.0);
    }

    #[test]
    fn deadline_count_examples() {
        let p = params();
        assert_eq!(SystemState::empty(&p).deadline_count(Action::Void), 0);
        let s = state_with(
            vec![],
            &[
                (0, Job::new(2, 5, 4).with_waited(4)),
                (1, Job::new(2, 5, 8).with_waited(1)),
            ],
            &p,
        );
        assert_eq!(s.deadline_count(Action::Void), 1);
        // w + 1 = T is not yet past the deadline.
        let edge = state_with(vec![], &[(0, Job::new(2, 5, 4).with_waited(3))], &p);
        assert_eq!(edge.deadline_count(Action::Void), 0);
        assert_eq!(s.deadline_count(Action::Schedule(0)), 0);
        assert_eq!(s.deadline_count(Action::Schedule(1)), 1);
    }

    #[test]
    fn validity_examples() {
        let p = params();
        let s = state_with(vec![], &[(0, Job::new(3, 5, 4))], &p);
        assert_eq!(s.placement(0, 20), Some(0));
        let s = state_with(vec![20, 20], &[(0, Job::new(2, 1, 4))], &p);
        assert_eq!(s.placement(0, 20), Some(2));
        let s = state_with(vec![16; 20], &[(0, Job::new(2, 5, 4))], &p);
        assert_eq!(s.placement(0, 20), None);
        assert_eq!(s.placement(1, 20), None);
        assert_eq!(s.is_valid(Action::Void, 20), None);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn placement_index_out_of_range() {
        let p = params();
        SystemState::empty(&p).placement(p.buffer_len, 20);
    }

    #[test]
    fn reward_examples() {
        let p = params();
        let s = state_with(vec![], &[(0, Job::new(10, 5, 8).with_waited(1))], &p);
        assert_eq!(s.reward(Action::Schedule(0), &p), 0.5);
        assert_eq!(s.reward(Action::Schedule(3), &p), 0.0);
        assert_eq!(s.reward(Action::Void, &p), 0.0);

        let literal = EnvParams {
            scale_reward: false,
            ..p.clone()
        };
        assert_eq!(s.reward(Action::Schedule(0), &literal), 10.0);

        // Serving at the deadline earns nothing but avoids the expiry penalty.
        let s = state_with(vec![], &[(0, Job::new(10, 5, 8).with_waited(8))], &p);
        assert_eq!(s.reward(Action::Schedule(0), &p), 0.0);
        assert!((s.reward(Action::Void, &p) + 0.1).abs() < 1e-15);
        let mut next = s.clone();
        let (_, info) = next.step(Action::Schedule(0), &[], &p);
        assert!(info.served);
        assert_eq!(info.discarded, 0);
    }

    #[test]
    fn invalid_action_on_expiring_job_counts_it() {
        let p = params();
        // Job 0 expires and cannot fit; pointing at it is the same as void.
        let mut s = state_with(vec![20; 20], &[(0, Job::new(2, 5, 4).with_waited(4))], &p);
        let (r, info) = s.step(Action::Schedule(0), &[], &p);
        assert!((r + p.expiry_weight).abs() < 1e-15);
        assert!(!info.valid);
        assert_eq!(info.discarded, 1);
        assert!(s.buffer.is_empty());
    }

    #[test]
    fn schedule_examples() {
        let p = params();
        let mut s = state_with(vec![], &[(0, Job::new(2, 7, 4))], &p);
        s.schedule_job(0, 20);
        assert_eq!(&s.grid.cells()[..3], &[7, 7, 0]);
        assert!(s.buffer.is_empty());

        let mut s = state_with(vec![20], &[(0, Job::new(1, 20, 4))], &p);
        s.schedule_job(0, 20);
        assert_eq!(&s.grid.cells()[..3], &[20, 20, 0]);
    }

    #[test]
    fn training_insertion_examples() {
        let p = params();
        let s = SystemState::empty(&p);
        let t = s.with_training_job(20, 20).unwrap();
        assert_eq!(&t.grid.cells()[..2], &[20, 0]);
        assert_eq!(s, SystemState::empty(&p));

        let mut s = state_with(vec![20, 20, 5], &[], &p);
        assert_eq!(s.insert_training_job(20, 20), Some(3));
        assert_eq!(&s.grid.cells()[..5], &[20, 20, 5, 20, 0]);

        let mut s = state_with(vec![1; 20], &[], &p);
        let before = s.clone();
        assert_eq!(s.insert_training_job(20, 20), None);
        assert_eq!(s, before);
    }

    #[test]
    fn advance_examples() {
        let p = EnvParams { horizon: 3, ..params() };
        let mut s = state_with(vec![5, 3, 2], &[], &p);
        let out = s.advance(&[]);
        assert_eq!(s.grid.cells(), &[3, 2, 0]);
        assert_eq!(out, AdvanceOutcome::default());

        let p = params();
        let mut s = state_with(vec![], &[(4, Job::new(10, 5, 8).with_waited(8))], &p);
        let out = s.advance(&[]);
        assert_eq!(out.discarded, 1);
        assert!(s.buffer.is_empty());

        let mut s = SystemState::empty(&p);
        for i in 0..p.buffer_len {
            s.buffer.set(i, Some(Job::new(2, 5, 8)));
        }
        let out = s.advance(&[Job::new(1, 5, 4), Job::new(1, 5, 4)]);
        assert_eq!(out.rejected, 2);
    }

    #[test]
    fn arrivals_fill_lowest_empty_slots() {
        let p = params();
        let mut s = state_with(vec![], &[(0, Job::new(2, 5, 8)), (2, Job::new(3, 5, 8))], &p);
        let a = Job::new(9, 6, 8).with_waited(5);
        let b = Job::new(1, 7, 4);
        s.advance(&[a, b]);
        assert_eq!(s.buffer.get(1), Some(&Job::new(9, 6, 8)));
        assert_eq!(s.buffer.get(3), Some(&b));
        assert_eq!(s.buffer.get(0).unwrap().waited, 1);
    }

    #[test]
    fn step_void_on_empty_system() {
        let p = params();
        let mut s = SystemState::empty(&p);
        let (r, info) = s.step(Action::Void, &[], &p);
        assert_eq!(r, 0.0);
        assert!(!info.served);
        assert_eq!(s, SystemState::empty(&p));
    }

    #[test]
    fn step_composes_placement_and_shift() {
        let p = params();
        let mut s = state_with(vec![4, 4], &[(1, Job::new(3, 6, 4))], &p);
        let (r, info) = s.step(Action::Schedule(1), &[], &p);
        assert!(info.valid);
        assert_eq!(r, 3.0 / 20.0);
        // placed on [0,3): [10,10,6,0..] then shifted
        assert_eq!(&s.grid.cells()[..4], &[10, 6, 0, 0]);
        assert!(s.buffer.is_empty());
    }

    #[test]
    fn action_index_roundtrip() {
        for i in 0..=10 {
            assert_eq!(Action::from_index(i, 10).to_index(10), i);
        }
        assert_eq!(Action::from_index(10, 10), Action::Void);
    }
}
