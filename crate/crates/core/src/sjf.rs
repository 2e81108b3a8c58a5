//! Shortest Job First.

use crate::env::{Action, SystemState};

/// Picks the schedulable job with the smallest execution time, breaking ties
/// by smaller slack and then by lower buffer index. Returns void when nothing
/// fits.
pub fn sjf_select(state: &SystemState, capacity: u32) -> Action {
    state
        .buffer
        .iter_jobs()
        .filter(|&(i, _)| state.placement(i, capacity).is_some())
        .min_by_key(|&(i, job)| (job.exec_time, job.slack(), i))
        .map_or(Action::Void, |(i, _)| Action::Schedule(i))
}
