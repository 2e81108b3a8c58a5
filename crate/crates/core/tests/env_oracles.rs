mod common;

use edgesched_core::env::{Action, EnvParams, Job, ResourceGrid, SystemState};
use edgesched_core::{delay_penalty, sjf_select};
use proptest::prelude::*;

#[test]
fn hand_values_match() {
    common::hand_values().unwrap();
}

#[test]
fn placement_matches_exhaustive_enumeration() {
    let checked = common::brute_force_placement(3, 4, 4).unwrap();
    assert!(checked > 1_000_000, "only {checked} states");
}

#[test]
fn penalty_is_monotone_and_one_below_half() {
    for t in 1..=40u32 {
        let mut prev = f64::INFINITY;
        for w in 0..=2 * t {
            let v = delay_penalty(w, t);
            assert!(v <= prev, "φ({w},{t}) increased");
            assert!((0.0..=1.0).contains(&v));
            // The middle branch starts at exactly 1 when w = T/2 (continuity).
            assert_eq!(v == 1.0, 2 * w <= t, "φ({w},{t}) = {v}");
            prev = v;
        }
    }
}

fn job() -> impl Strategy<Value = Job> {
    (1u32..=12, 5u32..=10, prop_oneof![Just(4u32), Just(8u32)]).prop_map(|(e, c, t)| Job::new(e, c, t))
}

fn action() -> impl Strategy<Value = Action> {
    (0usize..=10).prop_map(|i| Action::from_index(i, 10))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conservation_and_grid_bound(
        slots in prop::collection::vec((action(), prop::collection::vec(job(), 0..4), any::<bool>()), 1..200)
    ) {
        let p = EnvParams::default();
        let mut s = SystemState::empty(&p);
        let (mut generated, mut served, mut discarded, mut rejected) = (0u64, 0u64, 0u64, 0u64);
        for (a, arrivals, train) in slots {
            if train {
                s.insert_training_job(p.training_demand, p.capacity);
            }
            generated += arrivals.len() as u64;
            let (_, info) = s.step(a, &arrivals, &p);
            served += info.served as u64;
            discarded += info.discarded as u64;
            rejected += info.rejected as u64;
            prop_assert!(s.check_invariants(&p));
            prop_assert!(s.grid.cells().iter().all(|&g| g <= p.capacity));
            prop_assert_eq!(generated, served + discarded + rejected + s.buffer.occupied() as u64);
        }
    }

    #[test]
    fn shift_identity(cells in prop::collection::vec(0u32..=20, 20)) {
        let p = EnvParams::default();
        let mut s = SystemState::empty(&p);
        s.grid = ResourceGrid::from_cells(cells.clone());
        s.advance(&[]);
        for m in 0..19 {
            prop_assert_eq!(s.grid.get(m), cells[m + 1]);
        }
        prop_assert_eq!(s.grid.get(19), 0);
    }

    #[test]
    fn reward_sign(
        cells in prop::collection::vec(0u32..=20, 20),
        jobs in prop::collection::vec(prop::option::of((job(), 0u32..=9)), 10),
        a in action(),
    ) {
        let p = EnvParams::default();
        let mut s = SystemState::empty(&p);
        s.grid = ResourceGrid::from_cells(cells);
        for (i, j) in jobs.into_iter().enumerate() {
            s.buffer.set(i, j.map(|(job, w)| job.with_waited(w.min(job.deadline))));
        }
        let r = s.reward(a, &p);
        let valid = s.is_valid(a, p.capacity).is_some();
        if !valid && s.deadline_count(Action::Void) == 0 {
            prop_assert_eq!(r, 0.0);
        }
        if r > 0.0 {
            prop_assert!(valid);
            let Action::Schedule(i) = a else { unreachable!() };
            let j = s.buffer.get(i).unwrap();
            prop_assert!(j.waited < j.deadline);
        }
    }

    #[test]
    fn sjf_never_picks_an_invalid_action(
        cells in prop::collection::vec(0u32..=20, 20),
        jobs in prop::collection::vec(prop::option::of(job()), 10),
    ) {
        let p = EnvParams::default();
        let mut s = SystemState::empty(&p);
        s.grid = ResourceGrid::from_cells(cells);
        for (i, j) in jobs.into_iter().enumerate() {
            s.buffer.set(i, j);
        }
        let a = sjf_select(&s, p.capacity);
        let schedulable: Vec<usize> = (0..10).filter(|&i| s.placement(i, p.capacity).is_some()).collect();
        match a {
            Action::Void => prop_assert!(schedulable.is_empty()),
            Action::Schedule(i) => {
                prop_assert!(schedulable.contains(&i));
                if schedulable.len() == 1 {
                    prop_assert_eq!(i, schedulable[0]);
                }
                let e = s.buffer.get(i).unwrap().exec_time;
                prop_assert!(schedulable.iter().all(|&k| s.buffer.get(k).unwrap().exec_time >= e));
            }
        }
    }

    #[test]
    fn training_state_is_pure_and_earliest(cells in prop::collection::vec(0u32..=20, 20)) {
        let p = EnvParams::default();
        let mut s = SystemState::empty(&p);
        s.grid = ResourceGrid::from_cells(cells.clone());
        let before = s.clone();
        let star = s.with_training_job(p.training_demand, p.capacity);
        prop_assert_eq!(&s, &before);
        let want = common::feasible_starts(&cells, 1, p.training_demand, p.capacity).first().copied();
        match (star, want) {
            (Some(star), Some(m)) => {
                let mut cells = cells.clone();
                cells[m] += p.training_demand;
                prop_assert_eq!(star.grid.cells(), cells.as_slice());
            }
            (None, None) => {}
            (got, want) => prop_assert!(false, "got {:?}, want slot {:?}", got.map(|g| g.grid), want),
        }
    }
}

#[test]
fn training_job_always_fits_after_advance() {
    // The shift clears the last cell, so a full-capacity training job has a
    // slot at every decision point.
    let p = EnvParams::default();
    let mut s = SystemState::empty(&p);
    s.grid = ResourceGrid::from_cells(vec![20; 20]);
    s.advance(&[]);
    assert_eq!(s.insert_training_job(20, 20), Some(19));
}
