//! Independent reference implementations shared by the oracle tests and the
//! acceptance target. Nothing here calls into the code under test for the
//! quantity being checked.
#![allow(dead_code)]

use edgesched_core::delay_penalty;
use edgesched_core::env::{Action, Buffer, EnvParams, Job, ResourceGrid, SystemState};
use edgesched_core::nn::{Mlp, Sample, Scratch};
use edgesched_core::workload::{arrival_probability, sample_arrivals_into, WorkloadParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every feasible start of a job by exhaustive enumeration.
pub fn feasible_starts(grid: &[u32], exec: u32, demand: u32, capacity: u32) -> Vec<usize> {
    let e = exec as usize;
    (0..grid.len())
        .filter(|&s| s + e <= grid.len() && (s..s + e).all(|m| grid[m] + demand <= capacity))
        .collect()
}

fn all_grids(horizon: usize, capacity: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..horizon {
        out = out
            .into_iter()
            .flat_map(|g| {
                (0..=capacity).map(move |v| {
                    let mut g = g.clone();
                    g.push(v);
                    g
                })
            })
            .collect();
    }
    out
}

/// Checks `is_valid` and `schedule_job` against exhaustive enumeration on
/// every state with buffer length ≤ `max_l`, horizon ≤ `max_m` and capacity
/// ≤ `max_c` (jobs with `1 ≤ e ≤ M + 1`, `1 ≤ c ≤ C`). Returns the number of
/// states checked.
pub fn brute_force_placement(max_l: usize, max_m: usize, max_c: u32) -> Result<usize, String> {
    let mut checked = 0usize;
    for c in 1..=max_c {
        for m in 1..=max_m {
            let mut jobs = vec![None];
            for e in 1..=m as u32 + 1 {
                for d in 1..=c {
                    jobs.push(Some(Job::new(e, d, 8)));
                }
            }
            let grids = all_grids(m, c);
            for l in 1..=max_l {
                let buffers = (0..l).fold(vec![vec![]], |acc: Vec<Vec<Option<Job>>>, _| {
                    acc.into_iter()
                        .flat_map(|b| {
                            jobs.iter().map(move |&j| {
                                let mut b = b.clone();
                                b.push(j);
                                b
                            })
                        })
                        .collect()
                });
                let params = EnvParams {
                    capacity: c,
                    buffer_len: l,
                    horizon: m,
                    ..EnvParams::default()
                };
                for grid in &grids {
                    for slots in &buffers {
                        let mut state = SystemState::empty(&params);
                        state.grid = ResourceGrid::from_cells(grid.clone());
                        for (i, j) in slots.iter().enumerate() {
                            state.buffer.set(i, *j);
                        }
                        if state.is_valid(Action::Void, c).is_some() {
                            return Err("void reported valid".into());
                        }
                        for (i, j) in slots.iter().enumerate() {
                            let expected =
                                j.and_then(|j| feasible_starts(grid, j.exec_time, j.demand, c).first().copied());
                            let got = state.is_valid(Action::Schedule(i), c);
                            if got != expected {
                                return Err(format!(
                                    "grid {grid:?} buffer {slots:?} index {i}: got {got:?}, want {expected:?}"
                                ));
                            }
                            if let (Some(start), Some(job)) = (expected, j) {
                                let mut after = state.clone();
                                after.schedule_job(i, c);
                                let mut want = grid.clone();
                                for cell in &mut want[start..start + job.exec_time as usize] {
                                    *cell += job.demand;
                                }
                                let mut buffer = Buffer::new(l);
                                for (k, other) in slots.iter().enumerate() {
                                    if k != i {
                                        buffer.set(k, *other);
                                    }
                                }
                                if after.grid.cells() != want.as_slice() || after.buffer != buffer {
                                    return Err(format!(
                                        "schedule_job mismatch on grid {grid:?} buffer {slots:?} index {i}"
                                    ));
                                }
                            }
                        }
                        checked += 1;
                    }
                }
            }
        }
    }
    Ok(checked)
}

/// Straightforward matrix-product forward pass. Returns every layer's
/// pre-activation and the final output.
pub fn naive_forward(net: &Mlp, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut probe = net.clone();
    let sizes = net.sizes().to_vec();
    let mut a = x.to_vec();
    let mut pre = Vec::new();
    for l in 0..sizes.len() - 1 {
        let mut z = vec![0.0; sizes[l + 1]];
        for (k, zk) in z.iter_mut().enumerate() {
            let mut s = *probe.bias_mut(l, k);
            for (j, aj) in a.iter().enumerate() {
                s += *probe.weight_mut(l, j, k) * aj;
            }
            *zk = s;
        }
        pre.push(z.clone());
        a = if l + 2 < sizes.len() {
            z.iter().map(|v| v.max(0.0)).collect()
        } else {
            z
        };
    }
    (pre, a)
}

fn weighted_loss(net: &Mlp, inputs: &[Vec<f64>], outputs: &[usize], targets: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    for i in 0..inputs.len() {
        let q = naive_forward(net, &inputs[i]).1[outputs[i]];
        loss += weights[i] * (q - targets[i]).powi(2);
    }
    loss / total
}

/// Compares analytic gradients with central finite differences on `pairs`
/// random (network, batch) pairs. Pairs with a hidden pre-activation close to
/// the ReLU kink are redrawn. Returns the worst relative error
/// `‖g − g_fd‖ / (‖g‖ + ‖g_fd‖)`.
pub fn gradient_check(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < pairs {
        let depth = rng.gen_range(1..=3);
        let mut sizes = vec![rng.gen_range(2..=6)];
        for _ in 0..depth {
            sizes.push(rng.gen_range(2..=7));
        }
        sizes.push(rng.gen_range(1..=4));
        let net = Mlp::new(&sizes, &mut rng);
        let n = rng.gen_range(1..=4);
        let inputs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let outputs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..*sizes.last().unwrap())).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();

        let near_kink = inputs.iter().any(|x| {
            let (pre, _) = naive_forward(&net, x);
            pre[..pre.len() - 1].iter().flatten().any(|z| z.abs() < 1e-3)
        });
        if near_kink {
            continue;
        }

        let batch: Vec<Sample<'_>> = (0..n)
            .map(|i| Sample {
                input: &inputs[i],
                output: outputs[i],
                target: targets[i],
            })
            .collect();
        let (_, analytic) = net.loss_and_gradient(&batch, &weights, &mut Scratch::default());
        let mut numeric = vec![0.0; net.param_count()];
        for (k, g) in numeric.iter_mut().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            *g = (weighted_loss(&plus, &inputs, &outputs, &targets, &weights)
                - weighted_loss(&minus, &inputs, &outputs, &targets, &weights))
                / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic) + norm(&numeric);
        let rel = if scale < 1e-12 { 0.0 } else { norm(&diff) / scale };
        worst = worst.max(rel);
        done += 1;
    }
    worst
}

/// Offered load measured by simulation: requested resource·time per slot
/// divided by `C·M`.
pub fn measured_load(rho: f64, slots: usize, seed: u64) -> f64 {
    let params = WorkloadParams::for_capacity(20, 20);
    let p = arrival_probability(rho, &params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    let mut work = 0u64;
    for _ in 0..slots {
        sample_arrivals_into(&mut rng, p, &params, &mut jobs);
        work += jobs.iter().map(|j| (j.exec_time * j.demand) as u64).sum::<u64>();
    }
    work as f64 / slots as f64 / (params.capacity as f64 * params.horizon as f64)
}

/// Hand-evaluated values of the penalty, expiry count, validity, reward,
/// placement, training insertion and advance rules.
pub fn hand_values() -> Result<(), String> {
    fn check<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: got {got:?}, want {want:?}"))
        }
    }
    let p = EnvParams::default();
    let with = |grid: Vec<u32>, jobs: &[(usize, Job)]| {
        let mut s = SystemState::empty(&p);
        if !grid.is_empty() {
            let mut cells = grid;
            cells.resize(p.horizon, 0);
            s.grid = ResourceGrid::from_cells(cells);
        }
        for &(i, j) in jobs {
            s.buffer.set(i, Some(j));
        }
        s
    };

    check("φ(1,4)", delay_penalty(1, 4), 1.0)?;
    check("φ(3,4)", delay_penalty(3, 4), 0.5)?;
    check("φ(4,4)", delay_penalty(4, 4), 0.0)?;

    check("D(empty)", SystemState::empty(&p).deadline_count(Action::Void), 0)?;
    let s = with(
        vec![],
        &[
            (0, Job::new(2, 5, 4).with_waited(4)),
            (1, Job::new(2, 5, 8).with_waited(1)),
        ],
    );
    check("D(void)", s.deadline_count(Action::Void), 1)?;
    check("D(0)", s.deadline_count(Action::Schedule(0)), 0)?;

    check(
        "valid empty",
        with(vec![], &[(0, Job::new(3, 5, 4))]).is_valid(Action::Schedule(0), 20),
        Some(0),
    )?;
    check(
        "valid [20,20,0..]",
        with(vec![20, 20], &[(0, Job::new(2, 1, 4))]).is_valid(Action::Schedule(0), 20),
        Some(2),
    )?;
    check(
        "valid g≡16",
        with(vec![16; 20], &[(0, Job::new(2, 5, 4))]).is_valid(Action::Schedule(0), 20),
        None,
    )?;

    let s = with(vec![], &[(0, Job::new(10, 5, 8).with_waited(1))]);
    check("reward valid", s.reward(Action::Schedule(0), &p), 0.5)?;
    check("reward invalid", s.reward(Action::Schedule(3), &p), 0.0)?;
    let s = with(vec![], &[(0, Job::new(2, 5, 4).with_waited(4))]);
    check("reward w=T", s.reward(Action::Schedule(0), &p), 0.0)?;
    let literal = EnvParams {
        scale_reward: false,
        ..p.clone()
    };
    let s = with(vec![], &[(0, Job::new(10, 5, 8).with_waited(1))]);
    check("reward unscaled", s.reward(Action::Schedule(0), &literal), 10.0)?;

    let mut s = with(vec![], &[(0, Job::new(2, 7, 4))]);
    s.schedule_job(0, 20);
    check("schedule e=2 c=7", &s.grid.cells()[..3], &[7, 7, 0][..])?;
    check("schedule empties buffer", s.buffer.occupied(), 0)?;
    let mut s = with(vec![20], &[(0, Job::new(1, 20, 4))]);
    s.schedule_job(0, 20);
    check("schedule c=20", &s.grid.cells()[..3], &[20, 20, 0][..])?;

    let mut s = with(vec![20, 20, 5], &[]);
    check("training slot", s.insert_training_job(20, 20), Some(3))?;
    let mut s = with(vec![1; 20], &[]);
    check("training no capacity", s.insert_training_job(20, 20), None)?;

    let small = EnvParams {
        horizon: 3,
        ..p.clone()
    };
    let mut s = SystemState::empty(&small);
    s.grid = ResourceGrid::from_cells(vec![5, 3, 2]);
    s.advance(&[]);
    check("shift", s.grid.cells(), &[3, 2, 0][..])?;
    let mut s = with(vec![], &[(0, Job::new(2, 5, 8).with_waited(8))]);
    check("discard", s.advance(&[]).discarded, 1)?;
    check("discard empties", s.buffer.occupied(), 0)?;
    let mut s = with(vec![], &(0..10).map(|i| (i, Job::new(2, 5, 8))).collect::<Vec<_>>());
    check("reject", s.advance(&[Job::new(1, 5, 4), Job::new(1, 5, 4)]).rejected, 2)?;

    let mut s = with(vec![], &[(0, Job::new(2, 5, 4).with_waited(4))]);
    let (r, info) = s.step(Action::Schedule(7), &[], &p);
    check("invalid step reward", r, -0.1)?;
    check("invalid step discards", info.discarded, 1)?;
    Ok(())
}
