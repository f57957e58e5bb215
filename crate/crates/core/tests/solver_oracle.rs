mod common;

use common::*;
use mbsbl::bench::{nmse, synth_block_sparse};
use mbsbl::model::{make_partition_uniform, Measurements, SolverConfig};
use mbsbl::solver::{block_delta_cost, gamma_candidate, solve_operator, Action, BlockStats, SolverState};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

#[test]
fn initial_statistics_match_dense_inverse() {
    let pb = small_problem(1, 8, 12, 2, 3);
    let st = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
    let zero = vec![0.0; pb.partition.num_blocks()];
    for b in 0..pb.partition.num_blocks() {
        let (s, q) = leave_one_out(&pb.y.values, &pb.phi, &pb.partition, &zero, st.beta(), b);
        assert!(rel_frob(&st.stats()[b].s, &s) < 1e-12);
        assert!(rel_frob(&st.stats()[b].q, &q) < 1e-12);
        assert_eq!(st.stats()[b].s, st.stats()[b].s_full);
    }
    let c0 = cost(&pb.y.values, &pb.phi, &pb.partition, &zero, st.beta(), 2.0);
    assert!((st.cost() - c0).abs() < 1e-9 * c0.abs());
}

#[test]
fn gamma_candidate_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (d, p) = (4, 8);
    let a = DMatrix::from_fn(d, d + 3, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose();
    let q = DMatrix::from_fn(d, p, |_, _| rng.random_range(-2.0..2.0));
    let sinv = s.clone().try_inverse().unwrap();
    let dense = (&sinv * (&q * q.transpose() - &s) * &sinv).trace() / d as f64;
    assert!(dense > 0.0);
    let stats = BlockStats {
        s: s.clone(),
        q: q.clone(),
        s_full: s,
        q_full: q,
    };
    let got = gamma_candidate(&stats, 1e-12).unwrap();
    assert!((got - dense).abs() < 1e-8 * dense.abs());
}

#[test]
fn scalar_delta_cost_against_dense_cost() {
    // One measurement, one coefficient: φ = √2, y = 3/√2 and β = 1 give s = 2, q = 3.
    let phi = DMatrix::from_element(1, 1, 2f64.sqrt());
    let y = DMatrix::from_element(1, 1, 3.0 / 2f64.sqrt());
    let part = make_partition_uniform(1, 1).unwrap();
    let c = SolverConfig {
        beta_inv_scale: 1.0 / 4.5,
        ..cfg()
    };
    let st = SolverState::init(&Measurements::new(y.clone()).unwrap(), &phi, &part, &c).unwrap();
    assert!((st.beta() - 1.0).abs() < 1e-14);
    let stats = &st.stats()[0];
    assert!((stats.s[(0, 0)] - 2.0).abs() < 1e-12 && (stats.q[(0, 0)] - 3.0).abs() < 1e-12);
    let g = gamma_candidate(stats, 1e-12).unwrap();
    assert!((g - 1.75).abs() < 1e-9);
    let delta = block_delta_cost(stats, 0.0, g, 1.0);
    let dense = cost(&y, &phi, &part, &[g], 1.0, 1.0) - cost(&y, &phi, &part, &[0.0], 1.0, 1.0);
    assert!((delta - dense).abs() < 1e-12);
    assert!((delta + 1.9959).abs() < 1e-4);
}

#[test]
fn add_lowers_the_dense_cost_by_delta() {
    let pb = small_problem(5, 10, 12, 3, 4);
    let st = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
    let sel = st.select_action();
    let best = sel.best.unwrap();
    assert_eq!(best.action, Action::Add);
    assert!(best.delta_cost < 0.0);
    let mut gamma = vec![0.0; pb.partition.num_blocks()];
    let before = cost(&pb.y.values, &pb.phi, &pb.partition, &gamma, st.beta(), 3.0);
    gamma[best.block] = best.gamma;
    let after = cost(&pb.y.values, &pb.phi, &pb.partition, &gamma, st.beta(), 3.0);
    assert!(((after - before) - best.delta_cost).abs() < 1e-8 * before.abs());
}

#[test]
fn selection_is_the_dense_argmin() {
    // Three blocks with clearly different energy; block 2 carries the most.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let part = make_partition_uniform(6, 2).unwrap();
    let phi = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let mut x = DMatrix::zeros(6, 2);
    for (r, scale) in [(0, 0.5), (1, 0.4), (2, 0.2), (3, 0.1), (4, 3.0), (5, 2.5)] {
        x[(r, 0)] = scale;
        x[(r, 1)] = -scale;
    }
    let y = Measurements::new(&phi * &x).unwrap();
    let st = SolverState::init(&y, &phi, &part, &cfg()).unwrap();
    let beta = st.beta();
    let zero = vec![0.0; 3];
    let base = cost(&y.values, &phi, &part, &zero, beta, 2.0);
    let mut dense_deltas = Vec::new();
    for b in 0..3 {
        let g = gamma_candidate(&st.stats()[b], 1e-12).unwrap();
        let mut gamma = zero.clone();
        gamma[b] = g;
        let dl = if g > 0.0 {
            cost(&y.values, &phi, &part, &gamma, beta, 2.0) - base
        } else {
            0.0
        };
        dense_deltas.push(dl);
    }
    let argmin = (0..3)
        .min_by(|&a, &b| dense_deltas[a].partial_cmp(&dense_deltas[b]).unwrap())
        .unwrap();
    assert_eq!(argmin, 2);
    let best = st.select_action().best.unwrap();
    assert_eq!(best.block, 2);
    assert!((best.delta_cost - dense_deltas[2]).abs() < 1e-8 * base.abs());
}

#[test]
fn add_then_delete_round_trips() {
    let pb = small_problem(11, 12, 16, 2, 4);
    let mut st = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
    // Put one block in first so the round trip starts from a non-empty model.
    let first = st.select_action().best.unwrap();
    st.apply_action(&first).unwrap();
    let snapshot = st.clone();
    // Any positive γ is a valid Add; the round trip must not depend on it being optimal.
    let block = (0..pb.partition.num_blocks())
        .find(|b| !st.active().contains(b))
        .unwrap();
    let add = mbsbl::solver::Candidate {
        block,
        action: Action::Add,
        gamma: 0.7,
        delta_cost: 0.0,
    };
    st.apply_action(&add).unwrap();
    st.apply_action(&mbsbl::solver::Candidate {
        block: add.block,
        action: Action::Delete,
        gamma: 0.0,
        delta_cost: 0.0,
    })
    .unwrap();
    assert_eq!(st.active(), snapshot.active());
    assert!(rel_frob(st.mu(), snapshot.mu()) < 1e-8);
    assert!(rel_frob(st.sigma(), snapshot.sigma()) < 1e-8);
    for (a, b) in st.stats().iter().zip(snapshot.stats()) {
        assert!(rel_frob(&a.s, &b.s) < 1e-8);
        assert!(rel_frob(&a.q, &b.q) < 1e-8);
        assert!(rel_frob(&a.s_full, &b.s_full) < 1e-8);
        assert!(rel_frob(&a.q_full, &b.q_full) < 1e-8);
    }
}

#[test]
fn deleting_the_only_block_restores_the_initial_state() {
    let pb = small_problem(2, 9, 12, 2, 3);
    let init = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
    let mut st = init.clone();
    let best = st.select_action().best.unwrap();
    st.apply_action(&best).unwrap();
    st.apply_action(&mbsbl::solver::Candidate {
        block: best.block,
        action: Action::Delete,
        gamma: 0.0,
        delta_cost: -best.delta_cost,
    })
    .unwrap();
    assert!(st.active().is_empty());
    assert_eq!(st.mu().nrows(), 0);
    assert_eq!(st.sigma().nrows(), 0);
    for (a, b) in st.stats().iter().zip(init.stats()) {
        assert!(rel_frob(&a.s, &b.s) < 1e-10);
        assert!(rel_frob(&a.q, &b.q) < 1e-10);
    }
    assert!((st.cost() - init.cost()).abs() < 1e-10 * init.cost().abs());
}

#[test]
fn incremental_state_tracks_dense_recomputation() {
    for seed in 0..10 {
        let pb = small_problem(100 + seed, 14, 20, 3, 4);
        let mut st = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
        for _ in 0..30 {
            let Some(best) = st.select_action().best else { break };
            if best.delta_cost >= -1e-5 {
                break;
            }
            st.apply_action(&best).unwrap();
            let chk = check_state(&st, &pb.y.values, &pb.phi);
            assert!(chk.loo < 1e-8, "seed {seed}: loo {}", chk.loo);
            assert!(chk.posterior_mu < 1e-8 && chk.posterior_sigma < 1e-8, "seed {seed}");
            let dense = cost(&pb.y.values, &pb.phi, &pb.partition, st.gamma(), st.beta(), 3.0);
            assert!((dense - st.cost()).abs() < 1e-8 * dense.abs().max(1.0), "seed {seed}");
        }
    }
}

#[test]
fn noiseless_single_block_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, d, p) = (64, 4, 3);
    let m = 4 * d;
    let part = make_partition_uniform(n, d).unwrap();
    let phi = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let mut a0 = DMatrix::zeros(n, p);
    for r in part.range(5) {
        for c in 0..p {
            a0[(r, c)] = rng.random_range(1.0..2.0);
        }
    }
    let y = Measurements::new(&phi * &a0).unwrap();
    let c = SolverConfig {
        beta_inv_scale: 1e-8,
        ..cfg()
    };
    let r = solve_operator(&y, &phi, &part, &c).unwrap();
    assert!(r.converged);
    assert_eq!(r.active_blocks, vec![5]);
    assert!(nmse(&r.coefficients, &a0).unwrap() < 1e-6);
}

#[test]
fn identical_channels_give_identical_columns() {
    let (pkt, _) = synth_block_sparse(64, 1, 4, 3, 21).unwrap();
    let col = pkt.samples.column(0).into_owned();
    let x = DMatrix::from_fn(64, 4, |r, _| col[r]);
    let phi = mbsbl::generate_bernoulli(32, 64, 4).unwrap();
    let (y, _) = mbsbl::sensing::compress(&phi, &x).unwrap();
    let dict = mbsbl::dct_dictionary(64).unwrap();
    let part = make_partition_uniform(64, 4).unwrap();
    let r = mbsbl::solve(&y, &phi, &dict, &part, &cfg()).unwrap();
    for c in 1..4 {
        assert!((r.signal.column(c) - r.signal.column(0)).amax() < 1e-10);
    }
}

#[test]
fn sequential_and_parallel_scans_agree_bitwise() {
    let pb = small_problem(9, 20, 40, 4, 4);
    let run = |exec| {
        let c = SolverConfig {
            execution: exec,
            ..cfg()
        };
        solve_operator(&pb.y, &pb.phi, &pb.partition, &c).unwrap()
    };
    let a = run(mbsbl::Execution::Sequential);
    let b = run(mbsbl::Execution::Parallel);
    assert_eq!(a.cost_trace, b.cost_trace);
    assert_eq!(a.coefficients, b.coefficients);
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let pb = small_problem(4, 20, 40, 2, 4);
    let c = SolverConfig {
        max_iterations: 1,
        ..cfg()
    };
    let r = solve_operator(&pb.y, &pb.phi, &pb.partition, &c).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(!r.converged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cost_trace_is_monotone_and_exact(seed in any::<u64>(), p in 1usize..4) {
        let pb = small_problem(seed, 12, 24, p, 3);
        let r = solve_operator(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
        for w in r.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        prop_assert!(r.gamma.iter().all(|&g| g >= 0.0));
        if !r.active_blocks.is_empty() {
            let st = SolverState::init(&pb.y, &pb.phi, &pb.partition, &cfg()).unwrap();
            let dense = cost(&pb.y.values, &pb.phi, &pb.partition, &r.gamma, st.beta(), p as f64);
            let last = *r.cost_trace.last().unwrap();
            prop_assert!((dense - last).abs() < 1e-8 * dense.abs().max(1.0));
        }
    }
}
