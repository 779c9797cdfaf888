mod common;

use common::{random_instance, random_vector};
use gne_core::game::cournot_instance;
use gne_core::graph::{build_graph, project_parallel, Topology};
use gne_core::params::{assemble_phi, step_size_bounds, verify_phi_psd, AlgorithmParams};
use gne_core::solver::{NetworkState, Solver};
use gne_core::splitting::{fb_inclusion_residual, reduced_step, SplitState};
use gne_core::{GameConstants, Laplacian};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bounded_params(game: &gne_core::AggregativeGame, lap: &Laplacian, rng: &mut ChaCha8Rng) -> AlgorithmParams {
    let delta = rng.gen_range(1.0..20.0);
    let kappa = rng.gen_range(0.1..0.9) / delta;
    let b = step_size_bounds(game, lap, delta, kappa).unwrap();
    let big_n = game.n_agents();
    AlgorithmParams {
        c: rng.gen_range(0.5..5.0),
        kappa,
        delta,
        tau: (0..big_n).map(|i| b[i].tau_max() * rng.gen_range(0.5..1.0)).collect(),
        upsilon: (0..big_n)
            .map(|i| b[i].upsilon_max() * rng.gen_range(0.5..1.0))
            .collect(),
        alpha: (0..big_n).map(|i| b[i].alpha_max() * rng.gen_range(0.5..1.0)).collect(),
    }
}

fn max_abs_diff(a: &NetworkState, b: &NetworkState) -> f64 {
    [(&a.x, &b.x), (&a.u, &b.u), (&a.z, &b.z), (&a.lambda, &b.lambda)]
        .iter()
        .map(|(p, q)| (*p - *q).amax())
        .fold(0.0, f64::max)
}

#[test]
fn reduced_iteration_reproduces_solver_trace() {
    for big_n in [2usize, 3, 5] {
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + big_n as u64);
            let game = cournot_instance(big_n).unwrap();
            let top = common::topology(&mut rng);
            let lap = Laplacian::new(&build_graph(&top, big_n, None).unwrap());
            let params = bounded_params(&game, &lap, &mut rng);
            let solver = Solver::new(&game, &lap, params.clone()).unwrap();
            let x0 = random_vector(&mut rng, big_n, 10.0);

            let mut s = NetworkState::initial(&game, Some(x0.as_slice())).unwrap();
            let mut w = SplitState::initial(&game, x0.as_slice()).unwrap();
            for k in 1..=10 {
                s = solver.step(&s).unwrap();
                w = reduced_step(&w, &game, &lap, &params).unwrap();
                let mapped = w.to_network(big_n, k).unwrap();
                let d = max_abs_diff(&s, &mapped);
                assert!(d <= 1e-10, "N={big_n} seed={seed} k={k} diff={d}");
                let drift = project_parallel(&w.u_perp, big_n).unwrap().norm();
                assert!(drift <= 1e-10 * (1.0 + w.u_perp.norm()));
            }
        }
    }
}

#[test]
fn solver_pairs_satisfy_inclusion_from_random_starts() {
    let mut checked = 0;
    for start in 0..20u64 {
        let big_n = [2usize, 3, 5][start as usize % 3];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + start);
        let game = cournot_instance(big_n)
            .unwrap()
            .with_constants(GameConstants::declared(1.0, 1.0, 1.0, None).unwrap());
        let top = common::topology(&mut rng);
        let lap = Laplacian::new(&build_graph(&top, big_n, None).unwrap());
        let params = bounded_params(&game, &lap, &mut rng);
        let solver = Solver::new(&game, &lap, params.clone()).unwrap();
        let x0 = random_vector(&mut rng, big_n, 12.0);
        let mut s = NetworkState::initial(&game, Some(x0.as_slice())).unwrap();
        for _ in 0..30 {
            let next = solver.step(&s).unwrap();
            let a = SplitState::from_network(&s, big_n).unwrap();
            let b = SplitState::from_network(&next, big_n).unwrap();
            let r = fb_inclusion_residual(&a, &b, &game, &lap, &params).unwrap();
            assert!(r <= 1e-8 * (1.0 + a.norm()), "start={start} k={} r={r}", s.k);
            checked += 1;
            s = next;
        }
    }
    assert_eq!(checked, 600);
}

#[test]
fn ring_and_star_mapping_holds_along_longer_runs() {
    for top in [Topology::Star, Topology::Ring] {
        let game = cournot_instance(20).unwrap();
        let lap = Laplacian::new(&build_graph(&top, 20, None).unwrap());
        let params = AlgorithmParams::uniform(20, 4.0, 1.0 / 2000.0, 1200.0, 1.0 / 8000.0, 1.0 / 1200.0, 1.0 / 1200.0);
        let solver = Solver::new(&game, &lap, params.clone()).unwrap();
        let mut s = NetworkState::initial(&game, None).unwrap();
        let mut w = SplitState::from_network(&s, 20).unwrap();
        for k in 1..=500 {
            s = solver.step(&s).unwrap();
            w = reduced_step(&w, &game, &lap, &params).unwrap();
            assert!(max_abs_diff(&s, &w.to_network(20, k).unwrap()) <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn diagonal_dominance_bounds_give_psd_metric(seed in any::<u64>(), big_n in 2usize..6, n in 1usize..3, m in 1usize..3) {
        let inst = random_instance(seed, big_n, n, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let params = bounded_params(&inst.game, &inst.lap, &mut rng);
        let phi = assemble_phi(&params, &inst.lap, &inst.game);
        let check = verify_phi_psd(&phi, params.delta);
        prop_assert!(check.psd, "lambda_min(Phi - delta I) = {}", check.lambda_min);
    }
}
