#![allow(clippy::needless_range_loop)]

mod common;

use common::{random_instance, random_vector};
use gne_core::baseline::build_mixing;
use gne_core::graph::{block_mean, project_parallel, project_perp};
use gne_core::params::{assemble_phi, phi_apply, AlgorithmParams};
use gne_core::solver::{project_box, project_nonneg, NetworkState, Solver};
use gne_core::splitting::{dense_b_skew, operator_a, operator_b_skew, SplitState};
use gne_core::Vector;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kron_identity(l: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let n = l.nrows();
    DMatrix::from_fn(n * dim, n * dim, |r, c| {
        if r % dim == c % dim {
            l[(r / dim, c / dim)]
        } else {
            0.0
        }
    })
}

fn random_split(seed: u64, nn: usize, nm: usize, n_agents: usize) -> SplitState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SplitState {
        x: random_vector(&mut rng, nn, 3.0),
        u_perp: project_perp(&random_vector(&mut rng, nn, 3.0), n_agents).unwrap(),
        z: random_vector(&mut rng, nm, 3.0),
        lambda: random_vector(&mut rng, nm, 3.0).map(f64::abs),
    }
}

fn instance_dims() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 2usize..6, 1usize..3, 1usize..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projectors_split_identity(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let v = Vector::from_vec(v);
        for blocks in [2usize, 3, 4, 6] {
            let par = project_parallel(&v, blocks).unwrap();
            let perp = project_perp(&v, blocks).unwrap();
            prop_assert!((&par + &perp - &v).amax() <= 1e-12);
            prop_assert!(par.dot(&perp).abs() <= 1e-9 * (1.0 + v.norm_squared()));
            prop_assert!((project_parallel(&par, blocks).unwrap() - &par).amax() <= 1e-12);
            prop_assert!(block_mean(perp.as_slice(), blocks).unwrap().iter().all(|m| m.abs() <= 1e-12));
        }
    }

    #[test]
    fn box_projection_is_idempotent_and_nonexpansive(
        a in prop::collection::vec(-20.0f64..20.0, 5),
        b in prop::collection::vec(-20.0f64..20.0, 5),
    ) {
        let lo = vec![-1.0, 0.0, -5.0, 2.0, 0.0];
        let hi = vec![1.0, 10.0, 5.0, 2.0, 0.5];
        let pa = project_box(&a, &lo, &hi);
        let pb = project_box(&b, &lo, &hi);
        prop_assert_eq!(&project_box(&pa, &lo, &hi), &pa);
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        prop_assert!(d(&pa, &pb) <= d(&a, &b) + 1e-12);
        let pn = project_nonneg(&a);
        prop_assert!(pn.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(project_nonneg(&pn), pn);
    }

    #[test]
    fn laplacian_apply_matches_dense_kronecker((seed, big_n, n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, n, m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for dim in [n, m] {
            let v = random_vector(&mut rng, big_n * dim, 5.0);
            let dense = kron_identity(inst.lap.matrix(), dim) * &v;
            let fast = inst.lap.apply(&v).unwrap();
            prop_assert!((dense - &fast).amax() <= 1e-12);
            prop_assert!(block_mean(fast.as_slice(), big_n).unwrap().iter().all(|s| s.abs() <= 1e-10));
        }
    }

    #[test]
    fn skew_part_is_antisymmetric((seed, big_n, n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, n, m);
        let b = dense_b_skew(&inst.game, &inst.lap).unwrap();
        prop_assert_eq!(&b, &(-b.transpose()));
        let w = random_split(seed, big_n * n, big_n * m, big_n);
        let bw = operator_b_skew(&w, &inst.game, &inst.lap).unwrap();
        let stacked = w.stacked();
        let dense = &b * Vector::from_column_slice(&stacked);
        for (p, q) in dense.iter().zip(&bw) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
        let inner: f64 = stacked.iter().zip(&bw).map(|(p, q)| p * q).sum();
        prop_assert!(inner.abs() <= 1e-10 * w.norm().powi(2));
    }

    #[test]
    fn operator_a_matches_dense_quadratic((seed, big_n, n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, n, m);
        let c = 1.7;
        let w = random_split(seed ^ 7, big_n * n, big_n * m, big_n);
        let a = operator_a(&w, &inst.game, &inst.lap, c).unwrap();
        // Hand-expanded composite gradient of the quadratic costs at u = P_∥x + u⊥.
        let sigma = block_mean(w.x.as_slice(), big_n).unwrap();
        let nf = big_n as f64;
        let k = &inst.costs;
        for i in 0..big_n {
            for d in 0..n {
                let r = i * n + d;
                let u = sigma[d] + w.u_perp[r];
                let expected = k.own[i] * w.x[r] + k.cross[i] * u + k.own_linear[i][d]
                    + (k.cross[i] * w.x[r] + k.aggregate[i] * u + k.aggregate_linear[i][d]) / nf;
                prop_assert!((a[r] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
        let lu = kron_identity(inst.lap.matrix(), n) * &w.u_perp * c;
        let nn = big_n * n;
        for r in 0..nn {
            prop_assert!((a[nn + r] - lu[r]).abs() <= 1e-12);
        }
        let nm = big_n * m;
        prop_assert!(a[2 * nn..2 * nn + nm].iter().all(|v| *v == 0.0));
        let ll = kron_identity(inst.lap.matrix(), m) * &w.lambda;
        for r in 0..nm {
            let expected = ll[r] + inst.game.offsets()[r];
            prop_assert!((a[2 * nn + nm + r] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn phi_is_symmetric_and_matrix_free_agrees((seed, big_n, n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, n, m);
        let params = AlgorithmParams::uniform(big_n, 1.0, 0.01, 5.0, 0.003, 0.02, 0.04);
        let phi = assemble_phi(&params, &inst.lap, &inst.game).matrix;
        prop_assert_eq!(&phi, &phi.transpose());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let v = random_vector(&mut rng, phi.nrows(), 2.0);
        let dense = &phi * &v;
        let free = phi_apply(&params, &inst.lap, &inst.game, v.as_slice());
        for (p, q) in dense.iter().zip(&free) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn iterates_keep_sigma_and_feasibility((seed, big_n, n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, n, m);
        let params = AlgorithmParams::uniform(big_n, 1.0, 0.01, 5.0, 0.01, 0.02, 0.02);
        let solver = Solver::new(&inst.game, &inst.lap, params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let x0 = random_vector(&mut rng, big_n * n, 4.0);
        let mut s = NetworkState::initial(&inst.game, Some(x0.as_slice())).unwrap();
        for _ in 0..40 {
            s = solver.step(&s).unwrap();
            let su = block_mean(s.u.as_slice(), big_n).unwrap();
            let sx = block_mean(s.x.as_slice(), big_n).unwrap();
            let gap = su.iter().zip(&sx).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(gap <= 1e-10 * (1.0 + s.x.norm()));
            for (k, v) in s.x.iter().enumerate() {
                prop_assert!(*v >= inst.game.lower()[k] && *v <= inst.game.upper()[k]);
            }
            prop_assert!(s.lambda.iter().all(|l| *l >= 0.0));
        }
    }

    #[test]
    fn mixing_preserves_mean((seed, big_n, _n, m) in instance_dims()) {
        let inst = random_instance(seed, big_n, 1, m);
        let eps = 0.9 / inst.lap.graph().max_degree();
        let w = build_mixing(&inst.lap, eps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 9);
        let v = random_vector(&mut rng, big_n * m, 10.0);
        let mixed = w.mix(v.as_slice(), 3).unwrap();
        let before = block_mean(v.as_slice(), big_n).unwrap();
        let after = block_mean(&mixed, big_n).unwrap();
        for (p, q) in before.iter().zip(&after) {
            prop_assert!((p - q).abs() <= 1e-12);
        }
    }
}
