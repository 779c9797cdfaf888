#![allow(dead_code)]

use gne_core::game::{quadratic_game, QuadraticCosts};
use gne_core::graph::{build_graph, Topology};
use gne_core::{AggregativeGame, GameConstants, Laplacian, Vector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub game: AggregativeGame,
    pub lap: Laplacian,
    pub costs: QuadraticCosts,
}

pub fn topology(rng: &mut ChaCha8Rng) -> Topology {
    match rng.gen_range(0..4) {
        0 => Topology::Star,
        1 => Topology::Ring,
        2 => Topology::Path,
        _ => Topology::Complete,
    }
}

/// Random strongly monotone quadratic aggregative game on a random graph.
pub fn random_instance(seed: u64, n_agents: usize, n: usize, m: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = QuadraticCosts {
        own: (0..n_agents).map(|_| rng.gen_range(1.0..3.0)).collect(),
        cross: (0..n_agents).map(|_| rng.gen_range(0.0..1.0)).collect(),
        aggregate: vec![0.0; n_agents],
        own_linear: (0..n_agents)
            .map(|_| (0..n).map(|_| rng.gen_range(-20.0..0.0)).collect())
            .collect(),
        aggregate_linear: vec![vec![0.0; n]; n_agents],
    };
    let lower: Vec<f64> = (0..n_agents * n).map(|_| rng.gen_range(-1.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.gen_range(2.0..10.0)).collect();
    let coupling: Vec<DMatrix<f64>> = (0..n_agents)
        .map(|_| DMatrix::from_fn(m, n, |_, _| rng.gen_range(0.2..1.5)))
        .collect();
    let offsets: Vec<f64> = (0..n_agents * m).map(|_| rng.gen_range(0.5..2.0)).collect();
    let game = quadratic_game(n_agents, n, costs.clone(), lower, upper, coupling, offsets)
        .unwrap()
        .with_constants(GameConstants::declared(1.0, 4.0, 1.0, None).unwrap());
    let top = topology(&mut rng);
    let lap = Laplacian::new(&build_graph(&top, n_agents, None).unwrap());
    Instance { game, lap, costs }
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vector {
    Vector::from_fn(len, |_, _| rng.gen_range(-scale..scale))
}

pub fn cournot_x_star() -> Vec<f64> {
    let mut x = vec![0.0; 20];
    for (i, v) in x.iter_mut().take(5).enumerate() {
        *v = (60.0 - 2.0 * (i + 1) as f64 - 49.8) / 1.05;
    }
    x
}
