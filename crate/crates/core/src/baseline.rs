//! Multi-round comparison method: every action update is surrounded by `ν`
//! consensus rounds with a doubly stochastic mixing matrix `W = I − εL`.
//!
//! One update of agent `i`:
//! 1. `ν` mixing rounds on the local multipliers, then
//!    `λ_i ← max(0, λ_i + τ_b N s_i)` where `s_i` estimates `(1/N)(Ax − b)`;
//! 2. `x_i ← P_Ωi(x_i − τ_b(∇_{x_i}J_i(x_i, u_i) + A_iᵀλ_i))`;
//! 3. `u_i ← x_i`, `s_i ← A_i x_i − b_i`, followed by `ν` mixing rounds on both.
//!
//! Step 3 restarts the estimates from the fresh actions, so with finite `ν`
//! each agent acts on a partially mixed aggregate and the iterates settle at
//! an ε-equilibrium whose gap shrinks as `ν` grows.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::game::AggregativeGame;
use crate::graph::{block_mean, Laplacian};
use crate::kkt::kkt_residual;
use crate::Vector;

/// `W = I − εL` together with the graph it mixes over.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    matrix: DMatrix<f64>,
    eps: f64,
    lap: Laplacian,
}

impl MixingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Spectral radius of `W − (1/N)11ᵀ`.
    pub fn disagreement_radius(&self) -> f64 {
        let n = self.matrix.nrows();
        let centered = &self.matrix - DMatrix::from_element(n, n, 1.0 / n as f64);
        centered.symmetric_eigenvalues().amax()
    }

    /// One neighbor-exchange round `v ← (W ⊗ I_dim) v`, using `scratch` for `𝐋v`.
    fn round(&self, v: &mut [f64], dim: usize, scratch: &mut [f64]) {
        self.lap.apply_into(v, dim, scratch);
        for (a, b) in v.iter_mut().zip(scratch.iter()) {
            *a -= self.eps * b;
        }
    }

    /// `(W^rounds ⊗ I_dim) v`.
    pub fn mix(&self, v: &[f64], rounds: usize) -> Result<Vec<f64>> {
        let dim = crate::graph::block_dim(v.len(), self.matrix.nrows())?;
        let mut out = v.to_vec();
        let mut scratch = vec![0.0; v.len()];
        for _ in 0..rounds {
            self.round(&mut out, dim, &mut scratch);
        }
        Ok(out)
    }
}

/// `W = I − εL`; rejects `ε` that makes an entry negative or stalls mixing.
pub fn build_mixing(lap: &Laplacian, eps: f64) -> Result<MixingMatrix> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(GneError::domain("mixing step must be positive"));
    }
    let n = lap.node_count();
    let matrix = DMatrix::identity(n, n) - lap.matrix() * eps;
    if let Some(i) = (0..n).find(|&i| matrix[(i, i)] < 0.0) {
        return Err(GneError::domain(format!(
            "mixing step {eps} exceeds 1/degree of node {i} ({})",
            1.0 / lap.graph().degree(i)
        )));
    }
    let mixing = MixingMatrix {
        matrix,
        eps,
        lap: lap.clone(),
    };
    if mixing.disagreement_radius() >= 1.0 - 1e-12 {
        return Err(GneError::domain(format!(
            "mixing step {eps} does not contract disagreement"
        )));
    }
    Ok(mixing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    /// Mixing rounds before and after every action update.
    pub nu: usize,
    pub tau: f64,
    pub max_updates: usize,
    pub record_every: usize,
}

/// Metrics after an action update, placed on the communication-round axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub update: usize,
    pub rounds: usize,
    pub normalized_error_pct: Option<f64>,
    pub kkt_residual: f64,
    pub consensus_lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTrace {
    pub rows: Vec<BaselineRow>,
    pub rounds_per_update: usize,
    /// Stacked actions at each recorded row.
    pub actions: Vec<Vec<f64>>,
    pub final_x: Vector,
    pub final_lambda: Vector,
}

impl BaselineTrace {
    /// Mean normalized error over the last `window` recorded rows.
    pub fn plateau(&self, window: usize) -> Option<f64> {
        let errs: Vec<f64> = self.rows.iter().filter_map(|r| r.normalized_error_pct).collect();
        if errs.is_empty() || window == 0 {
            return None;
        }
        let tail = &errs[errs.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Runs the multi-round method from `x = 0` projected, `λ = 0`.
pub fn baseline_run(
    game: &AggregativeGame,
    mixing: &MixingMatrix,
    opts: &BaselineOptions,
    reference: Option<&Vector>,
) -> Result<BaselineTrace> {
    let big_n = game.n_agents();
    if mixing.matrix.nrows() != big_n {
        return Err(GneError::domain("mixing matrix size does not match the game"));
    }
    if opts.nu == 0 || !(opts.tau > 0.0) || opts.record_every == 0 {
        return Err(GneError::domain(
            "baseline needs nu >= 1, tau > 0 and record_every >= 1",
        ));
    }
    let (n, m) = (game.action_dim(), game.coupling_dim());
    let (nn, nm) = (big_n * n, big_n * m);
    let mut x = vec![0.0; nn];
    game.project(&mut x);
    let mut lambda = vec![0.0; nm];
    let mut scratch_n = vec![0.0; nn];
    let mut scratch_m = vec![0.0; nm];

    let reseed = |x: &[f64], u: &mut Vec<f64>, s: &mut Vec<f64>, sn: &mut [f64], sm: &mut [f64]| {
        u.copy_from_slice(x);
        let ax = game.coupling_apply(x);
        for (k, v) in s.iter_mut().enumerate() {
            *v = ax[k] - game.offsets()[k];
        }
        for _ in 0..opts.nu {
            mixing.round(u, n, sn);
            mixing.round(s, m, sm);
        }
    };
    let mut u = vec![0.0; nn];
    let mut s = vec![0.0; nm];
    reseed(&x, &mut u, &mut s, &mut scratch_n, &mut scratch_m);

    let record = |update: usize, x: &[f64], lambda: &[f64]| -> Result<BaselineRow> {
        let lambda_bar = block_mean(lambda, big_n)?;
        let mut spread: f64 = 0.0;
        for i in 0..big_n {
            for k in 0..m {
                spread = spread.max((lambda[i * m + k] - lambda_bar[k]).abs());
            }
        }
        let normalized_error_pct = reference.map(|r| {
            let denom = r.norm();
            let diff: f64 = x.iter().zip(r.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            100.0 * diff / if denom > 0.0 { denom } else { 1.0 }
        });
        Ok(BaselineRow {
            update,
            rounds: 2 * opts.nu * update,
            normalized_error_pct,
            kkt_residual: kkt_residual(x, &lambda_bar, game)?,
            consensus_lambda: spread,
        })
    };

    let mut rows = vec![record(0, &x, &lambda)?];
    let mut actions = vec![x.clone()];
    let mut grad = vec![0.0; n];
    for update in 1..=opts.max_updates {
        for _ in 0..opts.nu {
            mixing.round(&mut lambda, m, &mut scratch_m);
        }
        for (l, si) in lambda.iter_mut().zip(&s) {
            *l = (*l + opts.tau * big_n as f64 * si).max(0.0);
        }
        let at_l = game.coupling_transpose_apply(&lambda);
        for i in 0..big_n {
            let r = i * n..(i + 1) * n;
            if !game.composite_into(i, &x[r.clone()], &u[r.clone()], &mut grad) {
                return Err(GneError::numerical(
                    update,
                    format!("non-finite gradient for agent {i}"),
                ));
            }
            for k in 0..n {
                x[i * n + k] -= opts.tau * (grad[k] + at_l[i * n + k]);
            }
        }
        game.project(&mut x);
        if x.iter().chain(&lambda).any(|v| !v.is_finite()) {
            return Err(GneError::numerical(update, "non-finite baseline iterate"));
        }
        reseed(&x, &mut u, &mut s, &mut scratch_n, &mut scratch_m);
        if update % opts.record_every == 0 || update == opts.max_updates {
            rows.push(record(update, &x, &lambda)?);
            actions.push(x.clone());
        }
    }
    Ok(BaselineTrace {
        rows,
        rounds_per_update: 2 * opts.nu,
        actions,
        final_x: Vector::from_vec(x),
        final_lambda: Vector::from_vec(lambda),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::cournot_instance;
    use crate::graph::{build_graph, Topology};
    use crate::kkt::enumerate_active_sets;
    use crate::QuadraticCosts;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lap(top: Topology, n: usize) -> Laplacian {
        Laplacian::new(&build_graph(&top, n, None).unwrap())
    }

    fn x_star() -> Vector {
        let costs = QuadraticCosts {
            own: vec![1.0; 20],
            cross: vec![1.0; 20],
            aggregate: vec![0.0; 20],
            own_linear: (1..=20).map(|i| vec![(2 * i - 1) as f64 - 60.0]).collect(),
            aggregate_linear: vec![vec![0.0]; 20],
        };
        let sol = enumerate_active_sets(&costs, &[0.0; 20], &[10.0; 20], 1.0, 20.0).unwrap();
        Vector::from_vec(sol.x)
    }

    #[test]
    fn mixing_matrices_are_doubly_stochastic() {
        for (top, eps) in [(Topology::Star, 1.0 / 20.0), (Topology::Ring, 1.0 / 3.0)] {
            let l = lap(top, 20);
            let w = build_mixing(&l, eps).unwrap();
            assert_eq!(w.matrix(), &(DMatrix::identity(20, 20) - l.matrix() * eps));
            assert_eq!(w.matrix(), &w.matrix().transpose());
            for r in 0..20 {
                assert_abs_diff_eq!(w.matrix().row(r).sum(), 1.0, epsilon = 1e-12);
            }
            assert!(w.matrix().iter().all(|v| *v >= 0.0));
            assert!(w.disagreement_radius() < 1.0);
        }
    }

    #[test]
    fn mixing_rejects_large_step() {
        assert!(matches!(
            build_mixing(&lap(Topology::Star, 20), 0.1),
            Err(GneError::Domain(_))
        ));
        assert!(build_mixing(&lap(Topology::Path, 2), 1.0).is_err());
        assert!(build_mixing(&lap(Topology::Ring, 5), 0.0).is_err());
    }

    #[test]
    fn repeated_mixing_reaches_average() {
        let w = build_mixing(&lap(Topology::Star, 20), 1.0 / 20.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..20).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mean = v.iter().sum::<f64>() / 20.0;
        let spread: f64 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>().sqrt();
        let err = |rounds| {
            let mixed = w.mix(&v, rounds).unwrap();
            mixed.iter().map(|a| (a - mean).powi(2)).sum::<f64>().sqrt()
        };
        // Disagreement contracts by 1 − ελ₂ = 0.95 per round.
        assert!(err(200) <= 0.95f64.powi(200) * spread + 1e-12);
        assert!(err(400) <= 1e-6, "{}", err(400));
        assert_abs_diff_eq!(w.mix(&v, 1).unwrap().iter().sum::<f64>() / 20.0, mean, epsilon = 1e-12);
        let dense = w.matrix() * Vector::from_vec(v.clone());
        for (a, b) in dense.iter().zip(w.mix(&v, 1).unwrap()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn plateau_is_positive_and_shrinks_with_rounds() {
        let game = cournot_instance(20).unwrap();
        let w = build_mixing(&lap(Topology::Star, 20), 1.0 / 20.0).unwrap();
        let xs = x_star();
        let plateau = |nu| {
            let opts = BaselineOptions {
                nu,
                tau: 0.01,
                max_updates: 3000,
                record_every: 10,
            };
            let t = baseline_run(&game, &w, &opts, Some(&xs)).unwrap();
            assert_eq!(t.rounds_per_update, 2 * nu);
            assert_eq!(t.rows.last().unwrap().rounds, 2 * nu * 3000);
            t.plateau(30).unwrap()
        };
        let (p1, p50, p200) = (plateau(1), plateau(50), plateau(200));
        assert!(p200 > 0.0);
        assert!(p1 > p50 && p50 > p200, "{p1} {p50} {p200}");
    }
}
