//! Operator-splitting view of the iteration on `ϖ = (x, u⊥, z, λ)`.
//!
//! `𝒜ϖ = (𝐅(x, P_∥x + u⊥), c𝐋u⊥, 0, 𝐋λ + b̄)` is the single-valued part and
//! `ℬ = N_Ω × 0 × 0 × N₊ + S` with the skew map
//! `S(x, u⊥, z, λ) = (Λᵀλ, 0, −𝐋λ, −Λx + 𝐋z)`. One sweep of the algorithm
//! satisfies `0 ∈ 𝒜ϖ_k + ℬϖ_{k+1} + Φ(ϖ_{k+1} − ϖ_k)`; the resolvent of ℬ is
//! never formed, the inclusion is checked by normal-cone membership instead.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GneError, Result};
use crate::game::AggregativeGame;
use crate::graph::{project_parallel, project_perp, Laplacian};
use crate::params::{phi_apply, AlgorithmParams};
use crate::solver::NetworkState;
use crate::Vector;

/// Largest network for which dense operator matrices are built.
pub const DENSE_MAX_AGENTS: usize = 10;
/// A coordinate is active when within this relative distance of its bound.
pub const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub x: Vector,
    pub u_perp: Vector,
    pub z: Vector,
    pub lambda: Vector,
}

impl SplitState {
    /// `(x, P_⊥u, z, λ)`.
    pub fn from_network(state: &NetworkState, n_agents: usize) -> Result<Self> {
        Ok(SplitState {
            x: state.x.clone(),
            u_perp: project_perp(&state.u, n_agents)?,
            z: state.z.clone(),
            lambda: state.lambda.clone(),
        })
    }

    /// `u = P_∥x + u⊥`.
    pub fn to_network(&self, n_agents: usize, k: usize) -> Result<NetworkState> {
        Ok(NetworkState {
            x: self.x.clone(),
            u: project_parallel(&self.x, n_agents)? + &self.u_perp,
            z: self.z.clone(),
            lambda: self.lambda.clone(),
            k,
        })
    }

    /// Start `(x0, P_⊥x0, 0, 0)` matching a solver run from `x0`.
    pub fn initial(game: &AggregativeGame, x0: &[f64]) -> Result<Self> {
        let state = NetworkState::initial(game, Some(x0))?;
        Self::from_network(&state, game.n_agents())
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.x
            .iter()
            .chain(self.u_perp.iter())
            .chain(self.z.iter())
            .chain(self.lambda.iter())
            .copied()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        (self.x.norm_squared() + self.u_perp.norm_squared() + self.z.norm_squared() + self.lambda.norm_squared()).sqrt()
    }

    fn check(&self, game: &AggregativeGame) -> Result<()> {
        let nn = game.n_agents() * game.action_dim();
        let nm = game.n_agents() * game.coupling_dim();
        if self.x.len() != nn || self.u_perp.len() != nn || self.z.len() != nm || self.lambda.len() != nm {
            return Err(GneError::domain("split state dimensions do not match the game"));
        }
        Ok(())
    }
}

fn stack(blocks: [&[f64]; 4]) -> Vec<f64> {
    blocks.concat()
}

fn lap_apply(lap: &Laplacian, v: &Vector) -> Vector {
    lap.apply(v).expect("stacked dimensions checked")
}

/// `𝒜ϖ`, stacked.
pub fn operator_a(w: &SplitState, game: &AggregativeGame, lap: &Laplacian, c: f64) -> Result<Vec<f64>> {
    w.check(game)?;
    let big_n = game.n_agents();
    let u = project_parallel(&w.x, big_n)? + &w.u_perp;
    let f = game.extended_pseudo_gradient(&w.x, &u)?;
    let lu = lap_apply(lap, &w.u_perp) * c;
    let zero = vec![0.0; w.z.len()];
    let ll = lap_apply(lap, &w.lambda) + Vector::from_column_slice(game.offsets());
    Ok(stack([f.as_slice(), lu.as_slice(), &zero, ll.as_slice()]))
}

/// Skew-symmetric linear part of `ℬ`, stacked.
pub fn operator_b_skew(w: &SplitState, game: &AggregativeGame, lap: &Laplacian) -> Result<Vec<f64>> {
    w.check(game)?;
    let x_block = game.coupling_transpose_apply(w.lambda.as_slice());
    let u_block = vec![0.0; w.u_perp.len()];
    let z_block = -lap_apply(lap, &w.lambda);
    let lx = game.coupling_apply(w.x.as_slice());
    let lz = lap_apply(lap, &w.z);
    let l_block: Vec<f64> = lz.iter().zip(&lx).map(|(a, b)| a - b).collect();
    Ok(stack([&x_block, &u_block, z_block.as_slice(), &l_block]))
}

/// Dense matrix of the skew part of `ℬ` (at most [`DENSE_MAX_AGENTS`] agents).
pub fn dense_b_skew(game: &AggregativeGame, lap: &Laplacian) -> Result<DMatrix<f64>> {
    let big_n = game.n_agents();
    if big_n > DENSE_MAX_AGENTS {
        return Err(GneError::domain(format!(
            "dense operators are limited to {DENSE_MAX_AGENTS} agents"
        )));
    }
    let (n, m) = (game.action_dim(), game.coupling_dim());
    let (nn, nm) = (big_n * n, big_n * m);
    let (zo, lo) = (2 * nn, 2 * nn + nm);
    let mut b = DMatrix::zeros(2 * (nn + nm), 2 * (nn + nm));
    for i in 0..big_n {
        let a = game.coupling_block(i);
        for r in 0..m {
            for c in 0..n {
                b[(i * n + c, lo + i * m + r)] = a[(r, c)];
                b[(lo + i * m + r, i * n + c)] = -a[(r, c)];
            }
        }
        for j in 0..big_n {
            let l = lap.matrix()[(i, j)];
            for k in 0..m {
                b[(zo + i * m + k, lo + j * m + k)] = -l;
                b[(lo + i * m + k, zo + j * m + k)] = l;
            }
        }
    }
    Ok(b)
}

/// Largest violation of `−(𝒜ϖ_k + Sϖ_{k+1} + Φ(ϖ_{k+1} − ϖ_k)) ∈ N_Ω(x_{k+1}) × 0 × 0 × N₊(λ_{k+1})`.
pub fn fb_inclusion_residual(
    prev: &SplitState,
    next: &SplitState,
    game: &AggregativeGame,
    lap: &Laplacian,
    params: &AlgorithmParams,
) -> Result<f64> {
    prev.check(game)?;
    next.check(game)?;
    let a = operator_a(prev, game, lap, params.c)?;
    let s = operator_b_skew(next, game, lap)?;
    let delta: Vec<f64> = next.stacked().iter().zip(prev.stacked()).map(|(p, q)| p - q).collect();
    let phi_d = phi_apply(params, lap, game, &delta);
    let w: Vec<f64> = (0..a.len()).map(|k| -(a[k] + s[k] + phi_d[k])).collect();

    let nn = next.x.len();
    let nm = next.z.len();
    let near = |v: f64, bound: f64| (v - bound).abs() <= ACTIVE_TOL * (1.0 + bound.abs());
    let mut worst: f64 = 0.0;
    for k in 0..nn {
        let (x, lo, hi) = (next.x[k], game.lower()[k], game.upper()[k]);
        let v = match (near(x, lo), near(x, hi)) {
            (true, true) => 0.0,
            (true, false) => w[k].max(0.0),
            (false, true) => (-w[k]).max(0.0),
            (false, false) => w[k].abs(),
        };
        worst = worst.max(v);
    }
    for k in nn..2 * nn + nm {
        worst = worst.max(w[k].abs());
    }
    for k in 0..nm {
        let wk = w[2 * nn + nm + k];
        let v = if near(next.lambda[k], 0.0) {
            wk.max(0.0)
        } else {
            wk.abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// One sweep of the iteration written directly on `(x, u⊥, z, λ)`.
pub fn reduced_step(
    w: &SplitState,
    game: &AggregativeGame,
    lap: &Laplacian,
    params: &AlgorithmParams,
) -> Result<SplitState> {
    w.check(game)?;
    params.validate(game.n_agents())?;
    let big_n = game.n_agents();
    let (n, m) = (game.action_dim(), game.coupling_dim());
    let per_agent =
        |steps: &[f64], dim: usize| Vector::from_iterator(big_n * dim, (0..big_n * dim).map(|r| steps[r / dim]));
    let tau = per_agent(&params.tau, n);
    let upsilon = per_agent(&params.upsilon, m);
    let alpha = per_agent(&params.alpha, m);

    let u = project_parallel(&w.x, big_n)? + &w.u_perp;
    let lu = lap_apply(lap, &w.u_perp);
    let ll = lap_apply(lap, &w.lambda);
    let drift = game.extended_pseudo_gradient(&w.x, &u)?
        + Vector::from_vec(game.coupling_transpose_apply(w.lambda.as_slice()))
        + &lu * params.c;
    let mut x = &w.x - tau.component_mul(&drift);
    game.project(x.as_mut_slice());

    let u_perp = &w.u_perp - &lu * (params.kappa * params.c) + project_perp(&(&x - &w.x), big_n)?;
    let z = &w.z + upsilon.component_mul(&ll);
    let extrap = &x * 2.0 - &w.x;
    let lzeta = lap_apply(lap, &(&z * 2.0 - &w.z));
    let inner = &ll + Vector::from_column_slice(game.offsets())
        - Vector::from_vec(game.coupling_apply(extrap.as_slice()))
        + lzeta;
    let lambda = (&w.lambda - alpha.component_mul(&inner)).map(|v| v.max(0.0));

    let out = SplitState { x, u_perp, z, lambda };
    if out.stacked().iter().any(|v| !v.is_finite()) {
        return Err(GneError::numerical(0, "non-finite reduced iterate"));
    }
    Ok(out)
}

/// Smallest sampled ratio `⟨d, Ã(x, u⊥) − Ã(x̲, 0)⟩ / ‖d‖²` with
/// `Ã(x, u⊥) = (𝐅(x, P_∥x + u⊥), c𝐋u⊥)` and `d = (x − x̲, u⊥)`.
///
/// Samples cycle through general perturbations, pure action perturbations,
/// and estimate perturbations along the slowest disagreement mode of the graph.
pub fn restricted_monotonicity_probe(
    game: &AggregativeGame,
    lap: &Laplacian,
    c: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 100 {
        return Err(GneError::domain(format!(
            "probe needs at least 100 samples, got {samples}"
        )));
    }
    let big_n = game.n_agents();
    let n = game.action_dim();
    let eig = SymmetricEigen::new(lap.matrix().clone());
    let mut order: Vec<usize> = (0..big_n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let fiedler = eig.eigenvectors.column(order[1]).into_owned();
    let span = game
        .lower()
        .iter()
        .zip(game.upper())
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max)
        .max(1.0);

    let a_tilde = |x: &Vector, u_perp: &Vector| -> Result<(Vector, Vector)> {
        let u = project_parallel(x, big_n)? + u_perp;
        Ok((game.extended_pseudo_gradient(x, &u)?, lap_apply(lap, u_perp) * c))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for s in 0..samples {
        let x_ref = game.sample_box(&mut rng);
        let zero = Vector::zeros(x_ref.len());
        let (x, u_perp) = match s % 3 {
            0 => {
                let noise = Vector::from_fn(x_ref.len(), |_, _| rng.gen_range(-span..span));
                (game.sample_box(&mut rng), project_perp(&noise, big_n)?)
            }
            1 => (game.sample_box(&mut rng), zero.clone()),
            _ => {
                let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-span..span)).collect();
                let u = Vector::from_fn(x_ref.len(), |r, _| fiedler[r / n] * w[r % n]);
                (x_ref.clone(), u)
            }
        };
        let dx = &x - &x_ref;
        let denom = dx.norm_squared() + u_perp.norm_squared();
        if denom <= 1e-18 {
            continue;
        }
        let (f1, g1) = a_tilde(&x, &u_perp)?;
        let (f0, g0) = a_tilde(&x_ref, &zero)?;
        let num = dx.dot(&(f1 - f0)) + u_perp.dot(&(g1 - g0));
        best = best.min(num / denom);
    }
    Ok(best)
}
