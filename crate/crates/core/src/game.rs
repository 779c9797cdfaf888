//! Aggregative games with box action sets and affine coupling constraints.
//!
//! Each agent `i` has a cost `J_i(x_i, y)` evaluated at the aggregate `y`;
//! only its two partial gradients are ever needed. The composite local
//! gradient used by every solver is `∇_{x_i}J_i + (1/N) ∇_y J_i`, evaluated at
//! whichever aggregate value the caller supplies (the true average or a
//! private estimate).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::graph::block_mean;
use crate::Vector;

/// Partial gradients of the agents' costs in (own action, aggregate) coordinates.
pub trait GradientOracle: Send + Sync {
    /// `∇_{x_i} J_i(x_i, y)`, written to `out`.
    fn grad_own(&self, agent: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);
    /// `∇_y J_i(x_i, y)`, written to `out`.
    fn grad_aggregate(&self, agent: usize, x_i: &[f64], y: &[f64], out: &mut [f64]);
}

/// `J_i(x_i, y) = ½a_i‖x_i‖² + e_i⟨x_i, y⟩ + ½d_i‖y‖² + ⟨q_i, x_i⟩ + ⟨r_i, y⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCosts {
    pub own: Vec<f64>,
    pub cross: Vec<f64>,
    pub aggregate: Vec<f64>,
    pub own_linear: Vec<Vec<f64>>,
    pub aggregate_linear: Vec<Vec<f64>>,
}

impl QuadraticCosts {
    fn validate(&self, n_agents: usize, dim: usize) -> Result<()> {
        let scalar_ok = [&self.own, &self.cross, &self.aggregate]
            .iter()
            .all(|v| v.len() == n_agents && v.iter().all(|c| c.is_finite()));
        let linear_ok = [&self.own_linear, &self.aggregate_linear].iter().all(|v| {
            v.len() == n_agents
                && v.iter()
                    .all(|row| row.len() == dim && row.iter().all(|c| c.is_finite()))
        });
        if scalar_ok && linear_ok {
            Ok(())
        } else {
            Err(GneError::domain(format!(
                "quadratic coefficients must be finite, one per agent ({n_agents}) with linear terms of length {dim}"
            )))
        }
    }
}

impl GradientOracle for QuadraticCosts {
    fn grad_own(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..out.len() {
            out[k] = self.own[i] * x_i[k] + self.cross[i] * y[k] + self.own_linear[i][k];
        }
    }

    fn grad_aggregate(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]) {
        for k in 0..out.len() {
            out[k] = self.cross[i] * x_i[k] + self.aggregate[i] * y[k] + self.aggregate_linear[i][k];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Declared,
    Estimated,
}

/// Strong monotonicity and Lipschitz constants of the pseudo-gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConstants {
    /// Strong monotonicity modulus of `F`.
    pub mu: f64,
    /// Lipschitz constant of `F`.
    pub lf: f64,
    /// Lipschitz constant of the extended pseudo-gradient in the actions.
    pub lfx: f64,
    /// Lipschitz constant of the extended pseudo-gradient in the estimates.
    pub lfu: f64,
    pub provenance: Provenance,
}

impl GameConstants {
    /// Declared constants; `lf` defaults to `lfx + lfu`, a valid bound for `F(x) = 𝐅(x, P_∥x)`.
    pub fn declared(mu: f64, lfx: f64, lfu: f64, lf: Option<f64>) -> Result<Self> {
        let lf = lf.unwrap_or(lfx + lfu);
        let all_positive = [mu, lf, lfx, lfu].iter().all(|c| c.is_finite() && *c > 0.0);
        if !all_positive {
            return Err(GneError::domain("game constants must be finite and positive"));
        }
        if mu > lf {
            return Err(GneError::domain(format!(
                "strong monotonicity {mu} exceeds Lipschitz constant {lf}"
            )));
        }
        Ok(GameConstants {
            mu,
            lf,
            lfx,
            lfu,
            provenance: Provenance::Declared,
        })
    }
}

/// Raised when sampling finds no positive strong-monotonicity modulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityWarning {
    pub mu_estimate: f64,
}

impl fmt::Display for MonotonicityWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pseudo-gradient does not look strongly monotone (sampled modulus {})",
            self.mu_estimate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsEstimate {
    pub constants: GameConstants,
    pub warning: Option<MonotonicityWarning>,
}

/// An aggregative game: `N` agents with actions in boxes `Ω_i ⊂ ℝⁿ` and a
/// shared constraint `Σ_i A_i x_i ≤ Σ_i b_i` in `ℝᵐ`.
#[derive(Clone)]
pub struct AggregativeGame {
    n_agents: usize,
    action_dim: usize,
    coupling_dim: usize,
    oracle: Arc<dyn GradientOracle>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    coupling: Vec<DMatrix<f64>>,
    offsets: Vec<f64>,
    constants: Option<GameConstants>,
}

impl fmt::Debug for AggregativeGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AggregativeGame")
            .field("n_agents", &self.n_agents)
            .field("action_dim", &self.action_dim)
            .field("coupling_dim", &self.coupling_dim)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl AggregativeGame {
    /// `lower`/`upper` and `offsets` are stacked per agent; `coupling[i]` is `A_i` (m×n).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_agents: usize,
        action_dim: usize,
        coupling_dim: usize,
        oracle: Arc<dyn GradientOracle>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        coupling: Vec<DMatrix<f64>>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if n_agents < 2 || action_dim == 0 || coupling_dim == 0 {
            return Err(GneError::domain(
                "a game needs at least 2 agents and positive action/coupling dimensions",
            ));
        }
        let nn = n_agents * action_dim;
        if lower.len() != nn || upper.len() != nn {
            return Err(GneError::domain(format!("box bounds must have {nn} entries")));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(GneError::domain(format!(
                    "box coordinate {k} is empty or unbounded: [{lo}, {hi}]"
                )));
            }
        }
        if coupling.len() != n_agents
            || coupling
                .iter()
                .any(|a| a.nrows() != coupling_dim || a.ncols() != action_dim)
        {
            return Err(GneError::domain(format!(
                "expected {n_agents} coupling blocks of shape {coupling_dim}x{action_dim}"
            )));
        }
        if offsets.len() != n_agents * coupling_dim || offsets.iter().any(|b| !b.is_finite()) {
            return Err(GneError::domain(format!(
                "expected {} finite coupling offsets",
                n_agents * coupling_dim
            )));
        }
        Ok(AggregativeGame {
            n_agents,
            action_dim,
            coupling_dim,
            oracle,
            lower,
            upper,
            coupling,
            offsets,
            constants: None,
        })
    }

    pub fn with_constants(mut self, constants: GameConstants) -> Self {
        self.constants = Some(constants);
        self
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn coupling_dim(&self) -> usize {
        self.coupling_dim
    }

    pub fn constants(&self) -> Option<&GameConstants> {
        self.constants.as_ref()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// `A_i`.
    pub fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
        &self.coupling[i]
    }

    /// `b_i`.
    pub fn offset(&self, i: usize) -> &[f64] {
        &self.offsets[i * self.coupling_dim..(i + 1) * self.coupling_dim]
    }

    /// Stacked `b̄ = col(b_i)`.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// `b = Σ_i b_i`.
    pub fn total_offset(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.coupling_dim];
        for i in 0..self.n_agents {
            for (acc, v) in b.iter_mut().zip(self.offset(i)) {
                *acc += v;
            }
        }
        b
    }

    pub(crate) fn check_stacked(&self, v: &[f64], what: &str) -> Result<()> {
        let expected = self.n_agents * self.action_dim;
        if v.len() != expected {
            return Err(GneError::domain(format!(
                "{what} has length {}, expected {expected}",
                v.len()
            )));
        }
        Ok(())
    }

    /// Writes `∇_{x_i}J_i(x_i, y) + (1/N)∇_y J_i(x_i, y)` to `out` and reports whether it is finite.
    pub(crate) fn composite_into(&self, i: usize, x_i: &[f64], y: &[f64], out: &mut [f64]) -> bool {
        let mut scratch = [0.0f64; 8];
        let mut heap;
        let agg: &mut [f64] = if self.action_dim <= scratch.len() {
            &mut scratch[..self.action_dim]
        } else {
            heap = vec![0.0; self.action_dim];
            &mut heap
        };
        self.oracle.grad_own(i, x_i, y, out);
        self.oracle.grad_aggregate(i, x_i, y, agg);
        let inv_n = 1.0 / self.n_agents as f64;
        let mut finite = true;
        for (o, g) in out.iter_mut().zip(agg.iter()) {
            *o += inv_n * g;
            finite &= o.is_finite();
        }
        finite
    }

    /// Agent `i`'s partial gradient evaluated at its own aggregate estimate `u_i`.
    pub fn composite_local_gradient(&self, i: usize, x_i: &[f64], u_i: &[f64]) -> Result<Vec<f64>> {
        if i >= self.n_agents || x_i.len() != self.action_dim || u_i.len() != self.action_dim {
            return Err(GneError::domain("agent index or block dimension out of range"));
        }
        let mut out = vec![0.0; self.action_dim];
        if !self.composite_into(i, x_i, u_i, &mut out) {
            return Err(GneError::numerical(
                0,
                format!("oracle of agent {i} returned a non-finite gradient"),
            ));
        }
        Ok(out)
    }

    /// `𝐅(x, u) = col(∇_{x_i}J_i(x_i, u_i))`.
    pub fn extended_pseudo_gradient(&self, x: &Vector, u: &Vector) -> Result<Vector> {
        self.check_stacked(x.as_slice(), "x")?;
        self.check_stacked(u.as_slice(), "u")?;
        let n = self.action_dim;
        let mut out = Vector::zeros(x.len());
        for i in 0..self.n_agents {
            let r = i * n..(i + 1) * n;
            if !self.composite_into(
                i,
                &x.as_slice()[r.clone()],
                &u.as_slice()[r.clone()],
                &mut out.as_mut_slice()[r],
            ) {
                return Err(GneError::numerical(
                    0,
                    format!("oracle of agent {i} returned a non-finite gradient"),
                ));
            }
        }
        Ok(out)
    }

    /// `F(x) = 𝐅(x, 1_N ⊗ σ(x))`.
    pub fn pseudo_gradient(&self, x: &Vector) -> Result<Vector> {
        self.check_stacked(x.as_slice(), "x")?;
        let mean = block_mean(x.as_slice(), self.n_agents)?;
        let u = Vector::from_iterator(x.len(), (0..self.n_agents).flat_map(|_| mean.iter().copied()));
        self.extended_pseudo_gradient(x, &u)
    }

    /// `Λx = col(A_i x_i)`.
    pub fn coupling_apply(&self, x: &[f64]) -> Vec<f64> {
        let (n, m) = (self.action_dim, self.coupling_dim);
        let mut out = vec![0.0; self.n_agents * m];
        for i in 0..self.n_agents {
            let a = &self.coupling[i];
            for r in 0..m {
                out[i * m + r] = (0..n).map(|c| a[(r, c)] * x[i * n + c]).sum();
            }
        }
        out
    }

    /// `Λᵀλ = col(A_iᵀ λ_i)`.
    pub fn coupling_transpose_apply(&self, lambda: &[f64]) -> Vec<f64> {
        let (n, m) = (self.action_dim, self.coupling_dim);
        let mut out = vec![0.0; self.n_agents * n];
        for i in 0..self.n_agents {
            let a = &self.coupling[i];
            for c in 0..n {
                out[i * n + c] = (0..m).map(|r| a[(r, c)] * lambda[i * m + r]).sum();
            }
        }
        out
    }

    /// `Ax − b = Σ_i (A_i x_i − b_i)`.
    pub fn constraint_value(&self, x: &[f64]) -> Vec<f64> {
        let m = self.coupling_dim;
        let lx = self.coupling_apply(x);
        let mut g = vec![0.0; m];
        for i in 0..self.n_agents {
            for r in 0..m {
                g[r] += lx[i * m + r] - self.offsets[i * m + r];
            }
        }
        g
    }

    /// `Aᵀλ` for a single multiplier `λ ∈ ℝᵐ`.
    pub fn shared_multiplier_apply(&self, lambda: &[f64]) -> Vec<f64> {
        let stacked: Vec<f64> = (0..self.n_agents).flat_map(|_| lambda.iter().copied()).collect();
        self.coupling_transpose_apply(&stacked)
    }

    /// Euclidean projection onto `Ω`.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Spectral norm of `A = [A_1, …, A_N]`.
    pub fn coupling_norm(&self) -> f64 {
        let m = self.coupling_dim;
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for a in &self.coupling {
            gram += a * a.transpose();
        }
        gram.symmetric_eigenvalues().amax().sqrt()
    }

    pub(crate) fn sample_box(&self, rng: &mut ChaCha8Rng) -> Vector {
        Vector::from_iterator(
            self.lower.len(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo }),
        )
    }

    fn sample_aggregate_stack(&self, rng: &mut ChaCha8Rng) -> Vector {
        let n = self.action_dim;
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for i in 0..self.n_agents {
            for k in 0..n {
                lo[k] = lo[k].min(self.lower[i * n + k]);
                hi[k] = hi[k].max(self.upper[i * n + k]);
            }
        }
        Vector::from_iterator(
            self.lower.len(),
            (0..self.lower.len()).map(|idx| {
                let k = idx % n;
                if hi[k] > lo[k] {
                    rng.gen_range(lo[k]..=hi[k])
                } else {
                    lo[k]
                }
            }),
        )
    }

    /// Moves `x` toward `target` along the aggregate-preserving part of
    /// `target − x`, as far as the box allows (at most the full step).
    fn aggregate_preserving_partner(&self, x: &Vector, target: &Vector) -> Vector {
        let diff = target - x;
        let d = crate::graph::project_perp(&diff, self.n_agents).expect("stacked dimensions checked");
        let mut t: f64 = 1.0;
        for k in 0..x.len() {
            if d[k] > 0.0 {
                t = t.min((self.upper[k] - x[k]) / d[k]);
            } else if d[k] < 0.0 {
                t = t.min((self.lower[k] - x[k]) / d[k]);
            }
        }
        x + d * t.max(0.0)
    }

    /// Sampling estimate of `μ`, `l_F`, `l_F^x` and `l_F^u` over the boxes.
    ///
    /// Half of the pairs differ along aggregate-preserving directions, which is
    /// where the own-action curvature of an aggregative game is exposed.
    pub fn estimate_constants(&self, sample_count: usize, seed: u64) -> Result<ConstantsEstimate> {
        if sample_count < 100 {
            return Err(GneError::domain(format!(
                "estimate_constants needs at least 100 samples, got {sample_count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mu = f64::INFINITY;
        let (mut lf, mut lfx, mut lfu) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..sample_count {
            let x = self.sample_box(&mut rng);
            let mut xp = self.sample_box(&mut rng);
            if s % 2 == 0 {
                xp = self.aggregate_preserving_partner(&x, &xp);
            }
            let u = self.sample_aggregate_stack(&mut rng);
            let up = self.sample_aggregate_stack(&mut rng);

            let dx = &x - &xp;
            let dx2 = dx.norm_squared();
            if dx2 > 1e-20 {
                let df = self.pseudo_gradient(&x)? - self.pseudo_gradient(&xp)?;
                mu = mu.min(dx.dot(&df) / dx2);
                lf = lf.max(df.norm() / dx2.sqrt());
                let dfx = self.extended_pseudo_gradient(&x, &u)? - self.extended_pseudo_gradient(&xp, &u)?;
                lfx = lfx.max(dfx.norm() / dx2.sqrt());
            }
            let du = (&u - &up).norm();
            if du > 1e-10 {
                let dfu = self.extended_pseudo_gradient(&x, &u)? - self.extended_pseudo_gradient(&x, &up)?;
                lfu = lfu.max(dfu.norm() / du);
            }
        }
        if !mu.is_finite() {
            mu = 0.0;
        }
        let warning = (mu <= 0.0).then_some(MonotonicityWarning { mu_estimate: mu });
        Ok(ConstantsEstimate {
            constants: GameConstants {
                mu,
                lf,
                lfx,
                lfu,
                provenance: Provenance::Estimated,
            },
            warning,
        })
    }
}

/// Box bounds of every agent in the Cournot benchmark.
pub const COURNOT_BOX: (f64, f64) = (0.0, 10.0);
/// Market capacity `b` of the Cournot benchmark.
pub const COURNOT_CAPACITY: f64 = 20.0;

/// Nash–Cournot market: production cost `(2i − 1)x_i` (1-based `i`), price
/// `60 − σ(x) − x_i/2`, production in `[0, 10]`, total production at most 20.
pub fn cournot_instance(n_agents: usize) -> Result<AggregativeGame> {
    cournot_with_capacity(n_agents, COURNOT_CAPACITY)
}

/// Cournot market with a custom capacity, split equally as `b_i = b/N`.
pub fn cournot_with_capacity(n_agents: usize, capacity: f64) -> Result<AggregativeGame> {
    if n_agents < 2 {
        return Err(GneError::domain("Cournot game needs at least 2 agents"));
    }
    let costs = QuadraticCosts {
        own: vec![1.0; n_agents],
        cross: vec![1.0; n_agents],
        aggregate: vec![0.0; n_agents],
        own_linear: (1..=n_agents).map(|i| vec![(2 * i - 1) as f64 - 60.0]).collect(),
        aggregate_linear: vec![vec![0.0]; n_agents],
    };
    AggregativeGame::new(
        n_agents,
        1,
        1,
        Arc::new(costs),
        vec![COURNOT_BOX.0; n_agents],
        vec![COURNOT_BOX.1; n_agents],
        vec![DMatrix::from_element(1, 1, 1.0); n_agents],
        vec![capacity / n_agents as f64; n_agents],
    )
}

/// Quadratic aggregative game with validated coefficients.
pub fn quadratic_game(
    n_agents: usize,
    action_dim: usize,
    costs: QuadraticCosts,
    lower: Vec<f64>,
    upper: Vec<f64>,
    coupling: Vec<DMatrix<f64>>,
    offsets: Vec<f64>,
) -> Result<AggregativeGame> {
    costs.validate(n_agents, action_dim)?;
    let coupling_dim = coupling.first().map_or(0, |a| a.nrows());
    AggregativeGame::new(
        n_agents,
        action_dim,
        coupling_dim,
        Arc::new(costs),
        lower,
        upper,
        coupling,
        offsets,
    )
}
