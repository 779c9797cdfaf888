//! Synchronous distributed iteration over `(x, u, z, λ)`.
//!
//! One sweep updates, in order,
//! ```text
//! x⁺ = P_Ω[x − τ(𝐅(x,u) + Λᵀλ + c𝐋u)]
//! u⁺ = u − κc𝐋u + (x⁺ − x)
//! z⁺ = z + υ𝐋λ
//! λ⁺ = P₊(λ − α[𝐋λ + b̄ − Λ(2x⁺ − x) + 𝐋(2z⁺ − z)])
//! ```
//! Agents read neighbor values of `u` and `λ` in the first exchange round and
//! of `2z⁺ − z` in the second; everything else is local.

use nalgebra::SymmetricEigen;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::game::AggregativeGame;
use crate::graph::{block_mean, Laplacian};
use crate::kkt::kkt_residual;
use crate::params::{phi_apply, AlgorithmParams};
use crate::Vector;

/// Neighbor-exchange rounds per iteration.
pub const ROUNDS_PER_ITER: usize = 2;
/// Relative slack of the Fejér check.
pub const FEJER_RELATIVE_TOL: f64 = 1e-9;

/// Clamps every component of `v` to `[lo, hi]`.
pub fn project_box(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter()
        .zip(lo.iter().zip(hi))
        .map(|(x, (l, h))| x.clamp(*l, *h))
        .collect()
}

pub fn project_nonneg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

/// Execution of the per-agent work inside each update phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Serial,
    Parallel,
}

/// Snapshot of every agent's local variables after `k` iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: Vector,
    pub u: Vector,
    pub z: Vector,
    pub lambda: Vector,
    pub k: usize,
}

impl NetworkState {
    /// `x0` projected onto `Ω` (0 when absent), `u0 = x0`, `z0 = λ0 = 0`.
    pub fn initial(game: &AggregativeGame, x0: Option<&[f64]>) -> Result<Self> {
        let nn = game.n_agents() * game.action_dim();
        let mut x = match x0 {
            Some(v) => {
                game.check_stacked(v, "x0")?;
                v.to_vec()
            }
            None => vec![0.0; nn],
        };
        game.project(&mut x);
        let nm = game.n_agents() * game.coupling_dim();
        Ok(NetworkState {
            x: Vector::from_vec(x.clone()),
            u: Vector::from_vec(x),
            z: Vector::zeros(nm),
            lambda: Vector::zeros(nm),
            k: 0,
        })
    }

    fn check_dims(&self, game: &AggregativeGame) -> Result<()> {
        let nn = game.n_agents() * game.action_dim();
        let nm = game.n_agents() * game.coupling_dim();
        if self.x.len() != nn || self.u.len() != nn || self.z.len() != nm || self.lambda.len() != nm {
            return Err(GneError::domain("state dimensions do not match the game"));
        }
        Ok(())
    }

    /// `(x, P_⊥u, z, λ)` stacked in one vector.
    pub fn split_vector(&self, n_agents: usize) -> Vec<f64> {
        let mean = block_mean(self.u.as_slice(), n_agents).expect("stacked dimensions");
        let dim = mean.len();
        let mut out = Vec::with_capacity(2 * self.x.len() + 2 * self.z.len());
        out.extend_from_slice(self.x.as_slice());
        out.extend(self.u.iter().enumerate().map(|(r, v)| v - mean[r % dim]));
        out.extend_from_slice(self.z.as_slice());
        out.extend_from_slice(self.lambda.as_slice());
        out
    }

    fn all_finite(&self) -> bool {
        self.x
            .iter()
            .chain(self.u.iter())
            .chain(self.z.iter())
            .chain(self.lambda.iter())
            .all(|v| v.is_finite())
    }
}

/// Runs `f(i, block_i)` over consecutive `dim`-sized blocks of `out`.
fn for_each_block<F>(schedule: Schedule, out: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if dim == 0 {
        return;
    }
    match schedule {
        Schedule::Serial => out.chunks_mut(dim).enumerate().for_each(|(i, b)| f(i, b)),
        Schedule::Parallel => out.par_chunks_mut(dim).enumerate().for_each(|(i, b)| f(i, b)),
    }
}

/// Neighbor-exchange buffers reused across iterations.
#[derive(Debug, Clone)]
struct Exchange {
    lap_u: Vec<f64>,
    lap_lambda: Vec<f64>,
    zeta: Vec<f64>,
    lap_zeta: Vec<f64>,
}

impl Exchange {
    fn new(nn: usize, nm: usize) -> Self {
        Exchange {
            lap_u: vec![0.0; nn],
            lap_lambda: vec![0.0; nm],
            zeta: vec![0.0; nm],
            lap_zeta: vec![0.0; nm],
        }
    }
}

/// Algorithm engine bound to one game, graph and parameter set.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    game: &'a AggregativeGame,
    lap: &'a Laplacian,
    params: AlgorithmParams,
    schedule: Schedule,
}

impl<'a> Solver<'a> {
    pub fn new(game: &'a AggregativeGame, lap: &'a Laplacian, params: AlgorithmParams) -> Result<Self> {
        if lap.node_count() != game.n_agents() {
            return Err(GneError::domain(format!(
                "graph has {} nodes but the game has {} agents",
                lap.node_count(),
                game.n_agents()
            )));
        }
        params.validate(game.n_agents())?;
        Ok(Solver {
            game,
            lap,
            params,
            schedule: Schedule::Serial,
        })
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }

    pub fn game(&self) -> &AggregativeGame {
        self.game
    }

    pub fn laplacian(&self) -> &Laplacian {
        self.lap
    }

    /// One Gauss–Seidel sweep `x → u → z → λ`.
    pub fn step(&self, state: &NetworkState) -> Result<NetworkState> {
        state.check_dims(self.game)?;
        let mut next = state.clone();
        let mut ex = Exchange::new(state.x.len(), state.z.len());
        self.step_into(state, &mut next, &mut ex)?;
        Ok(next)
    }

    fn step_into(&self, s: &NetworkState, next: &mut NetworkState, ex: &mut Exchange) -> Result<()> {
        let game = self.game;
        let lap = self.lap;
        let p = &self.params;
        let (n, m) = (game.action_dim(), game.coupling_dim());
        let sched = self.schedule;
        let (x, u, z, lam) = (s.x.as_slice(), s.u.as_slice(), s.z.as_slice(), s.lambda.as_slice());

        // Round 1: neighbors' u and λ.
        for_each_block(sched, &mut ex.lap_u, n, |i, out| lap.apply_block(u, n, i, out));
        for_each_block(sched, &mut ex.lap_lambda, m, |i, out| lap.apply_block(lam, m, i, out));

        let lap_u = &ex.lap_u;
        let lap_lambda = &ex.lap_lambda;
        for_each_block(sched, next.x.as_mut_slice(), n, |i, out| {
            let r = i * n..(i + 1) * n;
            let finite = game.composite_into(i, &x[r.clone()], &u[r.clone()], out);
            let a = game.coupling_block(i);
            for k in 0..n {
                let at_l: f64 = (0..m).map(|row| a[(row, k)] * lam[i * m + row]).sum();
                let g = out[k] + at_l + p.c * lap_u[i * n + k];
                let raw = x[i * n + k] - p.tau[i] * g;
                let v = raw.clamp(game.lower()[i * n + k], game.upper()[i * n + k]);
                out[k] = if finite && raw.is_finite() { v } else { f64::NAN };
            }
        });
        if let Some(pos) = next.x.iter().position(|v| !v.is_finite()) {
            return Err(GneError::numerical(
                s.k,
                format!("non-finite action update for agent {}", pos / n.max(1)),
            ));
        }

        let x_next = next.x.as_slice();
        let kc = p.kappa * p.c;
        for_each_block(sched, next.u.as_mut_slice(), n, |i, out| {
            for k in 0..n {
                let r = i * n + k;
                out[k] = u[r] - kc * lap_u[r] + (x_next[r] - x[r]);
            }
        });
        for_each_block(sched, next.z.as_mut_slice(), m, |i, out| {
            for k in 0..m {
                let r = i * m + k;
                out[k] = z[r] + p.upsilon[i] * lap_lambda[r];
            }
        });

        // Round 2: neighbors' 2z⁺ − z.
        let z_next = next.z.as_slice();
        for_each_block(sched, &mut ex.zeta, m, |i, out| {
            for k in 0..m {
                out[k] = 2.0 * z_next[i * m + k] - z[i * m + k];
            }
        });
        let zeta = &ex.zeta;
        for_each_block(sched, &mut ex.lap_zeta, m, |i, out| lap.apply_block(zeta, m, i, out));

        let lap_zeta = &ex.lap_zeta;
        let offsets = game.offsets();
        for_each_block(sched, next.lambda.as_mut_slice(), m, |i, out| {
            let a = game.coupling_block(i);
            for row in 0..m {
                let r = i * m + row;
                let a_ext: f64 = (0..n)
                    .map(|k| a[(row, k)] * (2.0 * x_next[i * n + k] - x[i * n + k]))
                    .sum();
                let inner = lap_lambda[r] + offsets[r] - a_ext + lap_zeta[r];
                out[row] = (lam[r] - p.alpha[i] * inner).max(0.0);
            }
        });
        next.k = s.k + 1;
        if !next.all_finite() {
            return Err(GneError::numerical(s.k, "non-finite state after update"));
        }
        Ok(())
    }

    /// `‖ϖ − ϖ̄‖_Φ` for `ϖ = (x, P_⊥u, z, λ)`.
    pub fn phi_distance(&self, state: &NetworkState, reference: &NetworkState) -> f64 {
        let big_n = self.game.n_agents();
        let a = state.split_vector(big_n);
        let b = reference.split_vector(big_n);
        let d: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        let phi_d = phi_apply(&self.params, self.lap, self.game, &d);
        d.iter().zip(&phi_d).map(|(p, q)| p * q).sum::<f64>().max(0.0).sqrt()
    }

    /// Iterates from `init` until the composite residual falls below `tol` or `max_iter` sweeps.
    pub fn run(&self, init: &NetworkState, opts: &RunOptions) -> std::result::Result<RunTrace, RunFailure> {
        let mut trace = RunTrace::empty(init.clone());
        let fail = |trace: RunTrace, error: GneError| {
            Err(RunFailure {
                error,
                trace: Box::new(trace),
            })
        };
        if let Err(e) = init.check_dims(self.game) {
            return fail(trace, e);
        }
        if opts.record_every == 0 {
            return fail(trace, GneError::domain("record_every must be positive"));
        }
        let fejer_ref = if opts.fejer_check {
            opts.fixed_point.as_ref()
        } else {
            None
        };
        let mut fejer = fejer_ref.map(|_| FejerSummary::default());
        let mut prev_dist = fejer_ref.map(|fp| self.phi_distance(init, fp));

        let mut cur = init.clone();
        let mut next = init.clone();
        let mut ex = Exchange::new(init.x.len(), init.z.len());
        let mut status = RunStatus::MaxIter;
        loop {
            let metrics = match residuals(&cur, self.game, opts.reference.as_ref()) {
                Ok(m) => m,
                Err(e) => {
                    trace.final_state = cur;
                    return fail(trace, e);
                }
            };
            trace.max_sigma_ratio = trace.max_sigma_ratio.max(metrics.sigma_ratio(&cur));
            let converged = metrics.composite() < opts.tol;
            let last = converged || cur.k >= opts.max_iter;
            if cur.k.is_multiple_of(opts.record_every) || last {
                let phi = opts.fixed_point.as_ref().map(|fp| self.phi_distance(&cur, fp));
                trace.rows.push(metrics.into_row(cur.k, phi));
                trace.actions.push(cur.x.as_slice().to_vec());
            }
            if converged {
                status = RunStatus::Converged;
            }
            if last {
                break;
            }
            if let Err(e) = self.step_into(&cur, &mut next, &mut ex) {
                trace.final_state = cur;
                trace.iterations = trace.final_state.k;
                return fail(trace, e);
            }
            if opts.capture_pairs.contains(&cur.k) {
                trace.captured.push((cur.clone(), next.clone()));
            }
            if let (Some(fp), Some(summary), Some(prev)) = (fejer_ref, fejer.as_mut(), prev_dist) {
                let d = self.phi_distance(&next, fp);
                summary.record(cur.k, prev, d);
                prev_dist = Some(d);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        trace.iterations = cur.k;
        trace.final_state = cur;
        trace.status = status;
        trace.fejer = fejer;
        Ok(trace)
    }
}

/// Options for [`Solver::run`].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub max_iter: usize,
    /// Stop once `kkt_residual + consensus_u + consensus_λ < tol`.
    pub tol: f64,
    pub record_every: usize,
    /// Reference equilibrium `x*` for the normalized error.
    pub reference: Option<Vector>,
    /// Fixed point used for `phi_distance` and the Fejér check.
    pub fixed_point: Option<NetworkState>,
    pub fejer_check: bool,
    /// Iterations `k` whose `(state_k, state_{k+1})` pairs are kept.
    pub capture_pairs: Vec<usize>,
}

impl RunOptions {
    pub fn new(max_iter: usize, tol: f64, record_every: usize) -> Self {
        RunOptions {
            max_iter,
            tol,
            record_every,
            reference: None,
            fixed_point: None,
            fejer_check: false,
            capture_pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIter,
}

/// One recorded iteration. Metrics that need a reference are `None` without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub normalized_error_pct: Option<f64>,
    pub kkt_residual: f64,
    pub consensus_u: f64,
    pub consensus_lambda: f64,
    pub sigma_gap: f64,
    pub phi_distance: Option<f64>,
}

impl TraceRow {
    pub fn composite(&self) -> f64 {
        self.kkt_residual + self.consensus_u + self.consensus_lambda
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FejerSummary {
    pub checked: usize,
    pub violations: usize,
    /// Largest `d_{k+1}/d_k` over steps with `d_k > 0`.
    pub worst_ratio: f64,
    pub first_violation: Option<usize>,
}

impl FejerSummary {
    fn record(&mut self, k: usize, prev: f64, next: f64) {
        self.checked += 1;
        if prev > 0.0 {
            self.worst_ratio = self.worst_ratio.max(next / prev);
        }
        if next > prev * (1.0 + FEJER_RELATIVE_TOL) {
            self.violations += 1;
            self.first_violation.get_or_insert(k);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Stacked actions at each recorded row.
    pub actions: Vec<Vec<f64>>,
    pub status: RunStatus,
    /// Number of sweeps performed.
    pub iterations: usize,
    pub final_state: NetworkState,
    pub rounds_per_iter: usize,
    pub fejer: Option<FejerSummary>,
    /// `max_k |σ(u_k) − σ(x_k)| / (1 + ‖x_k‖)` over every iterate.
    pub max_sigma_ratio: f64,
    pub captured: Vec<(NetworkState, NetworkState)>,
}

impl RunTrace {
    fn empty(state: NetworkState) -> Self {
        RunTrace {
            rows: Vec::new(),
            actions: Vec::new(),
            status: RunStatus::MaxIter,
            iterations: 0,
            final_state: state,
            rounds_per_iter: ROUNDS_PER_ITER,
            fejer: None,
            max_sigma_ratio: 0.0,
            captured: Vec::new(),
        }
    }

    /// First recorded iteration with normalized error below `pct`.
    pub fn first_below(&self, pct: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.normalized_error_pct.is_some_and(|e| e < pct))
            .map(|r| r.iter)
    }
}

/// A failed run: the error plus everything recorded up to the last good state.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: GneError,
    pub trace: Box<RunTrace>,
}

impl From<RunFailure> for GneError {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

/// Metrics of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub normalized_error_pct: Option<f64>,
    pub kkt_residual: f64,
    pub consensus_u: f64,
    pub consensus_lambda: f64,
    pub sigma_gap: f64,
}

impl Residuals {
    pub fn composite(&self) -> f64 {
        self.kkt_residual + self.consensus_u + self.consensus_lambda
    }

    fn sigma_ratio(&self, state: &NetworkState) -> f64 {
        self.sigma_gap / (1.0 + state.x.norm())
    }

    fn into_row(self, iter: usize, phi_distance: Option<f64>) -> TraceRow {
        TraceRow {
            iter,
            normalized_error_pct: self.normalized_error_pct,
            kkt_residual: self.kkt_residual,
            consensus_u: self.consensus_u,
            consensus_lambda: self.consensus_lambda,
            sigma_gap: self.sigma_gap,
            phi_distance,
        }
    }
}

/// KKT residual at `(x, mean_i λ_i)`, consensus spreads and the σ-gap.
pub fn residuals(state: &NetworkState, game: &AggregativeGame, reference: Option<&Vector>) -> Result<Residuals> {
    state.check_dims(game)?;
    let big_n = game.n_agents();
    let (n, m) = (game.action_dim(), game.coupling_dim());
    let sigma_x = block_mean(state.x.as_slice(), big_n)?;
    let sigma_u = block_mean(state.u.as_slice(), big_n)?;
    let lambda_bar = block_mean(state.lambda.as_slice(), big_n)?;

    let block_dist = |v: &[f64], i: usize, dim: usize, c: &[f64]| -> f64 {
        (0..dim).map(|k| (v[i * dim + k] - c[k]).powi(2)).sum::<f64>().sqrt()
    };
    let consensus_u = (0..big_n)
        .map(|i| block_dist(state.u.as_slice(), i, n, &sigma_x))
        .fold(0.0, f64::max);
    let lam = state.lambda.as_slice();
    let mut consensus_lambda: f64 = 0.0;
    for i in 0..big_n {
        for j in i + 1..big_n {
            let d = (0..m)
                .map(|k| (lam[i * m + k] - lam[j * m + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            consensus_lambda = consensus_lambda.max(d);
        }
    }
    let sigma_gap = sigma_u
        .iter()
        .zip(&sigma_x)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let normalized_error_pct = match reference {
        Some(r) if r.len() == state.x.len() => {
            let denom = r.norm();
            Some(100.0 * (&state.x - r).norm() / if denom > 0.0 { denom } else { 1.0 })
        }
        Some(_) => return Err(GneError::domain("reference x* has the wrong length")),
        None => None,
    };
    Ok(Residuals {
        normalized_error_pct,
        kkt_residual: kkt_residual(state.x.as_slice(), &lambda_bar, game)?,
        consensus_u,
        consensus_lambda,
        sigma_gap,
    })
}

/// `x = x*`, `u = 1⊗σ(x*)`, `λ = 1⊗λ*`, `z̄` the minimum-norm solution of `𝐋z̄ = Λx* − b̄`.
pub fn fixed_point(
    game: &AggregativeGame,
    lap: &Laplacian,
    x_star: &[f64],
    lambda_star: &[f64],
) -> Result<NetworkState> {
    game.check_stacked(x_star, "x*")?;
    let big_n = game.n_agents();
    let m = game.coupling_dim();
    if lambda_star.len() != m {
        return Err(GneError::domain("λ* must have one entry per coupling row"));
    }
    let sigma = block_mean(x_star, big_n)?;
    let u: Vec<f64> = (0..big_n).flat_map(|_| sigma.iter().copied()).collect();
    let lambda: Vec<f64> = (0..big_n).flat_map(|_| lambda_star.iter().copied()).collect();

    let rhs: Vec<f64> = game
        .coupling_apply(x_star)
        .iter()
        .zip(game.offsets())
        .map(|(a, b)| a - b)
        .collect();
    let eig = SymmetricEigen::new(lap.matrix().clone());
    let cutoff = 1e-10 * lap.lambda_max();
    let mut z = vec![0.0; big_n * m];
    for (e_idx, &e) in eig.eigenvalues.iter().enumerate() {
        if e <= cutoff {
            continue;
        }
        let v = eig.eigenvectors.column(e_idx);
        for k in 0..m {
            let coef: f64 = (0..big_n).map(|i| v[i] * rhs[i * m + k]).sum::<f64>() / e;
            for i in 0..big_n {
                z[i * m + k] += coef * v[i];
            }
        }
    }
    Ok(NetworkState {
        x: Vector::from_column_slice(x_star),
        u: Vector::from_vec(u),
        z: Vector::from_vec(z),
        lambda: Vector::from_vec(lambda),
        k: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{cournot_instance, quadratic_game, QuadraticCosts};
    use crate::graph::{build_graph, Topology};
    use crate::kkt::enumerate_active_sets;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn star_setup() -> (AggregativeGame, Laplacian, AlgorithmParams) {
        let game = cournot_instance(20).unwrap();
        let lap = Laplacian::new(&build_graph(&Topology::Star, 20, None).unwrap());
        let params = AlgorithmParams::uniform(20, 0.5, 1.0 / 500.0, 300.0, 1.0 / 2000.0, 1.0 / 300.0, 1.0 / 300.0);
        (game, lap, params)
    }

    fn cournot_solution(n: usize) -> (Vec<f64>, f64) {
        let costs = QuadraticCosts {
            own: vec![1.0; n],
            cross: vec![1.0; n],
            aggregate: vec![0.0; n],
            own_linear: (1..=n).map(|i| vec![(2 * i - 1) as f64 - 60.0]).collect(),
            aggregate_linear: vec![vec![0.0]; n],
        };
        let sol = enumerate_active_sets(&costs, &vec![0.0; n], &vec![10.0; n], 1.0, 20.0).unwrap();
        (sol.x, sol.lambda[0])
    }

    #[test]
    fn projections() {
        assert_eq!(project_box(&[12.0], &[0.0], &[10.0]), vec![10.0]);
        assert_eq!(project_box(&[5.0], &[0.0], &[10.0]), vec![5.0]);
        assert_eq!(project_nonneg(&[-1.0, 2.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let (game, lap, params) = star_setup();
        let (x, l) = cournot_solution(20);
        let fp = fixed_point(&game, &lap, &x, &[l]).unwrap();
        let solver = Solver::new(&game, &lap, params).unwrap();
        let next = solver.step(&fp).unwrap();
        for (a, b) in [
            (&fp.x, &next.x),
            (&fp.u, &next.u),
            (&fp.z, &next.z),
            (&fp.lambda, &next.lambda),
        ] {
            assert!((a - b).amax() <= 1e-12, "{}", (a - b).amax());
        }
        let r = residuals(&fp, &game, Some(&Vector::from_vec(x))).unwrap();
        assert!(r.composite() < 1e-9 && r.sigma_gap < 1e-9);
        assert_eq!(r.normalized_error_pct, Some(0.0));
    }

    #[test]
    fn fixed_point_z_is_minimum_norm() {
        let (game, lap, _) = star_setup();
        let (x, l) = cournot_solution(20);
        let fp = fixed_point(&game, &lap, &x, &[l]).unwrap();
        assert_abs_diff_eq!(fp.z.sum(), 0.0, epsilon = 1e-12);
        let lz = lap.apply(&fp.z).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(lz[i], x[i] - 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sigma_preserved_by_step() {
        let (game, lap, params) = star_setup();
        let solver = Solver::new(&game, &lap, params).unwrap();
        let mut s = NetworkState::initial(&game, Some(&[3.0; 20])).unwrap();
        for _ in 0..50 {
            let next = solver.step(&s).unwrap();
            assert_abs_diff_eq!(next.u.mean(), next.x.mean(), epsilon = 1e-12);
            s = next;
        }
        assert_eq!(s.k, 50);
    }

    #[test]
    fn zero_game_is_static() {
        let n = 4;
        let costs = QuadraticCosts {
            own: vec![0.0; n],
            cross: vec![0.0; n],
            aggregate: vec![0.0; n],
            own_linear: vec![vec![0.0]; n],
            aggregate_linear: vec![vec![0.0]; n],
        };
        let game = quadratic_game(
            n,
            1,
            costs,
            vec![-1.0; n],
            vec![1.0; n],
            vec![DMatrix::zeros(1, 1); n],
            vec![0.0; n],
        )
        .unwrap();
        let lap = Laplacian::new(&build_graph(&Topology::Ring, n, None).unwrap());
        let params = AlgorithmParams::uniform(n, 1.0, 0.1, 1.0, 0.1, 0.1, 0.1);
        let s = NetworkState::initial(&game, Some(&[0.5; 4])).unwrap();
        let next = Solver::new(&game, &lap, params).unwrap().step(&s).unwrap();
        assert_eq!(next.x, s.x);
        assert_eq!(next.u, s.u);
        assert_eq!(next.z, s.z);
        assert_eq!(next.lambda, s.lambda);
    }

    #[test]
    fn initial_state_projects_and_copies() {
        let game = cournot_instance(3).unwrap();
        let s = NetworkState::initial(&game, Some(&[-1.0, 4.0, 12.0])).unwrap();
        assert_eq!(s.x.as_slice(), &[0.0, 4.0, 10.0]);
        assert_eq!(s.u, s.x);
        assert_eq!(s.lambda.sum(), 0.0);
    }

    #[test]
    fn residuals_from_zero() {
        let (game, _, _) = star_setup();
        let (x, _) = cournot_solution(20);
        let s = NetworkState::initial(&game, None).unwrap();
        let r = residuals(&s, &game, Some(&Vector::from_vec(x))).unwrap();
        assert_abs_diff_eq!(r.normalized_error_pct.unwrap(), 100.0, epsilon = 1e-12);
        assert_eq!(r.consensus_u, 0.0);
        assert_eq!(r.sigma_gap, 0.0);
    }

    #[test]
    fn serial_and_parallel_agree_bitwise() {
        let (game, lap, params) = star_setup();
        let serial = Solver::new(&game, &lap, params.clone()).unwrap();
        let parallel = Solver::new(&game, &lap, params)
            .unwrap()
            .with_schedule(Schedule::Parallel);
        let mut a = NetworkState::initial(&game, None).unwrap();
        let mut b = a.clone();
        for _ in 0..200 {
            a = serial.step(&a).unwrap();
            b = parallel.step(&b).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn run_from_fixed_point_converges_immediately() {
        let (game, lap, params) = star_setup();
        let (x, l) = cournot_solution(20);
        let fp = fixed_point(&game, &lap, &x, &[l]).unwrap();
        let mut opts = RunOptions::new(100, 1e-6, 10);
        opts.fixed_point = Some(fp.clone());
        let trace = Solver::new(&game, &lap, params).unwrap().run(&fp, &opts).unwrap();
        assert_eq!(trace.status, RunStatus::Converged);
        assert_eq!(trace.iterations, 0);
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].phi_distance, Some(0.0));
    }

    #[test]
    fn run_records_rows_and_captures() {
        let (game, lap, params) = star_setup();
        let mut opts = RunOptions::new(25, 1e-12, 10);
        opts.capture_pairs = vec![0, 1, 10, 100];
        let trace = Solver::new(&game, &lap, params)
            .unwrap()
            .run(&NetworkState::initial(&game, None).unwrap(), &opts)
            .unwrap();
        let iters: Vec<usize> = trace.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
        assert_eq!(trace.status, RunStatus::MaxIter);
        assert_eq!(trace.captured.len(), 3);
        assert_eq!(trace.captured[2].1.k, 11);
    }

    struct Exploding;
    impl crate::game::GradientOracle for Exploding {
        fn grad_own(&self, _: usize, x: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = if x[0] > 0.5 { f64::INFINITY } else { -1.0 };
        }
        fn grad_aggregate(&self, _: usize, _: &[f64], _: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
    }

    #[test]
    fn run_reports_numerical_failure_with_last_state() {
        let n = 3;
        let game = AggregativeGame::new(
            n,
            1,
            1,
            std::sync::Arc::new(Exploding),
            vec![0.0; n],
            vec![1.0; n],
            vec![DMatrix::from_element(1, 1, 1.0); n],
            vec![1.0; n],
        )
        .unwrap();
        let lap = Laplacian::new(&build_graph(&Topology::Path, n, None).unwrap());
        let params = AlgorithmParams::uniform(n, 1.0, 0.1, 1.0, 0.2, 0.1, 0.1);
        let err = Solver::new(&game, &lap, params)
            .unwrap()
            .run(
                &NetworkState::initial(&game, None).unwrap(),
                &RunOptions::new(100, 1e-9, 1),
            )
            .unwrap_err();
        assert!(matches!(err.error, GneError::Numerical { .. }));
        assert!(err.trace.final_state.x.iter().all(|v| v.is_finite()));
    }
}
