//! Parameter certification: restricted monotonicity and cocoercivity
//! constants, per-agent step-size bounds, and the preconditioning metric `Φ`.
//!
//! The stacked layout of a split state `ϖ = (x, u⊥, z, λ)` is
//! `[x (Nn) | u⊥ (Nn) | z (Nm) | λ (Nm)]`; every matrix here follows it.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::game::AggregativeGame;
use crate::graph::{block_mean, Laplacian};

/// Relative PSD tolerance on `λ_min(Φ − δI)`.
pub const PSD_RELATIVE_TOL: f64 = 1e-9;

/// Smallest eigenvalue of `[[μ, −l/2], [−l/2, cλ₂]]`.
pub fn mu_tilde(mu: f64, lfu: f64, c: f64, lambda2: f64) -> f64 {
    let (a, d, b) = (mu, c * lambda2, -lfu / 2.0);
    let half_trace = (a + d) / 2.0;
    let radius = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    half_trace - radius
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cocoercivity {
    pub theta2: f64,
    pub beta: f64,
}

/// `θ² = max{(l^x)², (l^u)² + (cλ_N)²}` and `β = min{μ_Ã/θ², 1/λ_N}`.
pub fn cocoercivity_beta(mu_tilde: f64, lfx: f64, lfu: f64, c: f64, lambda_max: f64) -> Result<Cocoercivity> {
    if mu_tilde <= 0.0 {
        return Err(GneError::Certification {
            message: format!("restricted monotonicity fails (mu_tilde = {mu_tilde})"),
            min_c: None,
        });
    }
    let theta2 = (lfx * lfx).max(lfu * lfu + (c * lambda_max).powi(2));
    Ok(Cocoercivity {
        theta2,
        beta: (mu_tilde / theta2).min(1.0 / lambda_max),
    })
}

/// Lower bounds on one agent's inverse step sizes that make `Φ − δI ⪰ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    pub tau_inv_min: f64,
    pub upsilon_inv_min: f64,
    pub alpha_inv_min: f64,
}

impl StepBounds {
    pub fn tau_max(&self) -> f64 {
        1.0 / self.tau_inv_min
    }

    pub fn upsilon_max(&self) -> f64 {
        1.0 / self.upsilon_inv_min
    }

    pub fn alpha_max(&self) -> f64 {
        1.0 / self.alpha_inv_min
    }
}

/// Diagonal-dominance step bounds for every agent, with `d_i` the weighted degree.
pub fn step_size_bounds(game: &AggregativeGame, lap: &Laplacian, delta: f64, kappa: f64) -> Result<Vec<StepBounds>> {
    if !(delta > 0.0 && kappa > 0.0) {
        return Err(GneError::domain("delta and kappa must be positive"));
    }
    if kappa * delta >= 1.0 {
        return Err(GneError::domain(format!(
            "kappa = {kappa} must be below 1/delta = {}",
            1.0 / delta
        )));
    }
    let consensus_term = 1.0 / (kappa * (1.0 - kappa * delta));
    Ok((0..game.n_agents())
        .map(|i| {
            let a = game.coupling_block(i);
            // max_j Σ_k |[A_iᵀ]_jk| is the largest absolute column sum of A_i.
            let col_sum = (0..a.ncols())
                .map(|c| a.column(c).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let row_sum = (0..a.nrows())
                .map(|r| a.row(r).iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let d = lap.graph().degree(i);
            StepBounds {
                tau_inv_min: col_sum + delta + consensus_term,
                upsilon_inv_min: 2.0 * d + delta,
                alpha_inv_min: row_sum + 2.0 * d + delta,
            }
        })
        .collect())
}

/// Consensus gain, design constants and per-agent step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub c: f64,
    pub kappa: f64,
    pub delta: f64,
    pub tau: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl AlgorithmParams {
    /// Same step sizes for every agent.
    pub fn uniform(n_agents: usize, c: f64, kappa: f64, delta: f64, tau: f64, upsilon: f64, alpha: f64) -> Self {
        AlgorithmParams {
            c,
            kappa,
            delta,
            tau: vec![tau; n_agents],
            upsilon: vec![upsilon; n_agents],
            alpha: vec![alpha; n_agents],
        }
    }

    /// Multiplies τ, υ, α and κ by `factor`.
    pub fn scaled_steps(&self, factor: f64) -> Self {
        let scale = |v: &[f64]| v.iter().map(|s| s * factor).collect();
        AlgorithmParams {
            c: self.c,
            kappa: self.kappa * factor,
            delta: self.delta,
            tau: scale(&self.tau),
            upsilon: scale(&self.upsilon),
            alpha: scale(&self.alpha),
        }
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        let lens_ok = [&self.tau, &self.upsilon, &self.alpha]
            .iter()
            .all(|v| v.len() == n_agents);
        if !lens_ok {
            return Err(GneError::domain(format!(
                "step-size vectors must have one entry per agent ({n_agents})"
            )));
        }
        let positive = [self.c, self.kappa, self.delta]
            .iter()
            .chain(&self.tau)
            .chain(&self.upsilon)
            .chain(&self.alpha)
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive {
            return Err(GneError::domain("all algorithm parameters must be finite and positive"));
        }
        Ok(())
    }
}

/// Dense symmetric metric `Φ` of dimension `2N(n+m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreconditionMatrix {
    pub matrix: DMatrix<f64>,
}

impl PreconditionMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut eig: Vec<f64> = SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(f64::total_cmp);
        eig
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// Assembles
/// ```text
/// Φ = [ τ⁻¹ + κ⁻¹P_⊥   −κ⁻¹P_⊥   0      −Λᵀ ]
///     [ −κ⁻¹P_⊥        κ⁻¹I      0       0  ]
///     [ 0              0         υ⁻¹    𝐋_λ ]
///     [ −Λ             0         𝐋_λ    α⁻¹ ]
/// ```
pub fn assemble_phi(params: &AlgorithmParams, lap: &Laplacian, game: &AggregativeGame) -> PreconditionMatrix {
    let (big_n, n, m) = (game.n_agents(), game.action_dim(), game.coupling_dim());
    let (nn, nm) = (big_n * n, big_n * m);
    let (xo, uo, zo, lo) = (0, nn, 2 * nn, 2 * nn + nm);
    let mut phi = DMatrix::<f64>::zeros(2 * (nn + nm), 2 * (nn + nm));
    let kinv = 1.0 / params.kappa;
    let inv_n = 1.0 / big_n as f64;

    for i in 0..big_n {
        for j in 0..big_n {
            let perp = if i == j { 1.0 - inv_n } else { -inv_n };
            for k in 0..n {
                let (r, c) = (i * n + k, j * n + k);
                phi[(xo + r, xo + c)] += kinv * perp;
                phi[(xo + r, uo + c)] = -kinv * perp;
                phi[(uo + r, xo + c)] = -kinv * perp;
            }
            let l_ij = lap.matrix()[(i, j)];
            for k in 0..m {
                let (r, c) = (i * m + k, j * m + k);
                phi[(zo + r, lo + c)] = l_ij;
                phi[(lo + r, zo + c)] = l_ij;
            }
        }
        for k in 0..n {
            let r = i * n + k;
            phi[(xo + r, xo + r)] += 1.0 / params.tau[i];
            phi[(uo + r, uo + r)] = kinv;
        }
        for k in 0..m {
            let r = i * m + k;
            phi[(zo + r, zo + r)] = 1.0 / params.upsilon[i];
            phi[(lo + r, lo + r)] = 1.0 / params.alpha[i];
        }
        let a = game.coupling_block(i);
        for row in 0..m {
            for col in 0..n {
                let (lr, xc) = (lo + i * m + row, xo + i * n + col);
                phi[(lr, xc)] = -a[(row, col)];
                phi[(xc, lr)] = -a[(row, col)];
            }
        }
    }
    PreconditionMatrix { matrix: phi }
}

/// `Φv` without assembling `Φ`.
pub fn phi_apply(params: &AlgorithmParams, lap: &Laplacian, game: &AggregativeGame, v: &[f64]) -> Vec<f64> {
    let (big_n, n, m) = (game.n_agents(), game.action_dim(), game.coupling_dim());
    let (nn, nm) = (big_n * n, big_n * m);
    let (vx, rest) = v.split_at(nn);
    let (vu, rest) = rest.split_at(nn);
    let (vz, vl) = rest.split_at(nm);
    let kinv = 1.0 / params.kappa;

    // P_⊥(vx − vu)
    let diff: Vec<f64> = vx.iter().zip(vu).map(|(a, b)| a - b).collect();
    let mean = block_mean(&diff, big_n).expect("stacked dimensions");
    let x_mean = block_mean(vx, big_n).expect("stacked dimensions");
    let lt_l = game.coupling_transpose_apply(vl);
    let l_x = game.coupling_apply(vx);
    let mut lap_l = vec![0.0; nm];
    let mut lap_z = vec![0.0; nm];
    lap.apply_into(vl, m, &mut lap_l);
    lap.apply_into(vz, m, &mut lap_z);

    let mut out = vec![0.0; v.len()];
    for i in 0..big_n {
        for k in 0..n {
            let r = i * n + k;
            let perp = diff[r] - mean[k];
            out[r] = vx[r] / params.tau[i] + kinv * perp - lt_l[r];
            out[nn + r] = kinv * (vu[r] - (vx[r] - x_mean[k]));
        }
        for k in 0..m {
            let r = i * m + k;
            out[2 * nn + r] = vz[r] / params.upsilon[i] + lap_l[r];
            out[2 * nn + nm + r] = -l_x[r] + lap_z[r] + vl[r] / params.alpha[i];
        }
    }
    out
}

/// Outcome of the PSD check of `Φ − δI`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub psd: bool,
    /// `λ_min(Φ − δI)`.
    pub lambda_min: f64,
}

/// `Φ − δI ⪰ 0` up to a relative eigensolver tolerance.
pub fn verify_phi_psd(phi: &PreconditionMatrix, delta: f64) -> PsdCheck {
    let eig = phi.eigenvalues();
    let norm = eig.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
    let lambda_min = eig[0] - delta;
    PsdCheck {
        psd: lambda_min >= -PSD_RELATIVE_TOL * norm,
        lambda_min,
    }
}

/// What to certify: `c` is required, the rest may be pinned or derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifySpec {
    pub c: f64,
    pub delta: Option<f64>,
    pub kappa_inv: Option<f64>,
    /// Inverse step sizes: one shared entry or one per agent.
    pub tau_inv: Option<Vec<f64>>,
    pub upsilon_inv: Option<Vec<f64>>,
    pub alpha_inv: Option<Vec<f64>>,
    /// `δ = (1 + margin)/(2β)` when δ is not pinned.
    pub delta_margin: f64,
    /// `κ = fraction/δ` when κ is not pinned.
    pub kappa_fraction: f64,
}

impl CertifySpec {
    pub fn auto(c: f64) -> Self {
        CertifySpec {
            c,
            delta: None,
            kappa_inv: None,
            tau_inv: None,
            upsilon_inv: None,
            alpha_inv: None,
            delta_margin: 0.1,
            kappa_fraction: 0.5,
        }
    }
}

/// `κ⁻¹` and the inverse step sizes exactly as used, pinned or derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedInverses {
    pub kappa_inv: f64,
    pub tau_inv: Vec<f64>,
    pub upsilon_inv: Vec<f64>,
    pub alpha_inv: Vec<f64>,
}

/// Every quantity behind the convergence certificate, with pass/fail flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub lambda2: f64,
    pub lambda_max: f64,
    pub c: f64,
    /// Infimum of admissible `c`, `(l^u)²/(4μλ₂)`.
    pub c_min: f64,
    pub mu_tilde: f64,
    pub theta2: f64,
    pub beta: f64,
    pub beta_inv: f64,
    pub delta: f64,
    /// `1/(2β)`; δ must exceed it.
    pub delta_min: f64,
    pub kappa: f64,
    /// `1/δ`; κ must stay below it.
    pub kappa_max: f64,
    pub step_bounds: Option<Vec<StepBounds>>,
    /// Agents whose step sizes exceed their diagonal-dominance bounds.
    pub agents_over_bounds: Vec<usize>,
    pub inverses: ResolvedInverses,
    pub phi_lambda_min: f64,
    pub phi_minus_delta_lambda_min: f64,
    pub c_ok: bool,
    pub delta_ok: bool,
    pub kappa_ok: bool,
    pub steps_ok: bool,
    pub phi_psd_ok: bool,
    /// Every convergence hypothesis holds as stated.
    pub pass: bool,
    /// `λ_min(Φ) > 1/(2β)`: the metric property the step bounds are sufficient for.
    pub metric_certified: bool,
}

/// Checks the convergence hypotheses and resolves any derived parameters.
pub fn certify(
    game: &AggregativeGame,
    lap: &Laplacian,
    spec: &CertifySpec,
) -> Result<(CertificateReport, AlgorithmParams)> {
    let consts = game
        .constants()
        .ok_or_else(|| GneError::domain("game has no declared or estimated constants"))?;
    if !(spec.c > 0.0) {
        return Err(GneError::domain("consensus gain c must be positive"));
    }
    let (lambda2, lambda_max) = (lap.lambda2(), lap.lambda_max());
    let threshold = consts.lfu * consts.lfu / (4.0 * consts.mu);
    let c_min = threshold / lambda2;
    if spec.c * lambda2 <= threshold {
        return Err(GneError::Certification {
            message: format!(
                "c * lambda2 = {} does not exceed (l_F^u)^2/(4 mu) = {threshold}; need c > {c_min}",
                spec.c * lambda2
            ),
            min_c: Some(c_min),
        });
    }
    let mu_t = mu_tilde(consts.mu, consts.lfu, spec.c, lambda2);
    let coco = cocoercivity_beta(mu_t, consts.lfx, consts.lfu, spec.c, lambda_max)?;
    let delta_min = 1.0 / (2.0 * coco.beta);
    let delta = spec.delta.unwrap_or(delta_min * (1.0 + spec.delta_margin));
    let kappa_inv = spec.kappa_inv.unwrap_or(delta / spec.kappa_fraction);
    let kappa = 1.0 / kappa_inv;
    let kappa_ok = kappa * delta < 1.0;
    let bounds = if kappa_ok {
        Some(step_size_bounds(game, lap, delta, kappa)?)
    } else {
        None
    };

    let big_n = game.n_agents();
    let resolve = |pinned: &Option<Vec<f64>>, pick: fn(&StepBounds) -> f64, name: &str| -> Result<Vec<f64>> {
        match (pinned, &bounds) {
            (Some(inv), _) if inv.len() == 1 => Ok(vec![inv[0]; big_n]),
            (Some(inv), _) if inv.len() == big_n => Ok(inv.clone()),
            (Some(inv), _) => Err(GneError::domain(format!(
                "{name}_inv has {} entries; expected 1 or {big_n}",
                inv.len()
            ))),
            (None, Some(b)) => Ok(b.iter().map(pick).collect()),
            (None, None) => Err(GneError::Certification {
                message: format!(
                    "cannot derive {name}: kappa = {kappa} is not below 1/delta = {}",
                    1.0 / delta
                ),
                min_c: None,
            }),
        }
    };
    let inverses = ResolvedInverses {
        kappa_inv,
        tau_inv: resolve(&spec.tau_inv, |b| b.tau_inv_min, "tau")?,
        upsilon_inv: resolve(&spec.upsilon_inv, |b| b.upsilon_inv_min, "upsilon")?,
        alpha_inv: resolve(&spec.alpha_inv, |b| b.alpha_inv_min, "alpha")?,
    };
    let recip = |v: &[f64]| v.iter().map(|x| 1.0 / x).collect::<Vec<_>>();
    let params = AlgorithmParams {
        c: spec.c,
        kappa,
        delta,
        tau: recip(&inverses.tau_inv),
        upsilon: recip(&inverses.upsilon_inv),
        alpha: recip(&inverses.alpha_inv),
    };
    params.validate(big_n)?;

    let agents_over_bounds: Vec<usize> = match &bounds {
        Some(b) => (0..big_n)
            .filter(|&i| {
                inverses.tau_inv[i] < b[i].tau_inv_min
                    || inverses.upsilon_inv[i] < b[i].upsilon_inv_min
                    || inverses.alpha_inv[i] < b[i].alpha_inv_min
            })
            .collect(),
        None => (0..big_n).collect(),
    };
    let phi = assemble_phi(&params, lap, game);
    let psd = verify_phi_psd(&phi, delta);
    let phi_lambda_min = psd.lambda_min + delta;

    let c_ok = true;
    let delta_ok = delta > delta_min;
    let steps_ok = agents_over_bounds.is_empty();
    let report = CertificateReport {
        lambda2,
        lambda_max,
        c: spec.c,
        c_min,
        mu_tilde: mu_t,
        theta2: coco.theta2,
        beta: coco.beta,
        beta_inv: 1.0 / coco.beta,
        delta,
        delta_min,
        kappa,
        kappa_max: 1.0 / delta,
        step_bounds: bounds,
        agents_over_bounds,
        inverses,
        phi_lambda_min,
        phi_minus_delta_lambda_min: psd.lambda_min,
        c_ok,
        delta_ok,
        kappa_ok,
        steps_ok,
        phi_psd_ok: psd.psd,
        pass: c_ok && delta_ok && kappa_ok && steps_ok && psd.psd,
        metric_certified: phi_lambda_min > delta_min,
    };
    Ok((report, params))
}
