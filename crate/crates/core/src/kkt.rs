//! Centralized ground truth: KKT residuals of the variational equilibrium and
//! two independent full-information solvers.

use serde::{Deserialize, Serialize};

use crate::error::{GneError, Result};
use crate::game::{AggregativeGame, QuadraticCosts};
use crate::Vector;

/// Iteration cap of the primal-dual reference solver.
pub const REFERENCE_MAX_ITER: usize = 2_000_000;

/// `‖x − P_Ω(x − F(x) − Aᵀλ)‖ + ‖λ − P₊(λ + Ax − b)‖` for a single multiplier `λ ∈ ℝᵐ`.
pub fn kkt_residual(x: &[f64], lambda: &[f64], game: &AggregativeGame) -> Result<f64> {
    game.check_stacked(x, "x")?;
    if lambda.len() != game.coupling_dim() {
        return Err(GneError::domain(format!(
            "multiplier has length {}, expected {}",
            lambda.len(),
            game.coupling_dim()
        )));
    }
    let f = game.pseudo_gradient(&Vector::from_column_slice(x))?;
    let at_l = game.shared_multiplier_apply(lambda);
    let mut trial: Vec<f64> = (0..x.len()).map(|k| x[k] - f[k] - at_l[k]).collect();
    game.project(&mut trial);
    let primal = x.iter().zip(&trial).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();

    let g = game.constraint_value(x);
    let dual = lambda
        .iter()
        .zip(&g)
        .map(|(l, gi)| (l - (l + gi).max(0.0)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(primal + dual)
}

/// A variational GNE `(x*, λ*)` with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Coupling rows with `λ*_r > 0` or zero slack.
    pub active: Vec<bool>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    fn finish(game: &AggregativeGame, x: Vec<f64>, lambda: Vec<f64>, iterations: usize) -> Result<Self> {
        let g = game.constraint_value(&x);
        let active = g
            .iter()
            .zip(&lambda)
            .map(|(gi, l)| *l > 0.0 || gi.abs() <= 1e-9)
            .collect();
        let kkt_residual = kkt_residual(&x, &lambda, game)?;
        Ok(ReferenceSolution {
            x,
            lambda,
            active,
            kkt_residual,
            iterations,
        })
    }

    pub fn x_vector(&self) -> Vector {
        Vector::from_column_slice(&self.x)
    }
}

/// Projected primal-dual iteration on the full KKT system:
/// `x⁺ = P_Ω(x − τ(F(x) + Aᵀλ))`, `λ⁺ = P₊(λ + σ(A(2x⁺ − x) − b))`.
pub fn solve_reference_gne(game: &AggregativeGame, tol: f64) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(GneError::domain("reference tolerance must be positive"));
    }
    let lf = match game.constants() {
        Some(c) => c.lf,
        None => game.estimate_constants(1000, 0)?.constants.lf,
    };
    let a_norm2 = game.coupling_norm().powi(2);
    let tau = 1.0 / (lf + a_norm2);
    let sigma = if a_norm2 > 0.0 { 0.5 / a_norm2 } else { 0.0 };

    let mut x = vec![0.0; game.n_agents() * game.action_dim()];
    game.project(&mut x);
    let mut lambda = vec![0.0; game.coupling_dim()];
    for it in 1..=REFERENCE_MAX_ITER {
        let f = game.pseudo_gradient(&Vector::from_column_slice(&x))?;
        let at_l = game.shared_multiplier_apply(&lambda);
        let mut next: Vec<f64> = (0..x.len()).map(|k| x[k] - tau * (f[k] + at_l[k])).collect();
        game.project(&mut next);
        let extrap: Vec<f64> = next.iter().zip(&x).map(|(a, b)| 2.0 * a - b).collect();
        let g = game.constraint_value(&extrap);
        for (l, gi) in lambda.iter_mut().zip(&g) {
            *l = (*l + sigma * gi).max(0.0);
        }
        x = next;
        if x.iter().chain(&lambda).any(|v| !v.is_finite()) {
            return Err(GneError::Oracle(format!("non-finite iterate at iteration {it}")));
        }
        if it % 50 == 0 && kkt_residual(&x, &lambda, game)? <= tol {
            return ReferenceSolution::finish(game, x, lambda, it);
        }
    }
    Err(GneError::Oracle(format!(
        "primal-dual solver did not reach residual {tol} in {REFERENCE_MAX_ITER} iterations"
    )))
}

/// Closed-form solve for scalar quadratic games with a single coupling row
/// `a Σx_i ≤ b` and a common aggregate slope.
///
/// With `t = sσ + aλ` every action is `x_i(t) = clamp((−q_i − t)/p_i)`, so each
/// interval between consecutive clamp breakpoints fixes one face of the box
/// product. Each face is solved twice, once with the coupling inactive and
/// once with it tight, and only self-consistent candidates are kept.
pub fn enumerate_active_sets(
    costs: &QuadraticCosts,
    lower: &[f64],
    upper: &[f64],
    a: f64,
    b: f64,
) -> Result<ReferenceSolution> {
    let n = costs.own.len();
    let nf = n as f64;
    if n == 0 || lower.len() != n || upper.len() != n || costs.own_linear.iter().any(|q| q.len() != 1) {
        return Err(GneError::domain("active-set enumeration needs scalar actions"));
    }
    if a == 0.0 {
        return Err(GneError::domain("active-set enumeration needs a nonzero coupling row"));
    }
    // F_i(x) = p_i x_i + s σ + q_i
    let p: Vec<f64> = (0..n).map(|i| costs.own[i] + costs.cross[i] / nf).collect();
    let q: Vec<f64> = (0..n)
        .map(|i| costs.own_linear[i][0] + costs.aggregate_linear[i][0] / nf)
        .collect();
    let s_all: Vec<f64> = (0..n).map(|i| costs.cross[i] + costs.aggregate[i] / nf).collect();
    let s = s_all[0];
    if s_all.iter().any(|v| (v - s).abs() > 1e-14) || p.iter().any(|v| *v <= 0.0) {
        return Err(GneError::domain(
            "active-set enumeration needs positive own curvature and a common aggregate slope",
        ));
    }

    let mut breaks: Vec<f64> = (0..n)
        .flat_map(|i| [-q[i] - p[i] * upper[i], -q[i] - p[i] * lower[i]])
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut intervals = Vec::with_capacity(breaks.len() + 1);
    intervals.push((f64::NEG_INFINITY, breaks[0]));
    intervals.extend(breaks.windows(2).map(|w| (w[0], w[1])));
    intervals.push((*breaks.last().expect("non-empty"), f64::INFINITY));

    let action = |i: usize, t: f64| ((-q[i] - t) / p[i]).clamp(lower[i], upper[i]);
    let mut candidates: Vec<(Vec<f64>, f64)> = Vec::new();
    for &(lo, hi) in &intervals {
        let probe = match (lo.is_finite(), hi.is_finite()) {
            (false, _) => hi - 1.0,
            (_, false) => lo + 1.0,
            _ => 0.5 * (lo + hi),
        };
        // Σx_i(t) = P + Q t on this face.
        let (mut big_p, mut big_q) = (0.0, 0.0);
        for i in 0..n {
            let raw = (-q[i] - probe) / p[i];
            if raw <= lower[i] {
                big_p += lower[i];
            } else if raw >= upper[i] {
                big_p += upper[i];
            } else {
                big_p += -q[i] / p[i];
                big_q += -1.0 / p[i];
            }
        }
        let inside = |t: f64| t >= lo - 1e-9 * (1.0 + lo.abs()) && t <= hi + 1e-9 * (1.0 + hi.abs());
        let slack_tol = 1e-9 * (1.0 + b.abs());

        let denom = 1.0 - s * big_q / nf;
        if denom.abs() > 1e-14 {
            let t = s * big_p / nf / denom;
            if inside(t) && a * (big_p + big_q * t) <= b + slack_tol {
                candidates.push(((0..n).map(|i| action(i, t)).collect(), 0.0));
            }
        }
        if big_q != 0.0 {
            let t = (b / a - big_p) / big_q;
            let lambda = (t - s * b / (a * nf)) / a;
            if inside(t) && lambda >= -1e-12 {
                candidates.push(((0..n).map(|i| action(i, t)).collect(), lambda.max(0.0)));
            }
        }
    }

    let mut unique: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in candidates {
        let seen = unique
            .iter()
            .any(|(x, l)| (l - c.1).abs() <= 1e-8 && x.iter().zip(&c.0).all(|(u, v)| (u - v).abs() <= 1e-8));
        if !seen {
            unique.push(c);
        }
    }
    match unique.len() {
        1 => {
            let (x, lambda) = unique.pop().expect("one candidate");
            let slack = a * x.iter().sum::<f64>() - b;
            Ok(ReferenceSolution {
                kkt_residual: 0.0,
                active: vec![lambda > 0.0 || slack.abs() <= 1e-9],
                x,
                lambda: vec![lambda],
                iterations: 0,
            })
        }
        0 => Err(GneError::Oracle("no consistent active set found".into())),
        k => Err(GneError::Oracle(format!("{k} distinct consistent active sets found"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{cournot_instance, cournot_with_capacity, quadratic_game, GameConstants};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn cournot_costs(n: usize) -> QuadraticCosts {
        QuadraticCosts {
            own: vec![1.0; n],
            cross: vec![1.0; n],
            aggregate: vec![0.0; n],
            own_linear: (1..=n).map(|i| vec![(2 * i - 1) as f64 - 60.0]).collect(),
            aggregate_linear: vec![vec![0.0]; n],
        }
    }

    fn known_x_star() -> Vec<f64> {
        let mut x = vec![0.0; 20];
        for (i, v) in x.iter_mut().take(5).enumerate() {
            *v = (60.0 - 2.0 * (i + 1) as f64 - 49.8) / 1.05;
        }
        x
    }

    #[test]
    fn residual_at_closed_form_solution() {
        let game = cournot_instance(20).unwrap();
        assert!(kkt_residual(&known_x_star(), &[49.8], &game).unwrap() <= 1e-9);
        assert!(kkt_residual(&known_x_star(), &[0.0], &game).unwrap() > 1.0);
    }

    #[test]
    fn residual_zero_for_interior_unconstrained_point() {
        // J_i = ½x² − x on [−5, 5], constraint x_1 + x_2 ≤ 100 inactive.
        let costs = QuadraticCosts {
            own: vec![1.0; 2],
            cross: vec![0.0; 2],
            aggregate: vec![0.0; 2],
            own_linear: vec![vec![-1.0]; 2],
            aggregate_linear: vec![vec![0.0]; 2],
        };
        let game = quadratic_game(
            2,
            1,
            costs,
            vec![-5.0; 2],
            vec![5.0; 2],
            vec![DMatrix::from_element(1, 1, 1.0); 2],
            vec![50.0; 2],
        )
        .unwrap();
        assert_eq!(kkt_residual(&[1.0, 1.0], &[0.0], &game).unwrap(), 0.0);
    }

    #[test]
    fn residual_rejects_bad_multiplier_length() {
        let game = cournot_instance(3).unwrap();
        assert!(matches!(
            kkt_residual(&[0.0; 3], &[0.0, 0.0], &game),
            Err(GneError::Domain(_))
        ));
    }

    #[test]
    fn enumeration_reproduces_cournot() {
        let sol = enumerate_active_sets(&cournot_costs(20), &[0.0; 20], &[10.0; 20], 1.0, 20.0).unwrap();
        assert_abs_diff_eq!(sol.lambda[0], 49.8, epsilon = 1e-12);
        for (a, b) in sol.x.iter().zip(known_x_star()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(sol.active[0]);
    }

    #[test]
    fn primal_dual_matches_enumeration() {
        let game = cournot_instance(20)
            .unwrap()
            .with_constants(GameConstants::declared(1.0, 1.05, 1.0, None).unwrap());
        let pd = solve_reference_gne(&game, 1e-11).unwrap();
        let en = enumerate_active_sets(&cournot_costs(20), &[0.0; 20], &[10.0; 20], 1.0, 20.0).unwrap();
        for (a, b) in pd.x.iter().zip(&en.x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(pd.lambda[0], en.lambda[0], epsilon = 1e-8);
        assert!(pd.kkt_residual <= 1e-11);
        assert!(pd.lambda[0] * game.constraint_value(&pd.x)[0].abs() <= 1e-9);
    }

    #[test]
    fn slack_capacity_gives_zero_multiplier() {
        let game = cournot_with_capacity(20, 1e6)
            .unwrap()
            .with_constants(GameConstants::declared(1.0, 1.05, 1.0, None).unwrap());
        let pd = solve_reference_gne(&game, 1e-11).unwrap();
        assert_eq!(pd.lambda[0], 0.0);
        assert!(!pd.active[0]);
        let en = enumerate_active_sets(&cournot_costs(20), &[0.0; 20], &[10.0; 20], 1.0, 1e6).unwrap();
        assert_eq!(en.lambda[0], 0.0);
        for (a, b) in pd.x.iter().zip(&en.x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
        // Unconstrained equilibrium: 1.05 x_i + σ = 61 − 2i while interior.
        assert_eq!(en.x[0], 10.0);
    }

    #[test]
    fn symmetric_agents_share_actions() {
        let n = 6;
        let costs = QuadraticCosts {
            own: vec![2.0; n],
            cross: vec![0.5; n],
            aggregate: vec![0.0; n],
            own_linear: vec![vec![-10.0]; n],
            aggregate_linear: vec![vec![0.0]; n],
        };
        let game = quadratic_game(
            n,
            1,
            costs.clone(),
            vec![0.0; n],
            vec![10.0; n],
            vec![DMatrix::from_element(1, 1, 1.0); n],
            vec![1.0; n],
        )
        .unwrap()
        .with_constants(GameConstants::declared(2.0, 2.1, 0.5, None).unwrap());
        let sol = solve_reference_gne(&game, 1e-11).unwrap();
        for v in &sol.x {
            assert_abs_diff_eq!(*v, sol.x[0], epsilon = 1e-9);
        }
        let en = enumerate_active_sets(&costs, &[0.0; 6], &[10.0; 6], 1.0, 6.0).unwrap();
        assert_abs_diff_eq!(en.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn enumeration_rejects_heterogeneous_slopes() {
        let mut costs = cournot_costs(3);
        costs.cross[1] = 2.0;
        assert!(enumerate_active_sets(&costs, &[0.0; 3], &[10.0; 3], 1.0, 3.0).is_err());
    }
}
