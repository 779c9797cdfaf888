//! Turns a validated [`Scenario`] into core objects.

use gne_core::game::{cournot_with_capacity, quadratic_game, COURNOT_CAPACITY};
use gne_core::graph::{build_graph, CommGraph, Laplacian, Topology};
use gne_core::kkt::{enumerate_active_sets, solve_reference_gne, ReferenceSolution};
use gne_core::params::{certify, AlgorithmParams, CertificateReport, CertifySpec};
use gne_core::{AggregativeGame, GameConstants, QuadraticCosts};
use nalgebra::DMatrix;

use crate::config::{AutoOr, GameKind, PerAgent, Scenario, TopologyKind};
use crate::error::{HarnessError, Result, StageExt};

/// Core objects built from one scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub game: AggregativeGame,
    pub graph: CommGraph,
    pub lap: Laplacian,
    /// Cost coefficients, when the game is quadratic (Cournot included).
    pub costs: Option<QuadraticCosts>,
}

fn cournot_costs(n: usize) -> QuadraticCosts {
    QuadraticCosts {
        own: vec![1.0; n],
        cross: vec![1.0; n],
        aggregate: vec![0.0; n],
        own_linear: (1..=n).map(|i| vec![(2 * i - 1) as f64 - 60.0]).collect(),
        aggregate_linear: vec![vec![0.0]; n],
    }
}

fn build_game(s: &Scenario) -> Result<(AggregativeGame, QuadraticCosts)> {
    let n_agents = s.game.n_agents;
    match s.game.kind {
        GameKind::Cournot => {
            let game = cournot_with_capacity(n_agents, s.game.capacity.unwrap_or(COURNOT_CAPACITY)).stage("game")?;
            Ok((game, cournot_costs(n_agents)))
        }
        GameKind::Quadratic => {
            let q = s
                .game
                .quadratic
                .as_ref()
                .ok_or_else(|| HarnessError::config("game.quadratic", "missing"))?;
            let n = q.action_dim;
            let costs = QuadraticCosts {
                own: q.own.expand(n_agents, "game.quadratic.own")?,
                cross: q.cross.expand(n_agents, "game.quadratic.cross")?,
                aggregate: q.aggregate.expand(n_agents, "game.quadratic.aggregate")?,
                own_linear: q.own_linear.clone(),
                aggregate_linear: q
                    .aggregate_linear
                    .clone()
                    .unwrap_or_else(|| vec![vec![0.0; n]; n_agents]),
            };
            let coupling = q
                .coupling
                .iter()
                .enumerate()
                .map(|(i, rows)| {
                    let m = rows.len();
                    if rows.iter().any(|r| r.len() != n) {
                        return Err(HarnessError::config(
                            format!("game.quadratic.coupling[{i}]"),
                            format!("every row must have {n} entries"),
                        ));
                    }
                    Ok(DMatrix::from_fn(m, n, |r, c| rows[r][c]))
                })
                .collect::<Result<Vec<_>>>()?;
            let m = coupling.first().map_or(0, |a| a.nrows());
            let game = quadratic_game(
                n_agents,
                n,
                costs.clone(),
                q.lower.expand(n_agents * n, "game.quadratic.lower")?,
                q.upper.expand(n_agents * n, "game.quadratic.upper")?,
                coupling,
                q.offsets.expand(n_agents * m, "game.quadratic.offsets")?,
            )
            .stage("game")?;
            Ok((game, costs))
        }
    }
}

fn topology(s: &Scenario) -> Topology {
    match s.graph.topology {
        TopologyKind::Star => Topology::Star,
        TopologyKind::Ring => Topology::Ring,
        TopologyKind::Path => Topology::Path,
        TopologyKind::Complete => Topology::Complete,
        TopologyKind::EdgeList => Topology::EdgeList(
            s.graph
                .edges
                .iter()
                .flatten()
                .map(|[a, b]| (a.wrapping_sub(1), b.wrapping_sub(1)))
                .collect(),
        ),
    }
}

/// Builds the game (with constants resolved) and the communication graph.
pub fn build(s: &Scenario) -> Result<Setup> {
    let (game, costs) = build_game(s)?;
    let graph = build_graph(&topology(s), s.game.n_agents, s.graph.weights.as_deref()).stage("graph")?;
    let lap = Laplacian::new(&graph);
    let game = resolve_constants(game, s)?;
    Ok(Setup {
        game,
        graph,
        lap,
        costs: Some(costs),
    })
}

fn resolve_constants(game: AggregativeGame, s: &Scenario) -> Result<AggregativeGame> {
    let spec = &s.game.constants;
    let declared = [&spec.mu, &spec.lfx, &spec.lfu].map(|c| c.value().copied());
    let estimate = if declared.iter().any(Option::is_none) {
        Some(game.estimate_constants(spec.samples, s.run.seed).stage("constants")?)
    } else {
        None
    };
    if let Some(w) = estimate.as_ref().and_then(|e| e.warning.as_ref()) {
        eprintln!("warning: {w}");
    }
    let pick = |v: Option<f64>, est: fn(&GameConstants) -> f64| -> f64 {
        v.unwrap_or_else(|| {
            est(&estimate
                .as_ref()
                .expect("estimated when any constant is auto")
                .constants)
        })
    };
    let mu = pick(declared[0], |c| c.mu);
    let lfx = pick(declared[1], |c| c.lfx);
    let lfu = pick(declared[2], |c| c.lfu);
    // An `auto` l_F defaults to l_F^x + l_F^u.
    let lf = spec.lf.value().copied();
    let constants = GameConstants::declared(mu, lfx, lfu, lf).stage("constants")?;
    Ok(game.with_constants(constants))
}

/// Certification inputs taken from `params`.
pub fn certify_spec(s: &Scenario) -> CertifySpec {
    let p = &s.params;
    let steps = |v: &AutoOr<PerAgent>| {
        v.value().map(|p| match p {
            PerAgent::Uniform(x) => vec![*x],
            PerAgent::List(l) => l.clone(),
        })
    };
    CertifySpec {
        c: p.c,
        delta: p.delta.value().copied(),
        kappa_inv: p.kappa_inv.value().copied(),
        tau_inv: steps(&p.tau_inv),
        upsilon_inv: steps(&p.upsilon_inv),
        alpha_inv: steps(&p.alpha_inv),
        delta_margin: p.delta_margin,
        kappa_fraction: p.kappa_fraction,
    }
}

/// Certificate and fully resolved parameters.
pub fn certify_scenario(s: &Scenario, setup: &Setup) -> Result<(CertificateReport, AlgorithmParams)> {
    certify(&setup.game, &setup.lap, &certify_spec(s)).stage("certify")
}

/// Reference equilibrium, cross-checked by closed-form enumeration when the game allows it.
pub fn reference(s: &Scenario, setup: &Setup) -> Result<(ReferenceSolution, Option<f64>)> {
    let sol = solve_reference_gne(&setup.game, s.run.reference_tol).stage("reference")?;
    let cross = match (&setup.costs, enumeration_data(setup)) {
        (Some(costs), Some((a, lower, upper))) => {
            let b_total = setup.game.total_offset()[0];
            let en = enumerate_active_sets(costs, &lower, &upper, a, b_total).stage("reference")?;
            let diff = sol
                .x
                .iter()
                .zip(&en.x)
                .chain(sol.lambda.iter().zip(&en.lambda))
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            Some(diff)
        }
        _ => None,
    };
    Ok((sol, cross))
}

/// Scalar actions, one coupling row shared by all agents.
fn enumeration_data(setup: &Setup) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let g = &setup.game;
    if g.action_dim() != 1 || g.coupling_dim() != 1 {
        return None;
    }
    let a = g.coupling_block(0)[(0, 0)];
    if (0..g.n_agents()).any(|i| g.coupling_block(i)[(0, 0)] != a) || a == 0.0 {
        return None;
    }
    Some((a, g.lower().to_vec(), g.upper().to_vec()))
}
