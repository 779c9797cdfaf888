//! Splitting checks on one scenario, reported as a pass/fail table.

use std::fmt;

use gne_core::params::assemble_phi;
use gne_core::solver::{fixed_point, NetworkState, RunOptions, Solver};
use gne_core::splitting::{dense_b_skew, operator_b_skew, reduced_step, restricted_monotonicity_probe, SplitState};
use gne_core::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::error::{Result, StageExt};
use crate::scenario::{splitting_summary, FIXED_POINT_TOL, PAIR_TOL, SAMPLED_PAIRS};
use crate::setup;

pub const MAPPING_STEPS: usize = 10;
pub const MAPPING_TOL: f64 = 1e-10;
pub const SKEW_TOL: f64 = 1e-10;
pub const PROBE_SAMPLES: usize = 300;
pub const PROBE_SLACK: f64 = 1e-6;
/// Largest agent count for which dense operators are assembled.
pub const DENSE_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            pass: value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.scenario)?;
        writeln!(f, "{:<32} {:>14} {:>12}  result", "check", "value", "threshold")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<32} {:>14.4e} {:>12.1e}  {}",
                c.name,
                c.value,
                c.threshold,
                if c.pass { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn max_abs_diff(a: &NetworkState, b: &NetworkState) -> f64 {
    [(&a.x, &b.x), (&a.u, &b.u), (&a.z, &b.z), (&a.lambda, &b.lambda)]
        .iter()
        .map(|(p, q)| (*p - *q).amax())
        .fold(0.0, f64::max)
}

/// Runs every splitting check on the scenario's game, graph and resolved parameters.
pub fn verify_scenario(s: &Scenario) -> Result<VerifyReport> {
    let setup = setup::build(s)?;
    let (report, params) = setup::certify_scenario(s, &setup)?;
    let (reference, _) = setup::reference(s, &setup)?;
    let game = &setup.game;
    let lap = &setup.lap;
    let big_n = game.n_agents();
    let fp = fixed_point(game, lap, &reference.x, &reference.lambda).stage("fixed_point")?;
    let mut checks = Vec::new();

    let solver = Solver::new(game, lap, params.clone()).stage("verify")?;
    let init = NetworkState::initial(game, s.run.x0.as_deref()).stage("verify")?;
    let horizon = SAMPLED_PAIRS.iter().max().copied().unwrap_or(0) + 1;
    let mut opts = RunOptions::new(horizon, 0.0, horizon);
    opts.capture_pairs = SAMPLED_PAIRS.to_vec();
    let trace = solver.run(&init, &opts).stage("verify")?;
    let split = splitting_summary(&setup, &params, &trace, &fp)?;
    checks.push(Check::at_most(
        "fixed_point_inclusion",
        split.fixed_point_residual,
        FIXED_POINT_TOL,
    ));
    checks.push(Check::at_most(
        &format!("pair_inclusion ({} pairs)", split.pairs.len()),
        split.max_pair_residual,
        PAIR_TOL,
    ));

    let mut state = init.clone();
    let mut w = SplitState::from_network(&state, big_n).stage("verify")?;
    let mut mapping: f64 = 0.0;
    for k in 1..=MAPPING_STEPS {
        state = solver.step(&state).stage("verify")?;
        w = reduced_step(&w, game, lap, &params).stage("verify")?;
        mapping = mapping.max(max_abs_diff(&state, &w.to_network(big_n, k).stage("verify")?));
    }
    checks.push(Check::at_most("reduced_mapping", mapping, MAPPING_TOL));

    checks.push(Check::at_most("skew_antisymmetry", skew_defect(s, &setup)?, SKEW_TOL));

    let probe = restricted_monotonicity_probe(game, lap, params.c, PROBE_SAMPLES, s.run.seed).stage("verify")?;
    checks.push(Check::at_least(
        "restricted_monotonicity",
        probe,
        report.mu_tilde - PROBE_SLACK,
    ));

    let phi = assemble_phi(&params, lap, game).matrix;
    let asym = (&phi - phi.transpose()).amax();
    checks.push(Check::at_most("phi_symmetric", asym, 0.0));
    checks.push(Check::at_least("phi_lambda_min", report.phi_lambda_min, 0.0));

    Ok(VerifyReport {
        scenario: s.display_name(),
        checks,
    })
}

/// `max |B + Bᵀ|` for small games, otherwise a sampled bilinear defect.
fn skew_defect(s: &Scenario, setup: &setup::Setup) -> Result<f64> {
    let game = &setup.game;
    let lap = &setup.lap;
    let big_n = game.n_agents();
    if big_n <= DENSE_LIMIT {
        let b = dense_b_skew(game, lap).stage("verify")?;
        return Ok((&b + b.transpose()).amax());
    }
    let (nn, nm) = (big_n * game.action_dim(), big_n * game.coupling_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(s.run.seed);
    let mut random = |len: usize| Vector::from_fn(len, |_, _| rng.gen_range(-1.0..1.0));
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let v = SplitState {
            x: random(nn),
            u_perp: random(nn),
            z: random(nm),
            lambda: random(nm),
        };
        let w = SplitState {
            x: random(nn),
            u_perp: random(nn),
            z: random(nm),
            lambda: random(nm),
        };
        let bv = operator_b_skew(&v, game, lap).stage("verify")?;
        let bw = operator_b_skew(&w, game, lap).stage("verify")?;
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let defect = (dot(&v.stacked(), &bw) + dot(&w.stacked(), &bv)).abs();
        worst = worst.max(defect / (1.0 + v.norm() * w.norm()));
    }
    Ok(worst)
}
