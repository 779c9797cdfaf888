//! Runs a scenario end to end and persists the report bundle.

use std::fs;
use std::path::Path;

use gne_core::baseline::{baseline_run, build_mixing, BaselineOptions, BaselineTrace};
use gne_core::kkt::ReferenceSolution;
use gne_core::params::{AlgorithmParams, CertificateReport};
use gne_core::solver::{fixed_point, FejerSummary, NetworkState, RunOptions, RunStatus, RunTrace, Schedule, Solver};
use gne_core::splitting::{fb_inclusion_residual, SplitState};
use gne_core::GneError;
use serde::{Deserialize, Serialize};

use crate::config::{AutoOr, PerAgent, Scenario, ScheduleKind};
use crate::error::{HarnessError, Result, StageExt};
use crate::setup::{self, Setup};

pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const SUMMARY: &str = "summary.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const REFERENCE: &str = "reference.json";
pub const ALG1_TRACE: &str = "alg1_trace.csv";
pub const ALG1_ACTIONS: &str = "alg1_actions.csv";
pub const BASELINE_TRACE: &str = "baseline_trace.csv";
pub const BASELINE_ACTIONS: &str = "baseline_actions.csv";
pub const ERROR: &str = "error.json";

/// Iterations `k` whose pairs `(ϖ_k, ϖ_{k+1})` are checked against the splitting inclusion.
pub const SAMPLED_PAIRS: [usize; 5] = [0, 1, 10, 100, 1000];
pub const PAIR_TOL: f64 = 1e-8;
pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const CROSS_CHECK_TOL: f64 = 1e-8;
/// Recorded baseline rows averaged into the plateau level.
pub const PLATEAU_WINDOW: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFlags {
    pub pass: bool,
    pub metric_certified: bool,
    pub c_ok: bool,
    pub delta_ok: bool,
    pub kappa_ok: bool,
    pub steps_ok: bool,
    pub phi_psd_ok: bool,
    pub lambda2: f64,
    pub lambda_max: f64,
    pub mu_tilde: f64,
    pub beta_inv: f64,
    pub delta_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub lambda: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Largest componentwise gap to the active-set enumeration, when it applies.
    pub cross_check_max_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alg1Summary {
    pub status: RunStatus,
    pub iterations: usize,
    pub rounds_per_iter: usize,
    pub rounds: usize,
    pub iterations_to_1pct: Option<usize>,
    pub rounds_to_1pct: Option<usize>,
    pub final_normalized_error_pct: Option<f64>,
    pub final_kkt_residual: f64,
    pub final_consensus_u: f64,
    pub final_consensus_lambda: f64,
    /// `max |σ(u_k) − σ(x_k)| / (1 + ‖x_k‖)` over every iterate.
    pub max_sigma_gap_ratio: f64,
    pub fejer: Option<FejerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResidual {
    pub iter: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingSummary {
    pub pairs: Vec<PairResidual>,
    pub max_pair_residual: f64,
    pub pairs_ok: bool,
    pub fixed_point_residual: f64,
    pub fixed_point_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub nu: usize,
    pub tau: f64,
    pub mixing_eps: f64,
    pub rounds_per_update: usize,
    pub updates: usize,
    pub rounds: usize,
    pub plateau_pct: Option<f64>,
    pub final_normalized_error_pct: Option<f64>,
    /// Baseline error at the first recorded round at or after the alg1 run's last round.
    pub error_at_alg1_final_round_pct: Option<f64>,
    pub plateau_above_alg1: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub n_agents: usize,
    pub certificate: CertificateFlags,
    pub reference: ReferenceSummary,
    pub alg1: Alg1Summary,
    pub splitting: SplittingSummary,
    pub baseline: Option<BaselineSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub report: CertificateReport,
    pub params: AlgorithmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
    pub exit_code: i32,
}

/// Everything one scenario run produces.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    /// The input with every `auto` value replaced by what was used.
    pub resolved: Scenario,
    pub certificate: CertificateReport,
    pub params: AlgorithmParams,
    pub reference: ReferenceSolution,
    pub alg1: RunTrace,
    pub baseline: Option<BaselineTrace>,
    pub summary: Summary,
}

#[derive(Debug, Default)]
struct Partial {
    resolved: Option<Scenario>,
    certificate: Option<CertificateFile>,
    alg1: Option<RunTrace>,
}

/// Runs every stage in memory.
pub fn run_scenario(s: &Scenario) -> Result<ReportBundle> {
    execute(s, &mut Partial::default())
}

/// Runs every stage and writes the bundle into `dir`.
///
/// On failure, whatever was produced before the failing stage is written
/// together with `error.json`.
pub fn run_to_dir(s: &Scenario, dir: &Path) -> Result<ReportBundle> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut partial = Partial::default();
    match execute(s, &mut partial) {
        Ok(bundle) => {
            write_bundle(&bundle, dir)?;
            Ok(bundle)
        }
        Err(e) => {
            write_partial(&partial, dir, &e)?;
            Err(e)
        }
    }
}

fn schedule(kind: ScheduleKind) -> Schedule {
    match kind {
        ScheduleKind::Serial => Schedule::Serial,
        ScheduleKind::Parallel => Schedule::Parallel,
    }
}

/// Copy of `s` with constants, `δ`, `κ⁻¹` and the inverse step sizes pinned.
pub fn resolve(s: &Scenario, setup: &Setup, report: &CertificateReport, params: &AlgorithmParams) -> Scenario {
    let mut r = s.clone();
    r.name = Some(s.display_name());
    if let Some(c) = setup.game.constants() {
        let k = &mut r.game.constants;
        k.mu = AutoOr::Value(c.mu);
        k.lfx = AutoOr::Value(c.lfx);
        k.lfu = AutoOr::Value(c.lfu);
        k.lf = AutoOr::Value(c.lf);
    }
    let inv = &report.inverses;
    let p = &mut r.params;
    p.delta = AutoOr::Value(params.delta);
    p.kappa_inv = AutoOr::Value(inv.kappa_inv);
    p.tau_inv = AutoOr::Value(PerAgent::compact(&inv.tau_inv));
    p.upsilon_inv = AutoOr::Value(PerAgent::compact(&inv.upsilon_inv));
    p.alpha_inv = AutoOr::Value(PerAgent::compact(&inv.alpha_inv));
    r
}

fn certification_failure(report: &CertificateReport) -> HarnessError {
    HarnessError::Stage {
        stage: "certify",
        source: GneError::Certification {
            message: format!(
                "lambda_min(Phi) = {:.6} does not exceed 1/(2 beta) = {:.6} and the step bounds fail at agents {:?}",
                report.phi_lambda_min, report.delta_min, report.agents_over_bounds
            ),
            min_c: None,
        },
    }
}

fn execute(s: &Scenario, partial: &mut Partial) -> Result<ReportBundle> {
    s.validate()?;
    let setup = setup::build(s)?;
    let (certificate, params) = setup::certify_scenario(s, &setup)?;
    let resolved = resolve(s, &setup, &certificate, &params);
    partial.resolved = Some(resolved.clone());
    partial.certificate = Some(CertificateFile {
        report: certificate.clone(),
        params: params.clone(),
    });
    if !s.params.fully_pinned() && !certificate.pass && !certificate.metric_certified {
        return Err(certification_failure(&certificate));
    }

    let (reference, cross_check) = setup::reference(s, &setup)?;
    if let Some(d) = cross_check.filter(|d| !(*d <= CROSS_CHECK_TOL)) {
        return Err(HarnessError::Stage {
            stage: "reference",
            source: GneError::Oracle(format!("oracles disagree by {d:e}")),
        });
    }
    let fp = fixed_point(&setup.game, &setup.lap, &reference.x, &reference.lambda).stage("fixed_point")?;

    let solver = Solver::new(&setup.game, &setup.lap, params.clone())
        .stage("run")?
        .with_schedule(schedule(s.run.schedule));
    let init = NetworkState::initial(&setup.game, s.run.x0.as_deref()).stage("run")?;
    let mut opts = RunOptions::new(s.run.max_iter, s.run.tol, s.run.record_every);
    opts.reference = Some(reference.x_vector());
    opts.fixed_point = Some(fp.clone());
    opts.fejer_check = s.run.fejer_check;
    opts.capture_pairs = SAMPLED_PAIRS.to_vec();
    let alg1 = match solver.run(&init, &opts) {
        Ok(t) => t,
        Err(f) => {
            partial.alg1 = Some(*f.trace);
            return Err(f.error).stage("run");
        }
    };
    let splitting = splitting_summary(&setup, &params, &alg1, &fp)?;

    let baseline = match &s.baseline {
        Some(b) => {
            let mixing = build_mixing(&setup.lap, b.mixing_eps).stage("baseline")?;
            let opts = BaselineOptions {
                nu: b.nu,
                tau: b.tau,
                max_updates: b.max_updates,
                record_every: b.record_every,
            };
            Some(baseline_run(&setup.game, &mixing, &opts, Some(&reference.x_vector())).stage("baseline")?)
        }
        None => None,
    };

    let summary = Summary {
        scenario: resolved.display_name(),
        n_agents: setup.game.n_agents(),
        certificate: certificate_flags(&certificate),
        reference: ReferenceSummary {
            lambda: reference.lambda.clone(),
            kkt_residual: reference.kkt_residual,
            iterations: reference.iterations,
            cross_check_max_diff: cross_check,
        },
        alg1: alg1_summary(&alg1)?,
        splitting,
        baseline: s
            .baseline
            .as_ref()
            .zip(baseline.as_ref())
            .map(|(spec, t)| baseline_summary(spec.nu, spec.tau, spec.mixing_eps, t, &alg1)),
    };
    Ok(ReportBundle {
        resolved,
        certificate,
        params,
        reference,
        alg1,
        baseline,
        summary,
    })
}

fn certificate_flags(r: &CertificateReport) -> CertificateFlags {
    CertificateFlags {
        pass: r.pass,
        metric_certified: r.metric_certified,
        c_ok: r.c_ok,
        delta_ok: r.delta_ok,
        kappa_ok: r.kappa_ok,
        steps_ok: r.steps_ok,
        phi_psd_ok: r.phi_psd_ok,
        lambda2: r.lambda2,
        lambda_max: r.lambda_max,
        mu_tilde: r.mu_tilde,
        beta_inv: r.beta_inv,
        delta_min: r.delta_min,
    }
}

fn alg1_summary(t: &RunTrace) -> Result<Alg1Summary> {
    let last = t.rows.last().ok_or_else(|| HarnessError::Stage {
        stage: "run",
        source: GneError::Domain("run recorded no rows".into()),
    })?;
    let to_1pct = t.first_below(1.0);
    Ok(Alg1Summary {
        status: t.status.clone(),
        iterations: t.iterations,
        rounds_per_iter: t.rounds_per_iter,
        rounds: t.iterations * t.rounds_per_iter,
        iterations_to_1pct: to_1pct,
        rounds_to_1pct: to_1pct.map(|k| k * t.rounds_per_iter),
        final_normalized_error_pct: last.normalized_error_pct,
        final_kkt_residual: last.kkt_residual,
        final_consensus_u: last.consensus_u,
        final_consensus_lambda: last.consensus_lambda,
        max_sigma_gap_ratio: t.max_sigma_ratio,
        fejer: t.fejer.clone(),
    })
}

/// Inclusion residuals on the captured pairs and at the fixed point.
pub fn splitting_summary(
    setup: &Setup,
    params: &AlgorithmParams,
    trace: &RunTrace,
    fp: &NetworkState,
) -> Result<SplittingSummary> {
    let big_n = setup.game.n_agents();
    let residual = |a: &NetworkState, b: &NetworkState| -> Result<f64> {
        let wa = SplitState::from_network(a, big_n).stage("splitting")?;
        let wb = SplitState::from_network(b, big_n).stage("splitting")?;
        fb_inclusion_residual(&wa, &wb, &setup.game, &setup.lap, params).stage("splitting")
    };
    let pairs = trace
        .captured
        .iter()
        .map(|(a, b)| {
            Ok(PairResidual {
                iter: a.k,
                residual: residual(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_pair_residual = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    let fixed_point_residual = residual(fp, fp)?;
    Ok(SplittingSummary {
        pairs_ok: pairs.iter().all(|p| p.residual <= PAIR_TOL),
        pairs,
        max_pair_residual,
        fixed_point_ok: fixed_point_residual <= FIXED_POINT_TOL,
        fixed_point_residual,
    })
}

fn baseline_summary(nu: usize, tau: f64, eps: f64, t: &BaselineTrace, alg1: &RunTrace) -> BaselineSummary {
    let plateau = t.plateau(PLATEAU_WINDOW);
    let alg1_rounds = alg1.iterations * alg1.rounds_per_iter;
    let alg1_final = alg1.rows.last().and_then(|r| r.normalized_error_pct);
    let last = t.rows.last();
    BaselineSummary {
        nu,
        tau,
        mixing_eps: eps,
        rounds_per_update: t.rounds_per_update,
        updates: last.map_or(0, |r| r.update),
        rounds: last.map_or(0, |r| r.rounds),
        plateau_pct: plateau,
        final_normalized_error_pct: last.and_then(|r| r.normalized_error_pct),
        error_at_alg1_final_round_pct: t
            .rows
            .iter()
            .find(|r| r.rounds >= alg1_rounds)
            .and_then(|r| r.normalized_error_pct),
        plateau_above_alg1: plateau.zip(alg1_final).map(|(p, a)| p > 0.0 && p > a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::bundle(path, e))?;
    text.push('\n');
    write_file(path, &text)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::bundle(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::bundle(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Wide table: two index columns then one column per action coordinate.
fn write_actions(path: &Path, index: [&str; 2], rows: &[(usize, usize, &[f64])], n_agents: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::bundle(path, e))?;
    let width = rows.first().map_or(0, |r| r.2.len());
    let n = width.checked_div(n_agents).unwrap_or(1).max(1);
    let mut header: Vec<String> = index.iter().map(|s| s.to_string()).collect();
    header.extend((0..width).map(|c| {
        if n == 1 {
            format!("x_{}", c + 1)
        } else {
            format!("x_{}_{}", c / n + 1, c % n + 1)
        }
    }));
    w.write_record(&header).map_err(|e| HarnessError::bundle(path, e))?;
    for (a, b, x) in rows {
        let mut rec = vec![a.to_string(), b.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| HarnessError::bundle(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn write_alg1(dir: &Path, t: &RunTrace, n_agents: usize) -> Result<()> {
    write_rows(&dir.join(ALG1_TRACE), &t.rows)?;
    let rows: Vec<(usize, usize, &[f64])> = t
        .rows
        .iter()
        .zip(&t.actions)
        .map(|(r, x)| (r.iter, r.iter * t.rounds_per_iter, x.as_slice()))
        .collect();
    write_actions(&dir.join(ALG1_ACTIONS), ["iter", "round"], &rows, n_agents)
}

/// Writes every bundle file into `dir`.
pub fn write_bundle(b: &ReportBundle, dir: &Path) -> Result<()> {
    write_file(&dir.join(RESOLVED_CONFIG), &b.resolved.to_toml()?)?;
    write_json(
        &dir.join(CERTIFICATE),
        &CertificateFile {
            report: b.certificate.clone(),
            params: b.params.clone(),
        },
    )?;
    write_json(&dir.join(REFERENCE), &b.reference)?;
    write_alg1(dir, &b.alg1, b.summary.n_agents)?;
    if let Some(t) = &b.baseline {
        write_rows(&dir.join(BASELINE_TRACE), &t.rows)?;
        let rows: Vec<(usize, usize, &[f64])> = t
            .rows
            .iter()
            .zip(&t.actions)
            .map(|(r, x)| (r.update, r.rounds, x.as_slice()))
            .collect();
        write_actions(
            &dir.join(BASELINE_ACTIONS),
            ["update", "round"],
            &rows,
            b.summary.n_agents,
        )?;
    }
    write_json(&dir.join(SUMMARY), &b.summary)
}

fn write_partial(p: &Partial, dir: &Path, e: &HarnessError) -> Result<()> {
    if let Some(r) = &p.resolved {
        write_file(&dir.join(RESOLVED_CONFIG), &r.to_toml()?)?;
    }
    if let Some(c) = &p.certificate {
        write_json(&dir.join(CERTIFICATE), c)?;
    }
    if let Some(t) = &p.alg1 {
        let n_agents = p.resolved.as_ref().map_or(0, |r| r.game.n_agents);
        write_alg1(dir, t, n_agents)?;
    }
    let stage = match e {
        HarnessError::Stage { stage, .. } => stage.to_string(),
        HarnessError::Config { .. } => "config".into(),
        _ => "io".into(),
    };
    write_json(
        &dir.join(ERROR),
        &StageError {
            stage,
            message: e.to_string(),
            exit_code: e.exit_code(),
        },
    )
}
