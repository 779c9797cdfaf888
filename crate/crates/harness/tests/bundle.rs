use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gne_harness::compare::{compare, load_bundle};
use gne_harness::scenario::{run_scenario, run_to_dir, StageError, ALG1_TRACE, ERROR, RESOLVED_CONFIG};
use gne_harness::{load_scenario, parse_scenario, HarnessError};

const AUTO5: &str = r#"
[game]
kind = "cournot"
n_agents = 5
capacity = 5.0

[graph]
topology = "ring"

[params]
c = 4.0

[run]
max_iter = 40000
tol = 1e-6
record_every = 50
seed = 3

[baseline]
nu = 20
tau = 0.01
mixing_eps = 0.3
max_updates = 200
"#;

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.cfg"))
}

fn gne(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gne")).args(args).output().unwrap()
}

#[test]
fn resolved_config_reproduces_bundle() {
    let s = parse_scenario(AUTO5).unwrap();
    let first = run_scenario(&s).unwrap();
    assert!(first.certificate.pass);
    let again = parse_scenario(&first.resolved.to_toml().unwrap()).unwrap();
    assert_eq!(again, first.resolved);
    assert!(again.params.fully_pinned());
    let second = run_scenario(&again).unwrap();
    assert_eq!(second.summary, first.summary);
    assert_eq!(second.alg1.rows, first.alg1.rows);
    assert_eq!(second.params, first.params);
    assert_eq!(second.baseline, first.baseline);
    assert_eq!(second.resolved, first.resolved);
}

#[test]
fn summary_numbers_come_from_the_traces() {
    let s = parse_scenario(AUTO5).unwrap();
    let b = run_scenario(&s).unwrap();
    let last = b.alg1.rows.last().unwrap();
    assert_eq!(b.summary.alg1.final_kkt_residual, last.kkt_residual);
    assert_eq!(b.summary.alg1.iterations, last.iter);
    assert_eq!(b.summary.alg1.iterations_to_1pct, b.alg1.first_below(1.0));
    assert_eq!(b.summary.alg1.rounds, 2 * last.iter);
    let base = b.summary.baseline.as_ref().unwrap();
    assert_eq!(base.rounds, 2 * 20 * 200);
    assert_eq!(base.plateau_pct, b.baseline.as_ref().unwrap().plateau(30));
}

#[test]
fn bundled_scenarios_load() {
    for name in ["star20", "ring20", "ring20_x10", "star20_baseline", "ring20_baseline"] {
        let s = load_scenario(&scenario_path(name)).unwrap();
        assert_eq!(s.display_name(), name);
        assert_eq!(s.game.n_agents, 20);
        assert!(s.params.fully_pinned());
    }
    let star = load_scenario(&scenario_path("star20")).unwrap();
    assert_eq!(star.params.c, 0.5);
    assert_eq!(star.game.constants.mu.value(), Some(&1.0));
    assert_eq!(star.game.constants.lfu.value(), Some(&1.0));
    let base = load_scenario(&scenario_path("star20_baseline"))
        .unwrap()
        .baseline
        .unwrap();
    assert_eq!((base.nu, base.tau, base.mixing_eps), (200, 0.01, 0.05));
}

#[test]
fn compare_aligns_and_rejects_other_games() {
    let dir = tempfile::tempdir().unwrap();
    let s = parse_scenario(AUTO5).unwrap();
    run_to_dir(&s, &dir.path().join("a")).unwrap();
    let mut path = s.clone();
    path.graph.topology = gne_harness::config::TopologyKind::Path;
    path.name = Some("path5".into());
    run_to_dir(&path, &dir.path().join("p")).unwrap();
    let mut bigger = s.clone();
    bigger.game.n_agents = 6;
    run_to_dir(&bigger, &dir.path().join("b")).unwrap();

    let a = load_bundle(&dir.path().join("a")).unwrap();
    let same = compare(&[a.clone(), a.clone()]).unwrap();
    assert_eq!(same.stats.len(), 4);
    assert!(same.deltas.iter().all(|d| d.final_error_pct == 0.0));
    assert!(same
        .deltas
        .iter()
        .all(|d| d.rounds_to.iter().all(|r| *r == Some(0) || r.is_none())));
    assert_eq!(same.deltas[3].against, "scenario/baseline");

    let p = load_bundle(&dir.path().join("p")).unwrap();
    let mixed = compare(&[a.clone(), p]).unwrap();
    assert_eq!(mixed.grid.len(), mixed.aligned.len());
    assert!(mixed.grid.windows(2).all(|w| w[1] > w[0]));
    let csv = mixed.to_csv().unwrap();
    assert!(csv.starts_with("round,scenario/alg1,scenario/baseline,path5/alg1,path5/baseline\n"));

    let b = load_bundle(&dir.path().join("b")).unwrap();
    assert!(matches!(compare(&[a.clone(), b]), Err(HarnessError::Comparison(_))));
    assert!(matches!(compare(&[a]), Err(HarnessError::Comparison(_))));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    };

    let ok = write("auto5.cfg", AUTO5);
    let out_dir = dir.path().join("out").to_string_lossy().into_owned();
    assert_eq!(gne(&["run", &ok, "-o", &out_dir]).status.code(), Some(0));
    assert!(Path::new(&out_dir).join(RESOLVED_CONFIG).exists());
    assert_eq!(gne(&["certify", &ok]).status.code(), Some(0));
    assert_eq!(gne(&["verify", &ok]).status.code(), Some(0));
    assert_eq!(gne(&["spectrum", &ok]).status.code(), Some(0));

    let weak = write("weak.cfg", &AUTO5.replace("c = 4.0", "c = 0.01"));
    let out = gne(&["certify", &weak]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("certif"));

    let wild = AUTO5.replace(
        "c = 4.0",
        "c = 4.0\ndelta = 1.0\nkappa_inv = 1e-300\ntau_inv = 1.0\nupsilon_inv = 1.0\nalpha_inv = 1.0",
    );
    let wild = write("wild.cfg", &wild);
    let bad_dir = dir.path().join("bad");
    let out = gne(&["run", &wild, "-o", &bad_dir.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let err: StageError = serde_json::from_str(&fs::read_to_string(bad_dir.join(ERROR)).unwrap()).unwrap();
    assert_eq!(err.stage, "run");
    assert_eq!(err.exit_code, 3);
    assert!(bad_dir.join(ALG1_TRACE).exists());

    let broken = write("broken.cfg", "[graph]\ntopology = \"ring\"\n");
    let out = gne(&["run", &broken, "-o", &out_dir]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`game`"));
}

#[test]
fn reference_prints_structured_output() {
    let out = gne(&["reference", &scenario_path("star20").to_string_lossy()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["x"].as_array().unwrap().len(), 20);
    assert!((v["lambda"][0].as_f64().unwrap() - 49.8).abs() < 1e-8);
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-11);
    assert!(v["cross_check_max_diff"].as_f64().unwrap() <= 1e-8);
}
