use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gne_harness::compare::{compare, load_bundle};
use gne_harness::error::{HarnessError, Result};
use gne_harness::scenario::{run_to_dir, CertificateFile};
use gne_harness::setup;
use gne_harness::verify::verify_scenario;
use gne_harness::{load_scenario, Scenario};
use nalgebra::SymmetricEigen;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gne",
    version,
    about = "Distributed generalized Nash equilibrium seeking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check step sizes and print the certificate.
    Certify { config: PathBuf },
    /// Run every stage and write the report bundle.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Solve for the variational equilibrium with the centralized oracle.
    Reference { config: PathBuf },
    /// Run the splitting checks and print a pass/fail table.
    Verify { config: PathBuf },
    /// Compare error series of two or more bundles.
    Compare {
        #[arg(required = true, num_args = 2..)]
        bundles: Vec<PathBuf>,
        /// Also write the round-aligned series to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print Laplacian eigenvalues and degrees.
    Spectrum { config: PathBuf },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io {
        path: "<stdout>".into(),
        source: std::io::Error::other(e),
    })?;
    println!("{text}");
    Ok(())
}

fn certify_cmd(path: &Path) -> Result<ExitCode> {
    let s = load_scenario(path)?;
    let setup = setup::build(&s)?;
    let (report, params) = setup::certify_scenario(&s, &setup)?;
    let ok = report.pass || report.metric_certified;
    print_json(&CertificateFile { report, params })?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run_cmd(path: &Path, out: &Path) -> Result<ExitCode> {
    let s = load_scenario(path)?;
    let start = Instant::now();
    let bundle = run_to_dir(&s, out)?;
    let a = &bundle.summary.alg1;
    println!("scenario           {}", bundle.summary.scenario);
    println!("status             {:?}", a.status);
    println!("iterations         {}", a.iterations);
    println!("rounds             {}", a.rounds);
    println!(
        "iterations_to_1pct {}",
        a.iterations_to_1pct.map_or("-".into(), |k| k.to_string())
    );
    if let Some(e) = a.final_normalized_error_pct {
        println!("final_error_pct    {e:.6e}");
    }
    println!("final_kkt          {:.6e}", a.final_kkt_residual);
    if let Some(b) = &bundle.summary.baseline {
        println!(
            "baseline_plateau   {}",
            b.plateau_pct.map_or("-".into(), |p| format!("{p:.6e}"))
        );
    }
    eprintln!("wrote {} in {:.2?}", out.display(), start.elapsed());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ReferenceOutput {
    x: Vec<f64>,
    lambda: Vec<f64>,
    active: Vec<bool>,
    kkt_residual: f64,
    iterations: usize,
    cross_check_max_diff: Option<f64>,
}

fn reference_cmd(path: &Path) -> Result<ExitCode> {
    let s = load_scenario(path)?;
    let setup = setup::build(&s)?;
    let (sol, cross) = setup::reference(&s, &setup)?;
    print_json(&ReferenceOutput {
        x: sol.x,
        lambda: sol.lambda,
        active: sol.active,
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
        cross_check_max_diff: cross,
    })?;
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(path: &Path) -> Result<ExitCode> {
    let s = load_scenario(path)?;
    let report = verify_scenario(&s)?;
    print!("{report}");
    Ok(if report.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn compare_cmd(dirs: &[PathBuf], csv: Option<&Path>) -> Result<ExitCode> {
    let bundles = dirs.iter().map(|d| load_bundle(d)).collect::<Result<Vec<_>>>()?;
    let table = compare(&bundles)?;
    print!("{table}");
    if let Some(p) = csv {
        std::fs::write(p, table.to_csv()?).map_err(|e| HarnessError::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    Ok(ExitCode::SUCCESS)
}

fn spectrum_cmd(path: &Path) -> Result<ExitCode> {
    let s: Scenario = load_scenario(path)?;
    let setup = setup::build(&s)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(setup.lap.matrix().clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(f64::total_cmp);
    let degrees: Vec<f64> = (0..setup.graph.node_count()).map(|i| setup.graph.degree(i)).collect();
    println!("nodes       {}", setup.graph.node_count());
    println!("edges       {}", setup.graph.edges().len());
    println!("lambda2     {}", setup.lap.lambda2());
    println!("lambda_max  {}", setup.lap.lambda_max());
    println!("max_degree  {}", setup.graph.max_degree());
    println!("eigenvalues {eig:?}");
    println!("degrees     {degrees:?}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify { config } => certify_cmd(config),
        Command::Run { config, output } => run_cmd(config, output),
        Command::Reference { config } => reference_cmd(config),
        Command::Verify { config } => verify_cmd(config),
        Command::Compare { bundles, csv } => compare_cmd(bundles, csv.as_deref()),
        Command::Spectrum { config } => spectrum_cmd(config),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
