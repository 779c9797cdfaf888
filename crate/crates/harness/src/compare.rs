//! Aligns normalized-error series from several bundles on the communication-round axis.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use gne_core::baseline::BaselineRow;
use gne_core::solver::TraceRow;
use serde::{Deserialize, Serialize};

use crate::config::{parse_scenario, Scenario};
use crate::error::{HarnessError, Result};
use crate::scenario::{Summary, ALG1_TRACE, BASELINE_TRACE, RESOLVED_CONFIG, SUMMARY};

/// Normalized-error levels (percent) whose first crossing is reported.
pub const THRESHOLDS: [f64; 3] = [10.0, 1.0, 0.1];

/// One error series; `points` are `(round, error_pct)` in increasing round order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `alg1` or `baseline`.
    pub kind: &'static str,
    pub points: Vec<(usize, f64)>,
}

impl Series {
    pub fn rounds_to(&self, pct: f64) -> Option<usize> {
        self.points.iter().find(|(_, e)| *e < pct).map(|(r, _)| *r)
    }

    pub fn final_point(&self) -> Option<(usize, f64)> {
        self.points.last().copied()
    }

    /// Last recorded error at or before `round`.
    pub fn at(&self, round: usize) -> Option<f64> {
        let idx = self.points.partition_point(|(r, _)| *r <= round);
        idx.checked_sub(1).map(|i| self.points[i].1)
    }

    fn spacing(&self) -> usize {
        self.points
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .max()
            .unwrap_or(1)
            .max(1)
    }
}

/// A bundle directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedBundle {
    pub dir: PathBuf,
    pub resolved: Scenario,
    pub summary: Summary,
    pub alg1: Series,
    pub baseline: Option<Series>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::bundle(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::bundle(path, e))
}

pub fn load_bundle(dir: &Path) -> Result<LoadedBundle> {
    let resolved = parse_scenario(&read(&dir.join(RESOLVED_CONFIG))?)?;
    let summary_path = dir.join(SUMMARY);
    let summary: Summary =
        serde_json::from_str(&read(&summary_path)?).map_err(|e| HarnessError::bundle(&summary_path, e))?;
    let name = summary.scenario.clone();
    let per_iter = summary.alg1.rounds_per_iter;
    let alg1_rows: Vec<TraceRow> = read_rows(&dir.join(ALG1_TRACE))?;
    let alg1 = Series {
        label: format!("{name}/alg1"),
        kind: "alg1",
        points: alg1_rows
            .iter()
            .filter_map(|r| r.normalized_error_pct.map(|e| (r.iter * per_iter, e)))
            .collect(),
    };
    let baseline_path = dir.join(BASELINE_TRACE);
    let baseline = if baseline_path.exists() {
        let rows: Vec<BaselineRow> = read_rows(&baseline_path)?;
        Some(Series {
            label: format!("{name}/baseline"),
            kind: "baseline",
            points: rows
                .iter()
                .filter_map(|r| r.normalized_error_pct.map(|e| (r.rounds, e)))
                .collect(),
        })
    } else {
        None
    };
    Ok(LoadedBundle {
        dir: dir.to_path_buf(),
        resolved,
        summary,
        alg1,
        baseline,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesStats {
    pub label: String,
    pub final_round: usize,
    pub final_error_pct: f64,
    /// First round below each of [`THRESHOLDS`].
    pub rounds_to: Vec<Option<usize>>,
}

/// Differences of one series against the first bundle's series of the same kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub label: String,
    pub against: String,
    pub final_error_pct: f64,
    pub rounds_to: Vec<Option<i64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub stats: Vec<SeriesStats>,
    pub deltas: Vec<Delta>,
    pub grid: Vec<usize>,
    /// `aligned[g][s]`: error of series `s` at `grid[g]`.
    pub aligned: Vec<Vec<Option<f64>>>,
}

/// Compares every series in `bundles`; all bundles must share one game.
pub fn compare(bundles: &[LoadedBundle]) -> Result<Comparison> {
    if bundles.len() < 2 {
        return Err(HarnessError::Comparison(format!(
            "need at least 2 bundles, got {}",
            bundles.len()
        )));
    }
    let game = &bundles[0].resolved.game;
    if let Some(b) = bundles.iter().find(|b| &b.resolved.game != game) {
        return Err(HarnessError::Comparison(format!(
            "{} uses a different game than {}",
            b.dir.display(),
            bundles[0].dir.display()
        )));
    }
    let mut series: Vec<Series> = Vec::new();
    for b in bundles {
        for s in std::iter::once(&b.alg1).chain(b.baseline.as_ref()) {
            let mut s = s.clone();
            let base = s.label.clone();
            let mut copy = 1;
            while series.iter().any(|o| o.label == s.label) {
                copy += 1;
                s.label = format!("{base}#{copy}");
            }
            series.push(s);
        }
    }
    if let Some(empty) = series.iter().find(|s| s.points.is_empty()) {
        return Err(HarnessError::Comparison(format!("{} has no error series", empty.label)));
    }

    let stats: Vec<SeriesStats> = series
        .iter()
        .map(|s| {
            let (final_round, final_error_pct) = s.final_point().unwrap_or((0, f64::NAN));
            SeriesStats {
                label: s.label.clone(),
                final_round,
                final_error_pct,
                rounds_to: THRESHOLDS.iter().map(|t| s.rounds_to(*t)).collect(),
            }
        })
        .collect();
    let first_bundle = 1 + usize::from(bundles[0].baseline.is_some());
    let deltas = stats
        .iter()
        .zip(&series)
        .map(|(s, ser)| {
            let first = series[..first_bundle]
                .iter()
                .position(|f| f.kind == ser.kind)
                .map_or(&stats[0], |i| &stats[i]);
            (s, first)
        })
        .map(|(s, first)| Delta {
            label: s.label.clone(),
            against: first.label.clone(),
            final_error_pct: s.final_error_pct - first.final_error_pct,
            rounds_to: s
                .rounds_to
                .iter()
                .zip(&first.rounds_to)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some(*a as i64 - *b as i64),
                    _ => None,
                })
                .collect(),
        })
        .collect();

    let step = series.iter().map(Series::spacing).max().unwrap_or(1);
    let end = stats.iter().map(|s| s.final_round).max().unwrap_or(0);
    let grid: Vec<usize> = (0..=end.div_ceil(step)).map(|g| g * step).collect();
    let aligned = grid.iter().map(|r| series.iter().map(|s| s.at(*r)).collect()).collect();
    Ok(Comparison {
        stats,
        deltas,
        grid,
        aligned,
    })
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".into(), |x| x.to_string())
}

impl Comparison {
    /// Aligned series as CSV: `round` then one column per series.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["round".to_string()];
        header.extend(self.stats.iter().map(|s| s.label.clone()));
        let err = |e: csv::Error| HarnessError::Comparison(e.to_string());
        w.write_record(&header).map_err(err)?;
        for (r, row) in self.grid.iter().zip(&self.aligned) {
            let mut rec = vec![r.to_string()];
            rec.extend(row.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Comparison(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Comparison(e.to_string()))
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.stats.iter().map(|s| s.label.len()).max().unwrap_or(6).max(6);
        write!(f, "{:<width$} {:>12} {:>14}", "series", "final_round", "final_err_%")?;
        for t in THRESHOLDS {
            write!(f, " {:>12}", format!("rounds<{t}%"))?;
        }
        writeln!(f)?;
        for s in &self.stats {
            write!(
                f,
                "{:<width$} {:>12} {:>14.6e}",
                s.label, s.final_round, s.final_error_pct
            )?;
            for r in &s.rounds_to {
                write!(f, " {:>12}", opt(r))?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(f, "deltas against the first bundle")?;
        for d in &self.deltas {
            write!(f, "{:<width$} {:>12} {:>14.6e}", d.label, "", d.final_error_pct)?;
            for r in &d.rounds_to {
                write!(f, " {:>12}", opt(r))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
