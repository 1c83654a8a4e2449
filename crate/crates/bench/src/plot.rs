//! Plot-ready TSV tables (`x, median, q25, q75`) from a finished sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{BenchError, Result};
use crate::formats::{read_json, write_atomic};
use crate::runner::{CellStatus, Manifest, RunSummary};
use crate::stats::{read_curve, Quartiles};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotOutput {
    pub written: Vec<PathBuf>,
    /// Figures left out, with the reason.
    pub skipped: Vec<String>,
}

/// Renders `(x, quartiles)` rows.
pub fn tsv(rows: &[(f64, Quartiles)]) -> String {
    let mut out = String::from("x\tmedian\tq25\tq75\n");
    for (x, q) in rows {
        writeln!(out, "{x}\t{}\t{}\t{}", q.median, q.q25, q.q75).expect("string write");
    }
    out
}

/// Quartiles across curves at every round they all share.
pub fn curve_quartiles(curves: &[Vec<f64>]) -> Vec<(f64, Quartiles)> {
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let column: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            ((i + 1) as f64, Quartiles::of(&column).expect("nonempty column"))
        })
        .collect()
}

/// Writes `plots/` next to the manifest:
///
/// - `regret_vs_t_T<T>.tsv`: cumulative regret by round, one file per setting;
/// - `risk_vs_T.tsv`: final risk by setting;
/// - `coverability.tsv`: the per-layer coverability of the environment.
///
/// A figure with a failed or missing cell is skipped with a warning.
pub fn emit_plotdata(manifest_path: &Path) -> Result<PlotOutput> {
    let manifest: Manifest = read_json(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let dir = root.join("plots");
    std::fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    let mut out = PlotOutput::default();
    let skip = |name: String, why: String, out: &mut PlotOutput| {
        warn!("skipping {name}: {why}");
        out.skipped.push(format!("{name}: {why}"));
    };

    let mut risk_rows = Vec::new();
    let mut risk_ok = true;
    for (s, setting) in manifest.settings.iter().enumerate() {
        let name = format!("regret_vs_t_T{}.tsv", setting.iterations);
        let cells: Vec<_> = manifest.cells.iter().filter(|c| c.setting == s).collect();
        if cells.is_empty() {
            skip(name, "no cells".into(), &mut out);
            risk_ok = false;
            continue;
        }
        let loaded: Result<Vec<(Vec<f64>, f64)>> = cells
            .iter()
            .map(|c| {
                if c.status != CellStatus::Ok {
                    return Err(BenchError::Format(format!("cell {} failed", c.run_id)));
                }
                let curve = read_curve(&root.join(format!("runs/{}.csv", c.run_id)))?;
                let summary: RunSummary = read_json(&root.join(format!("runs/{}.json", c.run_id)))?;
                Ok((curve, summary.risk))
            })
            .collect();
        match loaded {
            Ok(runs) => {
                let curves: Vec<Vec<f64>> = runs.iter().map(|r| r.0.clone()).collect();
                let risks: Vec<f64> = runs.iter().map(|r| r.1).collect();
                let path = dir.join(&name);
                write_atomic(&path, tsv(&curve_quartiles(&curves)).as_bytes())?;
                out.written.push(path);
                risk_rows.push((setting.iterations as f64, Quartiles::of(&risks).expect("nonempty")));
            }
            Err(e) => {
                skip(name, e.to_string(), &mut out);
                risk_ok = false;
            }
        }
    }
    if risk_ok && !risk_rows.is_empty() {
        let path = dir.join("risk_vs_T.tsv");
        write_atomic(&path, tsv(&risk_rows).as_bytes())?;
        out.written.push(path);
    } else {
        skip("risk_vs_T.tsv".into(), "missing cells".into(), &mut out);
    }

    let cov: Vec<(f64, Quartiles)> = manifest
        .environment
        .per_layer
        .iter()
        .enumerate()
        .map(|(h, &v)| {
            (
                h as f64,
                Quartiles {
                    median: v,
                    q25: v,
                    q75: v,
                },
            )
        })
        .collect();
    let path = dir.join("coverability.tsv");
    write_atomic(&path, tsv(&cov).as_bytes())?;
    out.written.push(path);
    Ok(out)
}
