//! Order statistics across seeds and log-log regret fits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::formats::read_run_csv;

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Quartiles {
    /// `None` for empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            median: quantile_sorted(&v, 0.5),
            q25: quantile_sorted(&v, 0.25),
            q75: quantile_sorted(&v, 0.75),
        })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    Quartiles::of(values).map(|q| q.median)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `ln y` on `ln x`. `None` when any `y` is not positive.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Result<Option<SlopeFit>> {
    if xs.len() != ys.len() {
        return Err(BenchError::Format("fit needs as many y values as x values".into()));
    }
    if xs.len() < 3 {
        return Err(BenchError::Format(format!("fit needs at least 3 points, got {}", xs.len())));
    }
    if xs.iter().any(|&x| !(x > 0.0)) {
        return Err(BenchError::Format("grid points must be positive".into()));
    }
    if ys.iter().any(|&y| !(y > 0.0) || !y.is_finite()) {
        return Ok(None);
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(BenchError::Format("grid points must differ".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let ss_tot: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(Some(SlopeFit { slope, intercept, r2 }))
}

/// Cumulative-regret curves (index `t - 1`) reduced to one median per grid
/// point, then fit.
///
/// For each `T`, runs that stop exactly at `T` are used when there are any;
/// otherwise every longer run contributes its value at round `T`.
pub fn regret_slope_curves(curves: &[Vec<f64>], grid: &[usize]) -> Result<(Vec<f64>, Option<SlopeFit>)> {
    let mut medians = Vec::with_capacity(grid.len());
    for &t in grid {
        if t == 0 {
            return Err(BenchError::Format("grid points must be positive".into()));
        }
        let exact: Vec<f64> = curves.iter().filter(|c| c.len() == t).map(|c| c[t - 1]).collect();
        let values = if exact.is_empty() {
            curves.iter().filter(|c| c.len() >= t).map(|c| c[t - 1]).collect()
        } else {
            exact
        };
        medians.push(median(&values).ok_or_else(|| BenchError::Format(format!("no run reaches T = {t}")))?);
    }
    let xs: Vec<f64> = grid.iter().map(|&t| t as f64).collect();
    let fit = loglog_fit(&xs, &medians)?;
    Ok((medians, fit))
}

/// [`regret_slope_curves`] over run CSVs.
pub fn regret_slope(paths: &[PathBuf], grid: &[usize]) -> Result<(Vec<f64>, Option<SlopeFit>)> {
    let curves = paths.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>>>()?;
    regret_slope_curves(&curves, grid)
}

/// Cumulative regret by round from one run CSV.
pub fn read_curve(path: &Path) -> Result<Vec<f64>> {
    let rows = read_run_csv(path)?;
    let mut by_t = BTreeMap::new();
    for r in rows {
        by_t.insert(r.t, r.cum_regret);
    }
    let curve: Vec<f64> = by_t.values().copied().collect();
    if by_t.keys().copied().ne(1..=curve.len()) {
        return Err(BenchError::Format(format!("{}: rounds are not 1..=T", path.display())));
    }
    Ok(curve)
}

/// `64,128,256` → `[64, 128, 256]`.
pub fn parse_grid(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| BenchError::Format(format!("grid entry {s:?}: {e}")))
        })
        .collect()
}
