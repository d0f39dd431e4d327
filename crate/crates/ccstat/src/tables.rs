//! Tables of the sample-based bound `f(lambda)` for several sample counts,
//! with the known-moment limit as the last column.

use std::fmt::Write as _;
use std::path::Path;

use ccstat_core::concentration::{osvpi_bound, osvpi_threshold, BoundContext};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTable {
    pub sample_sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// `values[i][j]` is `f(lambdas[i])` for `sample_sizes[j]`, absent below that curve's `lambda_min`.
    pub values: Vec<Vec<Option<f64>>>,
    /// Known-moment bound, absent below `sqrt(5/3)`.
    pub limit: Vec<Option<f64>>,
    /// `(N_s, lambda_min, theta)` per sample size.
    pub thresholds: Vec<(usize, f64, f64)>,
}

/// Evenly spaced `lambda` in `[lo, hi]` plus every curve's left end point.
pub fn bound_table(sample_sizes: &[usize], lo: f64, hi: f64, points: usize) -> Result<BoundTable> {
    if !(lo > 0.0 && hi > lo && points >= 2) {
        return Err(Error::Usage(format!(
            "need 0 < lo < hi and at least 2 points, got [{lo}, {hi}] with {points}"
        )));
    }
    let contexts = sample_sizes
        .iter()
        .map(|&n| BoundContext::new(n))
        .collect::<ccstat_core::Result<Vec<_>>>()?;
    let step = (hi - lo) / (points - 1) as f64;
    let mut lambdas: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    lambdas.extend(
        contexts
            .iter()
            .map(BoundContext::lambda_min)
            .chain([osvpi_threshold()])
            .filter(|l| (lo..=hi).contains(l)),
    );
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();

    let values = lambdas
        .iter()
        .map(|&l| {
            contexts
                .iter()
                .map(|c| (l >= c.lambda_min()).then(|| c.f(l)).transpose())
                .collect::<ccstat_core::Result<Vec<_>>>()
        })
        .collect::<ccstat_core::Result<Vec<_>>>()?;
    let limit = lambdas
        .iter()
        .map(|&l| {
            if l > osvpi_threshold() {
                osvpi_bound(l).ok()
            } else if l == osvpi_threshold() {
                Some(1.0 / 6.0)
            } else {
                None
            }
        })
        .collect();
    let thresholds = sample_sizes
        .iter()
        .zip(&contexts)
        .map(|(&n, c)| (n, c.lambda_min(), c.inflection_theta()))
        .collect();
    Ok(BoundTable {
        sample_sizes: sample_sizes.to_vec(),
        lambdas,
        values,
        limit,
        thresholds,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BoundTable {
    /// `lambda,f_N<n>...,f_inf`; empty cells lie below a curve's `lambda_min`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda");
        for n in &self.sample_sizes {
            let _ = write!(out, ",f_N{n}");
        }
        out.push_str(",f_inf\n");
        for ((l, row), lim) in self.lambdas.iter().zip(&self.values).zip(&self.limit) {
            let _ = write!(out, "{l}");
            for v in row {
                let _ = write!(out, ",{}", cell(*v));
            }
            let _ = writeln!(out, ",{}", cell(*lim));
        }
        out
    }

    /// `samples,lambda_min,theta`, with `inf` for the limit.
    pub fn thresholds_csv(&self) -> String {
        let mut out = String::from("samples,lambda_min,theta\n");
        for (n, lmin, theta) in &self.thresholds {
            let _ = writeln!(out, "{n},{lmin},{theta}");
        }
        let _ = writeln!(out, "inf,{},{}", osvpi_threshold(), 1.0 / 3f64.sqrt());
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
        for (name, text) in [("bounds.csv", self.to_csv()), ("thresholds.csv", self.thresholds_csv())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(crate::error::io_err(&path))?;
        }
        Ok(())
    }
}
