//! Result artifacts: solution and certification JSON, per-row violation CSV,
//! mean-trajectory CSV and the method summary table.

use std::fmt::Write as _;
use std::path::Path;

use ccstat_core::reformulation::RowId;
use ccstat_core::solver::{ConstraintRef, KktResiduals, Solution, Status};
use ccstat_core::verify::CertificationReport;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::Method;
use crate::json;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFile {
    Optimal,
    Infeasible,
    IterLimit,
}

impl From<Status> for StatusFile {
    fn from(s: Status) -> Self {
        match s {
            Status::Optimal => StatusFile::Optimal,
            Status::Infeasible => StatusFile::Infeasible,
            Status::IterLimit => StatusFile::IterLimit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktFile {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_infeasibility: f64,
}

// JSON has no infinity; an unbounded residual is written as f64::MAX.
fn finite(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

impl From<KktResiduals> for KktFile {
    fn from(k: KktResiduals) -> Self {
        Self {
            primal: finite(k.primal),
            stationarity: finite(k.stationarity),
            complementarity: finite(k.complementarity),
            dual_infeasibility: finite(k.dual_infeasibility),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema: u32,
    pub method: Method,
    pub status: StatusFile,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    pub cost: f64,
    pub solve_seconds: f64,
    pub kkt: KktFile,
    /// Number of disturbance samples the program was built from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violated: Option<String>,
    pub newton_steps: usize,
}

impl SolutionFile {
    pub fn new(method: Method, sol: &Solution, samples: Option<usize>, seed: Option<u64>) -> Self {
        Self {
            schema: SCHEMA,
            method,
            status: sol.status.into(),
            u: sol.u.iter().copied().collect(),
            lambda: sol.lambda.as_ref().map(|l| l.iter().copied().collect()),
            cost: sol.cost,
            solve_seconds: sol.solve_seconds,
            kkt: sol.kkt.into(),
            samples,
            seed,
            violated: sol.violated.map(describe),
            newton_steps: sol.diagnostics.newton_steps,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = json::read(path)?;
        if file.schema != SCHEMA {
            return Err(Error::Format {
                path: path.into(),
                message: format!("unsupported schema {}, expected {SCHEMA}", file.schema),
            });
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write(path, self)
    }

    pub fn input(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }
}

/// Human-readable name of a constraint.
pub fn describe(c: ConstraintRef) -> String {
    match c {
        ConstraintRef::Target(r) => format!("target row {r}"),
        ConstraintRef::Scenario { row, sample } => format!("target row {row} at sample {sample}"),
        ConstraintRef::InputLower(j) => format!("lower input bound {j}"),
        ConstraintRef::InputUpper(j) => format!("upper input bound {j}"),
        ConstraintRef::InputRow(p) => format!("input half-space {p}"),
        ConstraintRef::RiskBudget => "risk budget".into(),
        ConstraintRef::LambdaFloor(r) => format!("lambda floor of row {r}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowRate {
    pub step: usize,
    pub index: usize,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationFile {
    pub schema: u32,
    pub trials: u64,
    pub joint_satisfaction: f64,
    pub stderr: f64,
    pub seed: u64,
    pub violations: u64,
    pub per_row: Vec<RowRate>,
}

impl From<&CertificationReport> for CertificationFile {
    fn from(r: &CertificationReport) -> Self {
        Self {
            schema: SCHEMA,
            trials: r.trials,
            joint_satisfaction: r.joint_satisfaction,
            stderr: r.stderr,
            seed: r.seed,
            violations: r.violations,
            per_row: r
                .per_row_violation
                .iter()
                .map(|&(id, violation)| RowRate {
                    step: id.step,
                    index: id.index,
                    violation,
                })
                .collect(),
        }
    }
}

impl From<&CertificationFile> for CertificationReport {
    fn from(f: &CertificationFile) -> Self {
        Self {
            trials: f.trials,
            joint_satisfaction: f.joint_satisfaction,
            per_row_violation: f
                .per_row
                .iter()
                .map(|r| {
                    (
                        RowId {
                            step: r.step,
                            index: r.index,
                        },
                        r.violation,
                    )
                })
                .collect(),
            stderr: f.stderr,
            seed: f.seed,
            violations: f.violations,
        }
    }
}

impl CertificationFile {
    pub fn load(path: &Path) -> Result<Self> {
        json::read(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write(path, self)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.into(),
        source,
    })
}

fn csv_rows<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(crate::error::io_err(path))
}

/// One line per target row: `step,index,violation_rate`.
pub fn write_violations(path: &Path, report: &CertificationReport) -> Result<()> {
    let header = ["step", "index", "violation_rate"].map(String::from);
    csv_rows(
        path,
        &header,
        report
            .per_row_violation
            .iter()
            .map(|(id, v)| [id.step.to_string(), id.index.to_string(), v.to_string()]),
    )
}

/// `k, x1..xn, std1..stdn` for `k = 0..=N`.
pub fn write_trajectory(path: &Path, states: &[(DVector<f64>, DVector<f64>)]) -> Result<()> {
    let n = states.first().map_or(0, |s| s.0.len());
    let mut header = vec!["k".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("std{i}")));
    csv_rows(
        path,
        &header,
        states.iter().enumerate().map(|(k, (x, s))| {
            std::iter::once(k.to_string())
                .chain(x.iter().map(f64::to_string))
                .chain(s.iter().map(f64::to_string))
                .collect::<Vec<_>>()
        }),
    )
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub samples: Option<usize>,
    pub status: StatusFile,
    pub cost: f64,
    pub solve_seconds: f64,
    pub satisfaction: Option<f64>,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let header = ["method", "samples", "status", "cost", "solve_seconds", "satisfaction"].map(String::from);
    csv_rows(
        path,
        &header,
        rows.iter().map(|r| {
            [
                r.method.to_string(),
                r.samples.map(|v| v.to_string()).unwrap_or_default(),
                status_name(r.status).to_string(),
                r.cost.to_string(),
                r.solve_seconds.to_string(),
                r.satisfaction.map(|v| v.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

fn status_name(s: StatusFile) -> &'static str {
    match s {
        StatusFile::Optimal => "optimal",
        StatusFile::Infeasible => "infeasible",
        StatusFile::IterLimit => "iter_limit",
    }
}

/// Aligned text version of the summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<10} {:>8} {:>11} {:>14} {:>11} {:>13}\n",
        "method", "samples", "status", "cost", "solve [s]", "satisfaction"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>11} {:>14.6e} {:>11.4} {:>13}",
            r.method.to_string(),
            r.samples.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            status_name(r.status),
            r.cost,
            r.solve_seconds,
            r.satisfaction.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    out
}
