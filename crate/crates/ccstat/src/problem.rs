//! Problem files: a versioned JSON document holding a [`ProblemSpec`] and,
//! optionally, the disturbance model used to generate samples and certify.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "system": { "A": [[1.0]], "B": [[1.0]] },
//!   "horizon": 1,
//!   "x0": [0.0],
//!   "input_box": { "lo": [-1.0], "hi": [1.0] },
//!   "targets": [{ "step": 1, "G": [[1.0]], "h": [0.5] }],
//!   "alpha": 0.05,
//!   "objective": "sum_of_squares",
//!   "disturbance": { "mean": [0.0], "diagonal": [0.01] }
//! }
//! ```
//!
//! Matrices are lists of rows. Steps with no target entry are unconstrained,
//! and several entries for one step are concatenated. `input_rows` (extra
//! half-spaces on each `u(k)`) is optional, as is `disturbance`, which takes
//! either a full `covariance` or a `diagonal`.

use std::path::Path;

use ccstat_core::dynamics::LtiSystem;
use ccstat_core::reformulation::{HalfSpace, InputSet, Objective, ProblemSpec, TargetSet};
use ccstat_core::sampling::GaussianModel;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

pub const SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFile {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRowFile {
    pub g: Vec<f64>,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFile {
    pub step: usize,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveFile {
    SumOfSquares,
    Quadratic(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceFile {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: u32,
    pub system: SystemFile,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub input_box: BoxFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_rows: Vec<InputRowFile>,
    pub targets: Vec<TargetFile>,
    pub alpha: f64,
    #[serde(default = "default_objective")]
    pub objective: ObjectiveFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceFile>,
}

fn default_objective() -> ObjectiveFile {
    ObjectiveFile::SumOfSquares
}

/// Mean and covariance of the stacked disturbance `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl Disturbance {
    pub fn model(&self, seed: u64) -> Result<GaussianModel> {
        Ok(GaussianModel::new(self.mean.clone(), self.covariance.clone(), seed)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub disturbance: Option<Disturbance>,
}

impl Problem {
    pub fn load(path: &Path) -> Result<Self> {
        let file: ProblemFile = json::read(path)?;
        Self::from_file(&file).map_err(|e| match e {
            Error::Usage(message) => Error::Format {
                path: path.into(),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write(path, &self.to_file())
    }

    /// The disturbance model, or an error naming what is missing.
    pub fn model(&self, seed: u64) -> Result<GaussianModel> {
        match &self.disturbance {
            Some(d) => d.model(seed),
            None => Err(Error::Usage(
                "the problem file has no disturbance section; it is needed to draw samples, run osvpi or certify"
                    .into(),
            )),
        }
    }

    pub fn from_file(file: &ProblemFile) -> Result<Self> {
        if file.schema != SCHEMA {
            return Err(Error::Usage(format!(
                "unsupported schema {}, expected {SCHEMA}",
                file.schema
            )));
        }
        let a = matrix(&file.system.a, "system.A")?;
        let b = matrix(&file.system.b, "system.B")?;
        let system = LtiSystem::new(a, b)?;
        let mut steps = vec![Vec::new(); file.horizon];
        for t in &file.targets {
            if t.step == 0 || t.step > file.horizon {
                return Err(Error::Usage(format!(
                    "target step {} is outside 1..={}",
                    t.step, file.horizon
                )));
            }
            if t.g.len() != t.h.len() {
                return Err(Error::Usage(format!(
                    "target at step {} has {} rows in G but {} offsets",
                    t.step,
                    t.g.len(),
                    t.h.len()
                )));
            }
            for (row, &h) in t.g.iter().zip(&t.h) {
                steps[t.step - 1].push(HalfSpace::new(DVector::from_column_slice(row), h));
            }
        }
        let mut input = InputSet::boxed(
            DVector::from_column_slice(&file.input_box.lo),
            DVector::from_column_slice(&file.input_box.hi),
        );
        input.halfspaces = file
            .input_rows
            .iter()
            .map(|r| HalfSpace::new(DVector::from_column_slice(&r.g), r.h))
            .collect();
        let objective = match &file.objective {
            ObjectiveFile::SumOfSquares => Objective::SumOfSquares,
            ObjectiveFile::Quadratic(q) => Objective::Quadratic(matrix(q, "objective.quadratic")?),
        };
        let spec = ProblemSpec {
            system,
            horizon: file.horizon,
            x0: DVector::from_column_slice(&file.x0),
            input,
            target: TargetSet::new(steps),
            alpha: file.alpha,
            objective,
        };
        spec.validate()?;
        let disturbance = file
            .disturbance
            .as_ref()
            .map(|d| disturbance(d, spec.disturbance_len()))
            .transpose()?;
        Ok(Self { spec, disturbance })
    }

    pub fn to_file(&self) -> ProblemFile {
        let spec = &self.spec;
        let targets = spec
            .target
            .steps()
            .iter()
            .enumerate()
            .filter(|(_, rows)| !rows.is_empty())
            .map(|(k, rows)| TargetFile {
                step: k + 1,
                g: rows.iter().map(|r| r.normal.iter().copied().collect()).collect(),
                h: rows.iter().map(|r| r.offset).collect(),
            })
            .collect();
        let disturbance = self.disturbance.as_ref().map(|d| {
            let diagonal = d.covariance == DMatrix::from_diagonal(&d.covariance.diagonal());
            DisturbanceFile {
                mean: d.mean.iter().copied().collect(),
                covariance: (!diagonal).then(|| rows(&d.covariance)),
                diagonal: diagonal.then(|| d.covariance.diagonal().iter().copied().collect()),
            }
        });
        ProblemFile {
            schema: SCHEMA,
            system: SystemFile {
                a: rows(spec.system.a()),
                b: rows(spec.system.b()),
            },
            horizon: spec.horizon,
            x0: spec.x0.iter().copied().collect(),
            input_box: BoxFile {
                lo: spec.input.lower.iter().copied().collect(),
                hi: spec.input.upper.iter().copied().collect(),
            },
            input_rows: spec
                .input
                .halfspaces
                .iter()
                .map(|h| InputRowFile {
                    g: h.normal.iter().copied().collect(),
                    h: h.offset,
                })
                .collect(),
            targets,
            alpha: spec.alpha,
            objective: match &spec.objective {
                Objective::SumOfSquares => ObjectiveFile::SumOfSquares,
                Objective::Quadratic(q) => ObjectiveFile::Quadratic(rows(q)),
            },
            disturbance,
        }
    }
}

fn disturbance(d: &DisturbanceFile, dim: usize) -> Result<Disturbance> {
    if d.mean.len() != dim {
        return Err(Error::Usage(format!(
            "disturbance mean has length {}, expected N * n = {dim}",
            d.mean.len()
        )));
    }
    let covariance = match (&d.covariance, &d.diagonal) {
        (Some(c), None) => matrix(c, "disturbance.covariance")?,
        (None, Some(v)) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
        _ => {
            return Err(Error::Usage(
                "disturbance needs exactly one of covariance or diagonal".into(),
            ))
        }
    };
    if covariance.shape() != (dim, dim) {
        return Err(Error::Usage(format!(
            "disturbance covariance is {}x{}, expected {dim}x{dim}",
            covariance.nrows(),
            covariance.ncols()
        )));
    }
    Ok(Disturbance {
        mean: DVector::from_column_slice(&d.mean),
        covariance,
    })
}

pub(crate) fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Usage(format!(
            "{what} must be a nonempty rectangular list of rows"
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
