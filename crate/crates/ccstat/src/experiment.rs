//! The planning pipeline: draw or load samples, build and solve one method,
//! certify the input against the true model and write the artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccstat_core::concentration::BoundContext;
use ccstat_core::reformulation::{build_osvpi, build_proposed, build_scenario, mean_trajectory, scenario_sample_count};
use ccstat_core::sampling::{compute_statistics, generate_samples, SampleSet};
use ccstat_core::solver::{solve_proposed, solve_scenario, Solution, SolverConfig, Status};
use ccstat_core::verify::CertificationReport;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Result};
use crate::problem::Problem;
use crate::report::{self, CertificationFile, SolutionFile, SummaryRow};
use crate::{json, parallel, samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sample mean and variance with the finite-sample bound.
    Proposed,
    /// One deterministic copy of every target row per sample.
    Scenario,
    /// True moments with the one-sided Vysochanskij-Petunin bound.
    Osvpi,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Scenario, Method::Osvpi];

    pub fn uses_samples(self) -> bool {
        self != Method::Osvpi
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Proposed => "proposed",
            Method::Scenario => "scenario",
            Method::Osvpi => "osvpi",
        })
    }
}

/// Where the disturbance samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Draw from the problem's disturbance model.
    Generate {
        count: usize,
        seed: u64,
    },
    Load {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub trials: u64,
    pub seed: u64,
}

/// One planning run, as stored in an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub problem: PathBuf,
    pub method: Method,
    /// Ignored by methods that do not use samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<SampleSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifyConfig>,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config: Self = json::read(path)?;
        if config.schema != report::SCHEMA {
            return Err(crate::Error::Format {
                path: path.into(),
                message: format!("unsupported schema {}, expected {}", config.schema, report::SCHEMA),
            });
        }
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        json::write(path, self)
    }
}

/// Sample count used when none is given: the scenario count for confidence
/// `1e-8` with one support constraint per input entry.
pub fn default_sample_count(problem: &Problem) -> Result<usize> {
    Ok(scenario_sample_count(problem.spec.alpha, 1e-8, problem.spec.input_len())? as usize)
}

/// The seed used for certification when only the sampling seed is known.
/// Certification draws must be independent of the planning samples.
pub fn certification_seed(sample_seed: u64) -> u64 {
    !sample_seed
}

pub fn draw_samples(problem: &Problem, source: &SampleSource) -> Result<SampleSet> {
    match source {
        SampleSource::Generate { count, seed } => Ok(generate_samples(&problem.model(*seed)?, *count)?),
        SampleSource::Load { path } => samples::load(path),
    }
}

/// A solved method with the data needed to report it.
#[derive(Debug, Clone)]
pub struct Plan {
    pub method: Method,
    pub solution: Solution,
    pub samples: Option<usize>,
    /// Mean state and per-coordinate spread for `k = 0..=N`.
    pub trajectory: Vec<(DVector<f64>, DVector<f64>)>,
}

/// Build and solve `method`. Sample-based methods need `samples`; the
/// known-moment method needs the problem's disturbance model.
pub fn plan(problem: &Problem, method: Method, set: Option<&SampleSet>, cfg: &SolverConfig) -> Result<Plan> {
    let spec = &problem.spec;
    let need = || crate::Error::Usage(format!("method {method} needs disturbance samples"));
    let (solution, mean, covariance) = match method {
        Method::Proposed => {
            let set = set.ok_or_else(need)?;
            let stats = compute_statistics(set)?;
            let prog = build_proposed(spec, &stats, &BoundContext::new(set.len())?)?;
            let solution = timed(|| solve_proposed(&prog, cfg))?;
            (solution, stats.mean().clone(), stats.covariance().clone())
        }
        Method::Scenario => {
            let set = set.ok_or_else(need)?;
            let prog = build_scenario(spec, set)?;
            let solution = timed(|| solve_scenario(&prog, cfg))?;
            let stats = compute_statistics(set)?;
            (solution, stats.mean().clone(), stats.covariance().clone())
        }
        Method::Osvpi => {
            let model = problem.model(0)?;
            let prog = build_osvpi(spec, &model)?;
            let solution = timed(|| solve_proposed(&prog, cfg))?;
            (solution, model.mean().clone(), model.covariance().clone())
        }
    };
    let trajectory = mean_trajectory(spec, &solution.u, &mean, &covariance)?;
    Ok(Plan {
        method,
        samples: method.uses_samples().then(|| set.map(SampleSet::len)).flatten(),
        solution,
        trajectory,
    })
}

fn timed(f: impl FnOnce() -> ccstat_core::Result<Solution>) -> Result<Solution> {
    let start = Instant::now();
    let mut sol = f()?;
    sol.solve_seconds = start.elapsed().as_secs_f64();
    Ok(sol)
}

/// Certification of a plan against the problem's disturbance model.
pub fn certify(problem: &Problem, u: &DVector<f64>, cfg: CertifyConfig) -> Result<CertificationReport> {
    let model = problem.model(cfg.seed)?;
    parallel::certify(&problem.spec, u, &model, cfg.trials, cfg.seed)
}

/// Outcome of [`run`]: the summary line and where the artifacts went.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: SummaryRow,
    pub status: Status,
    pub certification: Option<CertificationReport>,
}

/// Solve, certify (when requested and the solve produced an input) and write
/// `solution.json`, `trajectory.csv`, `certification.json`,
/// `violations.csv` and `summary.csv` under `out`.
pub fn run_plan(
    problem: &Problem,
    method: Method,
    set: Option<&SampleSet>,
    seed: Option<u64>,
    certify_with: Option<CertifyConfig>,
    out: &Path,
) -> Result<RunOutcome> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let plan = plan(problem, method, set, &SolverConfig::default())?;
    let sol = &plan.solution;
    SolutionFile::new(method, sol, plan.samples, seed.filter(|_| method.uses_samples()))
        .save(&out.join("solution.json"))?;
    report::write_trajectory(&out.join("trajectory.csv"), &plan.trajectory)?;
    let certification = match certify_with {
        Some(c) if sol.status != Status::Infeasible => {
            let rep = certify(problem, &sol.u, c)?;
            CertificationFile::from(&rep).save(&out.join("certification.json"))?;
            report::write_violations(&out.join("violations.csv"), &rep)?;
            Some(rep)
        }
        _ => None,
    };
    let summary = SummaryRow {
        method,
        samples: plan.samples,
        status: sol.status.into(),
        cost: sol.cost,
        solve_seconds: sol.solve_seconds,
        satisfaction: certification.as_ref().map(|c| c.joint_satisfaction),
    };
    report::write_summary(&out.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(RunOutcome {
        summary,
        status: sol.status,
        certification,
    })
}

/// Run an experiment file.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    let problem = Problem::load(&config.problem)?;
    let (set, seed) = if config.method.uses_samples() {
        let source = match &config.samples {
            Some(s) => s.clone(),
            None => SampleSource::Generate {
                count: default_sample_count(&problem)?,
                seed: 0,
            },
        };
        let seed = match source {
            SampleSource::Generate { seed, .. } => Some(seed),
            SampleSource::Load { .. } => None,
        };
        (Some(draw_samples(&problem, &source)?), seed)
    } else {
        (None, None)
    };
    run_plan(
        &problem,
        config.method,
        set.as_ref(),
        seed,
        config.certify,
        &config.output,
    )
}

/// Every method on one problem. Sample-based methods share one sample set;
/// each method writes into `out/<method>/`, and the merged table goes to
/// `out/summary.csv`.
pub fn compare(
    problem: &Problem,
    methods: &[Method],
    source: &SampleSource,
    certify_with: Option<CertifyConfig>,
    out: &Path,
) -> Result<Vec<RunOutcome>> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let set = if methods.iter().any(|m| m.uses_samples()) {
        Some(draw_samples(problem, source)?)
    } else {
        None
    };
    let seed = match source {
        SampleSource::Generate { seed, .. } => Some(*seed),
        SampleSource::Load { .. } => None,
    };
    let mut outcomes = Vec::with_capacity(methods.len());
    for &m in methods {
        outcomes.push(run_plan(
            problem,
            m,
            set.as_ref(),
            seed,
            certify_with,
            &out.join(m.to_string()),
        )?);
    }
    let rows: Vec<SummaryRow> = outcomes.iter().map(|o| o.summary.clone()).collect();
    report::write_summary(&out.join("summary.csv"), &rows)?;
    Ok(outcomes)
}
