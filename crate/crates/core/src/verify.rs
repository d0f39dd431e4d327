//! Monte-Carlo certification of a planned input sequence, and empirical
//! checks of the tail bounds.
//!
//! Every trial draws from its own random stream (seed, trial index), so a
//! count over trials `a..b` does not depend on how the range is split. The
//! std companion crate runs the ranges in parallel and merges the counts.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use nalgebra::DVector;

use crate::concentration::{osvpi_bound, osvpi_threshold, BoundContext};
use crate::error::{check_dim, Error, Result};
use crate::reformulation::{ProblemSpec, RowId};
use crate::sampling::{fill_standard_normal, GaussianModel};

/// Tallies over a range of certification trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationCounts {
    pub trials: u64,
    /// Trials in which every row held.
    pub joint_satisfied: u64,
    /// Trials in which at least one row failed.
    pub any_violated: u64,
    /// Failures per target row.
    pub per_row: Vec<u64>,
}

impl ViolationCounts {
    pub fn empty(rows: usize) -> Self {
        Self {
            trials: 0,
            joint_satisfied: 0,
            any_violated: 0,
            per_row: vec![0; rows],
        }
    }

    pub fn merge(mut self, other: &ViolationCounts) -> Self {
        self.trials += other.trials;
        self.joint_satisfied += other.joint_satisfied;
        self.any_violated += other.any_violated;
        for (a, b) in self.per_row.iter_mut().zip(&other.per_row) {
            *a += b;
        }
        self
    }
}

/// Target rows written as `d' W <= c` for a fixed input.
#[derive(Debug, Clone)]
pub struct Certifier {
    ids: Vec<RowId>,
    through: Vec<DVector<f64>>,
    rhs: Vec<f64>,
    model: GaussianModel,
}

impl Certifier {
    pub fn new(spec: &ProblemSpec, u: &DVector<f64>, model: &GaussianModel) -> Result<Self> {
        spec.validate()?;
        check_dim("stacked input", spec.input_len(), u.len())?;
        check_dim("disturbance model", spec.disturbance_len(), model.dim())?;
        let cd = spec.dynamics()?;
        let (mut ids, mut through, mut rhs) = (Vec::new(), Vec::new(), Vec::new());
        for (id, h) in spec.target.rows() {
            let k = id.step;
            let nominal = cd.power(k) * &spec.x0 + cd.input_map(k) * u;
            ids.push(id);
            through.push(cd.disturbance_map(k).tr_mul(&h.normal));
            rhs.push(h.offset - h.normal.dot(&nominal));
        }
        Ok(Self {
            ids,
            through,
            rhs,
            model: model.clone(),
        })
    }

    pub fn rows(&self) -> &[RowId] {
        &self.ids
    }

    /// Count outcomes of trials `range` under `seed`. Points on a boundary count as inside.
    pub fn count(&self, seed: u64, range: Range<u64>) -> ViolationCounts {
        let mut counts = ViolationCounts::empty(self.ids.len());
        for trial in range {
            let w = self.model.sample_with_seed(seed, trial);
            let mut ok = true;
            for (r, (d, c)) in self.through.iter().zip(&self.rhs).enumerate() {
                if d.dot(&w) > *c {
                    counts.per_row[r] += 1;
                    ok = false;
                }
            }
            counts.trials += 1;
            if ok {
                counts.joint_satisfied += 1;
            } else {
                counts.any_violated += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub trials: u64,
    pub joint_satisfaction: f64,
    pub per_row_violation: Vec<(RowId, f64)>,
    /// Binomial standard error of `joint_satisfaction`.
    pub stderr: f64,
    pub seed: u64,
    pub violations: u64,
}

impl CertificationReport {
    pub fn from_counts(rows: &[RowId], counts: &ViolationCounts, seed: u64) -> Result<Self> {
        if counts.trials == 0 {
            return Err(Error::InvalidParameter("certification needs at least one trial".into()));
        }
        if counts.joint_satisfied + counts.any_violated != counts.trials {
            return Err(Error::Numerical(format!(
                "joint counts disagree: {} satisfied + {} violated != {} trials",
                counts.joint_satisfied, counts.any_violated, counts.trials
            )));
        }
        let n = counts.trials as f64;
        let p = counts.joint_satisfied as f64 / n;
        Ok(Self {
            trials: counts.trials,
            joint_satisfaction: p,
            per_row_violation: rows
                .iter()
                .zip(&counts.per_row)
                .map(|(&id, &v)| (id, v as f64 / n))
                .collect(),
            stderr: libm::sqrt(p * (1.0 - p) / n),
            seed,
            violations: counts.any_violated,
        })
    }

    /// Largest per-row violation rate.
    pub fn worst_row(&self) -> Option<(RowId, f64)> {
        self.per_row_violation
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Empirical joint satisfaction of `u` over `trials` fresh draws.
pub fn certify(
    spec: &ProblemSpec,
    u: &DVector<f64>,
    model: &GaussianModel,
    trials: u64,
    seed: u64,
) -> Result<CertificationReport> {
    let certifier = Certifier::new(spec, u, model)?;
    let counts = certifier.count(seed, 0..trials);
    CertificationReport::from_counts(certifier.rows(), &counts, seed)
}

/// `lambda` for a validation cell, absolute or relative to the bound's floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    Absolute(f64),
    AboveFloor(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationCell {
    pub samples: usize,
    pub lambda: f64,
    pub bound: f64,
    pub trials: u64,
    pub hits: u64,
    pub empirical: f64,
    /// Binomial standard error at the bound.
    pub stderr: f64,
    pub pass: bool,
}

impl ValidationCell {
    fn new(samples: usize, lambda: f64, bound: f64, trials: u64, hits: u64) -> Self {
        let n = trials as f64;
        let empirical = hits as f64 / n;
        let stderr = libm::sqrt(bound * (1.0 - bound) / n);
        Self {
            samples,
            lambda,
            bound,
            trials,
            hits,
            empirical,
            stderr,
            pass: empirical <= bound + 3.0 * stderr,
        }
    }
}

/// Which tail experiment a validation cell runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailExperiment {
    /// A fresh point against the statistics of `N_s` earlier samples.
    OutOfSample,
    /// One of the `N_s` samples against their own statistics.
    InSample,
}

/// A planned validation cell with its random stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPlan {
    pub experiment: TailExperiment,
    pub samples: usize,
    pub lambda: f64,
    pub bound: f64,
    pub seed: u64,
}

impl CellPlan {
    /// Number of trials in `range` whose standardized deviation reaches `lambda`.
    pub fn hits(&self, range: Range<u64>) -> u64 {
        let n = self.samples;
        let extra = usize::from(self.experiment == TailExperiment::OutOfSample);
        let mut buf = vec![0.0; n + extra];
        let mut hits = 0;
        for trial in range {
            fill_standard_normal(self.seed, trial, &mut buf);
            let xs = &buf[..n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let point = match self.experiment {
                TailExperiment::OutOfSample => buf[n],
                TailExperiment::InSample => buf[0],
            };
            if point - mean >= self.lambda * libm::sqrt(var) {
                hits += 1;
            }
        }
        hits
    }

    pub fn finish(&self, trials: u64, hits: u64) -> ValidationCell {
        ValidationCell::new(self.samples, self.lambda, self.bound, trials, hits)
    }
}

fn cell_seed(seed: u64, cell: usize) -> u64 {
    seed ^ (cell as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Cells for the out-of-sample bound `f`, one per `(N_s, lambda)` pair in row-major order.
pub fn plan_theorem1(sample_sizes: &[usize], lambdas: &[LambdaChoice], seed: u64) -> Result<Vec<CellPlan>> {
    let mut plans = Vec::with_capacity(sample_sizes.len() * lambdas.len());
    for &ns in sample_sizes {
        let ctx = BoundContext::new(ns)?;
        for &choice in lambdas {
            let lambda = match choice {
                LambdaChoice::Absolute(l) => l,
                LambdaChoice::AboveFloor(d) => ctx.lambda_min() + d,
            };
            if !(lambda > ctx.lambda_min()) {
                return Err(Error::Domain(format!(
                    "lambda {lambda} must exceed the floor {} for {ns} samples",
                    ctx.lambda_min()
                )));
            }
            let bound = ctx.f(lambda)?;
            plans.push(CellPlan {
                experiment: TailExperiment::OutOfSample,
                samples: ns,
                lambda,
                bound,
                seed: cell_seed(seed, plans.len()),
            });
        }
    }
    Ok(plans)
}

/// Cells for the in-sample bound `4 / (9 (lambda^2 + 1))`.
pub fn plan_lemma5(sample_sizes: &[usize], lambdas: &[LambdaChoice], seed: u64) -> Result<Vec<CellPlan>> {
    let mut plans = Vec::with_capacity(sample_sizes.len() * lambdas.len());
    for &ns in sample_sizes {
        if ns < 2 {
            return Err(Error::InvalidParameter(format!(
                "the in-sample bound needs at least 2 samples, got {ns}"
            )));
        }
        for &choice in lambdas {
            let lambda = match choice {
                LambdaChoice::Absolute(l) => l,
                LambdaChoice::AboveFloor(d) => osvpi_threshold() + d,
            };
            let bound = osvpi_bound(lambda)?;
            plans.push(CellPlan {
                experiment: TailExperiment::InSample,
                samples: ns,
                lambda,
                bound,
                seed: cell_seed(seed, plans.len()),
            });
        }
    }
    Ok(plans)
}

fn run(plans: &[CellPlan], trials: u64) -> Result<Vec<ValidationCell>> {
    if trials == 0 {
        return Err(Error::InvalidParameter("validation needs at least one trial".into()));
    }
    Ok(plans.iter().map(|p| p.finish(trials, p.hits(0..trials))).collect())
}

/// Out-of-sample tail frequencies against `f(lambda)`.
pub fn validate_theorem1(
    sample_sizes: &[usize],
    lambdas: &[LambdaChoice],
    trials: u64,
    seed: u64,
) -> Result<Vec<ValidationCell>> {
    run(&plan_theorem1(sample_sizes, lambdas, seed)?, trials)
}

/// In-sample tail frequencies against `4 / (9 (lambda^2 + 1))`.
pub fn validate_lemma5(
    sample_sizes: &[usize],
    lambdas: &[LambdaChoice],
    trials: u64,
    seed: u64,
) -> Result<Vec<ValidationCell>> {
    run(&plan_lemma5(sample_sizes, lambdas, seed)?, trials)
}
