//! Parallel Monte-Carlo runs. Trials are split into fixed-size chunks whose
//! counts are merged, and every trial has its own random stream, so results
//! do not depend on the number of threads.

use std::ops::Range;

use ccstat_core::reformulation::ProblemSpec;
use ccstat_core::sampling::GaussianModel;
use ccstat_core::verify::{
    plan_lemma5, plan_theorem1, CellPlan, CertificationReport, Certifier, LambdaChoice, ValidationCell, ViolationCounts,
};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Caps the worker count when set to a positive integer.
pub const THREADS_ENV: &str = "CCSTAT_THREADS";

const CHUNK: u64 = 2048;

/// A pool sized by `CCSTAT_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))
}

fn chunks(trials: u64) -> Vec<Range<u64>> {
    (0..trials.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(trials))
        .collect()
}

/// [`ccstat_core::verify::certify`] spread over the pool.
pub fn certify(
    spec: &ProblemSpec,
    u: &DVector<f64>,
    model: &GaussianModel,
    trials: u64,
    seed: u64,
) -> Result<CertificationReport> {
    let certifier = Certifier::new(spec, u, model)?;
    let rows = certifier.rows().len();
    let counts = thread_pool()?.install(|| {
        chunks(trials)
            .into_par_iter()
            .map(|r| certifier.count(seed, r))
            .reduce(|| ViolationCounts::empty(rows), |a, b| a.merge(&b))
    });
    Ok(CertificationReport::from_counts(certifier.rows(), &counts, seed)?)
}

pub fn run_cells(plans: &[CellPlan], trials: u64) -> Result<Vec<ValidationCell>> {
    if trials == 0 {
        return Err(Error::Usage("validation needs at least one trial".into()));
    }
    let jobs: Vec<(usize, Range<u64>)> = (0..plans.len())
        .flat_map(|i| chunks(trials).into_iter().map(move |r| (i, r)))
        .collect();
    let hits = thread_pool()?.install(|| {
        jobs.into_par_iter()
            .map(|(i, r)| (i, plans[i].hits(r)))
            .collect::<Vec<_>>()
    });
    let mut totals = vec![0; plans.len()];
    for (i, h) in hits {
        totals[i] += h;
    }
    Ok(plans.iter().zip(totals).map(|(p, h)| p.finish(trials, h)).collect())
}

pub fn validate_theorem1(
    sample_sizes: &[usize],
    lambdas: &[LambdaChoice],
    trials: u64,
    seed: u64,
) -> Result<Vec<ValidationCell>> {
    run_cells(&plan_theorem1(sample_sizes, lambdas, seed)?, trials)
}

pub fn validate_lemma5(
    sample_sizes: &[usize],
    lambdas: &[LambdaChoice],
    trials: u64,
    seed: u64,
) -> Result<Vec<ValidationCell>> {
    run_cells(&plan_lemma5(sample_sizes, lambdas, seed)?, trials)
}
