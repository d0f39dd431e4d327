use alloc::string::String;
use core::fmt;

use crate::reformulation::RowId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Which sample-size requirement rejected a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleGate {
    /// Fewer than two samples: no sample variance exists.
    Statistics,
    /// Fewer than four samples: the standardized statistic is not known to be unimodal.
    Unimodality,
    /// Below the asymptotic risk floor `4 L / (9 alpha) - 1`.
    RiskFloor,
}

impl fmt::Display for SampleGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleGate::Statistics => f.write_str("sample statistics need at least 2 samples"),
            SampleGate::Unimodality => f.write_str("unimodality gate needs at least 4 samples"),
            SampleGate::RiskFloor => f.write_str("risk budget is below the asymptotic bound for this sample count"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("insufficient samples: have {have}, need at least {need} ({gate})")]
    InsufficientSamples { have: usize, need: u64, gate: SampleGate },
    #[error("degenerate samples: every sample is identical")]
    DegenerateSamples,
    #[error("covariance does not admit a positive-semidefinite factorization")]
    NotFactorizable,
    #[error("risk target {target} is at or below the asymptotic bound {asymptote}")]
    InfeasibleTarget { target: f64, asymptote: f64 },
    #[error("risk target {target} is at or above the bound {at_floor} attained at the lambda floor")]
    LambdaFloor { target: f64, at_floor: f64 },
    #[error("row {row} cannot be met anywhere in the input set (gap {gap:.3e})")]
    RowInfeasible { row: RowId, gap: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { what, expected, found })
    }
}
