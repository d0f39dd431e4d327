//! Tail bounds on deviations measured in sample standard deviations.
//!
//! With `N_s` i.i.d. samples, sample mean `m` and biased sample standard
//! deviation `s`, a fresh draw `x` whose standardized statistic is unimodal
//! satisfies, for `lambda > lambda_min(N_s)`,
//!
//! ```text
//! P(x - m >= lambda s) <= f(lambda) = 4 (sqrt(N*) + lambda)^2 / (9 (lambda^2 N_s + (sqrt(N*) + lambda)^2))
//! lambda_min(N_s) = sqrt(5 N*) / (sqrt(3 N_s) - sqrt(5)),     N* = N_s + 1
//! ```
//!
//! `f` is the one-sided Vysochanskij-Petunin bound `4 / (9 (kappa^2 + 1))`
//! evaluated at `kappa = lambda sqrt(N_s) / (sqrt(N*) + lambda)`, so
//! `f(lambda_min) = 1/6` and `f` tends to `4 / (9 N*)` as `lambda` grows.

use alloc::format;

use num_bigint::BigUint;
use num_traits::float::FloatCore;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result, SampleGate};

/// Smallest sample count for which the standardized statistic of Gaussian
/// data is log-concave, hence unimodal.
pub const MIN_UNIMODAL_SAMPLES: usize = 4;

/// `sqrt(5/3)`: validity threshold of the one-sided VP inequality.
pub fn osvpi_threshold() -> f64 {
    libm::sqrt(5.0 / 3.0)
}

/// Sample count `N_s` for the sample-based bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundContext {
    samples: f64,
}

impl BoundContext {
    /// Context for the planning method, which needs `N_s >= 4`.
    pub fn new(samples: usize) -> Result<Self> {
        if samples < MIN_UNIMODAL_SAMPLES {
            return Err(Error::InsufficientSamples {
                have: samples,
                need: MIN_UNIMODAL_SAMPLES as u64,
                gate: SampleGate::Unimodality,
            });
        }
        Ok(Self {
            samples: samples as f64,
        })
    }

    /// Context for bare bound arithmetic, which only needs `N_s >= 2`.
    pub fn relaxed(samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InsufficientSamples {
                have: samples,
                need: 2,
                gate: SampleGate::Statistics,
            });
        }
        Ok(Self {
            samples: samples as f64,
        })
    }

    pub fn samples(&self) -> f64 {
        self.samples
    }

    /// `N* = N_s + 1`.
    pub fn n_star(&self) -> f64 {
        self.samples + 1.0
    }

    fn parts(&self, lambda: f64) -> (f64, f64, f64) {
        let root = libm::sqrt(self.n_star());
        let p = (root + lambda) * (root + lambda);
        let q = lambda * lambda * self.samples + p;
        (root, p, q)
    }

    /// `f(lambda)`; defined for every `lambda > 0`.
    pub fn f(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) || lambda.is_nan() {
            return Err(Error::Domain(format!("f(lambda) needs lambda > 0, got {lambda}")));
        }
        Ok(self.f_unchecked(lambda))
    }

    pub(crate) fn f_unchecked(&self, lambda: f64) -> f64 {
        if lambda.is_infinite() {
            return self.asymptote();
        }
        let (_, p, q) = self.parts(lambda);
        4.0 * p / (9.0 * q)
    }

    /// `f'(lambda) = -8 N_s sqrt(N*) lambda (sqrt(N*) + lambda) / (9 q^2)`.
    pub fn f_derivative(&self, lambda: f64) -> f64 {
        let (root, _, q) = self.parts(lambda);
        -8.0 * self.samples * root * lambda * (root + lambda) / (9.0 * q * q)
    }

    /// `f''(lambda) = 8 N_s N*^2 ((2/sqrt(N*)) lambda^3 + 3 lambda^2 - 1) / (9 q^3)`.
    pub fn f_second_derivative(&self, lambda: f64) -> f64 {
        let (root, _, q) = self.parts(lambda);
        let ns = self.n_star();
        let cubic = 2.0 / root * lambda * lambda * lambda + 3.0 * lambda * lambda - 1.0;
        8.0 * self.samples * ns * ns * cubic / (9.0 * q * q * q)
    }

    /// Validity threshold `lambda_min(N_s)`.
    pub fn lambda_min(&self) -> f64 {
        libm::sqrt(5.0 * self.n_star()) / (libm::sqrt(3.0 * self.samples) - libm::sqrt(5.0))
    }

    /// Limit of `f` as `lambda` grows: `4 / (9 N*)`.
    pub fn asymptote(&self) -> f64 {
        4.0 / (9.0 * self.n_star())
    }

    /// Positive inflection point of `f`: the positive root of
    /// `(2/sqrt(N*)) lambda^3 + 3 lambda^2 - 1 = 0`.
    pub fn inflection_theta(&self) -> f64 {
        let root = libm::sqrt(self.n_star());
        let c = -(self.samples - 1.0) / self.n_star();
        root * (libm::cos(libm::acos(c) / 3.0) - 0.5)
    }

    /// The `lambda > lambda_min` with `f(lambda) = target`.
    pub fn f_inverse(&self, target: f64) -> Result<f64> {
        let floor = self.lambda_min();
        invert_decreasing(target, floor, self.asymptote(), |l| self.f_unchecked(l))
    }
}

/// One-sided Vysochanskij-Petunin bound `4 / (9 (lambda^2 + 1))`, valid for
/// `lambda > sqrt(5/3)`.
pub fn osvpi_bound(lambda: f64) -> Result<f64> {
    if !(lambda > osvpi_threshold()) {
        return Err(Error::Domain(format!(
            "one-sided VP bound needs lambda > sqrt(5/3), got {lambda}"
        )));
    }
    Ok(osvpi_unchecked(lambda))
}

fn osvpi_unchecked(lambda: f64) -> f64 {
    4.0 / (9.0 * (lambda * lambda + 1.0))
}

/// Bisection on a strictly decreasing bound over `(floor, inf)`.
fn invert_decreasing(target: f64, floor: f64, asymptote: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    if target.is_nan() || target <= asymptote {
        return Err(Error::InfeasibleTarget { target, asymptote });
    }
    let at_floor = f(floor);
    if target >= at_floor {
        return Err(Error::LambdaFloor { target, at_floor });
    }
    let mut lo = floor;
    let mut hi = floor.max(1.0) * 2.0;
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::InfeasibleTarget { target, asymptote });
        }
    }
    // f(lo) > target >= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let err = (f(hi) - target).abs();
    if err > 1e-12 {
        return Err(Error::Numerical(format!(
            "bound inversion stalled at |f - target| = {err:e}"
        )));
    }
    Ok(hi)
}

/// Per-constraint risk map used by a reformulated program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskMap {
    /// Sample-statistics bound `f` for a given sample count.
    SampleVp(BoundContext),
    /// One-sided VP bound with known moments.
    Osvpi,
}

impl RiskMap {
    pub fn value(&self, lambda: f64) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.f_unchecked(lambda),
            RiskMap::Osvpi => osvpi_unchecked(lambda),
        }
    }

    pub fn derivative(&self, lambda: f64) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.f_derivative(lambda),
            RiskMap::Osvpi => {
                let d = lambda * lambda + 1.0;
                -8.0 * lambda / (9.0 * d * d)
            }
        }
    }

    pub fn second_derivative(&self, lambda: f64) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.f_second_derivative(lambda),
            RiskMap::Osvpi => {
                let d = lambda * lambda + 1.0;
                8.0 * (3.0 * lambda * lambda - 1.0) / (9.0 * d * d * d)
            }
        }
    }

    /// Open lower limit on `lambda`.
    pub fn floor(&self) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.lambda_min(),
            RiskMap::Osvpi => osvpi_threshold(),
        }
    }

    /// Infimum of the map over valid `lambda`.
    pub fn asymptote(&self) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.asymptote(),
            RiskMap::Osvpi => 0.0,
        }
    }

    /// Start of the convex region of the map.
    pub fn inflection(&self) -> f64 {
        match self {
            RiskMap::SampleVp(ctx) => ctx.inflection_theta(),
            RiskMap::Osvpi => libm::sqrt(1.0 / 3.0),
        }
    }

    pub fn inverse(&self, target: f64) -> Result<f64> {
        invert_decreasing(target, self.floor(), self.asymptote(), |l| self.value(l))
    }
}

/// Smallest `N_s` with `N_s >= 4 L / (9 alpha) - 1`, in exact arithmetic.
///
/// This is necessary, not sufficient: at exactly this count the risk budget
/// is only reachable as every `lambda` tends to infinity.
pub fn min_samples(total_halfspaces: usize, alpha: f64) -> Result<u64> {
    if total_halfspaces == 0 {
        return Err(Error::Domain("at least one half-space is required".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0 / 6.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1/6), got {alpha}")));
    }
    // alpha = mantissa * 2^exp exactly; alpha < 1 forces exp < 0
    let (mantissa, exp, _) = FloatCore::integer_decode(alpha);
    debug_assert!(exp < 0);
    let numerator = (BigUint::from(4u64) * BigUint::from(total_halfspaces as u64)) << ((-exp) as usize);
    let denominator = BigUint::from(9u64) * BigUint::from(mantissa);
    let (q, r) = (&numerator / &denominator, &numerator % &denominator);
    let ceil = if r.is_zero() { q } else { q + 1u32 };
    // ceil(x - 1) = ceil(x) - 1; ceil(x) >= 1 since x > 0
    (ceil - 1u32)
        .to_u64()
        .ok_or_else(|| Error::Domain("required sample count overflows u64".into()))
}

/// The binding sample gate for a method run with `samples` draws, if any.
pub fn check_sample_gates(samples: usize, total_halfspaces: usize, alpha: f64) -> Result<()> {
    BoundContext::new(samples)?;
    let need = min_samples(total_halfspaces, alpha)?;
    if (samples as u64) < need {
        return Err(Error::InsufficientSamples {
            have: samples,
            need,
            gate: SampleGate::RiskFloor,
        });
    }
    Ok(())
}
