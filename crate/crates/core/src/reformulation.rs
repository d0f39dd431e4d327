//! Problem data and the three program builders.
//!
//! Every target half-space `g' x(k) <= h` becomes an affine row over the
//! stacked input `U`. For the moment-based programs the row is tightened by
//! `lambda * sigma`, where `sigma` is the (sample or true) standard deviation
//! of `g' x(k)`, and the risk variables are tied together by
//! `sum map(lambda) <= alpha`. The scenario program instead repeats the row
//! once per disturbance sample.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::barrier::{self, Row};
use crate::concentration::{check_sample_gates, BoundContext, RiskMap};
use crate::dynamics::{ConcatenatedDynamics, LtiSystem};
use crate::error::{check_dim, Error, Result};
use crate::sampling::{projected_std, GaussianModel, SampleSet, SampleStatistics};

/// Identifies half-space `index` (0-based) of the target set at step `step` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId {
    pub step: usize,
    pub index: usize,
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(i={}, k={})", self.index, self.step)
    }
}

/// `normal' x <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub normal: DVector<f64>,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        Self { normal, offset }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.normal.dot(x) <= self.offset
    }
}

/// Polytopes `T(1), ..., T(N)` as lists of half-spaces; a step may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    steps: Vec<Vec<HalfSpace>>,
}

impl TargetSet {
    pub fn new(steps: Vec<Vec<HalfSpace>>) -> Self {
        Self { steps }
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Half-spaces at step `k` in `1..=N`.
    pub fn step(&self, k: usize) -> &[HalfSpace] {
        &self.steps[k - 1]
    }

    pub fn steps(&self) -> &[Vec<HalfSpace>] {
        &self.steps
    }

    pub fn total_halfspaces(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = (RowId, &HalfSpace)> {
        self.steps.iter().enumerate().flat_map(|(k, hs)| {
            hs.iter()
                .enumerate()
                .map(move |(index, h)| (RowId { step: k + 1, index }, h))
        })
    }

    /// Shape, finiteness and nonzero-normal checks.
    pub fn validate(&self, n: usize) -> Result<()> {
        for (id, h) in self.rows() {
            check_dim("half-space normal", n, h.normal.len())?;
            if !h.offset.is_finite() || h.normal.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("half-space {id} is not finite")));
            }
            if h.normal.norm() == 0.0 {
                return Err(Error::InvalidParameter(format!("half-space {id} has a zero normal")));
            }
        }
        Ok(())
    }

    /// Every step's polytope has a nonempty interior. Returns the first step that does not.
    pub fn check_nonempty(&self) -> core::result::Result<(), usize> {
        let settings = barrier::Settings {
            kkt_tol: 1e-9,
            max_newton: 200,
            mu_factor: 10.0,
            feas_tol: 1e-12,
        };
        for (k, hs) in self.steps.iter().enumerate() {
            let Some(first) = hs.first() else { continue };
            let n = first.normal.len();
            let rows = hs
                .iter()
                .map(|h| Row {
                    coef: h.normal.iter().copied().enumerate().collect(),
                    rhs: h.offset,
                    relaxable: true,
                })
                .collect();
            if barrier::find_interior_point(n, rows, &settings).is_none() {
                return Err(k + 1);
            }
        }
        Ok(())
    }
}

/// Admissible set for a single input `u(k)`: a box plus optional extra half-spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub halfspaces: Vec<HalfSpace>,
}

impl InputSet {
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Self {
        Self {
            lower,
            upper,
            halfspaces: Vec::new(),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        check_dim("input lower bound", m, self.lower.len())?;
        check_dim("input upper bound", m, self.upper.len())?;
        for (lo, hi) in self.lower.iter().zip(self.upper.iter()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParameter(format!(
                    "input bounds must be finite with lower <= upper, got [{lo}, {hi}]"
                )));
            }
        }
        for h in &self.halfspaces {
            check_dim("input half-space", m, h.normal.len())?;
        }
        Ok(())
    }
}

/// Cost on the stacked input.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `U'U`.
    SumOfSquares,
    /// `U'QU` with symmetric PSD `Q`.
    Quadratic(DMatrix<f64>),
}

impl Objective {
    pub fn matrix(&self, n_u: usize) -> DMatrix<f64> {
        match self {
            Objective::SumOfSquares => DMatrix::identity(n_u, n_u),
            Objective::Quadratic(q) => q.clone(),
        }
    }
}

/// One chance-constrained planning instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub system: LtiSystem,
    pub horizon: usize,
    pub x0: DVector<f64>,
    pub input: InputSet,
    pub target: TargetSet,
    /// Joint violation probability, in `(0, 1/6)`.
    pub alpha: f64,
    pub objective: Objective,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let (n, m) = (self.system.n(), self.system.m());
        check_dim("x0", n, self.x0.len())?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        self.input.validate(m)?;
        check_dim("target steps", self.horizon, self.target.horizon())?;
        self.target.validate(n)?;
        if let Err(k) = self.target.check_nonempty() {
            return Err(Error::InvalidParameter(format!(
                "target set at step {k} has an empty interior"
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 / 6.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1/6), got {}", self.alpha)));
        }
        if let Objective::Quadratic(q) = &self.objective {
            let n_u = self.horizon * m;
            check_dim("objective rows", n_u, q.nrows())?;
            check_dim("objective columns", n_u, q.ncols())?;
            if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
                return Err(Error::InvalidParameter("objective matrix must be symmetric".into()));
            }
            let eig = q.clone().symmetric_eigenvalues();
            if eig.min() < -1e-10 * eig.amax().max(1.0) {
                return Err(Error::InvalidParameter(
                    "objective matrix must be positive semidefinite".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.horizon * self.system.m()
    }

    pub fn disturbance_len(&self) -> usize {
        self.horizon * self.system.n()
    }

    pub fn dynamics(&self) -> Result<ConcatenatedDynamics> {
        ConcatenatedDynamics::new(&self.system, self.horizon)
    }

    pub fn cost(&self, u: &DVector<f64>) -> f64 {
        match &self.objective {
            Objective::SumOfSquares => u.dot(u),
            Objective::Quadratic(q) => (q * u).dot(u),
        }
    }

    /// Stacked input constraints over the whole horizon.
    pub fn stacked_inputs(&self) -> InputConstraints {
        let (m, horizon) = (self.system.m(), self.horizon);
        let n_u = m * horizon;
        let lower = DVector::from_fn(n_u, |i, _| self.input.lower[i % m]);
        let upper = DVector::from_fn(n_u, |i, _| self.input.upper[i % m]);
        let mut rows = Vec::with_capacity(horizon * self.input.halfspaces.len());
        for step in 0..horizon {
            for h in &self.input.halfspaces {
                let mut coeffs = DVector::zeros(n_u);
                coeffs.rows_mut(step * m, m).copy_from(&h.normal);
                rows.push(LinearConstraint { coeffs, rhs: h.offset });
            }
        }
        InputConstraints { lower, upper, rows }
    }
}

/// `coeffs' U <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

/// Box and polytope constraints on the stacked input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraints {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub rows: Vec<LinearConstraint>,
}

impl InputConstraints {
    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    /// Minimum of `c' U` over the box.
    pub fn box_min(&self, c: &DVector<f64>) -> f64 {
        c.iter()
            .enumerate()
            .map(|(i, &ci)| {
                if ci >= 0.0 {
                    ci * self.lower[i]
                } else {
                    ci * self.upper[i]
                }
            })
            .sum()
    }
}

/// Tightened row `coeffs' U + lambda * sigma <= rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceRow {
    pub id: RowId,
    pub coeffs: DVector<f64>,
    pub sigma: f64,
    pub rhs: f64,
}

/// Convex program over `(U, lambda)`:
///
/// ```text
/// minimize   U'QU
/// subject to coeffs_r' U + lambda_r sigma_r <= rhs_r     for every target row r
///            sum_r map(lambda_r) <= budget,   lambda_r > lambda_floor
///            U in the stacked input set
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulatedProgram {
    pub n_u: usize,
    pub rows: Vec<ChanceRow>,
    pub risk: RiskMap,
    pub budget: f64,
    pub lambda_floor: f64,
    pub inputs: InputConstraints,
    pub objective: DMatrix<f64>,
}

/// A row that no input in the box can satisfy even at the smallest `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowDiagnosis {
    pub row: RowId,
    pub gap: f64,
}

impl ReformulatedProgram {
    pub fn n_lambda(&self) -> usize {
        self.rows.len()
    }

    /// Rows with `min_box coeffs'U + sigma * lambda_floor > rhs`.
    pub fn diagnose_rows(&self) -> Vec<RowDiagnosis> {
        self.rows
            .iter()
            .filter_map(|r| {
                let gap = self.inputs.box_min(&r.coeffs) + r.sigma * self.lambda_floor - r.rhs;
                (gap > 0.0).then_some(RowDiagnosis { row: r.id, gap })
            })
            .collect()
    }
}

/// Deterministic rows of the scenario approach: every target row is enforced
/// at every disturbance sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProgram {
    pub n_u: usize,
    pub n_samples: usize,
    /// Coefficients `C(k)' g` shared by all samples of a target row.
    pub bases: Vec<(RowId, DVector<f64>)>,
    /// `rhs[b][j]` for base row `b` and sample `j`.
    pub rhs: Vec<Vec<f64>>,
    pub inputs: InputConstraints,
    pub objective: DMatrix<f64>,
}

impl ScenarioProgram {
    pub fn row_count(&self) -> usize {
        self.n_samples * self.bases.len()
    }
}

fn mean_offset(cd: &ConcatenatedDynamics, spec: &ProblemSpec, k: usize, mean: &DVector<f64>) -> DVector<f64> {
    cd.power(k) * &spec.x0 + cd.disturbance_map(k) * mean
}

fn build_moment_program(
    spec: &ProblemSpec,
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
    risk: RiskMap,
) -> Result<ReformulatedProgram> {
    spec.validate()?;
    check_dim("disturbance mean", spec.disturbance_len(), mean.len())?;
    check_dim("disturbance covariance", spec.disturbance_len(), covariance.nrows())?;
    let cd = spec.dynamics()?;
    let mut rows = Vec::with_capacity(spec.target.total_halfspaces());
    for k in 1..=spec.horizon {
        let offset = mean_offset(&cd, spec, k, mean);
        for (index, h) in spec.target.step(k).iter().enumerate() {
            let coeffs = cd.input_map(k).tr_mul(&h.normal);
            let sigma = projected_std(&cd.disturbance_map(k).tr_mul(&h.normal), covariance)?;
            rows.push(ChanceRow {
                id: RowId { step: k, index },
                coeffs,
                sigma,
                rhs: h.offset - h.normal.dot(&offset),
            });
        }
    }
    Ok(ReformulatedProgram {
        n_u: spec.input_len(),
        rows,
        risk,
        budget: spec.alpha,
        lambda_floor: risk.floor(),
        inputs: spec.stacked_inputs(),
        objective: spec.objective.matrix(spec.input_len()),
    })
}

/// Program tightened with sample statistics and the sample-based bound.
///
/// Fails when the sample count is below four or below the count at which the
/// risk budget becomes reachable at all.
pub fn build_proposed(spec: &ProblemSpec, stats: &SampleStatistics, ctx: &BoundContext) -> Result<ReformulatedProgram> {
    spec.validate()?;
    if stats.count() as f64 != ctx.samples() {
        return Err(Error::InvalidParameter(format!(
            "statistics come from {} samples but the bound context uses {}",
            stats.count(),
            ctx.samples()
        )));
    }
    check_sample_gates(stats.count(), spec.target.total_halfspaces().max(1), spec.alpha)?;
    build_moment_program(spec, stats.mean(), stats.covariance(), RiskMap::SampleVp(*ctx))
}

/// Program tightened with known moments and the one-sided VP bound.
pub fn build_osvpi(spec: &ProblemSpec, model: &GaussianModel) -> Result<ReformulatedProgram> {
    build_moment_program(spec, model.mean(), model.covariance(), RiskMap::Osvpi)
}

/// Scenario program: `g'(A^k x0 + C(k) U + D(k) W^[j]) <= h` for every sample `j`.
pub fn build_scenario(spec: &ProblemSpec, samples: &SampleSet) -> Result<ScenarioProgram> {
    spec.validate()?;
    check_dim("sample length", spec.disturbance_len(), samples.dim())?;
    let cd = spec.dynamics()?;
    let mut bases = Vec::with_capacity(spec.target.total_halfspaces());
    let mut rhs = Vec::with_capacity(spec.target.total_halfspaces());
    for (id, h) in spec.target.rows() {
        let k = id.step;
        let coeffs = cd.input_map(k).tr_mul(&h.normal);
        let fixed = h.offset - h.normal.dot(&(cd.power(k) * &spec.x0));
        let through = cd.disturbance_map(k).tr_mul(&h.normal);
        rhs.push(samples.iter().map(|w| fixed - through.dot(w)).collect());
        bases.push((id, coeffs));
    }
    Ok(ScenarioProgram {
        n_u: spec.input_len(),
        n_samples: samples.len(),
        bases,
        rhs,
        inputs: spec.stacked_inputs(),
        objective: spec.objective.matrix(spec.input_len()),
    })
}

/// Samples needed by the scenario approach: `ceil((2/alpha)(ln(1/beta) + n_opt))`.
pub fn scenario_sample_count(alpha: f64, beta: f64, n_opt: usize) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1], got {beta}")));
    }
    if n_opt == 0 {
        return Err(Error::Domain("at least one decision variable is required".into()));
    }
    let count = 2.0 / alpha * (libm::log(1.0 / beta) + n_opt as f64);
    Ok(libm::ceil(count) as u64)
}

/// Mean state `A^k x0 + C(k) U + D(k) mean` and the per-coordinate standard
/// deviation of `x(k)` under `covariance`, for `k = 0..=N`.
pub fn mean_trajectory(
    spec: &ProblemSpec,
    u: &DVector<f64>,
    mean: &DVector<f64>,
    covariance: &DMatrix<f64>,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let cd = spec.dynamics()?;
    let states = cd.trajectory(&spec.x0, u, mean)?;
    let n = spec.system.n();
    let mut out = Vec::with_capacity(states.len());
    for (k, x) in states.into_iter().enumerate() {
        let std = if k == 0 {
            DVector::zeros(n)
        } else {
            let d = cd.disturbance_map(k);
            let var = d * covariance * d.transpose();
            DVector::from_fn(n, |i, _| libm::sqrt(var[(i, i)].max(0.0)))
        };
        out.push((x, std));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{compute_statistics, generate_samples};
    use alloc::vec;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    pub(crate) fn scalar_spec(h: f64, alpha: f64) -> ProblemSpec {
        let system = LtiSystem::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        ProblemSpec {
            system,
            horizon: 1,
            x0: dv(&[0.0]),
            input: InputSet::boxed(dv(&[-10.0]), dv(&[10.0])),
            target: TargetSet::new(vec![vec![HalfSpace::new(dv(&[1.0]), h)]]),
            alpha,
            objective: Objective::SumOfSquares,
        }
    }

    #[test]
    fn scalar_rows() {
        let spec = scalar_spec(2.0, 0.1);
        let set = SampleSet::new((0..50).map(|i| dv(&[0.1 * libm::sin(i as f64)])).collect()).unwrap();
        let stats = compute_statistics(&set).unwrap();
        let ctx = BoundContext::new(50).unwrap();
        let prog = build_proposed(&spec, &stats, &ctx).unwrap();
        assert_eq!(prog.rows.len(), 1);
        let row = &prog.rows[0];
        assert_eq!(row.coeffs, dv(&[1.0]));
        assert!((row.rhs - (2.0 - stats.mean()[0])).abs() < 1e-15);
        assert!((row.sigma - libm::sqrt(stats.covariance()[(0, 0)])).abs() < 1e-15);
        assert_eq!(prog.lambda_floor, ctx.lambda_min());
    }

    #[test]
    fn zero_variance_rows_are_deterministic() {
        let spec = scalar_spec(2.0, 0.1);
        let stats = SampleStatistics::from_moments(50, dv(&[0.25]), DMatrix::zeros(1, 1)).unwrap();
        let prog = build_proposed(&spec, &stats, &BoundContext::new(50).unwrap()).unwrap();
        assert_eq!(prog.rows[0].sigma, 0.0);
        assert_eq!(prog.rows[0].rhs, 1.75);
    }

    #[test]
    fn sample_gates() {
        let spec = scalar_spec(2.0, 0.1);
        let set = SampleSet::new((0..4).map(|i| dv(&[i as f64])).collect()).unwrap();
        let stats = compute_statistics(&set).unwrap();
        // min_samples(1, 0.1) = 4, so four samples pass both gates
        assert!(build_proposed(&spec, &stats, &BoundContext::new(4).unwrap()).is_ok());
        let spec = scalar_spec(2.0, 0.05);
        assert!(matches!(
            build_proposed(&spec, &stats, &BoundContext::new(4).unwrap()),
            Err(Error::InsufficientSamples { need: 8, .. })
        ));
        let three = compute_statistics(&SampleSet::new((0..3).map(|i| dv(&[i as f64])).collect()).unwrap()).unwrap();
        assert!(matches!(
            build_proposed(&spec, &three, &BoundContext::relaxed(3).unwrap()),
            Err(Error::InsufficientSamples { need: 4, .. })
        ));
    }

    #[test]
    fn sigma_does_not_depend_on_inputs() {
        let spec = scalar_spec(2.0, 0.1);
        let model = GaussianModel::new(dv(&[0.0]), DMatrix::from_element(1, 1, 0.04), 1).unwrap();
        let stats = compute_statistics(&generate_samples(&model, 30).unwrap()).unwrap();
        let ctx = BoundContext::new(30).unwrap();
        let a = build_proposed(&spec, &stats, &ctx).unwrap();
        let mut shifted = spec.clone();
        shifted.x0 = dv(&[5.0]);
        let b = build_proposed(&shifted, &stats, &ctx).unwrap();
        assert_eq!(a.rows[0].sigma, b.rows[0].sigma);
        assert_ne!(a.rows[0].rhs, b.rows[0].rhs);
    }

    #[test]
    fn scenario_rows_and_counts() {
        let spec = scalar_spec(2.0, 0.1);
        let set = SampleSet::new(vec![dv(&[0.5]), dv(&[-0.25]), dv(&[0.1])]).unwrap();
        let prog = build_scenario(&spec, &set).unwrap();
        assert_eq!(prog.row_count(), 3);
        assert_eq!(prog.rhs[0], vec![1.5, 2.25, 1.9]);
    }

    #[test]
    fn scenario_count_formula() {
        assert_eq!(scenario_sample_count(0.05, 1e-8, 15).unwrap(), 1337);
        assert_eq!(scenario_sample_count(0.1, 1e-4, 10).unwrap(), 385);
        assert_eq!(scenario_sample_count(0.05, 1.0, 15).unwrap(), 600);
        assert!(scenario_sample_count(0.0, 0.5, 1).is_err());
        assert!(scenario_sample_count(0.1, 0.0, 1).is_err());
        assert!(scenario_sample_count(0.1, 0.5, 0).is_err());
    }

    #[test]
    fn diagnosis_names_impossible_rows() {
        // |u| <= 10 but x(1) = u must be <= -20
        let spec = scalar_spec(-20.0, 0.1);
        let model = GaussianModel::new(dv(&[0.0]), DMatrix::from_element(1, 1, 0.01), 1).unwrap();
        let prog = build_osvpi(&spec, &model).unwrap();
        let diag = prog.diagnose_rows();
        assert_eq!(diag.len(), 1);
        assert_eq!(diag[0].row, RowId { step: 1, index: 0 });
        assert!((diag[0].gap - (10.0 + 0.1 * libm::sqrt(5.0 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        let mut spec = scalar_spec(1.0, 0.1);
        spec.alpha = 1.0 / 6.0;
        assert!(spec.validate().is_err());
        let mut spec = scalar_spec(1.0, 0.1);
        spec.input = InputSet::boxed(dv(&[1.0]), dv(&[-1.0]));
        assert!(spec.validate().is_err());
        let mut spec = scalar_spec(1.0, 0.1);
        spec.target = TargetSet::new(vec![vec![HalfSpace::new(dv(&[0.0]), 1.0)]]);
        assert!(spec.validate().is_err());
        let mut spec = scalar_spec(1.0, 0.1);
        spec.objective = Objective::Quadratic(DMatrix::from_element(1, 1, -1.0));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn nonempty_probe() {
        let box2 = |lo: f64, hi: f64| vec![HalfSpace::new(dv(&[1.0]), hi), HalfSpace::new(dv(&[-1.0]), -lo)];
        assert_eq!(TargetSet::new(vec![box2(0.0, 2.0), vec![]]).check_nonempty(), Ok(()));
        assert_eq!(
            TargetSet::new(vec![box2(0.0, 2.0), box2(3.0, 1.0)]).check_nonempty(),
            Err(2)
        );
    }
}
