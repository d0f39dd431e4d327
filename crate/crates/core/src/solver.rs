//! Solving reformulated and scenario programs, and checking the answers.
//!
//! Both program classes go through the same log-barrier engine. The scenario
//! program is the special case without risk variables.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::barrier::{self, Outcome, Problem, RiskBlock, Row, Violation};
use crate::error::{Error, Result};
use crate::reformulation::{InputConstraints, ReformulatedProgram, RowId, ScenarioProgram};

/// Rows with a sample standard deviation at or below this are treated as deterministic.
pub const ZERO_SIGMA: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub kkt_tol: f64,
    /// Newton steps allowed per centering.
    pub max_iter: usize,
    pub barrier_mu_factor: f64,
    pub feas_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_iter: 200,
            barrier_mu_factor: 10.0,
            feas_tol: 1e-9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kkt_tol > 0.0
            && self.feas_tol > 0.0
            && self.max_iter > 0
            && self.barrier_mu_factor > 1.0
            && self.barrier_mu_factor.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }

    fn engine(&self) -> barrier::Settings {
        barrier::Settings {
            kkt_tol: self.kkt_tol,
            max_newton: self.max_iter,
            mu_factor: self.barrier_mu_factor,
            feas_tol: self.feas_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    IterLimit,
}

/// A single constraint of either program class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRef {
    Target(RowId),
    /// Target row enforced at one scenario sample.
    Scenario {
        row: RowId,
        sample: usize,
    },
    InputLower(usize),
    InputUpper(usize),
    InputRow(usize),
    RiskBudget,
    LambdaFloor(RowId),
}

/// Multipliers in program order. Scenario rows are stored row-major as
/// `rows[base * n_samples + sample]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Duals {
    pub rows: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub input_rows: Vec<f64>,
    pub lambda_floor: Vec<f64>,
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Largest constraint violation.
    pub primal: f64,
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    /// Largest `|multiplier * slack|`.
    pub complementarity: f64,
    /// Largest negative multiplier, as a positive number.
    pub dual_infeasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.stationarity)
            .max(self.complementarity)
            .max(self.dual_infeasibility)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub newton_steps: usize,
    pub phase_one_steps: usize,
    /// Objective after each outer barrier iteration.
    pub outer_objectives: Vec<f64>,
    /// Smallest risk variable seen along the solve path.
    pub min_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub u: DVector<f64>,
    /// One entry per target row; absent for the scenario program.
    pub lambda: Option<DVector<f64>>,
    pub cost: f64,
    pub status: Status,
    pub kkt: KktResiduals,
    /// Wall time, filled in by callers that can measure it.
    pub solve_seconds: f64,
    pub duals: Duals,
    /// Most violated constraint when the program is infeasible.
    pub violated: Option<ConstraintRef>,
    pub diagnostics: Diagnostics,
}

fn sparse(v: &DVector<f64>) -> Vec<(usize, f64)> {
    v.iter().copied().enumerate().filter(|&(_, c)| c != 0.0).collect()
}

/// Box and polytope rows over the first `n_u` variables, appended in the
/// order upper bounds, lower bounds, polytope rows.
fn push_input_rows(rows: &mut Vec<Row>, inputs: &InputConstraints) -> Result<()> {
    for (j, (lo, hi)) in inputs.lower.iter().zip(inputs.upper.iter()).enumerate() {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "input {j} has an empty interior [{lo}, {hi}]"
            )));
        }
    }
    for (j, &hi) in inputs.upper.iter().enumerate() {
        rows.push(Row {
            coef: alloc::vec![(j, 1.0)],
            rhs: hi,
            relaxable: false,
        });
    }
    for (j, &lo) in inputs.lower.iter().enumerate() {
        rows.push(Row {
            coef: alloc::vec![(j, -1.0)],
            rhs: -lo,
            relaxable: false,
        });
    }
    for r in &inputs.rows {
        rows.push(Row {
            coef: sparse(&r.coeffs),
            rhs: r.rhs,
            relaxable: true,
        });
    }
    Ok(())
}

fn objective_parts(q: &DMatrix<f64>, dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n_u = q.nrows();
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((0, 0), (n_u, n_u)).copy_from(&(q * 2.0));
    (p, DVector::zeros(dim))
}

struct Layout {
    n_u: usize,
    n_targets: usize,
    n_inputs: usize,
    /// Target index of each free risk variable, in variable order.
    free: Vec<usize>,
}

impl Layout {
    fn constraint(&self, i: usize, ids: &dyn Fn(usize) -> ConstraintRef) -> ConstraintRef {
        let (t, u) = (self.n_targets, self.n_u);
        if i < t {
            ids(i)
        } else if i < t + u {
            ConstraintRef::InputUpper(i - t)
        } else if i < t + 2 * u {
            ConstraintRef::InputLower(i - t - u)
        } else if i < t + 2 * u + self.n_inputs {
            ConstraintRef::InputRow(i - t - 2 * u)
        } else {
            ids(self.free[i - t - 2 * u - self.n_inputs]).floor_of()
        }
    }

    fn split_duals(&self, row_duals: &[f64], risk: f64) -> Duals {
        let (t, u, p) = (self.n_targets, self.n_u, self.n_inputs);
        Duals {
            rows: row_duals[..t].to_vec(),
            upper: row_duals[t..t + u].to_vec(),
            lower: row_duals[t + u..t + 2 * u].to_vec(),
            input_rows: row_duals[t + 2 * u..t + 2 * u + p].to_vec(),
            lambda_floor: row_duals[t + 2 * u + p..].to_vec(),
            risk,
        }
    }
}

impl ConstraintRef {
    fn floor_of(self) -> ConstraintRef {
        match self {
            ConstraintRef::Target(id) => ConstraintRef::LambdaFloor(id),
            other => other,
        }
    }
}

fn diagnostics(r: &barrier::EngineResult) -> Diagnostics {
    Diagnostics {
        newton_steps: r.newton_steps,
        phase_one_steps: r.phase_one_steps,
        outer_objectives: r.outer_objectives.clone(),
        min_lambda: r.min_risk_var,
    }
}

fn status_of(
    outcome: &Outcome,
    layout: &Layout,
    ids: &dyn Fn(usize) -> ConstraintRef,
) -> Result<(Status, Option<ConstraintRef>)> {
    Ok(match outcome {
        Outcome::Optimal => (Status::Optimal, None),
        Outcome::IterLimit => (Status::IterLimit, None),
        Outcome::Infeasible(Violation::Risk) => (Status::Infeasible, Some(ConstraintRef::RiskBudget)),
        Outcome::Infeasible(Violation::Row(i)) => (Status::Infeasible, Some(layout.constraint(*i, ids))),
        Outcome::BadStart(i) => {
            return Err(Error::Numerical(format!(
                "start point violates {:?}",
                layout.constraint(*i, ids)
            )))
        }
    })
}

/// Floor actually imposed on the risk variables.
pub fn lambda_floor(prog: &ReformulatedProgram) -> f64 {
    prog.lambda_floor * (1.0 + 1e-9)
}

/// Level at which a deterministic (zero-spread) row's risk variable is fixed.
///
/// Such a row does not depend on its `lambda`, so any value is admissible;
/// the smallest charge is reached as `lambda` grows. The variable is pinned
/// where the charge is within `1e-6 alpha` of that infimum.
pub fn fixed_lambda(prog: &ReformulatedProgram) -> Result<f64> {
    prog.risk.inverse(prog.risk.asymptote() + 1e-6 * prog.budget)
}

fn infeasible(
    prog_u: DVector<f64>,
    lambda: Option<DVector<f64>>,
    cost: f64,
    violated: ConstraintRef,
    duals: Duals,
) -> Solution {
    Solution {
        u: prog_u,
        lambda,
        cost,
        status: Status::Infeasible,
        kkt: KktResiduals::default(),
        solve_seconds: 0.0,
        duals,
        violated: Some(violated),
        diagnostics: Diagnostics::default(),
    }
}

/// Minimize `U'QU` over `(U, lambda)` for a moment-based program.
///
/// Returns `Err` only for malformed input. Infeasibility and the iteration
/// cap are reported through [`Solution::status`].
pub fn solve_proposed(prog: &ReformulatedProgram, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let (n_u, n_t) = (prog.n_u, prog.rows.len());
    for r in &prog.rows {
        crate::error::check_dim("chance row coefficients", n_u, r.coeffs.len())?;
        if !(r.sigma >= 0.0 && r.sigma.is_finite() && r.rhs.is_finite()) {
            return Err(Error::InvalidParameter(format!("row {} is not well formed", r.id)));
        }
    }
    if !(prog.budget > 0.0 && prog.budget < 1.0 / 6.0) {
        return Err(Error::Domain(format!(
            "risk budget must lie in (0, 1/6), got {}",
            prog.budget
        )));
    }
    let floor = lambda_floor(prog);
    let free: Vec<usize> = (0..n_t).filter(|&i| prog.rows[i].sigma > ZERO_SIGMA).collect();
    let n_fixed = n_t - free.len();
    let lambda_fixed = if n_fixed > 0 {
        fixed_lambda(prog)?
    } else {
        f64::INFINITY
    };
    let budget = prog.budget - n_fixed as f64 * prog.risk.value(lambda_fixed);
    let ids = |i: usize| ConstraintRef::Target(prog.rows[i].id);
    let zero_duals = || Duals {
        rows: alloc::vec![0.0; n_t],
        lower: alloc::vec![0.0; n_u],
        upper: alloc::vec![0.0; n_u],
        input_rows: alloc::vec![0.0; prog.inputs.rows.len()],
        lambda_floor: alloc::vec![0.0; free.len()],
        risk: 0.0,
    };
    let center = prog.inputs.center();
    if !(budget > free.len() as f64 * prog.risk.asymptote()) {
        return Ok(infeasible(center, None, 0.0, ConstraintRef::RiskBudget, zero_duals()));
    }
    if let Some(d) = prog.diagnose_rows().into_iter().max_by(|a, b| a.gap.total_cmp(&b.gap)) {
        return Ok(infeasible(
            center,
            None,
            0.0,
            ConstraintRef::Target(d.row),
            zero_duals(),
        ));
    }

    let dim = n_u + free.len();
    let mut var_of = alloc::vec![None; n_t];
    for (v, &i) in free.iter().enumerate() {
        var_of[i] = Some(n_u + v);
    }
    let mut rows = Vec::with_capacity(n_t + 2 * n_u + prog.inputs.rows.len() + free.len());
    for (i, r) in prog.rows.iter().enumerate() {
        let mut coef = sparse(&r.coeffs);
        if let Some(v) = var_of[i] {
            coef.push((v, r.sigma));
        }
        rows.push(Row {
            coef,
            rhs: r.rhs,
            relaxable: true,
        });
    }
    push_input_rows(&mut rows, &prog.inputs)?;
    for v in 0..free.len() {
        rows.push(Row {
            coef: alloc::vec![(n_u + v, -1.0)],
            rhs: -floor,
            relaxable: false,
        });
    }
    let (p, q) = objective_parts(&prog.objective, dim);
    let risk = (!free.is_empty()).then(|| RiskBlock::new(prog.risk, (n_u..dim).collect(), budget));
    let problem = Problem { dim, p, q, rows, risk };

    // uniform allocation, kept strictly inside the budget
    let share = budget / free.len().max(1) as f64;
    let target = prog.risk.asymptote() + 0.9 * (share - prog.risk.asymptote());
    let lambda0 = prog.risk.inverse(target).unwrap_or(floor * 1.01).max(floor * 1.01);
    let mut z0 = DVector::from_element(dim, lambda0);
    z0.rows_mut(0, n_u).copy_from(&center);

    let result = barrier::solve(&problem, &z0, &cfg.engine());
    let layout = Layout {
        n_u,
        n_targets: n_t,
        n_inputs: prog.inputs.rows.len(),
        free: free.clone(),
    };
    let (status, violated) = status_of(&result.outcome, &layout, &ids)?;
    let u = result.z.rows(0, n_u).into_owned();
    let lambda = DVector::from_fn(n_t, |i, _| var_of[i].map_or(lambda_fixed, |v| result.z[v]));
    let duals = if status == Status::Infeasible {
        zero_duals()
    } else {
        layout.split_duals(&result.row_duals, result.risk_dual)
    };
    let mut sol = Solution {
        cost: (&prog.objective * &u).dot(&u),
        u,
        lambda: Some(lambda),
        status,
        kkt: KktResiduals::default(),
        solve_seconds: 0.0,
        duals,
        violated,
        diagnostics: diagnostics(&result),
    };
    if status != Status::Infeasible {
        sol.kkt = kkt_report_proposed(prog, &sol);
        downgrade_unverified(&mut sol, cfg);
    }
    Ok(sol)
}

/// Minimize `U'QU` subject to every sampled row and the input set.
pub fn solve_scenario(prog: &ScenarioProgram, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if prog.n_samples == 0 {
        return Err(Error::InvalidParameter("the scenario program has no samples".into()));
    }
    let n_u = prog.n_u;
    let n_rows = prog.row_count();
    let mut rows = Vec::with_capacity(n_rows + 2 * n_u + prog.inputs.rows.len());
    for ((_, coeffs), rhs) in prog.bases.iter().zip(&prog.rhs) {
        crate::error::check_dim("scenario row coefficients", n_u, coeffs.len())?;
        crate::error::check_dim("scenario right-hand sides", prog.n_samples, rhs.len())?;
        let coef = sparse(coeffs);
        for &b in rhs {
            rows.push(Row {
                coef: coef.clone(),
                rhs: b,
                relaxable: true,
            });
        }
    }
    push_input_rows(&mut rows, &prog.inputs)?;
    let (p, q) = objective_parts(&prog.objective, n_u);
    let problem = Problem {
        dim: n_u,
        p,
        q,
        rows,
        risk: None,
    };
    let result = barrier::solve(&problem, &prog.inputs.center(), &cfg.engine());
    let layout = Layout {
        n_u,
        n_targets: n_rows,
        n_inputs: prog.inputs.rows.len(),
        free: Vec::new(),
    };
    let ids = |i: usize| ConstraintRef::Scenario {
        row: prog.bases[i / prog.n_samples].0,
        sample: i % prog.n_samples,
    };
    let (status, violated) = status_of(&result.outcome, &layout, &ids)?;
    let u = result.z.clone();
    let duals = if status == Status::Infeasible {
        Duals {
            rows: alloc::vec![0.0; n_rows],
            lower: alloc::vec![0.0; n_u],
            upper: alloc::vec![0.0; n_u],
            input_rows: alloc::vec![0.0; prog.inputs.rows.len()],
            ..Duals::default()
        }
    } else {
        layout.split_duals(&result.row_duals, 0.0)
    };
    let mut sol = Solution {
        cost: (&prog.objective * &u).dot(&u),
        u,
        lambda: None,
        status,
        kkt: KktResiduals::default(),
        solve_seconds: 0.0,
        duals,
        violated,
        diagnostics: diagnostics(&result),
    };
    if status != Status::Infeasible {
        sol.kkt = kkt_report_scenario(prog, &sol);
        downgrade_unverified(&mut sol, cfg);
    }
    Ok(sol)
}

/// An `Optimal` claim stands only if the independent residuals agree.
fn downgrade_unverified(sol: &mut Solution, cfg: &SolverConfig) {
    let k = &sol.kkt;
    let dual = k.stationarity.max(k.complementarity).max(k.dual_infeasibility);
    if sol.status == Status::Optimal && (k.primal > cfg.feas_tol || dual > cfg.kkt_tol) {
        sol.status = Status::IterLimit;
    }
}

#[derive(Default)]
struct Accumulator {
    primal: f64,
    complementarity: f64,
    dual_infeasibility: f64,
}

impl Accumulator {
    /// Constraint `value <= 0` with multiplier `nu`.
    fn add(&mut self, value: f64, nu: f64) {
        self.primal = self.primal.max(value);
        self.complementarity = self.complementarity.max((nu * value).abs());
        self.dual_infeasibility = self.dual_infeasibility.max(-nu);
    }

    fn finish(self, gradient: &DVector<f64>) -> KktResiduals {
        KktResiduals {
            primal: self.primal.max(0.0),
            stationarity: if gradient.is_empty() { 0.0 } else { gradient.amax() },
            complementarity: self.complementarity,
            dual_infeasibility: self.dual_infeasibility.max(0.0),
        }
    }
}

fn input_terms(
    inputs: &InputConstraints,
    u: &DVector<f64>,
    duals: &Duals,
    acc: &mut Accumulator,
    grad: &mut DVector<f64>,
) {
    for j in 0..u.len() {
        let (up, lo) = (
            duals.upper.get(j).copied().unwrap_or(0.0),
            duals.lower.get(j).copied().unwrap_or(0.0),
        );
        acc.add(u[j] - inputs.upper[j], up);
        acc.add(inputs.lower[j] - u[j], lo);
        grad[j] += up - lo;
    }
    for (p, r) in inputs.rows.iter().enumerate() {
        let nu = duals.input_rows.get(p).copied().unwrap_or(0.0);
        acc.add(r.coeffs.dot(u) - r.rhs, nu);
        grad.axpy(nu, &r.coeffs, 1.0);
    }
}

/// KKT residuals of a moment-based solution, recomputed from program data.
///
/// Risk variables of zero-spread rows are parameters of the program, so they
/// enter the risk sum but not the stationarity conditions.
pub fn kkt_report_proposed(prog: &ReformulatedProgram, sol: &Solution) -> KktResiduals {
    let n_u = prog.n_u;
    let u = &sol.u;
    let lambda = sol.lambda.clone().unwrap_or_else(|| DVector::zeros(prog.rows.len()));
    let floor = lambda_floor(prog);
    let mut acc = Accumulator::default();
    let mut grad_u = &prog.objective * u * 2.0;
    let mut grad_l = Vec::new();
    let mut risk_sum = 0.0;
    let mut free = 0;
    for (i, r) in prog.rows.iter().enumerate() {
        let nu = sol.duals.rows.get(i).copied().unwrap_or(0.0);
        acc.add(r.coeffs.dot(u) + lambda[i] * r.sigma - r.rhs, nu);
        grad_u.axpy(nu, &r.coeffs, 1.0);
        risk_sum += prog.risk.value(lambda[i]);
        if r.sigma > ZERO_SIGMA {
            let floor_dual = sol.duals.lambda_floor.get(free).copied().unwrap_or(0.0);
            acc.add(floor - lambda[i], floor_dual);
            grad_l.push(nu * r.sigma + sol.duals.risk * prog.risk.derivative(lambda[i]) - floor_dual);
            free += 1;
        }
    }
    acc.add(risk_sum - prog.budget, sol.duals.risk);
    input_terms(&prog.inputs, u, &sol.duals, &mut acc, &mut grad_u);
    let mut grad = DVector::zeros(n_u + grad_l.len());
    grad.rows_mut(0, n_u).copy_from(&grad_u);
    for (v, g) in grad_l.into_iter().enumerate() {
        grad[n_u + v] = g;
    }
    acc.finish(&grad)
}

/// KKT residuals of a scenario solution, recomputed from program data.
pub fn kkt_report_scenario(prog: &ScenarioProgram, sol: &Solution) -> KktResiduals {
    let u = &sol.u;
    let mut acc = Accumulator::default();
    let mut grad = &prog.objective * u * 2.0;
    for (b, ((_, coeffs), rhs)) in prog.bases.iter().zip(&prog.rhs).enumerate() {
        let value = coeffs.dot(u);
        let mut weight = 0.0;
        for (j, &h) in rhs.iter().enumerate() {
            let nu = sol.duals.rows.get(b * prog.n_samples + j).copied().unwrap_or(0.0);
            acc.add(value - h, nu);
            weight += nu;
        }
        grad.axpy(weight, coeffs, 1.0);
    }
    input_terms(&prog.inputs, u, &sol.duals, &mut acc, &mut grad);
    acc.finish(&grad)
}
