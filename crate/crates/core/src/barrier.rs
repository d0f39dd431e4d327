//! Log-barrier interior-point engine shared by every program class.
//!
//! Minimizes `1/2 z'Pz + q'z` subject to linear rows `a'z <= b` and at most
//! one separable convex row `sum_v map(z_v) <= budget`. Each centering step
//! is a damped Newton method with a fraction-to-boundary rule and Armijo
//! backtracking. A phase-I problem with one extra slack variable finds a
//! strictly feasible start when the given one is not.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::concentration::RiskMap;

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub coef: Vec<(usize, f64)>,
    pub rhs: f64,
    /// Rows that may be violated at the start and get relaxed in phase I.
    /// Others (bounds) must hold strictly at the start point.
    pub relaxable: bool,
}

impl Row {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        self.coef.iter().map(|&(j, c)| c * z[j]).sum()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RiskBlock {
    pub map: RiskMap,
    pub vars: Vec<usize>,
    pub budget: f64,
    /// Phase-I slack subtracted from the left-hand side.
    slack_var: Option<usize>,
}

impl RiskBlock {
    pub fn new(map: RiskMap, vars: Vec<usize>, budget: f64) -> Self {
        Self {
            map,
            vars,
            budget,
            slack_var: None,
        }
    }

    fn lhs(&self, z: &DVector<f64>) -> Option<f64> {
        let mut total = 0.0;
        for &v in &self.vars {
            if !(z[v] > 0.0) {
                return None;
            }
            total += self.map.value(z[v]);
        }
        if let Some(s) = self.slack_var {
            total -= z[s];
        }
        Some(total)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub dim: usize,
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub rows: Vec<Row>,
    pub risk: Option<RiskBlock>,
}

impl Problem {
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.p * z).dot(z) + self.q.dot(z)
    }

    fn constraint_count(&self) -> usize {
        self.rows.len() + usize::from(self.risk.is_some())
    }

    /// Row slacks and the risk slack, or `None` outside the strict interior.
    fn slacks(&self, z: &DVector<f64>) -> Option<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let s = row.rhs - row.value(z);
            if !(s > 0.0) {
                return None;
            }
            out.push(s);
        }
        let risk_slack = match &self.risk {
            Some(r) => {
                let s = r.budget - r.lhs(z)?;
                if !(s > 0.0) {
                    return None;
                }
                s
            }
            None => f64::INFINITY,
        };
        Some((out, risk_slack))
    }

    /// `phi(z + step dz) - phi(z)`, evaluated without cancellation.
    fn barrier_change(
        &self,
        t: f64,
        z: &DVector<f64>,
        dz: &DVector<f64>,
        step: f64,
        rows: &[f64],
        risk_slack: f64,
    ) -> Option<f64> {
        let pd = &self.p * dz;
        let mut v = t * step * ((&self.p * z + &self.q).dot(dz) + 0.5 * step * pd.dot(dz));
        for (row, &s) in self.rows.iter().zip(rows) {
            let ratio = -step * row.value(dz) / s;
            if !(ratio > -1.0) {
                return None;
            }
            v -= libm::log1p(ratio);
        }
        if let Some(r) = &self.risk {
            let trial = z + dz * step;
            let s = r.budget - r.lhs(&trial)?;
            if !(s > 0.0) {
                return None;
            }
            v -= libm::log(s / risk_slack);
        }
        v.is_finite().then_some(v)
    }

    fn gradient_hessian(
        &self,
        t: f64,
        z: &DVector<f64>,
        rows: &[f64],
        risk_slack: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = (&self.p * z + &self.q) * t;
        let mut h = &self.p * t;
        for (row, &s) in self.rows.iter().zip(rows) {
            let inv = 1.0 / s;
            let inv2 = inv * inv;
            for (a, &(i, ci)) in row.coef.iter().enumerate() {
                g[i] += ci * inv;
                for &(j, cj) in &row.coef[a..] {
                    let v = ci * cj * inv2;
                    h[(i, j)] += v;
                    if i != j {
                        h[(j, i)] += v;
                    }
                }
            }
        }
        if let Some(r) = &self.risk {
            let inv = 1.0 / risk_slack;
            let mut grad: Vec<(usize, f64)> = r.vars.iter().map(|&v| (v, r.map.derivative(z[v]))).collect();
            if let Some(sv) = r.slack_var {
                grad.push((sv, -1.0));
            }
            for &(i, gi) in &grad {
                g[i] += gi * inv;
                for &(j, gj) in &grad {
                    h[(i, j)] += gi * gj * inv * inv;
                }
            }
            for &v in &r.vars {
                h[(v, v)] += r.map.second_derivative(z[v]) * inv;
            }
        }
        (g, h)
    }

    /// Largest step along `dz` keeping every linear row strictly feasible.
    fn max_step(&self, rows: &[f64], dz: &DVector<f64>) -> f64 {
        let mut step = 1.0f64;
        for (row, &s) in self.rows.iter().zip(rows) {
            let ds = row.value(dz);
            if ds > 0.0 {
                step = step.min(0.99 * s / ds);
            }
        }
        step
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub kkt_tol: f64,
    pub max_newton: usize,
    pub mu_factor: f64,
    pub feas_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Violation {
    Row(usize),
    Risk,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible(Violation),
    IterLimit,
    /// A non-relaxable row fails at the start point.
    BadStart(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct EngineResult {
    pub z: DVector<f64>,
    pub row_duals: Vec<f64>,
    pub risk_dual: f64,
    pub outcome: Outcome,
    pub newton_steps: usize,
    pub phase_one_steps: usize,
    pub outer_objectives: Vec<f64>,
    /// Smallest value any risk variable took along the path.
    pub min_risk_var: Option<f64>,
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut m = h.clone();
        if reg > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += reg;
            }
        }
        if let Some(chol) = m.cholesky() {
            let dz = chol.solve(&(-g));
            if dz.iter().all(|v| v.is_finite()) {
                return Some(dz);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

enum Centering {
    Converged,
    Stalled,
    IterLimit,
    /// Phase I hook reported a strictly feasible point.
    EarlyExit,
}

struct Path {
    newton_steps: usize,
    min_risk_var: Option<f64>,
}

impl Path {
    fn observe(&mut self, problem: &Problem, z: &DVector<f64>) {
        if let Some(r) = &problem.risk {
            for &v in &r.vars {
                debug_assert!(z[v] > r.map.inflection(), "risk variable left the convex region");
                self.min_risk_var = Some(self.min_risk_var.map_or(z[v], |m: f64| m.min(z[v])));
            }
        }
    }
}

fn center(
    problem: &Problem,
    t: f64,
    z: &mut DVector<f64>,
    settings: &Settings,
    path: &mut Path,
    stop_early: &dyn Fn(&DVector<f64>) -> bool,
) -> Centering {
    for _ in 0..settings.max_newton {
        let Some((rows, risk)) = problem.slacks(z) else {
            return Centering::Stalled;
        };
        let (g, h) = problem.gradient_hessian(t, z, &rows, risk);
        let Some(dz) = solve_newton(&h, &g) else {
            return Centering::Stalled;
        };
        let decrement2 = -g.dot(&dz);
        if decrement2 <= 1e-9 {
            return Centering::Converged;
        }
        let mut step = problem.max_step(&rows, &dz);
        let mut accepted = false;
        for _ in 0..80 {
            let trial = &*z + &dz * step;
            if trial == *z {
                break;
            }
            if let Some(v) = problem.barrier_change(t, z, &dz, step, &rows, risk) {
                if v <= -1e-2 * step * decrement2 {
                    *z = trial;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        path.newton_steps += 1;
        if !accepted {
            // roundoff floor of the barrier value
            return if decrement2 <= 1e-6 || step * dz.amax() <= f64::EPSILON * z.amax() {
                Centering::Converged
            } else {
                Centering::Stalled
            };
        }
        path.observe(problem, z);
        if stop_early(z) {
            return Centering::EarlyExit;
        }
    }
    Centering::IterLimit
}

fn duals(problem: &Problem, t: f64, z: &DVector<f64>) -> (Vec<f64>, f64) {
    match problem.slacks(z) {
        Some((rows, risk)) => {
            let row_duals = rows.iter().map(|s| 1.0 / (t * s)).collect();
            let risk_dual = if problem.risk.is_some() { 1.0 / (t * risk) } else { 0.0 };
            (row_duals, risk_dual)
        }
        None => (vec![0.0; problem.rows.len()], 0.0),
    }
}

fn initial_t(problem: &Problem, z: &DVector<f64>) -> f64 {
    // least-squares balance between objective and barrier gradients
    let Some((rows, risk)) = problem.slacks(z) else {
        return 1.0;
    };
    let obj = &problem.p * z + &problem.q;
    let (bar, _) = {
        let zero_obj = Problem {
            p: DMatrix::zeros(problem.dim, problem.dim),
            q: DVector::zeros(problem.dim),
            ..problem.clone()
        };
        zero_obj.gradient_hessian(1.0, z, &rows, risk)
    };
    let oo = obj.dot(&obj);
    if oo <= 0.0 {
        return 1.0;
    }
    let t = -obj.dot(&bar) / oo;
    if t.is_finite() {
        t.clamp(1e-2, 1e6)
    } else {
        1.0
    }
}

/// Drive `z` to a strictly feasible point via the phase-I problem
/// `min s  s.t.  relaxable rows <= s, risk <= s, other rows strict`.
fn phase_one(
    problem: &Problem,
    z0: &DVector<f64>,
    settings: &Settings,
    path: &mut Path,
) -> Result<DVector<f64>, Outcome> {
    for (i, row) in problem.rows.iter().enumerate() {
        if !row.relaxable && !(row.value(z0) < row.rhs) {
            return Err(Outcome::BadStart(i));
        }
    }
    let n = problem.dim;
    let s_idx = n;
    let mut worst = f64::NEG_INFINITY;
    for row in problem.rows.iter().filter(|r| r.relaxable) {
        worst = worst.max(row.value(z0) - row.rhs);
    }
    if let Some(r) = &problem.risk {
        match r.lhs(z0) {
            Some(v) => worst = worst.max(v - r.budget),
            None => return Err(Outcome::Infeasible(Violation::Risk)),
        }
    }
    let s0 = worst + 1.0;
    let floor = -(1.0 + s0.abs());

    let mut rows: Vec<Row> = problem
        .rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.relaxable {
                r.coef.push((s_idx, -1.0));
            }
            r
        })
        .collect();
    rows.push(Row {
        coef: vec![(s_idx, -1.0)],
        rhs: -floor,
        relaxable: false,
    });
    let risk = problem.risk.as_ref().map(|r| RiskBlock {
        slack_var: Some(s_idx),
        ..r.clone()
    });
    let mut q = DVector::zeros(n + 1);
    q[s_idx] = 1.0;
    let aux = Problem {
        dim: n + 1,
        p: DMatrix::zeros(n + 1, n + 1),
        q,
        rows,
        risk,
    };
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(z0);
    z[s_idx] = s0;

    let m = aux.constraint_count() as f64;
    let mut t = 1.0;
    let feasible = |z: &DVector<f64>| z[s_idx] < 0.0;
    loop {
        match center(&aux, t, &mut z, settings, path, &feasible) {
            Centering::EarlyExit => return Ok(z.rows(0, n).into_owned()),
            Centering::Converged | Centering::Stalled => {}
            Centering::IterLimit => return Err(Outcome::IterLimit),
        }
        if feasible(&z) {
            return Ok(z.rows(0, n).into_owned());
        }
        let gap = m / t;
        // dual lower bound on the optimal s is s - m/t
        if z[s_idx] - gap > 0.0 || gap <= settings.feas_tol {
            return Err(Outcome::Infeasible(most_violated(problem, &z.rows(0, n).into_owned())));
        }
        t *= settings.mu_factor;
    }
}

fn most_violated(problem: &Problem, z: &DVector<f64>) -> Violation {
    let mut best = (Violation::Risk, f64::NEG_INFINITY);
    for (i, row) in problem.rows.iter().enumerate() {
        let v = row.value(z) - row.rhs;
        if v > best.1 {
            best = (Violation::Row(i), v);
        }
    }
    if let Some(r) = &problem.risk {
        if let Some(v) = r.lhs(z) {
            if v - r.budget > best.1 {
                best = (Violation::Risk, v - r.budget);
            }
        }
    }
    best.0
}

pub(crate) fn solve(problem: &Problem, z0: &DVector<f64>, settings: &Settings) -> EngineResult {
    let mut path = Path {
        newton_steps: 0,
        min_risk_var: None,
    };
    let mut z = z0.clone();
    let mut phase_one_steps = 0;
    if problem.slacks(&z).is_none() {
        match phase_one(problem, &z, settings, &mut path) {
            Ok(found) => z = found,
            Err(outcome) => {
                let (row_duals, risk_dual) = (vec![0.0; problem.rows.len()], 0.0);
                return EngineResult {
                    z,
                    row_duals,
                    risk_dual,
                    outcome,
                    newton_steps: path.newton_steps,
                    phase_one_steps: path.newton_steps,
                    outer_objectives: Vec::new(),
                    min_risk_var: path.min_risk_var,
                };
            }
        }
        phase_one_steps = path.newton_steps;
    }
    path.observe(problem, &z);

    let m = problem.constraint_count() as f64;
    let mut t = initial_t(problem, &z);
    let mut outer_objectives = Vec::new();
    let never = |_: &DVector<f64>| false;
    let mut polished = None;
    let outcome = loop {
        let state = center(problem, t, &mut z, settings, &mut path, &never);
        let objective = problem.objective(&z);
        outer_objectives.push(objective);
        if let Centering::IterLimit = state {
            break Outcome::IterLimit;
        }
        let (row_duals, risk_dual) = duals(problem, t, &z);
        if let Some(p) = polish(problem, &z, &row_duals, risk_dual, settings) {
            polished = Some(p);
            break Outcome::Optimal;
        }
        let gap = m / t;
        if gap <= settings.kkt_tol * objective.abs().max(1.0) {
            break Outcome::Optimal;
        }
        if t > 1e18 {
            break Outcome::IterLimit;
        }
        t *= settings.mu_factor;
    };
    let (row_duals, risk_dual) = match polished {
        Some((pz, pr, prisk)) => {
            z = pz;
            (pr, prisk)
        }
        None => duals(problem, t, &z),
    };
    EngineResult {
        z,
        row_duals,
        risk_dual,
        outcome,
        newton_steps: path.newton_steps,
        phase_one_steps,
        outer_objectives,
        min_risk_var: path.min_risk_var,
    }
}

/// Residual of the equality-constrained KKT system on the active set.
fn active_residual(
    problem: &Problem,
    z: &DVector<f64>,
    active: &[usize],
    nu: &[f64],
    risk_dual: Option<f64>,
) -> DVector<f64> {
    let n = problem.dim;
    let extra = usize::from(risk_dual.is_some());
    let mut f = DVector::zeros(n + active.len() + extra);
    let mut stat = &problem.p * z + &problem.q;
    for (a, &i) in active.iter().enumerate() {
        let row = &problem.rows[i];
        for &(j, c) in &row.coef {
            stat[j] += nu[a] * c;
        }
        f[n + a] = row.value(z) - row.rhs;
    }
    if let (Some(r), Some(mu)) = (&problem.risk, risk_dual) {
        let mut total = 0.0;
        for &v in &r.vars {
            stat[v] += mu * r.map.derivative(z[v]);
            total += r.map.value(z[v]);
        }
        f[n + active.len()] = total - r.budget;
    }
    f.rows_mut(0, n).copy_from(&stat);
    f
}

/// Newton refinement of the barrier point on the KKT equations of the
/// constraints it identifies as active. Returns `None` when the active-set
/// system is singular or the refined point is not a valid KKT point.
fn polish(
    problem: &Problem,
    z0: &DVector<f64>,
    row_duals: &[f64],
    risk_dual: f64,
    settings: &Settings,
) -> Option<(DVector<f64>, Vec<f64>, f64)> {
    let (rows, risk_slack) = problem.slacks(z0)?;
    let risk_active = problem.risk.is_some() && risk_dual > risk_slack;
    // with the budget binding, every row coupled to a risk variable is tight
    // at the optimum, however small its multiplier
    let coupled = |row: &Row| {
        risk_active
            && row.relaxable
            && problem
                .risk
                .as_ref()
                .is_some_and(|r| row.coef.iter().any(|(j, c)| *c > 0.0 && r.vars.contains(j)))
    };
    let active: Vec<usize> = (0..problem.rows.len())
        .filter(|&i| row_duals[i] > rows[i] || coupled(&problem.rows[i]))
        .collect();
    let n = problem.dim;
    let k = active.len() + usize::from(risk_active);
    if k > n {
        return None;
    }
    let mut z = z0.clone();
    let mut nu: Vec<f64> = active.iter().map(|&i| row_duals[i]).collect();
    let mut mu = risk_active.then_some(risk_dual);
    let mut f = active_residual(problem, &z, &active, &nu, mu);
    for _ in 0..30 {
        if f.amax() <= 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(n + k, n + k);
        jac.view_mut((0, 0), (n, n)).copy_from(&problem.p);
        for (a, &i) in active.iter().enumerate() {
            for &(j, c) in &problem.rows[i].coef {
                jac[(j, n + a)] += c;
                jac[(n + a, j)] += c;
            }
        }
        if let (Some(r), Some(m)) = (&problem.risk, mu) {
            let col = n + active.len();
            for &v in &r.vars {
                jac[(v, v)] += m * r.map.second_derivative(z[v]);
                let d = r.map.derivative(z[v]);
                jac[(v, col)] += d;
                jac[(col, v)] += d;
            }
        }
        // minimum-norm step: variables no active constraint pins down stay put
        let svd = jac.svd(true, true);
        let cutoff = 1e-12 * svd.singular_values.max();
        let step = svd.solve(&(-&f), cutoff).ok()?;
        if step.iter().any(|v| !v.is_finite()) {
            return None;
        }
        z += step.rows(0, n);
        for (a, v) in nu.iter_mut().enumerate() {
            *v += step[n + a];
        }
        if let Some(m) = mu.as_mut() {
            *m += step[n + active.len()];
        }
        if let Some(r) = &problem.risk {
            if r.vars.iter().any(|&v| !(z[v] > r.map.floor())) {
                return None;
            }
        }
        f = active_residual(problem, &z, &active, &nu, mu);
    }
    let scale = settings.kkt_tol;
    if f.amax() > scale || nu.iter().any(|&v| v < -scale) || mu.is_some_and(|m| m < -scale) {
        return None;
    }
    for row in &problem.rows {
        if row.value(&z) - row.rhs > settings.feas_tol {
            return None;
        }
    }
    if let Some(r) = &problem.risk {
        if r.lhs(&z)? - r.budget > settings.feas_tol {
            return None;
        }
    }
    let mut full = vec![0.0; problem.rows.len()];
    for (a, &i) in active.iter().enumerate() {
        full[i] = nu[a].max(0.0);
    }
    Some((z, full, mu.unwrap_or(0.0).max(0.0)))
}

/// Strictly feasible point of `rows` (all relaxable), if one exists.
pub(crate) fn find_interior_point(dim: usize, rows: Vec<Row>, settings: &Settings) -> Option<DVector<f64>> {
    let problem = Problem {
        dim,
        p: DMatrix::zeros(dim, dim),
        q: DVector::zeros(dim),
        rows,
        risk: None,
    };
    let z0 = DVector::zeros(dim);
    if problem.slacks(&z0).is_some() {
        return Some(z0);
    }
    let mut path = Path {
        newton_steps: 0,
        min_risk_var: None,
    };
    phase_one(&problem, &z0, settings, &mut path).ok()
}
