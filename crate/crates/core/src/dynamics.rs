//! Discrete-time LTI systems and their concatenated (horizon-stacked) form.
//!
//! For `x(k+1) = A x(k) + B u(k) + w(k)` the state after `k` steps is
//!
//! ```text
//! x(k) = A^k x(0) + C(k) U + D(k) W
//! C(k) = [A^{k-1}B ... AB B 0 ... 0]     (n x N m)
//! D(k) = [A^{k-1}  ... A  I 0 ... 0]     (n x N n)
//! ```
//!
//! with `U` and `W` the stacked inputs and disturbances over the horizon.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::InvalidParameter(
                "system needs at least one state and one input".into(),
            ));
        }
        check_dim("A columns", a.nrows(), a.ncols())?;
        check_dim("B rows", a.nrows(), b.nrows())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("system matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// One step of the recursion.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }
}

/// Horizon-stacked prediction matrices of an [`LtiSystem`].
#[derive(Debug, Clone)]
pub struct ConcatenatedDynamics {
    n: usize,
    m: usize,
    horizon: usize,
    // powers[k] = A^k for k = 0..=N
    powers: Vec<DMatrix<f64>>,
    // input_maps[k-1] = C(k), disturbance_maps[k-1] = D(k)
    input_maps: Vec<DMatrix<f64>>,
    disturbance_maps: Vec<DMatrix<f64>>,
}

pub fn concatenate(sys: &LtiSystem, horizon: usize) -> Result<ConcatenatedDynamics> {
    ConcatenatedDynamics::new(sys, horizon)
}

impl ConcatenatedDynamics {
    pub fn new(sys: &LtiSystem, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        let (n, m) = (sys.n(), sys.m());
        let mut powers = Vec::with_capacity(horizon + 1);
        powers.push(DMatrix::identity(n, n));
        for k in 1..=horizon {
            let next = sys.a() * &powers[k - 1];
            powers.push(next);
        }

        let mut input_maps = Vec::with_capacity(horizon);
        let mut disturbance_maps = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            let mut c = DMatrix::zeros(n, horizon * m);
            let mut d = DMatrix::zeros(n, horizon * n);
            // block j multiplies u(j) / w(j) and carries A^{k-1-j}
            for j in 0..k {
                let p = &powers[k - 1 - j];
                c.view_mut((0, j * m), (n, m)).copy_from(&(p * sys.b()));
                d.view_mut((0, j * n), (n, n)).copy_from(p);
            }
            input_maps.push(c);
            disturbance_maps.push(d);
        }

        Ok(Self {
            n,
            m,
            horizon,
            powers,
            input_maps,
            disturbance_maps,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Length of the stacked input `U`.
    pub fn input_len(&self) -> usize {
        self.horizon * self.m
    }

    /// Length of the stacked disturbance `W`.
    pub fn disturbance_len(&self) -> usize {
        self.horizon * self.n
    }

    /// `A^k` for `k` in `0..=N`.
    pub fn power(&self, k: usize) -> &DMatrix<f64> {
        &self.powers[k]
    }

    /// `C(k)` for `k` in `1..=N`.
    pub fn input_map(&self, k: usize) -> &DMatrix<f64> {
        &self.input_maps[k - 1]
    }

    /// `D(k)` for `k` in `1..=N`.
    pub fn disturbance_map(&self, k: usize) -> &DMatrix<f64> {
        &self.disturbance_maps[k - 1]
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.horizon {
            return Err(Error::InvalidParameter(format!(
                "step {k} outside 1..={}",
                self.horizon
            )));
        }
        Ok(())
    }

    pub(crate) fn check_shapes(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        check_dim("x0", self.n, x0.len())?;
        check_dim("stacked input", self.input_len(), u.len())?;
        check_dim("stacked disturbance", self.disturbance_len(), w.len())
    }

    /// `A^k x0 + C(k) U + D(k) W`.
    pub fn state_at(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.check_step(k)?;
        self.check_shapes(x0, u, w)?;
        Ok(self.power(k) * x0 + self.input_map(k) * u + self.disturbance_map(k) * w)
    }

    /// Mean state at step `k` when `W` is replaced by its (sample) mean.
    pub fn propagate_mean(
        &self,
        x0: &DVector<f64>,
        u: &DVector<f64>,
        w_mean: &DVector<f64>,
        k: usize,
    ) -> Result<DVector<f64>> {
        self.state_at(x0, u, w_mean, k)
    }

    /// States `x(0), x(1), ..., x(N)`.
    pub fn trajectory(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_shapes(x0, u, w)?;
        let mut out = Vec::with_capacity(self.horizon + 1);
        out.push(x0.clone());
        for k in 1..=self.horizon {
            out.push(self.state_at(x0, u, w, k)?);
        }
        Ok(out)
    }
}

/// Clohessy-Wiltshire relative-motion parameters.
///
/// `mu` and `orbital_radius` only enter through the mean motion
/// `omega = sqrt(mu / R0^3)`, so any consistent unit pair works. The input is
/// a force held over one sampling interval, so `dt / mass` converts it to a
/// velocity change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CwhParameters {
    /// Gravitational parameter (km^3/s^2).
    pub mu: f64,
    /// Chief orbital radius (km).
    pub orbital_radius: f64,
    /// Deputy mass (kg).
    pub mass: f64,
    /// Sampling time (s).
    pub dt: f64,
}

impl Default for CwhParameters {
    fn default() -> Self {
        Self {
            mu: 398_600.441_8,
            orbital_radius: 7000.0,
            mass: 100.0,
            dt: 60.0,
        }
    }
}

impl CwhParameters {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu", self.mu),
            ("orbital_radius", self.orbital_radius),
            ("mass", self.mass),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "CWH parameter {name} must be finite and positive, got {v}"
                )));
            }
        }
        let w = self.mean_motion();
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("mean motion {w} is not positive")));
        }
        Ok(())
    }

    /// Orbital rate `sqrt(mu / R0^3)` in rad/s.
    pub fn mean_motion(&self) -> f64 {
        libm::sqrt(self.mu / (self.orbital_radius * self.orbital_radius * self.orbital_radius))
    }
}

/// Exact state-transition matrix of the unforced CWH equations over `dt`.
///
/// State ordering is `(x, y, z, vx, vy, vz)` with `x` radial, `y` along-track
/// and `z` cross-track.
pub fn cwh_transition(omega: f64, dt: f64) -> DMatrix<f64> {
    let wt = omega * dt;
    let (s, c) = (libm::sin(wt), libm::cos(wt));
    #[rustfmt::skip]
    let phi = DMatrix::from_row_slice(6, 6, &[
        4.0 - 3.0 * c,          0.0, 0.0, s / omega,              2.0 * (1.0 - c) / omega,       0.0,
        6.0 * (s - wt),         1.0, 0.0, 2.0 * (c - 1.0) / omega, (4.0 * s - 3.0 * wt) / omega, 0.0,
        0.0,                    0.0, c,   0.0,                    0.0,                           s / omega,
        3.0 * omega * s,        0.0, 0.0, c,                      2.0 * s,                       0.0,
        6.0 * omega * (c - 1.0), 0.0, 0.0, -2.0 * s,              4.0 * c - 3.0,                 0.0,
        0.0,                    0.0, -omega * s, 0.0,             0.0,                           c,
    ]);
    phi
}

/// Discrete CWH system with impulsive thrust applied at the start of each interval.
///
/// `A` is the exact transition matrix. The impulse `F dt` lands at the start
/// of the interval, so `B = A [0; (dt / m) I]`.
pub fn build_cwh(params: &CwhParameters) -> Result<LtiSystem> {
    params.validate()?;
    let a = cwh_transition(params.mean_motion(), params.dt);
    let mut impulse = DMatrix::zeros(6, 3);
    for i in 0..3 {
        impulse[(3 + i, i)] = params.dt / params.mass;
    }
    let b = &a * impulse;
    LtiSystem::new(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;

    fn simulate(sys: &LtiSystem, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, k: usize) -> DVector<f64> {
        let (n, m) = (sys.n(), sys.m());
        let mut x = x0.clone();
        for j in 0..k {
            let uj = u.rows(j * m, m).into_owned();
            let wj = w.rows(j * n, n).into_owned();
            x = sys.step(&x, &uj, &wj);
        }
        x
    }

    #[test]
    fn identity_dynamics_first_step() {
        let sys = LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let cd = concatenate(&sys, 2).unwrap();
        let mut expected = DMatrix::zeros(2, 4);
        expected.view_mut((0, 0), (2, 2)).fill_with_identity();
        assert_eq!(cd.input_map(1), &expected);
        assert_eq!(cd.disturbance_map(1), &expected);
    }

    #[test]
    fn nilpotent_keeps_latest_disturbance_only() {
        let n = 3;
        let sys = LtiSystem::new(DMatrix::zeros(n, n), DMatrix::from_element(n, 1, 1.0)).unwrap();
        let cd = concatenate(&sys, 4).unwrap();
        let d = cd.disturbance_map(4);
        for j in 0..4 {
            let block = d.view((0, j * n), (n, n));
            if j == 3 {
                assert_eq!(block, DMatrix::<f64>::identity(n, n));
            } else {
                assert!(block.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn zero_padding_and_identity_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.8]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = LtiSystem::new(a, b).unwrap();
        let horizon = 4;
        let cd = concatenate(&sys, horizon).unwrap();
        for k in 1..=horizon {
            let c = cd.input_map(k);
            let d = cd.disturbance_map(k);
            assert!(c.columns(k, horizon - k).iter().all(|v| *v == 0.0));
            assert!(d.columns(k * 2, (horizon - k) * 2).iter().all(|v| *v == 0.0));
            assert_eq!(d.view((0, (k - 1) * 2), (2, 2)), DMatrix::<f64>::identity(2, 2));
        }
    }

    #[test]
    fn matches_recursion_for_stable_system() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[0.4, 1.0]);
        let sys = LtiSystem::new(a, b).unwrap();
        let cd = concatenate(&sys, 3).unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let u = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let w = DVector::from_vec(vec![0.01, -0.02, 0.05, 0.0, -0.03, 0.04]);
        let direct = simulate(&sys, &x0, &u, &w, 3);
        let stacked = cd.state_at(&x0, &u, &w, 3).unwrap();
        assert_relative_eq!(direct, stacked, max_relative = 1e-12);
    }

    #[test]
    fn propagate_mean_trivial_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let sys = LtiSystem::new(a.clone(), DMatrix::identity(2, 2)).unwrap();
        let cd = concatenate(&sys, 3).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let zeros_u = DVector::zeros(6);
        let zeros_w = DVector::zeros(6);
        let x = cd.propagate_mean(&x0, &zeros_u, &zeros_w, 2).unwrap();
        assert_relative_eq!(x, &a * &a * &x0, max_relative = 1e-15);

        let sys = LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let cd = concatenate(&sys, 1).unwrap();
        let u = DVector::from_vec(vec![0.5, -0.25]);
        let wbar = DVector::from_vec(vec![0.1, 0.2]);
        let x = cd.propagate_mean(&DVector::zeros(2), &u, &wbar, 1).unwrap();
        assert_eq!(x, &u + &wbar);
    }

    #[test]
    fn cwh_mean_propagation_matches_recursion() {
        let sys = build_cwh(&CwhParameters::default()).unwrap();
        let cd = concatenate(&sys, 5).unwrap();
        let x0 = DVector::from_vec(vec![8.0, 1.0, -0.5, 0.0, 0.01, 0.0]);
        let u = DVector::from_fn(15, |i, _| libm::sin(i as f64 * 1.7) * 0.8);
        let wbar = DVector::from_fn(30, |i, _| 1e-3 * libm::cos(i as f64));
        for k in 1..=5 {
            let direct = simulate(&sys, &x0, &u, &wbar, k);
            let stacked = cd.propagate_mean(&x0, &u, &wbar, k).unwrap();
            assert_relative_eq!(direct, stacked, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_and_step_errors() {
        let sys = LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 1)).unwrap();
        let cd = concatenate(&sys, 2).unwrap();
        let x0 = DVector::zeros(2);
        assert!(cd.state_at(&x0, &DVector::zeros(3), &DVector::zeros(4), 1).is_err());
        assert!(cd.state_at(&x0, &DVector::zeros(2), &DVector::zeros(4), 0).is_err());
        assert!(cd.state_at(&x0, &DVector::zeros(2), &DVector::zeros(4), 3).is_err());
        assert!(LtiSystem::new(DMatrix::identity(2, 3), DMatrix::identity(2, 1)).is_err());
        assert!(LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(3, 1)).is_err());
        assert!(concatenate(&sys, 0).is_err());
    }

    #[test]
    fn cwh_mean_motion() {
        let w = CwhParameters::default().mean_motion();
        // sqrt(398600.4418 / 7000^3) evaluated in extended precision
        assert_relative_eq!(w, 1.078_007_612_872_506e-3, max_relative = 1e-12);
    }

    #[test]
    fn cwh_small_dt_is_identity() {
        let a = cwh_transition(CwhParameters::default().mean_motion(), 1e-6);
        let err = (a - DMatrix::<f64>::identity(6, 6)).amax();
        assert!(err < 2e-6, "{err}");
    }

    #[test]
    fn cwh_semigroup() {
        let w = CwhParameters::default().mean_motion();
        let one = cwh_transition(w, 60.0);
        let two = cwh_transition(w, 120.0);
        assert_relative_eq!(&one * &one, two, epsilon = 1e-10);
    }

    #[test]
    fn cwh_transition_solves_the_ode() {
        // d/dt Phi(t) = M Phi(t) with M the continuous-time CWH matrix
        let w = 1.1e-3;
        let mut m = DMatrix::zeros(6, 6);
        for i in 0..3 {
            m[(i, 3 + i)] = 1.0;
        }
        m[(3, 0)] = 3.0 * w * w;
        m[(3, 4)] = 2.0 * w;
        m[(4, 3)] = -2.0 * w;
        m[(5, 2)] = -w * w;
        let t = 250.0;
        let h = 1e-3;
        let fd = (cwh_transition(w, t + h) - cwh_transition(w, t - h)) / (2.0 * h);
        assert_relative_eq!(fd, &m * cwh_transition(w, t), epsilon = 1e-7);
    }

    #[test]
    fn cwh_input_is_post_impulse_transition() {
        let p = CwhParameters::default();
        let sys = build_cwh(&p).unwrap();
        assert_eq!((sys.n(), sys.m()), (6, 3));
        let a = sys.a();
        for j in 0..3 {
            for i in 0..6 {
                assert_relative_eq!(sys.b()[(i, j)], a[(i, 3 + j)] * p.dt / p.mass, max_relative = 1e-15);
            }
        }
        assert!(build_cwh(&CwhParameters { mass: 0.0, ..p }).is_err());
        assert!(build_cwh(&CwhParameters { dt: -1.0, ..p }).is_err());
    }
}
