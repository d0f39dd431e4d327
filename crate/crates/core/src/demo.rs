//! Satellite rendezvous instance: CWH relative dynamics, a line-of-sight
//! cone for the intermediate steps and a docking box at the final step.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::concentration::{min_samples, BoundContext};
use crate::dynamics::{build_cwh, CwhParameters, LtiSystem};
use crate::error::Result;
use crate::reformulation::{HalfSpace, InputSet, Objective, ProblemSpec, TargetSet};
use crate::sampling::{fill_standard_normal, projected_std, GaussianModel};

pub const CWH_HORIZON: usize = 5;
pub const CWH_ALPHA: f64 = 0.05;

/// Deputy start: position `(x, y, z)` then velocity, inside the approach cone.
pub const CWH_X0: [f64; 6] = [7.5, 3.0, 3.0, 0.0, 0.0, 0.0];

/// Per-step disturbance variance of the position and velocity components.
pub const CWH_POSITION_VARIANCE: f64 = 1e-6;
pub const CWH_VELOCITY_VARIANCE: f64 = 5e-8;

/// Cone `|y|, |z| <= x / 2`, `x <= 10`, as five half-spaces.
pub fn line_of_sight() -> Vec<HalfSpace> {
    #[rustfmt::skip]
    let g = [
        [-1.0, 0.0, 2.0],
        [-1.0, 2.0, 0.0],
        [-1.0, 0.0, -2.0],
        [-1.0, -2.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let h = [0.0, 0.0, 0.0, 0.0, 10.0];
    g.iter()
        .zip(h)
        .map(|(row, h)| {
            let mut normal = DVector::zeros(6);
            normal.rows_mut(0, 3).copy_from_slice(row);
            HalfSpace::new(normal, h)
        })
        .collect()
}

/// `0 <= x <= 2`, `|y|, |z| <= 1`, every velocity within `0.1`, as twelve half-spaces.
pub fn docking_box() -> Vec<HalfSpace> {
    let h = [2.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
    (0..12)
        .map(|r| {
            let mut normal = DVector::zeros(6);
            normal[r / 2] = if r % 2 == 0 { 1.0 } else { -1.0 };
            HalfSpace::new(normal, h[r])
        })
        .collect()
}

/// Rendezvous problem over `horizon` steps: cone constraints on steps
/// `1..horizon` and the docking box on the last one.
pub fn cwh_problem(params: &CwhParameters, alpha: f64, horizon: usize, x0: DVector<f64>) -> Result<ProblemSpec> {
    let system = build_cwh(params)?;
    let mut steps = vec![line_of_sight(); horizon.saturating_sub(1)];
    steps.push(docking_box());
    let spec = ProblemSpec {
        system,
        horizon,
        x0,
        input: InputSet::boxed(DVector::from_element(3, -1.0), DVector::from_element(3, 1.0)),
        target: TargetSet::new(steps),
        alpha,
        objective: Objective::SumOfSquares,
    };
    spec.validate()?;
    Ok(spec)
}

/// The demo with default parameters, `alpha = 0.05`, five steps and [`CWH_X0`].
pub fn cwh_demo() -> ProblemSpec {
    cwh_problem(
        &CwhParameters::default(),
        CWH_ALPHA,
        CWH_HORIZON,
        DVector::from_column_slice(&CWH_X0),
    )
    .expect("demo parameters are valid")
}

/// Zero-mean disturbance with independent steps and block-diagonal covariance.
pub fn cwh_disturbance(horizon: usize, seed: u64) -> GaussianModel {
    let block = [
        CWH_POSITION_VARIANCE,
        CWH_POSITION_VARIANCE,
        CWH_POSITION_VARIANCE,
        CWH_VELOCITY_VARIANCE,
        CWH_VELOCITY_VARIANCE,
        CWH_VELOCITY_VARIANCE,
    ];
    let dim = 6 * horizon;
    let cov = DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| block[i % 6]));
    GaussianModel::new(DVector::zeros(dim), cov, seed).expect("diagonal covariance factors")
}

/// A small random planning instance with its true disturbance model.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub spec: ProblemSpec,
    pub model: GaussianModel,
    /// Sample count used when sizing the target margins.
    pub samples: usize,
}

/// Random instance with `n <= 4`, `m <= 2`, `N <= 4` and `alpha` in `[0.02, 0.15]`.
///
/// Every step's polytope contains the mean trajectory of a reference input
/// inside the box with room for the sample-based tightening at `samples`
/// draws, so the proposed program is feasible with high probability once the
/// sample statistics settle.
pub fn random_instance(seed: u64) -> RandomInstance {
    let mut buf = vec![0.0; 4096];
    fill_standard_normal(seed, 0, &mut buf);
    let mut g = buf.into_iter();
    let mut next = move || g.next().expect("enough draws");
    let mut pick = |lo: usize, hi: usize| lo + (libm::fabs(next()) * 1000.0) as usize % (hi - lo + 1);
    let (n, m, horizon) = (pick(1, 4), pick(1, 2), pick(1, 4));
    let faces: Vec<usize> = (0..horizon).map(|_| pick(1, 2 * n + 1)).collect();
    let mut next = {
        let mut buf = vec![0.0; 4096];
        fill_standard_normal(seed, 1, &mut buf);
        let mut g = buf.into_iter();
        move || g.next().expect("enough draws")
    };
    let unit = |v: f64| 0.5 * (1.0 + libm::erf(v / libm::sqrt(2.0)));
    let alpha = 0.02 + 0.13 * unit(next());

    let a = DMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) + 0.25 * next());
    let b = DMatrix::from_fn(n, m, |_, _| 0.5 * next());
    let system = LtiSystem::new(a, b).expect("shapes agree");
    let x0 = DVector::from_fn(n, |_, _| next());
    let dim = n * horizon;
    let mean = DVector::from_fn(dim, |_, _| 0.01 * next());
    let lower = DMatrix::from_fn(dim, dim, |i, j| if j <= i { 0.03 * next() } else { 0.0 });
    let covariance = &lower * lower.transpose();
    let model = GaussianModel::new(mean, covariance, seed).expect("Gram matrices factor");

    let total: usize = faces.iter().sum();
    let samples = (4 * min_samples(total, alpha).expect("alpha in range")).max(500) as usize;
    let lambda = BoundContext::new(samples)
        .and_then(|ctx| ctx.f_inverse(alpha / total as f64))
        .expect("budget above the asymptote");

    let u_ref = DVector::from_fn(m * horizon, |_, _| (0.6 * next()).clamp(-0.9, 0.9));
    let u_zero = DVector::zeros(m * horizon);
    let cd = crate::dynamics::concatenate(&system, horizon).expect("horizon >= 1");
    let mut steps = Vec::with_capacity(horizon);
    for (k, &count) in (1..=horizon).zip(&faces) {
        let nominal = cd.propagate_mean(&x0, &u_ref, model.mean(), k).expect("shapes agree");
        // The first face points towards the uncontrolled drift, so that zero
        // input usually violates it and the optimum is not trivial.
        let drift = cd.propagate_mean(&x0, &u_zero, model.mean(), k).expect("shapes agree") - &nominal;
        let mut rows = Vec::with_capacity(count);
        for face in 0..count {
            let mut normal = DVector::from_fn(n, |_, _| next());
            if face == 0 && drift.norm() > 1e-6 {
                normal = drift.clone();
            }
            if normal.norm() < 1e-3 {
                normal[0] += 1.0;
            }
            normal /= normal.norm();
            let sigma =
                projected_std(&cd.disturbance_map(k).tr_mul(&normal), model.covariance()).expect("PSD covariance");
            let margin = 1.2 * lambda * sigma + 0.01 + 0.05 * libm::fabs(next());
            rows.push(HalfSpace::new(normal.clone(), normal.dot(&nominal) + margin));
        }
        steps.push(rows);
    }
    let spec = ProblemSpec {
        system,
        horizon,
        x0,
        input: InputSet::boxed(DVector::from_element(m, -1.0), DVector::from_element(m, 1.0)),
        target: TargetSet::new(steps),
        alpha,
        objective: Objective::SumOfSquares,
    };
    RandomInstance { spec, model, samples }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_shape() {
        let spec = cwh_demo();
        assert_eq!(spec.target.total_halfspaces(), 32);
        assert_eq!(spec.input_len(), 15);
        assert_eq!(spec.target.check_nonempty(), Ok(()));
        let start = DVector::from_column_slice(&CWH_X0);
        assert!(line_of_sight().iter().all(|h| h.contains(&start)));
    }

    #[test]
    fn docking_box_rows() {
        let b = docking_box();
        let inside = DVector::from_column_slice(&[1.0, 0.5, -0.5, 0.05, 0.0, -0.05]);
        assert!(b.iter().all(|h| h.contains(&inside)));
        let outside = DVector::from_column_slice(&[-0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!b[1].contains(&outside));
    }

    #[test]
    fn disturbance_covariance() {
        let m = cwh_disturbance(5, 0);
        assert_eq!(m.dim(), 30);
        assert_eq!(m.covariance()[(0, 0)], 1e-6);
        assert_eq!(m.covariance()[(9, 9)], 5e-8);
        assert_eq!(m.covariance()[(0, 1)], 0.0);
    }

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..40 {
            let inst = random_instance(seed);
            inst.spec.validate().unwrap();
            assert!(inst.spec.system.n() <= 4 && inst.spec.horizon <= 4 && inst.spec.system.m() <= 2);
            assert!((0.02..=0.15).contains(&inst.spec.alpha));
        }
    }
}
