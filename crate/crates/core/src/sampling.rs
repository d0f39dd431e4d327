//! Disturbance sample sets, their (biased) sample statistics, and a seeded
//! Gaussian generator.
//!
//! Sample covariances use the divisor `N_s`, not `N_s - 1`: the tail bounds in
//! [`crate::concentration`] are stated for that statistic.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::ConcatenatedDynamics;
use crate::error::{check_dim, Error, Result, SampleGate};

/// Samples whose coordinate-wise spread is below this are treated as identical.
pub const DEGENERATE_SPREAD: f64 = 1e-14;

/// `N_s` concatenated disturbance samples `W^[i]`, all of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    samples: Vec<DVector<f64>>,
}

impl SampleSet {
    pub fn new(samples: Vec<DVector<f64>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::InvalidParameter("sample set is empty".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("samples must be non-empty vectors".into()));
        }
        for s in &samples {
            check_dim("sample length", dim, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("samples must be finite".into()));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.samples.iter()
    }

    /// True when every pair of samples differs by less than
    /// [`DEGENERATE_SPREAD`] in max-norm.
    pub fn is_degenerate(&self) -> bool {
        // largest pairwise max-norm difference == largest per-coordinate range
        (0..self.dim).all(|j| {
            let (lo, hi) = self
                .samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s[j]), hi.max(s[j]))
                });
            hi - lo < DEGENERATE_SPREAD
        })
    }
}

/// Sample mean and biased sample covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStatistics {
    count: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl SampleStatistics {
    /// Wrap externally supplied moments, e.g. known population moments.
    pub fn from_moments(count: usize, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_dim("covariance rows", mean.len(), covariance.nrows())?;
        check_dim("covariance columns", mean.len(), covariance.ncols())?;
        Ok(Self {
            count,
            mean,
            covariance,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Mean and divisor-`N_s` covariance of a sample set.
///
/// Summation runs over samples in stored order, so recomputation is bitwise
/// reproducible. The covariance is assembled from its upper triangle and
/// mirrored, which makes it exactly symmetric.
pub fn compute_statistics(set: &SampleSet) -> Result<SampleStatistics> {
    let n_s = set.len();
    if n_s < 2 {
        return Err(Error::InsufficientSamples {
            have: n_s,
            need: 2,
            gate: SampleGate::Statistics,
        });
    }
    if set.is_degenerate() {
        return Err(Error::DegenerateSamples);
    }
    let dim = set.dim();
    let inv = 1.0 / n_s as f64;

    let mut mean = DVector::zeros(dim);
    for s in set.iter() {
        mean += s;
    }
    mean *= inv;

    let mut covariance = DMatrix::zeros(dim, dim);
    let mut centered = DVector::zeros(dim);
    for s in set.iter() {
        centered.copy_from(s);
        centered -= &mean;
        for j in 0..dim {
            let cj = centered[j];
            if cj == 0.0 {
                continue;
            }
            for i in 0..=j {
                covariance[(i, j)] += centered[i] * cj;
            }
        }
    }
    for j in 0..dim {
        for i in 0..=j {
            let v = covariance[(i, j)] * inv;
            covariance[(i, j)] = v;
            covariance[(j, i)] = v;
        }
    }
    Ok(SampleStatistics {
        count: n_s,
        mean,
        covariance,
    })
}

/// Radicands more negative than this (relative to the scale of the quadratic
/// form) are reported instead of clamped.
const RADICAND_TOL: f64 = 1e-12;

/// `sqrt(v' S v)` for symmetric PSD `S`, clamping small negative round-off.
pub(crate) fn projected_std(v: &DVector<f64>, covariance: &DMatrix<f64>) -> Result<f64> {
    let q = (covariance * v).dot(v);
    if q >= 0.0 {
        return Ok(libm::sqrt(q));
    }
    let scale = covariance.amax() * v.norm_squared();
    if q >= -RADICAND_TOL * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(alloc::format!(
            "negative variance {q:e} for a projected constraint"
        )))
    }
}

/// Sample mean and sample standard deviation of the scalar `g' x(k)`.
///
/// The standard deviation depends only on the disturbance statistics, not on
/// the input sequence.
pub fn scalar_projection_stats(
    stats: &SampleStatistics,
    cd: &ConcatenatedDynamics,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    g: &DVector<f64>,
    k: usize,
) -> Result<(f64, f64)> {
    check_dim("half-space normal", cd.n(), g.len())?;
    let mean_state = cd.propagate_mean(x0, u, stats.mean(), k)?;
    let mean = g.dot(&mean_state);
    let v = cd.disturbance_map(k).tr_mul(g);
    let std = projected_std(&v, stats.covariance())?;
    Ok((mean, std))
}

/// Running mean and biased covariance updated one sample at a time.
///
/// With `N* = N_s + 1` and `d = x - mean`, each update applies
///
/// ```text
/// mean* = mean + d / N*
/// cov*  = (N_s / N*) cov + (N_s / N*^2) d d'
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStatistics {
    count: usize,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl RunningStatistics {
    /// Statistics of a single sample: the sample itself, zero covariance.
    pub fn from_sample(x: &DVector<f64>) -> Self {
        let dim = x.len();
        Self {
            count: 1,
            mean: x.clone(),
            covariance: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_statistics(stats: &SampleStatistics) -> Self {
        Self {
            count: stats.count,
            mean: stats.mean.clone(),
            covariance: stats.covariance.clone(),
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn push(&mut self, x: &DVector<f64>) -> Result<()> {
        check_dim("sample length", self.mean.len(), x.len())?;
        let n = self.count as f64;
        let n_star = n + 1.0;
        let d = x - &self.mean;
        self.mean += &d / n_star;
        let keep = n / n_star;
        let outer = n / (n_star * n_star);
        let dim = d.len();
        for j in 0..dim {
            for i in 0..=j {
                let v = keep * self.covariance[(i, j)] + outer * d[i] * d[j];
                self.covariance[(i, j)] = v;
                self.covariance[(j, i)] = v;
            }
        }
        self.count += 1;
        Ok(())
    }
}

/// One-sample-at-a-time update of existing statistics.
pub fn incremental_update(stats: &SampleStatistics, sample: &DVector<f64>) -> Result<SampleStatistics> {
    let mut running = RunningStatistics::from_statistics(stats);
    running.push(sample)?;
    Ok(SampleStatistics {
        count: running.count,
        mean: running.mean,
        covariance: running.covariance,
    })
}

/// Lower-triangular `L` with `L L' = S` for a symmetric PSD `S`.
///
/// Columns whose pivot vanishes (within tolerance) are left at zero, so
/// singular covariances such as the zero matrix factorize.
pub fn psd_factor(covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = covariance.nrows();
    check_dim("covariance columns", n, covariance.ncols())?;
    if covariance.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotFactorizable);
    }
    let scale = covariance.amax();
    let tol = 1e-12 * scale;
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (covariance[(i, j)], covariance[(j, i)]);
            if (a - b).abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::NotFactorizable);
            }
        }
    }

    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = covariance[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::NotFactorizable);
        }
        if d <= tol {
            // zero pivot: the rest of the column must vanish as well
            for i in (j + 1)..n {
                let mut r = covariance[(i, j)];
                for k in 0..j {
                    r -= l[(i, k)] * l[(j, k)];
                }
                if r.abs() > libm::sqrt(tol.max(0.0)) * libm::sqrt(scale) + tol {
                    return Err(Error::NotFactorizable);
                }
            }
            continue;
        }
        let pivot = libm::sqrt(d);
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut r = covariance[(i, j)];
            for k in 0..j {
                r -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = r / pivot;
        }
    }
    Ok(l)
}

/// A multivariate Gaussian with a seed.
///
/// Draw `i` uses ChaCha8 stream `i` under the seed, so a draw never depends on
/// how many other draws are taken or in what order.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    seed: u64,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>, seed: u64) -> Result<Self> {
        check_dim("covariance rows", mean.len(), covariance.nrows())?;
        let factor = psd_factor(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
            seed,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Draw number `index` under this model's seed.
    pub fn sample(&self, index: u64) -> DVector<f64> {
        self.sample_with_seed(self.seed, index)
    }

    /// Draw number `index` under an explicit seed.
    pub fn sample_with_seed(&self, seed: u64, index: u64) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        fill_standard_normal(seed, index, z.as_mut_slice());
        &self.mean + &self.factor * z
    }

    /// The population moments as statistics with a nominal count.
    pub fn as_statistics(&self, nominal_count: usize) -> SampleStatistics {
        SampleStatistics {
            count: nominal_count,
            mean: self.mean.clone(),
            covariance: self.covariance.clone(),
        }
    }
}

/// Standard normals from stream `index` of the ChaCha8 generator seeded by `seed`.
pub fn fill_standard_normal(seed: u64, index: u64, out: &mut [f64]) {
    let mut rng = substream(seed, index);
    for v in out.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
}

pub(crate) fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` reproducible draws from `model`.
pub fn generate_samples(model: &GaussianModel, count: usize) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    SampleSet::new((0..count as u64).map(|i| model.sample(i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{concatenate, LtiSystem};
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn symmetric_pair() {
        let v = dv(&[1.0, -2.0, 0.5]);
        let set = SampleSet::new(vec![v.clone(), -v.clone()]).unwrap();
        let stats = compute_statistics(&set).unwrap();
        assert!(stats.mean().iter().all(|m| *m == 0.0));
        assert_relative_eq!(stats.covariance().clone(), &v * v.transpose(), max_relative = 1e-15);
    }

    #[test]
    fn degenerate_boundary() {
        let v = dv(&[1.0, 2.0]);
        let w = dv(&[1.0, 2.5]);
        let all_same = SampleSet::new(vec![v.clone(), v.clone(), v.clone()]).unwrap();
        assert_eq!(compute_statistics(&all_same), Err(Error::DegenerateSamples));
        let one_differs = SampleSet::new(vec![v.clone(), v.clone(), w]).unwrap();
        assert!(compute_statistics(&one_differs).is_ok());
        let single = SampleSet::new(vec![v]).unwrap();
        assert!(matches!(
            compute_statistics(&single),
            Err(Error::InsufficientSamples { have: 1, need: 2, .. })
        ));
    }

    #[test]
    fn rejects_ragged_and_empty_sets() {
        assert!(SampleSet::new(vec![]).is_err());
        assert!(SampleSet::new(vec![dv(&[1.0]), dv(&[1.0, 2.0])]).is_err());
        assert!(SampleSet::new(vec![dv(&[f64::NAN])]).is_err());
    }

    #[test]
    fn recomputation_is_bitwise_stable() {
        let model = GaussianModel::new(DVector::zeros(4), DMatrix::identity(4, 4), 3).unwrap();
        let set = generate_samples(&model, 50).unwrap();
        assert_eq!(compute_statistics(&set).unwrap(), compute_statistics(&set).unwrap());
    }

    #[test]
    fn zero_covariance_projects_to_zero_std() {
        let sys = LtiSystem::new(DMatrix::identity(2, 2), DMatrix::identity(2, 1)).unwrap();
        let cd = concatenate(&sys, 2).unwrap();
        let stats = SampleStatistics::from_moments(10, DVector::zeros(4), DMatrix::zeros(4, 4)).unwrap();
        let (_, std) = scalar_projection_stats(
            &stats,
            &cd,
            &DVector::zeros(2),
            &DVector::zeros(2),
            &dv(&[3.0, -1.0]),
            2,
        )
        .unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn coordinate_projection_picks_diagonal() {
        let sys = LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 1)).unwrap();
        let cd = concatenate(&sys, 1).unwrap();
        let cov = DMatrix::from_diagonal(&dv(&[4.0, 9.0]));
        let stats = SampleStatistics::from_moments(10, dv(&[0.5, 0.25]), cov).unwrap();
        let (mean, std) =
            scalar_projection_stats(&stats, &cd, &DVector::zeros(2), &dv(&[0.0]), &dv(&[0.0, 1.0]), 1).unwrap();
        assert_eq!(std, 3.0);
        assert_eq!(mean, 0.25);
    }

    #[test]
    fn incremental_trivial_cases() {
        // new sample at the mean: mean unchanged, covariance scaled by N/(N+1)
        let set = SampleSet::new(vec![dv(&[1.0]), dv(&[3.0]), dv(&[8.0])]).unwrap();
        let stats = compute_statistics(&set).unwrap();
        let updated = incremental_update(&stats, &stats.mean().clone()).unwrap();
        assert_eq!(updated.mean(), stats.mean());
        assert_relative_eq!(
            updated.covariance()[(0, 0)],
            stats.covariance()[(0, 0)] * 3.0 / 4.0,
            max_relative = 1e-15
        );
        assert_eq!(updated.count(), 4);

        let (a, b) = (2.0, -5.0);
        let mut running = RunningStatistics::from_sample(&dv(&[a]));
        running.push(&dv(&[b])).unwrap();
        assert_eq!(running.mean()[0], (a + b) / 2.0);
        assert_eq!(running.covariance()[(0, 0)], (a - b) * (a - b) / 4.0);
    }

    #[test]
    fn factor_handles_singular_and_rejects_indefinite() {
        let zero = psd_factor(&DMatrix::zeros(3, 3)).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));

        let v = dv(&[1.0, 2.0, -1.0]);
        let rank_one = &v * v.transpose();
        let l = psd_factor(&rank_one).unwrap();
        assert_relative_eq!(&l * l.transpose(), rank_one, epsilon = 1e-12);

        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(psd_factor(&indefinite), Err(Error::NotFactorizable));
        let asymmetric = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(psd_factor(&asymmetric), Err(Error::NotFactorizable));
    }

    #[test]
    fn zero_covariance_draws_equal_mean() {
        let mean = dv(&[1.0, -2.0, 3.0]);
        let model = GaussianModel::new(mean.clone(), DMatrix::zeros(3, 3), 11).unwrap();
        let set = generate_samples(&model, 5).unwrap();
        assert!(set.iter().all(|s| *s == mean));
    }

    #[test]
    fn draws_are_deterministic_and_partition_free() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = GaussianModel::new(dv(&[0.0, 1.0]), cov, 42).unwrap();
        let a = generate_samples(&model, 10).unwrap();
        let b = generate_samples(&model, 10).unwrap();
        assert_eq!(a, b);
        // draw 7 on its own equals draw 7 within a batch
        assert_eq!(model.sample(7), a.samples()[7]);
        let other = generate_samples(&model.with_seed(43), 10).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn univariate_variance_concentrates() {
        // 1e5 draws: the relative sd of the sample variance is sqrt(2/1e5) ~ 0.45%
        let sigma2 = 2.5;
        let model = GaussianModel::new(dv(&[0.0]), DMatrix::from_element(1, 1, sigma2), 5).unwrap();
        let set = generate_samples(&model, 100_000).unwrap();
        let stats = compute_statistics(&set).unwrap();
        assert!((stats.covariance()[(0, 0)] / sigma2 - 1.0).abs() < 0.03);
    }

    fn random_case(seed: u64, n: usize, horizon: usize, count: usize) -> (ConcatenatedDynamics, SampleSet) {
        let mut rng_vals = {
            let mut buf = vec![0.0; n * n + n + count * n * horizon];
            fill_standard_normal(seed, 0, &mut buf);
            buf.into_iter()
        };
        let a = DMatrix::from_fn(n, n, |_, _| 0.5 * rng_vals.next().unwrap());
        let b = DMatrix::from_fn(n, 1, |_, _| rng_vals.next().unwrap());
        let sys = LtiSystem::new(a, b).unwrap();
        let cd = concatenate(&sys, horizon).unwrap();
        let samples = (0..count)
            .map(|_| DVector::from_fn(n * horizon, |_, _| 0.1 * rng_vals.next().unwrap()))
            .collect();
        (cd, SampleSet::new(samples).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn projection_matches_per_sample_push(seed in any::<u64>(), k in 1usize..=3) {
            let (cd, set) = random_case(seed, 2, 3, 25);
            let stats = compute_statistics(&set).unwrap();
            let x0 = dv(&[0.3, -0.4]);
            let u = dv(&[0.1, -0.2, 0.3]);
            let g = dv(&[1.0, -0.5]);
            let (mean, std) = scalar_projection_stats(&stats, &cd, &x0, &u, &g, k).unwrap();

            let values: Vec<f64> = set
                .iter()
                .map(|w| g.dot(&cd.state_at(&x0, &u, w, k).unwrap()))
                .collect();
            let n = values.len() as f64;
            let m = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            prop_assert!((mean - m).abs() <= 1e-12 * (1.0 + m.abs()));
            prop_assert!((std - libm::sqrt(var)).abs() <= 1e-10 * (1.0 + std));
        }

        #[test]
        fn covariance_is_psd(seed in any::<u64>(), count in 2usize..40) {
            let (_, set) = random_case(seed, 2, 2, count);
            let stats = compute_statistics(&set).unwrap();
            let cov = stats.covariance();
            prop_assert_eq!(cov, &cov.transpose());
            let eig = cov.clone().symmetric_eigenvalues();
            let top = eig.max().max(0.0);
            prop_assert!(eig.min() >= -1e-10 * top);
        }

        #[test]
        fn incremental_equals_batch_at_every_prefix(seed in any::<u64>()) {
            let mut xs = [0.0; 50];
            fill_standard_normal(seed, 1, &mut xs);
            let mut running = RunningStatistics::from_sample(&dv(&[xs[0]]));
            for p in 1..xs.len() {
                running.push(&dv(&[xs[p]])).unwrap();
                let batch = compute_statistics(&SampleSet::new(xs[..=p].iter().map(|v| dv(&[*v])).collect()).unwrap()).unwrap();
                prop_assert!((running.mean()[0] - batch.mean()[0]).abs() <= 1e-12 * batch.mean()[0].abs().max(1.0));
                let (r, b) = (running.covariance()[(0, 0)], batch.covariance()[(0, 0)]);
                prop_assert!((r - b).abs() <= 1e-12 * b.abs());
            }
        }
    }
}
