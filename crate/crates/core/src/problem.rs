//! Synthetic sparse-recovery instances `y = A·x* + v` and the ensemble
//! Lipschitz constant.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::StreamRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    /// Signal dimension N.
    pub n: usize,
    /// Measurement dimension M.
    pub m: usize,
    /// Probability that a signal entry is nonzero.
    pub p: f64,
    /// `+∞` disables measurement noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n: 300,
            m: 210,
            p: 0.1,
            snr_db: 20.0,
            seed: 0,
        }
    }
}

impl ProblemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::InvalidConfig(format!(
                "need 0 < m < n, got m={} n={}",
                self.m, self.n
            )));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidConfig(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig(format!("snr_db must be a number, got {}", self.snr_db)));
        }
        Ok(())
    }

    pub fn noise_variance(&self) -> Result<f64> {
        snr_to_noise_variance(self.snr_db, self.p, self.n)
    }
}

/// Noise variance `σ_v² = σ_x² / 10^(snr/10)` with `σ_x² = p·n`.
pub fn snr_to_noise_variance(snr_db: f64, p: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be positive".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!("p must lie in (0, 1], got {p}")));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("snr_db is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    let signal_power = p * n as f64;
    Ok(signal_power / 10f64.powf(snr_db / 10.0))
}

/// A measurement matrix with the derived quantities every solver step needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix<F> {
    /// `A`, m×n, row-major.
    pub a: Array2<F>,
    /// `Aᵀ`, n×m, row-major.
    pub at: Array2<F>,
    /// `AᵀA`, n×n, exactly symmetric.
    pub gram: Array2<F>,
}

impl<F: Scalar> SensingMatrix<F> {
    pub fn new(a: Array2<F>) -> Self {
        let at = a.t().as_standard_layout().into_owned();
        let gram = linalg::gram(&a);
        Self { a, at, gram }
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// `A·x`, cost proportional to the support of `x`.
    pub fn apply(&self, x: &[F]) -> Array1<F> {
        let mut out = Array1::zeros(self.m());
        linalg::combine_rows(self.at.view(), x, out.as_slice_mut().unwrap());
        out
    }

    /// `AᵀA·x`, cost proportional to the support of `x`.
    pub fn apply_gram(&self, x: &[F], out: &mut [F]) {
        linalg::combine_rows(self.gram.view(), x, out);
    }
}

/// One instance of the recovery task.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseProblem<F> {
    pub a: Arc<SensingMatrix<F>>,
    pub y: Array1<F>,
    pub x_true: Array1<F>,
    pub sigma_v2: F,
    aty: Array1<F>,
}

impl<F: Scalar> SparseProblem<F> {
    pub fn new(a: Arc<SensingMatrix<F>>, y: Array1<F>, x_true: Array1<F>, sigma_v2: F) -> Result<Self> {
        if y.len() != a.m() || x_true.len() != a.n() {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: A is {}x{}, y has {}, x_true has {}",
                a.m(),
                a.n(),
                y.len(),
                x_true.len()
            )));
        }
        let aty = a.at.dot(&y);
        Ok(Self {
            a,
            y,
            x_true,
            sigma_v2,
            aty,
        })
    }

    /// Convenience constructor from a bare matrix.
    pub fn from_parts(a: Array2<F>, y: Array1<F>, x_true: Array1<F>, sigma_v2: F) -> Result<Self> {
        Self::new(Arc::new(SensingMatrix::new(a)), y, x_true, sigma_v2)
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn m(&self) -> usize {
        self.a.m()
    }

    /// `Aᵀy`.
    pub fn aty(&self) -> &Array1<F> {
        &self.aty
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws `A` with i.i.d. `N(0, 1/n)` entries, row-major.
pub fn generate_matrix_raw<F: Scalar>(config: &ProblemConfig, rng: &mut StreamRng) -> Array2<F> {
    let scale = 1.0 / (config.n as f64).sqrt();
    Array2::from_shape_simple_fn((config.m, config.n), || F::of(scale * normal(rng)))
}

pub fn generate_matrix<F: Scalar>(config: &ProblemConfig, rng: &mut StreamRng) -> Result<SensingMatrix<F>> {
    config.validate()?;
    Ok(SensingMatrix::new(generate_matrix_raw(config, rng)))
}

/// Bernoulli–Gaussian signal: each entry is zero with probability `1 − p`,
/// otherwise standard normal.
pub fn sample_sparse_signal<F: Scalar>(config: &ProblemConfig, rng: &mut StreamRng) -> Array1<F> {
    Array1::from_shape_simple_fn(config.n, || {
        if rng.random::<f64>() < config.p {
            F::of(normal(rng))
        } else {
            F::zero()
        }
    })
}

/// Draws a signal and a noise realization for a given matrix.
pub fn generate_signal<F: Scalar>(
    config: &ProblemConfig,
    a: &Arc<SensingMatrix<F>>,
    rng: &mut StreamRng,
) -> Result<SparseProblem<F>> {
    config.validate()?;
    if a.n() != config.n || a.m() != config.m {
        return Err(Error::InvalidArgument(format!(
            "matrix is {}x{} but config asks for {}x{}",
            a.m(),
            a.n(),
            config.m,
            config.n
        )));
    }
    let sigma_v2 = config.noise_variance()?;
    let x_true = sample_sparse_signal::<F>(config, rng);
    let sigma_v = sigma_v2.sqrt();
    let mut y = a.apply(x_true.as_slice().unwrap());
    if sigma_v > 0.0 {
        for yi in y.iter_mut() {
            *yi += F::of(sigma_v * normal(rng));
        }
    }
    SparseProblem::new(Arc::clone(a), y, x_true, F::of(sigma_v2))
}

pub fn generate_problem<F: Scalar>(config: &ProblemConfig, rng: &mut StreamRng) -> Result<SparseProblem<F>> {
    let a = Arc::new(generate_matrix(config, rng)?);
    generate_signal(config, &a, rng)
}

/// `size` problems sharing one freshly drawn matrix.
pub fn generate_batch<F: Scalar>(
    config: &ProblemConfig,
    size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<SparseProblem<F>>> {
    let a = Arc::new(generate_matrix(config, rng)?);
    (0..size).map(|_| generate_signal(config, &a, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate<F> {
    pub l_avg: F,
    pub k_matrices: usize,
    pub per_matrix: Vec<F>,
}

impl<F: Scalar> LipschitzEstimate<F> {
    /// The conventional safe step `1/L`.
    pub fn inverse(&self) -> F {
        F::one() / self.l_avg
    }
}

/// Mean of `λ_max(AᵀA)` over `k` matrices drawn from the ensemble.
pub fn average_lipschitz<F: Scalar>(
    config: &ProblemConfig,
    k: usize,
    rng: &mut StreamRng,
) -> Result<LipschitzEstimate<F>> {
    config.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("need at least one matrix to average".into()));
    }
    let matrices: Vec<Array2<F>> = (0..k).map(|_| generate_matrix_raw(config, rng)).collect();
    average_lipschitz_of(&matrices)
}

/// Same averaging over caller-supplied matrices.
pub fn average_lipschitz_of<F: Scalar>(matrices: &[Array2<F>]) -> Result<LipschitzEstimate<F>> {
    if matrices.is_empty() {
        return Err(Error::InvalidConfig("need at least one matrix to average".into()));
    }
    let per_matrix = matrices
        .iter()
        .map(linalg::lambda_max)
        .collect::<Result<Vec<F>>>()?;
    let sum = per_matrix.iter().fold(F::zero(), |acc, &l| acc + l);
    let l_avg = sum / F::of(per_matrix.len() as f64);
    if !(l_avg > F::zero()) {
        return Err(Error::InvalidArgument(format!("Lipschitz estimate {l_avg} is not positive")));
    }
    Ok(LipschitzEstimate {
        l_avg,
        k_matrices: per_matrix.len(),
        per_matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn noise_variance_examples() {
        // Oracle: plug back into 10·log10(p·n / σ²).
        let snr = |v: f64, p: f64, n: usize| 10.0 * (p * n as f64 / v).log10();
        let v = snr_to_noise_variance(20.0, 0.1, 300).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
        assert!((snr(v, 0.1, 300) - 20.0).abs() < 1e-9);
        assert!((snr_to_noise_variance(0.0, 0.1, 300).unwrap() - 30.0).abs() < 1e-12);
        let v = snr_to_noise_variance(10.0, 0.1, 100).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!((snr(v, 0.1, 100) - 10.0).abs() < 1e-9);
        assert_eq!(snr_to_noise_variance(f64::INFINITY, 0.1, 300).unwrap(), 0.0);
    }

    #[test]
    fn noise_variance_rejects_bad_input() {
        assert!(matches!(snr_to_noise_variance(20.0, 0.1, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(snr_to_noise_variance(20.0, 0.0, 10), Err(Error::InvalidConfig(_))));
        assert!(matches!(snr_to_noise_variance(20.0, 1.5, 10), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn config_validation() {
        assert!(ProblemConfig::default().validate().is_ok());
        let bad = ProblemConfig { m: 300, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ProblemConfig { m: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ProblemConfig { p: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noiseless_problem_is_exact() {
        let cfg = ProblemConfig {
            n: 40,
            m: 20,
            snr_db: f64::INFINITY,
            ..Default::default()
        };
        let prob: SparseProblem<f64> = generate_problem(&cfg, &mut stream(3, 0)).unwrap();
        let ax = prob.a.apply(prob.x_true.as_slice().unwrap());
        let resid: f64 = (&prob.y - &ax).iter().map(|r| r * r).sum::<f64>().sqrt();
        assert_eq!(resid, 0.0);
        assert_eq!(prob.sigma_v2, 0.0);
    }

    #[test]
    fn same_seed_same_problem() {
        let cfg = ProblemConfig::default();
        let a: SparseProblem<f64> = generate_problem(&cfg, &mut stream(11, 0)).unwrap();
        let b: SparseProblem<f64> = generate_problem(&cfg, &mut stream(11, 0)).unwrap();
        assert_eq!(a, b);
        let c: SparseProblem<f64> = generate_problem(&cfg, &mut stream(12, 0)).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn mean_support_size_matches_binomial() {
        let cfg = ProblemConfig::default();
        let mut rng = stream(5, 0);
        let draws = 10_000;
        let total: usize = (0..draws)
            .map(|_| {
                sample_sparse_signal::<f64>(&cfg, &mut rng)
                    .iter()
                    .filter(|v| **v != 0.0)
                    .count()
            })
            .sum();
        let mean = total as f64 / draws as f64;
        assert!((28.5..=31.5).contains(&mean), "mean support {mean}");
    }

    #[test]
    fn generated_problem_properties() {
        let cfg = ProblemConfig::default();
        let prob: SparseProblem<f64> = generate_problem(&cfg, &mut stream(9, 0)).unwrap();
        assert_eq!(prob.a.a.dim(), (210, 300));
        assert_eq!(prob.y.len(), 210);
        assert_eq!(prob.x_true.len(), 300);
        let noise = &prob.y - &prob.a.a.dot(&prob.x_true);
        let mean = noise.sum() / 210.0;
        let var = noise.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 209.0;
        assert!((var - 0.3).abs() <= 0.2 * 0.3, "noise variance {var}");
        // Entry variance of A is 1/n.
        let a_var = prob.a.a.iter().map(|v| v * v).sum::<f64>() / (210.0 * 300.0);
        assert!((a_var * 300.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn lipschitz_of_fixed_matrices() {
        let id: Array2<f64> = Array2::eye(2);
        assert_eq!(average_lipschitz_of(&[id]).unwrap().l_avg, 1.0);
        let d = array![[2.0f64, 0.0], [0.0, 1.0]];
        assert!((average_lipschitz_of(&[d]).unwrap().l_avg - 4.0).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_single_matrix_matches_eigensolve() {
        let cfg = ProblemConfig { n: 60, m: 40, ..Default::default() };
        let a: Array2<f64> = generate_matrix_raw(&cfg, &mut stream(2, 1));
        let est = average_lipschitz_of(std::slice::from_ref(&a)).unwrap();
        let exact = linalg::largest_eigenvalue_exact(&a.t().dot(&a));
        assert!((est.l_avg - exact).abs() / exact <= 1e-8);
    }

    #[test]
    fn lipschitz_is_deterministic() {
        let cfg = ProblemConfig { n: 50, m: 30, ..Default::default() };
        let a = average_lipschitz::<f64>(&cfg, 5, &mut stream(4, 1)).unwrap();
        let b = average_lipschitz::<f64>(&cfg, 5, &mut stream(4, 1)).unwrap();
        assert_eq!(a, b);
        assert!(average_lipschitz::<f64>(&cfg, 0, &mut stream(4, 1)).is_err());
    }
}
