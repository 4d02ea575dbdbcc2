//! Gaussian-process regression with frequentist uncertainty bands.
//!
//! The posterior uses the usual zero-mean GP formulas with a single
//! regularization parameter `λ` standing for the likelihood variance. The
//! band `μ_D(x) ± β_D σ_D(x)` contains any ground truth `f` with RKHS norm at
//! most `B` simultaneously for all `x`, with probability at least `1 - δ`
//! over `R`-subgaussian measurement noise, where
//!
//! `β_D = B + 2R·sqrt(log det(K_D + λ̄I) - 2 log δ)`, `λ̄ = max(1, λ)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

/// Variance round-off tolerated before clamping to zero.
const VARIANCE_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    SquaredExponential { lengthscale: f64, variance: f64 },
    /// `k₀(x,x') = k(x,x') - k(x,0)k(x',0)/k(0,0)`; every function in its
    /// RKHS vanishes at the origin.
    ZeroAtOrigin { base: Box<Kernel> },
}

impl Kernel {
    pub fn squared_exponential(lengthscale: f64, variance: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) || !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "squared exponential needs positive lengthscale and variance, got {lengthscale}, {variance}"
            )));
        }
        Ok(Kernel::SquaredExponential { lengthscale, variance })
    }

    pub fn zero_at_origin(base: Kernel) -> Result<Self> {
        let k00 = base.eval(0.0, 0.0);
        if k00 == 0.0 || !k00.is_finite() {
            return Err(Error::InvalidParameter(format!("base kernel has k(0,0) = {k00}")));
        }
        Ok(Kernel::ZeroAtOrigin { base: Box::new(base) })
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::SquaredExponential { lengthscale, variance } => {
                let d = x - y;
                variance * (-d * d / (2.0 * lengthscale * lengthscale)).exp()
            }
            Kernel::ZeroAtOrigin { base } => {
                // Exact zero on the axes; the formula below only gives it up to
                // round-off.
                if x == 0.0 || y == 0.0 {
                    return 0.0;
                }
                base.eval(x, y) - base.eval(x, 0.0) * base.eval(y, 0.0) / base.eval(0.0, 0.0)
            }
        }
    }

    pub fn gram(&self, xs: &[f64]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(xs[i], xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    pub fn cross(&self, x: f64, xs: &[f64]) -> DVector<f64> {
        DVector::from_iterator(xs.len(), xs.iter().map(|xi| self.eval(x, *xi)))
    }
}

/// Noise assumptions: `R`-subgaussian noise and regularization `λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub subgaussian_r: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub noise: NoiseModel,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::InvalidParameter(format!("dataset needs N >= 1 paired samples, got {} x and {} y", x.len(), y.len())));
        }
        if !(noise.lambda > 0.0) || !(noise.subgaussian_r >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need lambda > 0 and R >= 0, got {} and {}",
                noise.lambda, noise.subgaussian_r
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset inputs"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset targets"));
        }
        Ok(Self { x, y, noise })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `n` inputs drawn uniformly from `[a, b]` with targets `f(x) + ε`,
    /// `ε ~ N(0, noise_std²)`.
    pub fn sample<R: Rng + ?Sized>(
        f: impl Fn(f64) -> f64,
        n: usize,
        (a, b): (f64, f64),
        noise_std: f64,
        noise: NoiseModel,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(a..=b)).collect();
        let y = x.iter().map(|xi| f(*xi) + normal.sample(rng)).collect();
        Self::new(x, y, noise)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y"])?;
        for (x, y) in self.x.iter().zip(&self.y) {
            w.write_record([format!("{x:e}"), format!("{y:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, noise: NoiseModel) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for rec in r.deserialize::<(f64, f64)>() {
            let (x, y) = rec?;
            xs.push(x);
            ys.push(y);
        }
        Self::new(xs, ys, noise)
    }
}

/// Fitted posterior with its confidence scale.
#[derive(Clone, Debug)]
pub struct GpPosterior {
    kernel: Kernel,
    data: Dataset,
    /// Lower Cholesky factor of `K_D + λI`.
    chol: DMatrix<f64>,
    weights: DVector<f64>,
    beta: f64,
    delta: f64,
    rkhs_bound: f64,
    log_det: f64,
}

/// Fits the posterior and computes `β_D` for RKHS bound `rkhs_bound` and
/// confidence `1 - delta`.
pub fn fit(kernel: &Kernel, data: &Dataset, rkhs_bound: f64, delta: f64) -> Result<GpPosterior> {
    if !(rkhs_bound > 0.0) {
        return Err(Error::InvalidParameter(format!("RKHS bound must be positive, got {rkhs_bound}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")));
    }
    let n = data.len();
    let gram = kernel.gram(&data.x);
    let lambda = data.noise.lambda;
    let reg = &gram + DMatrix::identity(n, n) * lambda;
    let chol = nalgebra::Cholesky::new(reg).ok_or_else(|| Error::Cholesky("K_D + λI".into()))?;
    let y = DVector::from_column_slice(&data.y);
    let weights = chol.solve(&y);
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior weights"));
    }

    let lambda_bar = lambda.max(1.0);
    let bar = nalgebra::Cholesky::new(&gram + DMatrix::identity(n, n) * lambda_bar)
        .ok_or_else(|| Error::Cholesky("K_D + λ̄I".into()))?;
    let log_det: f64 = 2.0 * bar.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let arg = log_det - 2.0 * delta.ln();
    if !(arg >= 0.0) {
        return Err(Error::InvalidBudget(arg));
    }
    let beta = rkhs_bound + 2.0 * data.noise.subgaussian_r * arg.sqrt();
    Ok(GpPosterior {
        kernel: kernel.clone(),
        data: data.clone(),
        chol: chol.l(),
        weights,
        beta,
        delta,
        rkhs_bound,
        log_det,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl GpPosterior {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
    pub fn data(&self) -> &Dataset {
        &self.data
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn rkhs_bound(&self) -> f64 {
        self.rkhs_bound
    }
    /// `log det(K_D + λ̄I)`
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn mean(&self, x: f64) -> f64 {
        self.kernel.cross(x, &self.data.x).dot(&self.weights)
    }

    pub fn variance(&self, x: f64) -> Result<f64> {
        let kx = self.kernel.cross(x, &self.data.x);
        let prior = self.kernel.eval(x, x);
        let v = self
            .chol
            .solve_lower_triangular(&kx)
            .ok_or_else(|| Error::Cholesky("triangular solve".into()))?;
        let var = prior - v.dot(&v);
        if var >= 0.0 {
            Ok(var)
        } else if var >= -VARIANCE_CLAMP * prior.max(1.0) {
            Ok(0.0)
        } else {
            Err(Error::NegativeVariance(var))
        }
    }

    pub fn std_dev(&self, x: f64) -> Result<f64> {
        Ok(self.variance(x)?.sqrt())
    }

    /// `(μ_D(x) - β_D σ_D(x), μ_D(x) + β_D σ_D(x))`
    pub fn band(&self, x: f64) -> Result<(f64, f64)> {
        let m = self.mean(x);
        let w = self.beta * self.std_dev(x)?;
        Ok((m - w, m + w))
    }

    pub fn band_points(&self, xs: &[f64], exec: Execution) -> Result<Vec<BandPoint>> {
        exec.map(xs, |&x| {
            let (lower, upper) = self.band(x)?;
            Ok(BandPoint { x, mean: self.mean(x), lower, upper })
        })
        .into_iter()
        .collect()
    }

    /// True when `|f(x) - μ_D(x)| ≤ β_D σ_D(x)` on every grid point.
    pub fn band_contains(&self, f: impl Fn(f64) -> f64, grid: &[f64]) -> Result<bool> {
        for &x in grid {
            let (lo, hi) = self.band(x)?;
            let v = f(x);
            if v < lo || v > hi {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn write_band_csv(&self, path: impl AsRef<Path>, xs: &[f64]) -> Result<()> {
        let pts = self.band_points(xs, Execution::default())?;
        write_band_csv(path, &pts)
    }
}

pub fn write_band_csv(path: impl AsRef<Path>, pts: &[BandPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "mean", "lower", "upper"])?;
    for p in pts {
        w.write_record([p.x, p.mean, p.lower, p.upper].map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Finite kernel expansion `f(x) = Σ cᵢ k(x, xᵢ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkhsFunction {
    pub kernel: Kernel,
    pub centers: Vec<f64>,
    pub coeffs: Vec<f64>,
}

impl RkhsFunction {
    pub fn new(kernel: Kernel, centers: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        if centers.len() != coeffs.len() {
            return Err(Error::Dimension(format!("{} centers but {} coefficients", centers.len(), coeffs.len())));
        }
        for (i, c) in centers.iter().enumerate() {
            if centers[..i].contains(c) {
                return Err(Error::InvalidParameter(format!("duplicate center {c}")));
            }
        }
        Ok(Self { kernel, centers, coeffs })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.centers.iter().zip(&self.coeffs).map(|(xi, c)| c * self.kernel.eval(x, *xi)).sum()
    }

    /// `sqrt(cᵀ K c)`
    pub fn norm(&self) -> f64 {
        let k = self.kernel.gram(&self.centers);
        let c = DVector::from_column_slice(&self.coeffs);
        (c.dot(&(k * &c))).max(0.0).sqrt()
    }

    /// Same expansion rescaled to the requested RKHS norm.
    pub fn scaled_to_norm(&self, target: f64) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::InvalidParameter("cannot rescale the zero function".into()));
        }
        let s = target / n;
        Ok(Self { coeffs: self.coeffs.iter().map(|c| c * s).collect(), ..self.clone() })
    }
}

/// Uniform grid with `n` points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn se() -> Kernel {
        Kernel::squared_exponential(0.5, 0.5).unwrap()
    }

    fn noise(lambda: f64) -> NoiseModel {
        NoiseModel { subgaussian_r: lambda.sqrt(), lambda }
    }

    #[test]
    fn se_values() {
        let k = se();
        assert_eq!(k.eval(0.3, 0.3), 0.5);
        assert!((k.eval(0.0, 0.5) - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        assert!(k.eval(0.0, 5.0) < 1e-20 * 0.5);
        assert!(Kernel::squared_exponential(0.0, 1.0).is_err());
        assert!(Kernel::squared_exponential(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_kernel_values() {
        let k0 = Kernel::zero_at_origin(se()).unwrap();
        assert_eq!(k0.eval(0.0, 0.0), 0.0);
        for x in [-1.0, -0.2, 0.7, 3.0] {
            assert_eq!(k0.eval(x, 0.0), 0.0);
            assert_eq!(k0.eval(0.0, x), 0.0);
        }
        let base = 0.5 * (-2.0f64).exp();
        let expected = 0.5 - base * base / 0.5;
        assert!((k0.eval(1.0, 1.0) - expected).abs() < 1e-15);
        let degenerate = Kernel::ZeroAtOrigin { base: Box::new(se()) };
        assert!(Kernel::zero_at_origin(degenerate).is_err());
    }

    #[test]
    fn gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        for k in [se(), Kernel::zero_at_origin(se()).unwrap()] {
            let g = k.gram(&xs);
            assert!(crate::linalg::min_eigenvalue(&g) >= -1e-9);
            for i in 0..20 {
                for j in 0..20 {
                    assert!((k.eval(xs[i], xs[j]) - k.eval(xs[j], xs[i])).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_point_posterior_closed_form() {
        let lambda = 0.05;
        let data = Dataset::new(vec![0.0], vec![0.8], noise(lambda)).unwrap();
        let post = fit(&se(), &data, 1.0, 0.01).unwrap();
        let expected = 0.8 * 0.5 / (0.5 + lambda);
        assert!((post.mean(0.0) - expected).abs() < 1e-12);
        let var = 0.5 - 0.25 / (0.5 + lambda);
        assert!((post.variance(0.0).unwrap() - var).abs() < 1e-12);
    }

    #[test]
    fn duplicates_shrink_variance() {
        let k = se();
        let mut prev = f64::INFINITY;
        for copies in 1..5 {
            let data = Dataset::new(vec![0.3; copies], vec![0.1; copies], noise(0.1)).unwrap();
            let v = fit(&k, &data, 1.0, 0.1).unwrap().variance(0.3).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn band_vanishes_at_origin_with_zero_kernel() {
        let k0 = Kernel::zero_at_origin(se()).unwrap();
        let data = Dataset::new(vec![-0.5, 0.2, 0.9], vec![0.1, -0.2, 0.3], noise(0.05)).unwrap();
        let post = fit(&k0, &data, 5.0, 0.001).unwrap();
        assert_eq!(post.band(0.0).unwrap(), (0.0, 0.0));
        assert!(post.beta() >= post.rkhs_bound());
    }

    #[test]
    fn interpolation_limit_narrows_band_at_data() {
        let data = Dataset::new(vec![-0.4, 0.5], vec![0.3, -0.1], NoiseModel { subgaussian_r: 0.0, lambda: 1e-10 }).unwrap();
        let post = fit(&se(), &data, 1.0, 0.1).unwrap();
        let (lo, hi) = post.band(0.5).unwrap();
        assert!(hi - lo < 1e-3);
        assert!((post.mean(0.5) + 0.1).abs() < 1e-6);
    }

    #[test]
    fn huge_noise_recovers_prior() {
        let data = Dataset::new(vec![-0.5, 0.1, 0.6], vec![1.0, -1.0, 2.0], noise(1e8)).unwrap();
        let post = fit(&se(), &data, 1.0, 0.1).unwrap();
        for x in linspace(-1.0, 1.0, 11) {
            assert!(post.mean(x).abs() < 1e-4);
            assert!((post.variance(x).unwrap() - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        assert!(Dataset::new(vec![], vec![], noise(0.1)).is_err());
        assert!(Dataset::new(vec![0.0], vec![f64::NAN], noise(0.1)).is_err());
        assert!(Dataset::new(vec![0.0], vec![0.0], NoiseModel { subgaussian_r: 0.1, lambda: 0.0 }).is_err());
        let data = Dataset::new(vec![0.0], vec![0.0], noise(0.1)).unwrap();
        assert!(fit(&se(), &data, 0.0, 0.1).is_err());
        assert!(fit(&se(), &data, 1.0, 1.0).is_err());
    }

    #[test]
    fn rkhs_function_norms() {
        let k = se();
        let f = RkhsFunction::new(k.clone(), vec![0.2, 0.7], vec![0.0, 0.0]).unwrap();
        assert_eq!(f.norm(), 0.0);
        assert_eq!(f.eval(0.4), 0.0);
        let f = RkhsFunction::new(k.clone(), vec![0.2], vec![1.0]).unwrap();
        assert!((f.norm() - 0.5f64.sqrt()).abs() < 1e-15);
        let g = RkhsFunction::new(k, vec![-0.5, 0.0, 0.5], vec![1.0, -2.0, 0.5]).unwrap().scaled_to_norm(2.6053).unwrap();
        assert!((g.norm() - 2.6053).abs() < 1e-9);
        assert!(RkhsFunction::new(se(), vec![0.1, 0.1], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = Dataset::new(vec![0.25, -0.5], vec![1.5, 2.0e-3], noise(0.05)).unwrap();
        data.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, data.noise).unwrap();
        assert_eq!(back, data);
    }
}
