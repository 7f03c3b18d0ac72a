//! Target densities: an unnormalized log density with its score and,
//! where available, its Hessian and exact moments.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, dot, spd_inverse, tri_matvec, Matrix, SymmetricMatrix};
use crate::rng::SplitMix64;
use crate::specfun::{log_sigmoid, norm_log_pdf, sigmoid};

/// Exact first and second moments per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
}

pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Log density up to an additive constant.
    fn log_density(&self, x: &[f64]) -> f64;

    /// `∇ log p(x)`.
    fn score(&self, x: &[f64]) -> Vec<f64>;

    fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.log_density(x), self.score(x))
    }

    fn hessian(&self, _x: &[f64]) -> Option<SymmetricMatrix> {
        None
    }

    fn true_moments(&self) -> Option<Moments> {
        None
    }

    /// Whether `log_density` includes the normalizing constant.
    fn is_normalized(&self) -> bool {
        false
    }

    fn name(&self) -> &str;
}

/// `N(μ, Σ)`, normalized.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    mu: Vec<f64>,
    cov: SymmetricMatrix,
    prec: SymmetricMatrix,
    log_norm: f64,
}

impl GaussianTarget {
    pub fn new(mu: Vec<f64>, cov: SymmetricMatrix) -> Result<Self> {
        if cov.dim() != mu.len() {
            return Err(Error::dim(mu.len(), cov.dim()));
        }
        let l = cholesky(&cov)?;
        let prec = spd_inverse(&cov)?;
        let d = mu.len() as f64;
        let log_norm = -0.5 * d * (2.0 * std::f64::consts::PI).ln() - l.log_det();
        Ok(Self { mu, cov, prec, log_norm })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(vec![0.0; d], SymmetricMatrix::identity(d)).expect("identity is PD")
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn covariance(&self) -> &SymmetricMatrix {
        &self.cov
    }

    pub fn precision(&self) -> &SymmetricMatrix {
        &self.prec
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_and_score(x).0
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        self.log_density_and_score(x).1
    }

    fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let r: Vec<f64> = x.iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        let pr = self.prec.matrix().matvec(&r).expect("dims checked");
        let lp = self.log_norm - 0.5 * dot(&r, &pr);
        (lp, pr.into_iter().map(|v| -v).collect())
    }

    fn hessian(&self, _x: &[f64]) -> Option<SymmetricMatrix> {
        Some(self.prec.scaled(-1.0))
    }

    fn true_moments(&self) -> Option<Moments> {
        let second = self.mu.iter().enumerate().map(|(j, m)| self.cov.get(j, j) + m * m).collect();
        Some(Moments { mean: self.mu.clone(), second })
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "gaussian"
    }
}

/// Banana density: the pushforward of `N(0, I_2)` under
/// `(z₁, z₂) ↦ (z₁, z₁² − 1 + z₂/√2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BananaTarget;

impl BananaTarget {
    /// The exact transport from standard normal `z`.
    pub fn exact_map(z: &[f64]) -> [f64; 2] {
        [z[0], z[0] * z[0] - 1.0 + z[1] / std::f64::consts::SQRT_2]
    }
}

impl Target for BananaTarget {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let r = x[1] - x[0] * x[0] + 1.0;
        norm_log_pdf(x[0]) + norm_log_pdf(std::f64::consts::SQRT_2 * r) + 0.5 * std::f64::consts::LN_2
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        let r = x[1] - x[0] * x[0] + 1.0;
        vec![-x[0] + 4.0 * x[0] * r, -2.0 * r]
    }

    fn hessian(&self, x: &[f64]) -> Option<SymmetricMatrix> {
        let r = x[1] - x[0] * x[0] + 1.0;
        let h = Matrix::from_rows(&[
            vec![-1.0 + 4.0 * r - 8.0 * x[0] * x[0], 4.0 * x[0]],
            vec![4.0 * x[0], -2.0],
        ])
        .expect("2x2");
        Some(SymmetricMatrix::new(h).expect("square"))
    }

    fn true_moments(&self) -> Option<Moments> {
        Some(Moments { mean: vec![0.0, 0.0], second: vec![1.0, 2.5] })
    }

    fn is_normalized(&self) -> bool {
        true
    }

    fn name(&self) -> &str {
        "banana"
    }
}

/// Design matrix, binary responses and prior variance for Bayesian
/// logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    /// `N` rows of length `d`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub sigma2: f64,
    d: usize,
}

impl LogisticData {
    pub fn new(d: usize, x: Vec<Vec<f64>>, y: Vec<u8>, sigma2: f64) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::dim(x.len(), y.len()));
        }
        if let Some(row) = x.iter().find(|r| r.len() != d) {
            return Err(Error::dim(d, row.len()));
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!("response {i} is {} (must be 0 or 1)", y[i])));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("prior variance {sigma2} must be positive")));
        }
        Ok(Self { x, y, sigma2, d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Covariance `Σ_ij = ρ^|i-j|`.
pub fn ar1_covariance(d: usize, rho: f64) -> SymmetricMatrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = rho.powi((i as i32 - j as i32).abs());
        }
    }
    SymmetricMatrix::new(m).expect("square")
}

/// Synthetic data: `x_i ~ N(0, Σ/N)` with `Σ_ij = 0.9^|i-j|`,
/// `β₀ ~ U[-1, 1]^d`, `y_i ~ Bernoulli(sigmoid(x_iᵀβ₀))`, `σ² = 1`.
/// Returns the data and `β₀`.
pub fn make_logistic_synthetic(d: usize, n: usize, seed: u64) -> Result<(LogisticData, Vec<f64>)> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("need d >= 1 and N >= 1".into()));
    }
    let chol = cholesky(&ar1_covariance(d, 0.9).scaled(1.0 / n as f64))?;
    let mut rng = SplitMix64::new(seed);
    let beta0: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let xi = tri_matvec(&chol, &z)?;
        let p = sigmoid(dot(&xi, &beta0));
        y.push(u8::from(rng.next_open01() < p));
        x.push(xi);
    }
    Ok((LogisticData::new(d, x, y, 1.0)?, beta0))
}

/// Read `y,x1,…,xd` rows.
pub fn load_logistic_csv(path: impl AsRef<Path>, sigma2: f64) -> Result<LogisticData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || &headers[0] != "y" {
        return Err(Error::Parse { line: 1, message: "header must start with \"y\"".into() });
    }
    let d = headers.len() - 1;
    for (j, h) in headers.iter().skip(1).enumerate() {
        if h != format!("x{}", j + 1) {
            return Err(Error::Parse { line: 1, message: format!("column {} should be x{}, found {h:?}", j + 2, j + 1) });
        }
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != d + 1 {
            return Err(Error::Parse { line, message: format!("expected {} fields, found {}", d + 1, rec.len()) });
        }
        let yv: f64 = rec[0].parse().map_err(|_| Error::Parse { line, message: format!("bad response {:?}", &rec[0]) })?;
        if yv != 0.0 && yv != 1.0 {
            return Err(Error::Parse { line, message: format!("response {yv} must be 0 or 1") });
        }
        let mut xi = Vec::with_capacity(d);
        for f in rec.iter().skip(1) {
            let v: f64 = f.parse().map_err(|_| Error::Parse { line, message: format!("bad number {f:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value {f:?}") });
            }
            xi.push(v);
        }
        y.push(yv as u8);
        x.push(xi);
    }
    LogisticData::new(d, x, y, sigma2)
}

pub fn write_logistic_csv(path: impl AsRef<Path>, data: &LogisticData) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for (xi, &yi) in data.x.iter().zip(&data.y) {
        let mut rec = vec![yi.to_string()];
        rec.extend(xi.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior of logistic regression under a `N(0, σ²I)` prior. Unnormalized.
#[derive(Debug, Clone)]
pub struct LogisticTarget {
    data: LogisticData,
}

impl LogisticTarget {
    pub fn new(data: LogisticData) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }
}

impl Target for LogisticTarget {
    fn dim(&self) -> usize {
        self.data.d
    }

    fn log_density(&self, beta: &[f64]) -> f64 {
        let mut lp = -dot(beta, beta) / (2.0 * self.data.sigma2);
        for (xi, &yi) in self.data.x.iter().zip(&self.data.y) {
            let eta = dot(xi, beta);
            lp += if yi == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) };
        }
        lp
    }

    fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.log_density_and_score(beta).1
    }

    fn log_density_and_score(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let inv = 1.0 / self.data.sigma2;
        let mut lp = -dot(beta, beta) * 0.5 * inv;
        let mut g: Vec<f64> = beta.iter().map(|b| -b * inv).collect();
        for (xi, &yi) in self.data.x.iter().zip(&self.data.y) {
            let eta = dot(xi, beta);
            lp += if yi == 1 { log_sigmoid(eta) } else { log_sigmoid(-eta) };
            let r = yi as f64 - sigmoid(eta);
            for (gj, xij) in g.iter_mut().zip(xi) {
                *gj += r * xij;
            }
        }
        (lp, g)
    }

    fn hessian(&self, beta: &[f64]) -> Option<SymmetricMatrix> {
        let d = self.data.d;
        let mut h = Matrix::identity(d);
        for i in 0..d {
            h[(i, i)] = -1.0 / self.data.sigma2;
        }
        for xi in &self.data.x {
            let s = sigmoid(dot(xi, beta));
            let c = s * (1.0 - s);
            for a in 0..d {
                for b in 0..d {
                    h[(a, b)] -= c * xi[a] * xi[b];
                }
            }
        }
        Some(SymmetricMatrix::new(h).expect("square"))
    }

    fn name(&self) -> &str {
        "logistic"
    }
}

/// `p(x) · e^{shift}`: the same distribution with a different constant.
pub struct ShiftedTarget<T> {
    pub inner: T,
    pub shift: f64,
}

impl<T: Target> Target for ShiftedTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_density(x) + self.shift
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        self.inner.score(x)
    }

    fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (lp, g) = self.inner.log_density_and_score(x);
        (lp + self.shift, g)
    }

    fn hessian(&self, x: &[f64]) -> Option<SymmetricMatrix> {
        self.inner.hessian(x)
    }

    fn true_moments(&self) -> Option<Moments> {
        self.inner.true_moments()
    }

    fn is_normalized(&self) -> bool {
        self.inner.is_normalized() && self.shift == 0.0
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

impl<T: Target + ?Sized> Target for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn score(&self, x: &[f64]) -> Vec<f64> {
        (**self).score(x)
    }
    fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (**self).log_density_and_score(x)
    }
    fn hessian(&self, x: &[f64]) -> Option<SymmetricMatrix> {
        (**self).hessian(x)
    }
    fn true_moments(&self) -> Option<Moments> {
        (**self).true_moments()
    }
    fn is_normalized(&self) -> bool {
        (**self).is_normalized()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: Target + ?Sized> Target for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (**self).log_density(x)
    }
    fn score(&self, x: &[f64]) -> Vec<f64> {
        (**self).score(x)
    }
    fn log_density_and_score(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (**self).log_density_and_score(x)
    }
    fn hessian(&self, x: &[f64]) -> Option<SymmetricMatrix> {
        (**self).hessian(x)
    }
    fn true_moments(&self) -> Option<Moments> {
        (**self).true_moments()
    }
    fn is_normalized(&self) -> bool {
        (**self).is_normalized()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1.0)
    }

    /// Central differences of `log_density` against `score`, and of `score`
    /// against `hessian`.
    fn fd_check(t: &dyn Target, x: &[f64], tol: f64) {
        let h = 1e-5;
        let g = t.score(x);
        let hess = t.hessian(x);
        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            let fd = (t.log_density(&xp) - t.log_density(&xm)) / (2.0 * h);
            assert!(rel(g[j], fd) < tol, "{} score[{j}]: {} vs fd {fd}", t.name(), g[j]);
            if let Some(hm) = &hess {
                let (gp, gm) = (t.score(&xp), t.score(&xm));
                for i in 0..x.len() {
                    let fdh = (gp[i] - gm[i]) / (2.0 * h);
                    assert!(rel(hm.get(i, j), fdh) < tol, "{} hess[{i},{j}]", t.name());
                }
            }
        }
        let (lp, g2) = t.log_density_and_score(x);
        assert_eq!(lp, t.log_density(x));
        for (a, b) in g2.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn points(d: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
        let mut r = SplitMix64::new(seed);
        (0..10).map(|_| (0..d).map(|_| scale * r.normal()).collect()).collect()
    }

    #[test]
    fn gaussian_basics() {
        let t = GaussianTarget::standard(2);
        assert_eq!(t.score(&[0.0, 0.0]), vec![0.0, 0.0]);
        let shifted = GaussianTarget::new(vec![1.0, 0.0], SymmetricMatrix::identity(2)).unwrap();
        let m = shifted.true_moments().unwrap();
        assert_eq!(m.mean[0], 1.0);
        assert_eq!(m.second[0], 2.0);
        let cov = ar1_covariance(3, 0.5);
        let t = GaussianTarget::new(vec![0.3, -1.0, 2.0], cov).unwrap();
        for x in points(3, 1, 1.0) {
            fd_check(&t, &x, 1e-6);
        }
        let bad = SymmetricMatrix::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap()).unwrap();
        assert!(GaussianTarget::new(vec![0.0, 0.0], bad).is_err());
    }

    #[test]
    fn gaussian_is_normalized() {
        // Trapezoid integral of a 1-d density over a wide window.
        let t = GaussianTarget::new(vec![0.7], SymmetricMatrix::new(Matrix::diag(&[2.5])).unwrap()).unwrap();
        let h = 1e-3;
        let total: f64 = (-20_000..=20_000).map(|k| t.log_density(&[0.7 + k as f64 * h]).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn banana_basics() {
        let t = BananaTarget;
        let s = t.score(&[0.0, -1.0]);
        assert!(s[0].abs() < 1e-15 && s[1].abs() < 1e-15);
        for x in points(2, 2, 1.5) {
            fd_check(&t, &x, 1e-5);
        }
        let m = t.true_moments().unwrap();
        assert_eq!(m.second, vec![1.0, 2.5]);
    }

    #[test]
    fn banana_density_is_exact_pushforward() {
        // Change of variables through the exact map: the Jacobian is
        // triangular with determinant 1/√2.
        let mut r = SplitMix64::new(3);
        for _ in 0..20 {
            let z = [r.normal(), r.normal()];
            let x = BananaTarget::exact_map(&z);
            let lq = norm_log_pdf(z[0]) + norm_log_pdf(z[1]) + 0.5 * std::f64::consts::LN_2;
            assert!((BananaTarget.log_density(&x) - lq).abs() < 1e-12);
        }
    }

    #[test]
    fn logistic_examples() {
        let empty = LogisticTarget::new(LogisticData::new(3, vec![], vec![], 1.0).unwrap());
        assert_eq!(empty.score(&[0.0; 3]), vec![0.0; 3]);
        let one = LogisticTarget::new(LogisticData::new(1, vec![vec![1.0]], vec![1], 1.0).unwrap());
        assert!((one.score(&[0.0])[0] - 0.5).abs() < 1e-15);
        assert!(LogisticData::new(1, vec![vec![1.0]], vec![2], 1.0).is_err());
        assert!(LogisticData::new(2, vec![vec![1.0]], vec![1], 1.0).is_err());
    }

    #[test]
    fn logistic_fd_self_test() {
        let (data, _) = make_logistic_synthetic(8, 20, 4).unwrap();
        let t = LogisticTarget::new(data);
        for x in points(8, 5, 2.0) {
            fd_check(&t, &x, 1e-5);
        }
    }

    #[test]
    fn logistic_extreme_margins_stay_finite() {
        let t = LogisticTarget::new(LogisticData::new(1, vec![vec![1.0], vec![-1.0]], vec![0, 0], 1.0).unwrap());
        let lp = t.log_density(&[800.0]);
        assert!(lp.is_finite());
        // y = 0 with η = 800 contributes log sigmoid(-800) = -800.
        assert!((lp - (-800.0 - 320_000.0)).abs() < 1e-6);
    }

    #[test]
    fn synthetic_recipe() {
        let (a, beta0) = make_logistic_synthetic(50, 20, 9).unwrap();
        let (b, _) = make_logistic_synthetic(50, 20, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.dim(), a.len(), a.sigma2), (50, 20, 1.0));
        assert!(beta0.iter().all(|b| (-1.0..1.0).contains(b)));
        assert!((ar1_covariance(50, 0.9).get(0, 2) - 0.81).abs() < 1e-15);
    }

    #[test]
    fn synthetic_covariates_have_scaled_ar1_covariance() {
        // Pool many draws of x_i and compare the empirical covariance with Σ/N.
        let d = 4;
        let n = 20;
        let mut acc = vec![vec![0.0; d]; d];
        let mut count = 0.0;
        for seed in 0..500 {
            let (data, _) = make_logistic_synthetic(d, n, seed).unwrap();
            for xi in &data.x {
                for a in 0..d {
                    for b in 0..d {
                        acc[a][b] += xi[a] * xi[b];
                    }
                }
                count += 1.0;
            }
        }
        for a in 0..d {
            for b in 0..d {
                let want = 0.9f64.powi((a as i32 - b as i32).abs()) / n as f64;
                assert!((acc[a][b] / count - want).abs() < 4e-3, "({a},{b})");
            }
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let (data, _) = make_logistic_synthetic(3, 5, 1).unwrap();
        let p = dir.path().join("d.csv");
        write_logistic_csv(&p, &data).unwrap();
        assert_eq!(load_logistic_csv(&p, 1.0).unwrap(), data);

        let two = dir.path().join("two.csv");
        std::fs::write(&two, "y,x1,x2\n1,0.5,-1\n0,2,3\n").unwrap();
        assert_eq!(load_logistic_csv(&two, 1.0).unwrap().len(), 2);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "y,x1\n1,0.5\n2,1.0\n").unwrap();
        match load_logistic_csv(&bad, 1.0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let hdr = dir.path().join("hdr.csv");
        std::fs::write(&hdr, "y,a\n1,0.5\n").unwrap();
        assert!(load_logistic_csv(&hdr, 1.0).is_err());
    }

    #[test]
    fn shift_changes_only_the_constant() {
        let t = ShiftedTarget { inner: BananaTarget, shift: 3.0 };
        let x = [0.4, 0.1];
        assert_eq!(t.log_density(&x), BananaTarget.log_density(&x) + 3.0);
        assert_eq!(t.score(&x), BananaTarget.score(&x));
        assert!(!t.is_normalized());
    }
}
