//! Importance sampling on top of cube-to-`R^d` proposals.
//!
//! A proposal turns a point `u` of the unit cube into a draw `x` and its
//! log density `log q(x)`. The weight of `x` is `p(x)/q(x)`; with an
//! unnormalized `p` only the self-normalized estimator is meaningful.

mod bench;

pub use bench::{
    estimate_replicates, log_log_slope, mse_benchmark, reduction_factors, reference_estimate, replicate_seed, write_estimates_csv, write_raw_csv,
    write_summary_csv, BenchConfig, BenchReport, EstimateReport, GroundTruth, Method, RawRow, SummaryRow,
    BENCH_MAGIC,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{ShapeGrid, Structure, TransportMap};
use crate::linalg::{cholesky, spd_inverse, tri_matvec, tri_solve, LowerTriangular, Matrix, SymmetricMatrix};
use crate::lowdisc::PointSet;
use crate::specfun::{norm_icdf, norm_log_pdf, BaseKind};
use crate::sum::pairwise_sum;
use crate::targets::{BananaTarget, Target};
use crate::train::{fit_from, lbfgs_minimize, FitConfig, LbfgsConfig};

pub trait Proposal: Send + Sync {
    fn dim(&self) -> usize;

    /// Map a cube point to `(x, log q(x))`.
    fn sample(&self, u: &[f64]) -> Result<(Vec<f64>, f64)>;

    /// `log q(x)` at an arbitrary point.
    fn log_density(&self, x: &[f64]) -> Result<f64>;

    fn name(&self) -> &str;
}

/// `τ#U` for a transport map `τ`; `log q = -logdet`.
#[derive(Debug, Clone)]
pub struct TransportProposal {
    pub map: TransportMap,
    label: String,
}

impl TransportProposal {
    pub fn new(map: TransportMap, label: impl Into<String>) -> Self {
        Self { map, label: label.into() }
    }
}

impl Proposal for TransportProposal {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn sample(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, logdet) = self.map.transform(u)?;
        Ok((x, -logdet))
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.map.log_density(x)
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// `N(μ, LLᵀ)` sampled as `x = μ + L Φ⁻¹(u)`.
#[derive(Debug, Clone)]
pub struct GaussianProposal {
    pub mean: Vec<f64>,
    pub chol: LowerTriangular,
    log_det: f64,
    label: String,
}

impl GaussianProposal {
    pub fn from_cholesky(mean: Vec<f64>, chol: LowerTriangular, label: impl Into<String>) -> Result<Self> {
        if chol.dim() != mean.len() {
            return Err(Error::dim(mean.len(), chol.dim()));
        }
        if !chol.is_unit_feasible() {
            return Err(Error::Proposal("Cholesky factor needs a positive diagonal".into()));
        }
        let log_det = chol.log_det();
        Ok(Self { mean, chol, log_det, label: label.into() })
    }

    pub fn new(mean: Vec<f64>, cov: &SymmetricMatrix, label: impl Into<String>) -> Result<Self> {
        let chol = cholesky(cov).map_err(|e| Error::Proposal(e.to_string()))?;
        Self::from_cholesky(mean, chol, label)
    }

    /// `N(0, σ²I)`, the prior of the logistic model.
    pub fn prior(d: usize, sigma2: f64) -> Result<Self> {
        let chol = LowerTriangular::new(Matrix::diag(&vec![sigma2.sqrt(); d]))?;
        Self::from_cholesky(vec![0.0; d], chol, "prior")
    }

    pub fn covariance(&self) -> SymmetricMatrix {
        let l = self.chol.matrix();
        SymmetricMatrix::new(l.matmul(&l.transpose()).expect("square")).expect("square")
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl Proposal for GaussianProposal {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        if u.len() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), u.len()));
        }
        let z: Vec<f64> = u.iter().map(|&v| norm_icdf(v)).collect::<Result<_>>()?;
        let lz: f64 = z.iter().map(|&v| norm_log_pdf(v)).sum();
        let mut x = tri_matvec(&self.chol, &z)?;
        x.iter_mut().zip(&self.mean).for_each(|(a, m)| *a += m);
        Ok((x, lz - self.log_det))
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), x.len()));
        }
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let z = tri_solve(&self.chol, &r)?;
        Ok(z.iter().map(|&v| norm_log_pdf(v)).sum::<f64>() - self.log_det)
    }

    fn name(&self) -> &str {
        &self.label
    }
}

/// The closed-form transport of the banana target.
#[derive(Debug, Clone, Copy, Default)]
pub struct BananaExactProposal;

impl Proposal for BananaExactProposal {
    fn dim(&self) -> usize {
        2
    }

    fn sample(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        let z = [norm_icdf(u[0])?, norm_icdf(u[1])?];
        let lq = norm_log_pdf(z[0]) + norm_log_pdf(z[1]) + 0.5 * std::f64::consts::LN_2;
        Ok((BananaTarget::exact_map(&z).to_vec(), lq))
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let z0 = x[0];
        let z1 = std::f64::consts::SQRT_2 * (x[1] - z0 * z0 + 1.0);
        Ok(norm_log_pdf(z0) + norm_log_pdf(z1) + 0.5 * std::f64::consts::LN_2)
    }

    fn name(&self) -> &str {
        "exact"
    }
}

/// `log p(x) - log q(x)`.
pub fn log_weight(proposal: &dyn Proposal, target: &dyn Target, x: &[f64]) -> Result<f64> {
    let lw = target.log_density(x) - proposal.log_density(x)?;
    if !lw.is_finite() {
        return Err(Error::Estimation(format!("non-finite log weight at {x:?}")));
    }
    Ok(lw)
}

/// Draws and their log weights for every point of a point set.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    pub xs: Vec<Vec<f64>>,
    pub log_w: Vec<f64>,
}

pub fn weighted_sample(proposal: &dyn Proposal, target: &dyn Target, ps: &PointSet) -> Result<WeightedSample> {
    if ps.dim() != proposal.dim() || proposal.dim() != target.dim() {
        return Err(Error::dim(target.dim(), ps.dim()));
    }
    let pairs: Vec<(Vec<f64>, f64)> = (0..ps.n())
        .into_par_iter()
        .map(|i| {
            let (x, lq) = proposal.sample(ps.point(i))?;
            let lw = target.log_density(&x) - lq;
            if !lw.is_finite() {
                return Err(Error::Estimation(format!("non-finite log weight at point {i}")));
            }
            Ok((x, lw))
        })
        .collect::<Result<_>>()?;
    let (xs, log_w) = pairs.into_iter().unzip();
    Ok(WeightedSample { xs, log_w })
}

/// `exp(log_w - max log_w)`.
pub fn stabilized_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Estimation("no finite log weight".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::Estimation("all weights vanish".into()));
    }
    Ok(w)
}

/// `(Σw)² / Σw²`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Estimation("weights must be finite and nonnegative".into()));
    }
    let m = weights.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Err(Error::Estimation("all weights are zero".into()));
    }
    // Rescaling by the maximum leaves the ratio unchanged and avoids overflow.
    let scaled: Vec<f64> = weights.iter().map(|w| w / m).collect();
    let s = pairwise_sum(&scaled);
    let s2 = pairwise_sum(&scaled.iter().map(|w| w * w).collect::<Vec<_>>());
    Ok(s * s / s2)
}

/// A test function `f: R^d → R` identified as `x{j}` or `x{j}^2` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MomentFn {
    Coord(usize),
    Square(usize),
}

impl MomentFn {
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            MomentFn::Coord(j) => x[j],
            MomentFn::Square(j) => x[j] * x[j],
        }
    }

    pub fn id(self) -> String {
        match self {
            MomentFn::Coord(j) => format!("x{}", j + 1),
            MomentFn::Square(j) => format!("x{}^2", j + 1),
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown function id {id:?} (expected x<j> or x<j>^2)"));
        let rest = id.strip_prefix('x').ok_or_else(bad)?;
        let (num, square) = match rest.strip_suffix("^2") {
            Some(n) => (n, true),
            None => (rest, false),
        };
        let j: usize = num.parse().map_err(|_| bad())?;
        if j == 0 {
            return Err(bad());
        }
        Ok(if square { MomentFn::Square(j - 1) } else { MomentFn::Coord(j - 1) })
    }

    /// Exact value from known moments.
    pub fn truth(self, m: &crate::targets::Moments) -> f64 {
        match self {
            MomentFn::Coord(j) => m.mean[j],
            MomentFn::Square(j) => m.second[j],
        }
    }
}

/// `x_1..x_d` followed by `x_1²..x_d²`.
pub fn default_fns(d: usize) -> Vec<MomentFn> {
    (0..d).map(MomentFn::Coord).chain((0..d).map(MomentFn::Square)).collect()
}

/// Self-normalized estimates with weight diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SnisOutput {
    pub estimates: Vec<f64>,
    pub ess: f64,
    /// Largest normalized weight `max w_i / Σ w_i`.
    pub max_weight: f64,
}

fn snis_from(sample: &WeightedSample, fns: &[MomentFn]) -> Result<SnisOutput> {
    let w = stabilized_weights(&sample.log_w)?;
    let total = pairwise_sum(&w);
    let estimates = fns
        .iter()
        .map(|f| {
            let terms: Vec<f64> = sample.xs.iter().zip(&w).map(|(x, wi)| wi * f.eval(x)).collect();
            pairwise_sum(&terms) / total
        })
        .collect();
    let max_weight = w.iter().copied().fold(0.0, f64::max) / total;
    Ok(SnisOutput { estimates, ess: ess(&w)?, max_weight })
}

/// `Σ f(x_i) w_i / Σ w_i`.
pub fn snis_estimate(proposal: &dyn Proposal, target: &dyn Target, fns: &[MomentFn], ps: &PointSet) -> Result<SnisOutput> {
    snis_from(&weighted_sample(proposal, target, ps)?, fns)
}

/// `(1/n) Σ f(x_i) w_i`; only for normalized targets.
pub fn is_estimate(proposal: &dyn Proposal, target: &dyn Target, fns: &[MomentFn], ps: &PointSet) -> Result<Vec<f64>> {
    if !target.is_normalized() {
        return Err(Error::Estimation(format!(
            "target {:?} is unnormalized; use the self-normalized estimator",
            target.name()
        )));
    }
    let s = weighted_sample(proposal, target, ps)?;
    let w: Vec<f64> = s.log_w.iter().map(|l| l.exp()).collect();
    let n = ps.n() as f64;
    Ok(fns
        .iter()
        .map(|f| pairwise_sum(&s.xs.iter().zip(&w).map(|(x, wi)| wi * f.eval(x)).collect::<Vec<_>>()) / n)
        .collect())
}

/// Mode of `log p` by L-BFGS from the origin.
pub fn find_mode(target: &dyn Target) -> Result<Vec<f64>> {
    let cfg = LbfgsConfig { max_iter: 5000, grad_tol: 1e-10, ..LbfgsConfig::default() };
    let res = lbfgs_minimize(
        |x| {
            let (lp, g) = target.log_density_and_score(x);
            Ok((-lp, g.into_iter().map(|v| -v).collect()))
        },
        &vec![0.0; target.dim()],
        &cfg,
    )?;
    Ok(res.theta)
}

/// Gaussian centred at the mode with covariance `(-∇² log p)⁻¹`.
pub fn laplace_proposal(target: &dyn Target) -> Result<GaussianProposal> {
    let mode = find_mode(target)?;
    let h = target
        .hessian(&mode)
        .ok_or_else(|| Error::Proposal(format!("target {:?} has no Hessian", target.name())))?;
    let a = h.scaled(-1.0);
    cholesky(&a).map_err(|e| Error::Proposal(format!("negated Hessian at the mode is not positive definite: {e}")))?;
    let cov = spd_inverse(&a).map_err(|e| Error::Proposal(e.to_string()))?;
    GaussianProposal::new(mode, &cov, "laplace")
}

/// Mean-field Gaussian fitted by reverse KL: a one-layer map with diagonal
/// `L` and an identity elementwise transform.
pub fn mfg_proposal(target: &dyn Target, config: &FitConfig, seed: u64) -> Result<GaussianProposal> {
    let d = target.dim();
    let template = TransportMap::initial(d, BaseKind::Gauss, 1, ShapeGrid::empty(), Structure::Diagonal)?;
    let res = fit_from(target, &template, config, seed)?;
    let layer = &res.map.layers()[0];
    let sd: Vec<f64> = layer.raw_diag().iter().map(|r| r.exp()).collect();
    let chol = LowerTriangular::new(Matrix::diag(&sd))?;
    GaussianProposal::from_cholesky(layer.b().to_vec(), chol, "mfg")
}
