//! Run configuration: one TOML or JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tqmc::estimate::{default_fns, BenchConfig, Method, MomentFn};
use tqmc::linalg::{Matrix, SymmetricMatrix};
use tqmc::specfun::BaseKind;
use tqmc::targets::{
    ar1_covariance, load_logistic_csv, make_logistic_synthetic, BananaTarget, GaussianTarget, LogisticTarget, Target,
};
use tqmc::train::{BatchPolicy, FitConfig};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub target: TargetSpec,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub estimate: EstimateSpec,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// `gaussian`, `banana` or `logistic`.
    pub name: Option<String>,
    /// Gaussian dimension when `mean` is absent.
    pub d: Option<usize>,
    pub mean: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    /// AR(1) correlation, an alternative to `cov`.
    pub rho: Option<f64>,
    /// Logistic data file, `y,x1,…,xd`.
    pub csv: Option<PathBuf>,
    /// Synthetic logistic data: observation count and seed.
    pub n: Option<usize>,
    pub data_seed: Option<u64>,
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    Subspace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub base: BaseKind,
    #[serde(rename = "K")]
    pub layers: usize,
    pub shape_bound: u32,
    pub mode: Mode,
    /// Eigenvalue mass kept by the subspace rule.
    pub threshold: f64,
    /// Reference draws for the relative-score matrix.
    pub subspace_samples: usize,
}

impl Default for FlowSpec {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            base: f.base,
            layers: f.layers,
            shape_bound: f.shape_bound,
            mode: Mode::Full,
            threshold: 0.99,
            subspace_samples: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub n_train: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub memory: usize,
    pub c1: f64,
    pub grad_tol: f64,
    pub policy: BatchPolicy,
    pub refresh_step: f64,
    pub jitter: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            n_train: f.n_train,
            restarts: f.restarts,
            max_iter: f.max_iter,
            memory: f.memory,
            c1: f.c1,
            grad_tol: f.grad_tol,
            policy: f.policy,
            refresh_step: f.refresh_step,
            jitter: f.jitter,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSpec {
    /// Sample size of `estimate`.
    pub n: usize,
    pub replicates: usize,
    pub method: String,
    /// Function ids such as `x1` or `x3^2`; empty means all first and second
    /// coordinate moments.
    pub functions: Vec<String>,
    pub n_grid: Vec<usize>,
    pub methods: Vec<String>,
    /// Any of `transport`, `identity`, `prior`, `laplace`, `mfg`, `exact`.
    pub proposals: Vec<String>,
    /// `METHOD/proposal` used for reduction factors, e.g. `MC/prior`.
    pub baseline: Option<String>,
    /// Reference estimate for targets without known moments: pooled RQMC
    /// of `reference_scrambles` scrambles at `reference_n` points.
    pub reference_n: usize,
    pub reference_scrambles: usize,
}

impl Default for EstimateSpec {
    fn default() -> Self {
        let b = BenchConfig::default();
        Self {
            n: 1024,
            replicates: 1,
            method: "RQMC".into(),
            functions: Vec::new(),
            n_grid: b.n_grid,
            methods: vec!["MC".into(), "RQMC".into()],
            proposals: vec!["transport".into()],
            baseline: None,
            reference_n: 4096,
            reference_scrambles: 32,
        }
    }
}

fn cfg(msg: impl Into<String>) -> CliError {
    CliError::config(msg)
}

impl RunConfig {
    /// Read a config file; `.json` is parsed as JSON, anything else as TOML.
    /// Relative data paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| cfg(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut c: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| cfg(format!("config {}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| cfg(format!("config {}: {e}", path.display())))?
        };
        if let Some(csv) = &c.target.csv {
            if csv.is_relative() {
                let dir = path.parent().unwrap_or(Path::new("."));
                c.target.csv = Some(dir.join(csv));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let name = self.target_name()?;
        if !["gaussian", "banana", "logistic"].contains(&name) {
            return Err(cfg(format!("unknown target {name:?} (expected gaussian, banana or logistic)")));
        }
        if let Some(csv) = &self.target.csv {
            if !csv.exists() {
                return Err(cfg(format!("data file {} does not exist", csv.display())));
            }
        }
        self.fit_config().validate().map_err(|e| cfg(e.to_string()))?;
        if !(self.flow.threshold > 0.0 && self.flow.threshold <= 1.0) {
            return Err(cfg(format!("threshold {} not in (0, 1]", self.flow.threshold)));
        }
        if self.flow.subspace_samples == 0 {
            return Err(cfg("subspace_samples must be positive"));
        }
        let e = &self.estimate;
        for &n in e.n_grid.iter().chain([&e.n, &e.reference_n]) {
            if !n.is_power_of_two() {
                return Err(cfg(format!("sample size {n} is not a power of two")));
            }
        }
        if e.replicates == 0 || e.reference_scrambles == 0 {
            return Err(cfg("replicates and reference_scrambles must be positive"));
        }
        self.method()?;
        self.methods()?;
        self.baseline()?;
        for p in &e.proposals {
            if !PROPOSALS.contains(&p.as_str()) {
                return Err(cfg(format!("unknown proposal {p:?} (expected one of {})", PROPOSALS.join(", "))));
            }
        }
        Ok(())
    }

    pub fn target_name(&self) -> Result<&str, CliError> {
        self.target.name.as_deref().ok_or_else(|| cfg("target.name is missing"))
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            n_train: f.n_train,
            layers: self.flow.layers,
            shape_bound: self.flow.shape_bound,
            restarts: f.restarts,
            max_iter: f.max_iter,
            memory: f.memory,
            c1: f.c1,
            grad_tol: f.grad_tol,
            policy: f.policy,
            refresh_step: f.refresh_step,
            jitter: f.jitter,
            base: self.flow.base,
        }
    }

    pub fn method(&self) -> Result<Method, CliError> {
        Method::parse(&self.estimate.method).map_err(|e| cfg(e.to_string()))
    }

    pub fn methods(&self) -> Result<Vec<Method>, CliError> {
        self.estimate.methods.iter().map(|m| Method::parse(m).map_err(|e| cfg(e.to_string()))).collect()
    }

    pub fn baseline(&self) -> Result<Option<(Method, String)>, CliError> {
        let Some(b) = &self.estimate.baseline else { return Ok(None) };
        let (m, p) = b.split_once('/').ok_or_else(|| cfg(format!("baseline {b:?} is not METHOD/proposal")))?;
        Ok(Some((Method::parse(m).map_err(|e| cfg(e.to_string()))?, p.to_string())))
    }

    pub fn bench_config(&self) -> Result<BenchConfig, CliError> {
        Ok(BenchConfig {
            n_grid: self.estimate.n_grid.clone(),
            replicates: self.estimate.replicates,
            methods: self.methods()?,
        })
    }

    pub fn functions(&self, d: usize) -> Result<Vec<MomentFn>, CliError> {
        if self.estimate.functions.is_empty() {
            return Ok(default_fns(d));
        }
        let fns: Vec<MomentFn> = self
            .estimate
            .functions
            .iter()
            .map(|s| MomentFn::parse(s).map_err(|e| cfg(e.to_string())))
            .collect::<Result<_, _>>()?;
        for f in &fns {
            let (MomentFn::Coord(j) | MomentFn::Square(j)) = *f;
            if j >= d {
                return Err(cfg(format!("function {} exceeds dimension {d}", f.id())));
            }
        }
        Ok(fns)
    }

    pub fn build_target(&self) -> Result<Box<dyn Target>, CliError> {
        let t = &self.target;
        match self.target_name()? {
            "banana" => Ok(Box::new(BananaTarget)),
            "gaussian" => {
                let d = t.mean.as_ref().map(Vec::len).or(t.d).ok_or_else(|| cfg("gaussian target needs d or mean"))?;
                if d == 0 {
                    return Err(cfg("gaussian target needs d ≥ 1"));
                }
                let mean = t.mean.clone().unwrap_or_else(|| vec![0.0; d]);
                let cov = match (&t.cov, t.rho) {
                    (Some(_), Some(_)) => return Err(cfg("give either cov or rho, not both")),
                    (Some(rows), None) => {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return Err(cfg(format!("cov must be {d}×{d}")));
                        }
                        let m = Matrix::from_row_major(d, d, rows.concat()).map_err(|e| cfg(e.to_string()))?;
                        SymmetricMatrix::new(m).map_err(|e| cfg(e.to_string()))?
                    }
                    (None, Some(rho)) => {
                        if !(rho.abs() < 1.0) {
                            return Err(cfg(format!("rho = {rho} must lie in (-1, 1)")));
                        }
                        ar1_covariance(d, rho)
                    }
                    (None, None) => SymmetricMatrix::identity(d),
                };
                Ok(Box::new(GaussianTarget::new(mean, cov).map_err(|e| cfg(e.to_string()))?))
            }
            "logistic" => {
                let sigma2 = t.sigma2.unwrap_or(1.0);
                let data = match &t.csv {
                    Some(path) => load_logistic_csv(path, sigma2).map_err(|e| cfg(format!("{}: {e}", path.display())))?,
                    None => {
                        let d = t.d.ok_or_else(|| cfg("synthetic logistic target needs d"))?;
                        let n = t.n.ok_or_else(|| cfg("synthetic logistic target needs n"))?;
                        let (mut data, _) =
                            make_logistic_synthetic(d, n, t.data_seed.unwrap_or(0)).map_err(|e| cfg(e.to_string()))?;
                        data.sigma2 = sigma2;
                        data
                    }
                };
                Ok(Box::new(LogisticTarget::new(data)))
            }
            other => Err(cfg(format!("unknown target {other:?}"))),
        }
    }

    /// Prior variance for the `prior` proposal.
    pub fn prior_variance(&self) -> f64 {
        if self.target.name.as_deref() == Some("logistic") {
            self.target.sigma2.unwrap_or(1.0)
        } else {
            1.0
        }
    }
}

pub const PROPOSALS: [&str; 6] = ["transport", "identity", "prior", "laplace", "mfg", "exact"];
