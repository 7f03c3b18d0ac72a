//! Reverse-KL training of transport maps.
//!
//! The objective on a batch `{u_i}` is
//! `(1/n) Σ_i [ -logdet τ(u_i) - log p(τ(u_i)) ]`, which equals
//! `KL(τ#U ‖ p)` up to the unknown log normalizer of `p`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{ShapeGrid, Structure, TransportMap};
use crate::lowdisc::{self, PointKind, PointSet};
use crate::rng::{derive_seed, SplitMix64};
use crate::specfun::BaseKind;
use crate::sum::{pairwise_sum, pairwise_sum_vecs};
use crate::targets::Target;

/// How training batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    /// One scrambled batch per restart, L-BFGS on the fixed objective.
    #[default]
    Fixed,
    /// A fresh scramble every iteration with a plain gradient step.
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_train: usize,
    #[serde(rename = "K")]
    pub layers: usize,
    pub shape_bound: u32,
    pub restarts: usize,
    pub max_iter: usize,
    pub memory: usize,
    pub c1: f64,
    pub grad_tol: f64,
    pub policy: BatchPolicy,
    /// Step size for the refresh policy.
    pub refresh_step: f64,
    /// Standard deviation of the initial logit jitter.
    pub jitter: f64,
    pub base: BaseKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_train: 256,
            layers: 3,
            shape_bound: 7,
            restarts: 10,
            max_iter: 500,
            memory: 10,
            c1: 1e-4,
            grad_tol: 1e-6,
            policy: BatchPolicy::Fixed,
            refresh_step: 0.01,
            jitter: 0.01,
            base: BaseKind::Gauss,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_train.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("n_train = {} is not a power of two", self.n_train)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if self.memory == 0 {
            return Err(Error::InvalidArgument("memory must be >= 1".into()));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(Error::InvalidArgument(format!("c1 = {} not in (0, 1)", self.c1)));
        }
        if self.shape_bound < 2 {
            return Err(Error::InvalidArgument(format!("shape_bound = {} < 2", self.shape_bound)));
        }
        if !(self.jitter >= 0.0) || !(self.refresh_step > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidArgument("jitter, refresh_step and grad_tol must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig { max_iter: self.max_iter, memory: self.memory, c1: self.c1, grad_tol: self.grad_tol, max_halvings: 30 }
    }

    /// Initial full-mode map for a `d`-dimensional target.
    pub fn initial_map(&self, d: usize) -> Result<TransportMap> {
        TransportMap::initial(d, self.base, self.layers, ShapeGrid::with_bound(self.shape_bound)?, Structure::Full)
    }
}

fn point_objective(map: &TransportMap, target: &dyn Target, u: &[f64], index: usize) -> Result<f64> {
    let (x, logdet) = map.transform(u).map_err(|e| Error::Objective { index, message: e.to_string() })?;
    let lp = target.log_density(&x);
    let v = -logdet - lp;
    if !v.is_finite() {
        return Err(Error::Objective { index, message: format!("log density {lp}, logdet {logdet}") });
    }
    Ok(v)
}

fn point_objective_grad(map: &TransportMap, target: &dyn Target, u: &[f64], index: usize) -> Result<(f64, Vec<f64>)> {
    let wrap = |e: Error| Error::Objective { index, message: e.to_string() };
    let rec = map.forward(u).map_err(wrap)?;
    let (lp, score) = target.log_density_and_score(&rec.output);
    let v = -rec.logdet - lp;
    if !v.is_finite() || score.iter().any(|s| !s.is_finite()) {
        return Err(Error::Objective { index, message: format!("log density {lp}, logdet {}", rec.logdet) });
    }
    let neg_score: Vec<f64> = score.iter().map(|s| -s).collect();
    let g = map.backward(&rec, &neg_score, -1.0).map_err(wrap)?;
    Ok((v, g.params))
}

fn check_batch(map: &TransportMap, target: &dyn Target, ps: &PointSet) -> Result<()> {
    if ps.dim() != target.dim() {
        return Err(Error::dim(target.dim(), ps.dim()));
    }
    if map.dim() != target.dim() {
        return Err(Error::dim(target.dim(), map.dim()));
    }
    Ok(())
}

/// Batch average of the KL integrand.
pub fn kl_value(map: &TransportMap, target: &dyn Target, ps: &PointSet) -> Result<f64> {
    check_batch(map, target, ps)?;
    let vals: Vec<f64> = (0..ps.n())
        .into_par_iter()
        .map(|i| point_objective(map, target, ps.point(i), i))
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&vals) / ps.n() as f64)
}

/// Batch average of the KL integrand and its gradient with respect to the
/// packed parameters. Deterministic for a fixed batch.
pub fn kl_objective(map: &TransportMap, target: &dyn Target, ps: &PointSet) -> Result<(f64, Vec<f64>)> {
    check_batch(map, target, ps)?;
    let per: Vec<(f64, Vec<f64>)> = (0..ps.n())
        .into_par_iter()
        .map(|i| point_objective_grad(map, target, ps.point(i), i))
        .collect::<Result<_>>()?;
    let n = ps.n() as f64;
    let (vals, grads): (Vec<f64>, Vec<Vec<f64>>) = per.into_iter().unzip();
    let mut g = pairwise_sum_vecs(&grads, map.num_params());
    g.iter_mut().for_each(|v| *v /= n);
    Ok((pairwise_sum(&vals) / n, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    pub c1: f64,
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        FitConfig::default().lbfgs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// L-BFGS with two-loop recursion and Armijo backtracking.
pub fn lbfgs_minimize<F>(mut f: F, theta0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut fx, mut g) = f(theta0)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Optimizer(format!("objective is not finite at the starting point ({fx})")));
    }
    let mut x = theta0.to_vec();
    let mut trace = vec![fx];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut termination = Termination::IterationLimit;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let gn = norm(&g);
        if gn <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = rho_hist[i] * dotp(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = if m > 0 {
            dotp(&s_hist[m - 1], &y_hist[m - 1]) / dotp(&y_hist[m - 1], &y_hist[m - 1])
        } else {
            1.0 / gn.max(1.0)
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..m {
            let beta = rho_hist[i] * dotp(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dotp(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            dir = g.iter().map(|v| -v / gn.max(1.0)).collect();
            slope = dotp(&g, &dir);
        }
        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if let Ok((ft, gt)) = f(&trial) {
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= fx + cfg.c1 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            termination = Termination::LineSearchFailure;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dotp(&s, &y);
        if sy > 1e-10 {
            if s_hist.len() == cfg.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(fx);
        iterations += 1;
    }
    if termination == Termination::IterationLimit && norm(&g) <= cfg.grad_tol {
        termination = Termination::GradientTolerance;
    }
    Ok(LbfgsResult { grad_norm: norm(&g), theta: x, value: fx, iterations, trace, termination })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub map: TransportMap,
    /// Final objective of the chosen restart on its own batch.
    pub objective: f64,
    /// Objective trace of the chosen restart.
    pub trace: Vec<f64>,
    pub restart: usize,
    /// Final objective of every restart, `None` where a restart failed.
    pub restart_objectives: Vec<Option<f64>>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Persisted alongside the model JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitTrace {
    pub objective_trace: Vec<f64>,
    pub restart_chosen: usize,
    pub restart_objectives: Vec<Option<f64>>,
    pub iterations: usize,
    pub termination: Termination,
    pub seed: u64,
    pub config: FitConfig,
}

impl FitResult {
    pub fn sidecar(&self, config: &FitConfig, seed: u64) -> FitTrace {
        FitTrace {
            objective_trace: self.trace.clone(),
            restart_chosen: self.restart,
            restart_objectives: self.restart_objectives.clone(),
            iterations: self.iterations,
            termination: self.termination,
            seed,
            config: config.clone(),
        }
    }
}

/// The scrambled training batch of restart `k`.
pub fn restart_batch(config: &FitConfig, d: usize, seed: u64, k: usize) -> Result<PointSet> {
    lowdisc::generate(PointKind::SobolScrambled, config.n_train, d, derive_seed(seed, &format!("fit.restart.{k}")))
}

struct RestartOutcome {
    map: TransportMap,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    termination: Termination,
}

fn run_restart(target: &dyn Target, template: &TransportMap, config: &FitConfig, seed: u64, k: usize) -> Result<RestartOutcome> {
    let d = target.dim();
    let mut jitter_rng = SplitMix64::new(derive_seed(seed, &format!("fit.jitter.{k}")));
    let start = template.jitter_logits(config.jitter, &mut jitter_rng);
    let batch_seed = derive_seed(seed, &format!("fit.restart.{k}"));
    match config.policy {
        BatchPolicy::Fixed => {
            let ps = restart_batch(config, d, seed, k)?;
            let res = lbfgs_minimize(|theta| kl_objective(&start.unpack(theta)?, target, &ps), &start.pack(), &config.lbfgs())?;
            Ok(RestartOutcome {
                map: start.unpack(&res.theta)?,
                objective: res.value,
                trace: res.trace,
                iterations: res.iterations,
                termination: res.termination,
            })
        }
        BatchPolicy::Refresh => {
            let mut theta = start.pack();
            let mut trace = Vec::with_capacity(config.max_iter + 1);
            let mut last = f64::NAN;
            for it in 0..config.max_iter.max(1) {
                let ps = lowdisc::generate(
                    PointKind::SobolScrambled,
                    config.n_train,
                    d,
                    derive_seed(batch_seed, &format!("iter.{it}")),
                )?;
                let (v, g) = kl_objective(&start.unpack(&theta)?, target, &ps)?;
                trace.push(v);
                last = v;
                if norm(&g) <= config.grad_tol {
                    break;
                }
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t -= config.refresh_step * gi;
                }
            }
            let map = start.unpack(&theta)?;
            let ps = restart_batch(config, d, seed, k)?;
            let objective = kl_value(&map, target, &ps).unwrap_or(last);
            Ok(RestartOutcome { map, objective, iterations: trace.len(), trace, termination: Termination::IterationLimit })
        }
    }
}

/// Fit from a template map, which fixes `K`, the shape grid, the lower
/// triangular structure and any rotation. Each restart jitters the
/// template's logits and trains on its own scrambled batch; the restart
/// with the smallest final objective wins.
pub fn fit_from(target: &dyn Target, template: &TransportMap, config: &FitConfig, seed: u64) -> Result<FitResult> {
    config.validate()?;
    if template.dim() != target.dim() {
        return Err(Error::dim(target.dim(), template.dim()));
    }
    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut objectives = Vec::with_capacity(config.restarts);
    let mut failures = Vec::new();
    for k in 0..config.restarts {
        match run_restart(target, template, config, seed, k) {
            Ok(out) if out.objective.is_finite() => {
                objectives.push(Some(out.objective));
                if best.as_ref().map_or(true, |(_, b)| out.objective < b.objective) {
                    best = Some((k, out));
                }
            }
            Ok(out) => {
                objectives.push(None);
                failures.push(format!("restart {k}: final objective {}", out.objective));
            }
            Err(e) => {
                objectives.push(None);
                failures.push(format!("restart {k}: {e}"));
            }
        }
    }
    let (restart, out) = best.ok_or(Error::Fit(failures))?;
    Ok(FitResult {
        map: out.map,
        objective: out.objective,
        trace: out.trace,
        restart,
        restart_objectives: objectives,
        iterations: out.iterations,
        termination: out.termination,
    })
}

/// Fit a full-mode map built from `config`.
pub fn fit(target: &dyn Target, config: &FitConfig, seed: u64) -> Result<FitResult> {
    config.validate()?;
    let template = config.initial_map(target.dim())?;
    fit_from(target, &template, config, seed)
}
