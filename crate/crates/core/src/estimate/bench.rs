//! Replicated estimation and the MSE-versus-n benchmark.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{snis_from, weighted_sample, MomentFn, Proposal, WeightedSample};
use crate::error::{Error, Result};
use crate::lowdisc::{self, PointKind};
use crate::rng::derive_seed;
use crate::targets::Target;

/// First line of every benchmark CSV.
pub const BENCH_MAGIC: &str = "# tqmc-bench v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MC")]
    Mc,
    #[serde(rename = "RQMC")]
    Rqmc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "MC",
            Method::Rqmc => "RQMC",
        }
    }

    pub fn kind(self) -> PointKind {
        match self {
            Method::Mc => PointKind::Mc,
            Method::Rqmc => PointKind::SobolScrambled,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "MC" | "mc" => Ok(Method::Mc),
            "RQMC" | "rqmc" => Ok(Method::Rqmc),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?} (expected MC or RQMC)"))),
        }
    }
}

/// Reference values for the test functions.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub values: Vec<f64>,
    /// `false` when the values are themselves long-run estimates.
    pub exact: bool,
}

impl GroundTruth {
    pub fn from_target(target: &dyn Target, fns: &[MomentFn]) -> Option<Self> {
        let m = target.true_moments()?;
        Some(Self { values: fns.iter().map(|f| f.truth(&m)).collect(), exact: true })
    }
}

/// Long-run reference values for targets without known moments: one
/// self-normalized estimate over `scrambles` pooled scrambled nets of `n`
/// points each.
pub fn reference_estimate(
    proposal: &dyn Proposal,
    target: &dyn Target,
    fns: &[MomentFn],
    n: usize,
    scrambles: usize,
    seed: u64,
) -> Result<GroundTruth> {
    if scrambles == 0 {
        return Err(Error::InvalidArgument("need at least one scramble".into()));
    }
    let mut pooled = WeightedSample { xs: Vec::new(), log_w: Vec::new() };
    for s in 0..scrambles {
        let ps = lowdisc::generate(PointKind::SobolScrambled, n, target.dim(), derive_seed(seed, &format!("reference.{s}")))?;
        let w = weighted_sample(proposal, target, &ps)?;
        pooled.xs.extend(w.xs);
        pooled.log_w.extend(w.log_w);
    }
    Ok(GroundTruth { values: snis_from(&pooled, fns)?.estimates, exact: false })
}

/// Seed of replicate `r` at sample size `n`.
pub fn replicate_seed(seed: u64, r: usize, n: usize) -> u64 {
    derive_seed(seed, &format!("bench.rep.{r}.n.{n}"))
}

/// Independent replicates of the self-normalized estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub proposal: String,
    pub method: Method,
    pub kind: PointKind,
    pub n: usize,
    pub f_ids: Vec<String>,
    pub seeds: Vec<u64>,
    /// `estimates[r][f]`.
    pub estimates: Vec<Vec<f64>>,
    pub ess: Vec<f64>,
    pub max_weight: Vec<f64>,
    /// Mean squared error per function, present with ground truth and at
    /// least two replicates.
    pub mse: Option<Vec<f64>>,
    pub truth: Option<GroundTruth>,
}

impl EstimateReport {
    pub fn ess_mean(&self) -> f64 {
        self.ess.iter().sum::<f64>() / self.ess.len() as f64
    }

    /// Mean over replicates per function.
    pub fn mean_estimates(&self) -> Vec<f64> {
        let r = self.estimates.len() as f64;
        (0..self.f_ids.len()).map(|f| self.estimates.iter().map(|e| e[f]).sum::<f64>() / r).collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_replicates(
    proposal: &dyn Proposal,
    target: &dyn Target,
    fns: &[MomentFn],
    method: Method,
    n: usize,
    replicates: usize,
    seed: u64,
    truth: Option<&GroundTruth>,
) -> Result<EstimateReport> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    if let Some(t) = truth {
        if t.values.len() != fns.len() {
            return Err(Error::dim(fns.len(), t.values.len()));
        }
    }
    if let Some(f) = fns.iter().find(|f| match f {
        MomentFn::Coord(j) | MomentFn::Square(j) => *j >= target.dim(),
    }) {
        return Err(Error::InvalidArgument(format!("function {} exceeds dimension {}", f.id(), target.dim())));
    }
    let d = target.dim();
    let kind = method.kind();
    let seeds: Vec<u64> = (0..replicates).map(|r| replicate_seed(seed, r, n)).collect();
    let outs: Vec<super::SnisOutput> = seeds
        .par_iter()
        .map(|&s| {
            let ps = lowdisc::generate(kind, n, d, s)?;
            snis_from(&weighted_sample(proposal, target, &ps)?, fns)
        })
        .collect::<Result<_>>()?;
    let mse = match truth {
        Some(t) if replicates >= 2 => Some(
            (0..fns.len())
                .map(|f| outs.iter().map(|o| (o.estimates[f] - t.values[f]).powi(2)).sum::<f64>() / replicates as f64)
                .collect(),
        ),
        _ => None,
    };
    Ok(EstimateReport {
        proposal: proposal.name().to_string(),
        method,
        kind,
        n,
        f_ids: fns.iter().map(|f| f.id()).collect(),
        seeds,
        ess: outs.iter().map(|o| o.ess).collect(),
        max_weight: outs.iter().map(|o| o.max_weight).collect(),
        estimates: outs.into_iter().map(|o| o.estimates).collect(),
        mse,
        truth: truth.cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_grid: (6..=13).map(|m| 1 << m).collect(), replicates: 50, methods: vec![Method::Mc, Method::Rqmc] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRow {
    pub method: &'static str,
    pub proposal: String,
    pub kind: &'static str,
    pub n: usize,
    pub replicate: usize,
    pub f_id: String,
    pub estimate: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: &'static str,
    pub proposal: String,
    pub n: usize,
    pub f_id: String,
    pub mse: f64,
    pub ess_mean: f64,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub raw: Vec<RawRow>,
    pub summary: Vec<SummaryRow>,
    pub reports: Vec<EstimateReport>,
    pub truth: GroundTruth,
}

impl BenchReport {
    pub fn mse(&self, method: Method, proposal: &str, n: usize, f_id: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method.name() && r.proposal == proposal && r.n == n && r.f_id == f_id)
            .map(|r| r.mse)
    }

    pub fn slope(&self, method: Method, proposal: &str, f_id: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method.name() && r.proposal == proposal && r.f_id == f_id)
            .map(|r| r.slope)
    }

    /// The slope table as text, one line per (method, proposal, f).
    pub fn slope_table(&self) -> String {
        let mut out = format!("{:<6} {:<10} {:<8} {:>8}\n", "method", "proposal", "f", "slope");
        let mut seen = std::collections::HashSet::new();
        for r in &self.summary {
            if seen.insert((r.method, r.proposal.clone(), r.f_id.clone())) {
                out += &format!("{:<6} {:<10} {:<8} {:>8.3}\n", r.method, r.proposal, r.f_id, r.slope);
            }
        }
        out
    }
}

/// Least-squares slope of `ln mse` against `ln n`. `NaN` with fewer than two
/// positive values.
pub fn log_log_slope(ns: &[usize], mses: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        ns.iter().zip(mses).filter(|(_, m)| **m > 0.0).map(|(&n, &m)| ((n as f64).ln(), m.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return f64::NAN;
    }
    sxy / sxx
}

/// MSE of every (method, proposal) pair over an `n` grid with independent
/// randomizations per replicate.
pub fn mse_benchmark(
    proposals: &[&dyn Proposal],
    target: &dyn Target,
    fns: &[MomentFn],
    truth: Option<GroundTruth>,
    cfg: &BenchConfig,
    seed: u64,
) -> Result<BenchReport> {
    let truth = truth.or_else(|| GroundTruth::from_target(target, fns)).ok_or_else(|| {
        Error::Estimation(format!(
            "target {:?} has no known moments; supply a ground truth (e.g. a long-run reference estimate)",
            target.name()
        ))
    })?;
    if cfg.replicates < 2 {
        return Err(Error::InvalidArgument("the benchmark needs at least two replicates".into()));
    }
    if cfg.n_grid.is_empty() || cfg.n_grid.iter().any(|n| !n.is_power_of_two()) {
        return Err(Error::InvalidArgument(format!("n_grid {:?} must be nonempty powers of two", cfg.n_grid)));
    }
    if cfg.methods.is_empty() || proposals.is_empty() {
        return Err(Error::InvalidArgument("need at least one method and one proposal".into()));
    }
    let mut reports = Vec::new();
    let mut raw = Vec::new();
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        for p in proposals {
            let first = summary.len();
            for &n in &cfg.n_grid {
                let rep = estimate_replicates(*p, target, fns, method, n, cfg.replicates, seed, Some(&truth))?;
                for (r, est) in rep.estimates.iter().enumerate() {
                    for (f, id) in rep.f_ids.iter().enumerate() {
                        raw.push(RawRow {
                            method: method.name(),
                            proposal: rep.proposal.clone(),
                            kind: rep.kind.name(),
                            n,
                            replicate: r,
                            f_id: id.clone(),
                            estimate: est[f],
                            abs_error: (est[f] - truth.values[f]).abs(),
                        });
                    }
                }
                let mse = rep.mse.clone().expect("truth and replicates present");
                let ess_mean = rep.ess_mean();
                for (f, id) in rep.f_ids.iter().enumerate() {
                    summary.push(SummaryRow {
                        method: method.name(),
                        proposal: rep.proposal.clone(),
                        n,
                        f_id: id.clone(),
                        mse: mse[f],
                        ess_mean,
                        slope: f64::NAN,
                    });
                }
                reports.push(rep);
            }
            for (f, _) in fns.iter().enumerate() {
                let rows: Vec<usize> = (0..cfg.n_grid.len()).map(|k| first + k * fns.len() + f).collect();
                let mses: Vec<f64> = rows.iter().map(|&i| summary[i].mse).collect();
                let slope = log_log_slope(&cfg.n_grid, &mses);
                for i in rows {
                    summary[i].slope = slope;
                }
            }
        }
    }
    Ok(BenchReport { raw, summary, reports, truth })
}

/// `mse_baseline / mse_method` per function at sample size `n`.
pub fn reduction_factors(
    report: &BenchReport,
    baseline: (Method, &str),
    method: (Method, &str),
    n: usize,
) -> Result<Vec<(String, f64)>> {
    let ids: Vec<String> = report
        .summary
        .iter()
        .filter(|r| r.method == baseline.0.name() && r.proposal == baseline.1 && r.n == n)
        .map(|r| r.f_id.clone())
        .collect();
    if ids.is_empty() {
        return Err(Error::Estimation(format!("baseline {} {} missing at n = {n}", baseline.0.name(), baseline.1)));
    }
    ids.into_iter()
        .map(|id| {
            let b = report.mse(baseline.0, baseline.1, n, &id).expect("present");
            let m = report.mse(method.0, method.1, n, &id).ok_or_else(|| {
                Error::Estimation(format!("method {} {} missing at n = {n}", method.0.name(), method.1))
            })?;
            Ok((id, b / m))
        })
        .collect()
}

fn magic_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{BENCH_MAGIC}")?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_raw_csv(path: impl AsRef<Path>, report: &BenchReport) -> Result<()> {
    let mut w = magic_writer(path.as_ref())?;
    for r in &report.raw {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: impl AsRef<Path>, report: &BenchReport) -> Result<()> {
    let mut w = magic_writer(path.as_ref())?;
    for r in &report.summary {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (replicate, function), with the replicate's ESS.
pub fn write_estimates_csv(path: impl AsRef<Path>, report: &EstimateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "proposal", "kind", "n", "replicate", "seed", "f_id", "estimate", "abs_error", "ess", "max_weight"])?;
    for (r, est) in report.estimates.iter().enumerate() {
        for (f, id) in report.f_ids.iter().enumerate() {
            let err = report.truth.as_ref().map_or(String::new(), |t| (est[f] - t.values[f]).abs().to_string());
            w.write_record([
                report.method.name().to_string(),
                report.proposal.clone(),
                report.kind.name().to_string(),
                report.n.to_string(),
                r.to_string(),
                report.seeds[r].to_string(),
                id.clone(),
                est[f].to_string(),
                err,
                report.ess[r].to_string(),
                report.max_weight[r].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
