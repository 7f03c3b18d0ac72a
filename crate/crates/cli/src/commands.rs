use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tqmc::estimate::{
    estimate_replicates, laplace_proposal, mfg_proposal, mse_benchmark, reduction_factors, reference_estimate,
    write_estimates_csv, write_raw_csv, write_summary_csv, BananaExactProposal, GaussianProposal, GroundTruth,
    Proposal, TransportProposal,
};
use tqmc::flow::{ShapeGrid, TransportMap};
use tqmc::lowdisc::PointKind;
use tqmc::rng::derive_seed;
use tqmc::subspace::{estimate_subspace, split_map_config, SubspaceResult};
use tqmc::targets::Target;
use tqmc::train::{fit, fit_from, FitResult};

use crate::config::{Mode, RunConfig};
use crate::{CliError, Common};

struct Run {
    config: RunConfig,
    out: PathBuf,
    quiet: bool,
    model: Option<PathBuf>,
}

impl Run {
    fn new(args: &Common) -> Result<Self, CliError> {
        let mut config = RunConfig::load(&args.config)?;
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if let Some(o) = &args.out {
            config.out = o.clone();
        }
        if let Some(m) = &args.model {
            if !m.exists() {
                return Err(CliError::config(format!("model file {} does not exist", m.display())));
            }
        }
        let out = config.out.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
        let run = Self { config, out, quiet: args.quiet, model: args.model.clone() };
        run.write_json("run_config.json", &run.config)?;
        Ok(run)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        write_text(&self.path(name), &text)
    }

    fn load_model(&self, path: &Path) -> Result<TransportMap, CliError> {
        TransportMap::load(path).map_err(|e| CliError::config(format!("model {}: {e}", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct SubspaceDoc {
    r: usize,
    m: usize,
    threshold: f64,
    degenerate: bool,
    top_ratio: f64,
    mass: f64,
    eigenvalues: Vec<f64>,
    /// Row-major `V`.
    basis: Vec<Vec<f64>>,
}

impl SubspaceDoc {
    fn new(s: &SubspaceResult) -> Self {
        let total: f64 = s.eigenvalues.iter().map(|l| l.max(0.0)).sum();
        Self {
            r: s.r,
            m: s.m,
            threshold: s.threshold,
            degenerate: s.degenerate,
            top_ratio: if total > 0.0 { s.eigenvalues[0].max(0.0) / total } else { 0.0 },
            mass: s.mass(s.r),
            eigenvalues: s.eigenvalues.clone(),
            basis: s.basis.to_rows(),
        }
    }
}

fn subspace_of(run: &Run, target: &dyn Target) -> Result<SubspaceResult, CliError> {
    let c = &run.config;
    Ok(estimate_subspace(
        target,
        c.flow.subspace_samples,
        derive_seed(c.seed, "subspace"),
        PointKind::SobolScrambled,
        c.flow.threshold,
    )?)
}

/// Train per the flow mode; the subspace mode falls back to the full map when
/// the relative-score matrix is degenerate.
fn train(run: &Run, target: &dyn Target) -> Result<FitResult, CliError> {
    let c = &run.config;
    let fc = c.fit_config();
    match c.flow.mode {
        Mode::Full => Ok(fit(target, &fc, c.seed)?),
        Mode::Subspace => {
            let sub = subspace_of(run, target)?;
            if sub.degenerate {
                eprintln!("warning: relative-score matrix is degenerate (r = 0); fitting a full map");
                return Ok(fit(target, &fc, c.seed)?);
            }
            run.say(format!("subspace rank r = {} (mass {:.4})", sub.r, sub.mass(sub.r)));
            run.write_json("subspace.json", &SubspaceDoc::new(&sub))?;
            let template = split_map_config(&sub, &fc)?;
            Ok(fit_from(target, &template, &fc, c.seed)?)
        }
    }
}

fn save_fit(run: &Run, res: &FitResult) -> Result<PathBuf, CliError> {
    let path = run.path("model.json");
    write_text(&path, &res.map.to_json()?)?;
    run.write_json("fit_trace.json", &res.sidecar(&run.config.fit_config(), run.config.seed))?;
    Ok(path)
}

pub fn cmd_fit(args: &Common) -> Result<(), CliError> {
    let run = Run::new(args)?;
    let target = run.config.build_target()?;
    let res = train(&run, target.as_ref())?;
    let path = save_fit(&run, &res)?;
    let start = res.trace.first().copied().unwrap_or(f64::NAN);
    run.say(format!(
        "fit: restart {} of {}, objective {:.6} -> {:.6} in {} iterations ({:?})",
        res.restart,
        res.restart_objectives.len(),
        start,
        res.objective,
        res.iterations,
        res.termination
    ));
    run.say(format!("wrote {}", path.display()));
    Ok(())
}

pub fn cmd_subspace(args: &Common) -> Result<(), CliError> {
    let run = Run::new(args)?;
    let target = run.config.build_target()?;
    let sub = subspace_of(&run, target.as_ref())?;
    let doc = SubspaceDoc::new(&sub);
    run.write_json("subspace.json", &doc)?;
    if sub.degenerate {
        eprintln!("warning: relative-score matrix is degenerate; the target matches the reference, r = 0");
    } else {
        let map = split_map_config(&sub, &run.config.fit_config())?;
        write_text(&run.path("model_init.json"), &map.to_json()?)?;
    }
    run.say(format!("r = {}", sub.r));
    run.say(format!("top eigenvalue ratio = {:.6}", doc.top_ratio));
    run.say(format!("top-r mass = {:.6}", doc.mass));
    Ok(())
}

fn model_path(run: &Run) -> PathBuf {
    run.model.clone().unwrap_or_else(|| run.path("model.json"))
}

pub fn cmd_estimate(args: &Common) -> Result<(), CliError> {
    let run = Run::new(args)?;
    let c = &run.config;
    let target = run.config.build_target()?;
    let path = model_path(&run);
    if !path.exists() {
        return Err(CliError::config(format!("model file {} does not exist", path.display())));
    }
    let map = run.load_model(&path)?;
    if map.dim() != target.dim() {
        return Err(CliError::config(format!("model dimension {} but target dimension {}", map.dim(), target.dim())));
    }
    let fns = c.functions(target.dim())?;
    let truth = GroundTruth::from_target(target.as_ref(), &fns);
    let proposal = TransportProposal::new(map, "transport");
    let rep = estimate_replicates(
        &proposal,
        target.as_ref(),
        &fns,
        c.method()?,
        c.estimate.n,
        c.estimate.replicates,
        c.seed,
        truth.as_ref(),
    )?;
    let out = run.path("estimates.csv");
    write_estimates_csv(&out, &rep)?;
    let means = rep.mean_estimates();
    for (id, m) in rep.f_ids.iter().zip(&means) {
        run.say(format!("{id:<8} {m:.6}"));
    }
    run.say(format!("ESS mean {:.1} of n = {}", rep.ess_mean(), rep.n));
    run.say(format!("wrote {}", out.display()));
    Ok(())
}

fn build_proposal(run: &Run, target: &dyn Target, name: &str) -> Result<Box<dyn Proposal>, CliError> {
    let c = &run.config;
    let d = target.dim();
    Ok(match name {
        "transport" => {
            let map = match &run.model {
                Some(p) => run.load_model(p)?,
                None => {
                    let res = train(run, target)?;
                    save_fit(run, &res)?;
                    res.map
                }
            };
            if map.dim() != d {
                return Err(CliError::config(format!("model dimension {} but target dimension {d}", map.dim())));
            }
            Box::new(TransportProposal::new(map, "transport"))
        }
        "identity" => Box::new(TransportProposal::new(
            TransportMap::identity(d, c.flow.base, c.flow.layers, ShapeGrid::with_bound(c.flow.shape_bound)?),
            "identity",
        )),
        "prior" => Box::new(GaussianProposal::prior(d, c.prior_variance())?),
        "laplace" => Box::new(laplace_proposal(target)?),
        "mfg" => Box::new(mfg_proposal(target, &c.fit_config(), derive_seed(c.seed, "mfg"))?),
        "exact" => {
            if c.target.name.as_deref() != Some("banana") {
                return Err(CliError::config("the exact proposal exists only for the banana target"));
            }
            Box::new(BananaExactProposal)
        }
        other => return Err(CliError::config(format!("unknown proposal {other:?}"))),
    })
}

pub fn cmd_benchmark(args: &Common) -> Result<(), CliError> {
    let run = Run::new(args)?;
    let c = &run.config;
    let target = run.config.build_target()?;
    let fns = c.functions(target.dim())?;
    let cfg = c.bench_config()?;
    let names = &c.estimate.proposals;
    if names.is_empty() {
        return Err(CliError::config("estimate.proposals is empty"));
    }
    let baseline = c.baseline()?;
    if let Some((_, p)) = &baseline {
        if !names.contains(p) {
            return Err(CliError::config(format!("baseline proposal {p:?} is not among the proposals")));
        }
    }
    let proposals: Vec<Box<dyn Proposal>> =
        names.iter().map(|n| build_proposal(&run, target.as_ref(), n)).collect::<Result<_, _>>()?;
    let truth = match GroundTruth::from_target(target.as_ref(), &fns) {
        Some(t) => t,
        None => {
            let laplace;
            let reference: &dyn Proposal = match proposals.iter().find(|p| p.name() == "transport") {
                Some(p) => p.as_ref(),
                None => {
                    laplace = laplace_proposal(target.as_ref())?;
                    &laplace
                }
            };
            run.say(format!(
                "no known moments; reference from {} x 2^{} pooled RQMC points of the {} proposal",
                c.estimate.reference_scrambles,
                c.estimate.reference_n.trailing_zeros(),
                reference.name()
            ));
            let t = reference_estimate(
                reference,
                target.as_ref(),
                &fns,
                c.estimate.reference_n,
                c.estimate.reference_scrambles,
                derive_seed(c.seed, "reference"),
            )?;
            let doc: Vec<(String, f64)> = fns.iter().map(|f| f.id()).zip(t.values.iter().copied()).collect();
            run.write_json("reference.json", &doc)?;
            t
        }
    };
    let refs: Vec<&dyn Proposal> = proposals.iter().map(|p| p.as_ref()).collect();
    let report = mse_benchmark(&refs, target.as_ref(), &fns, Some(truth), &cfg, c.seed)?;
    write_raw_csv(run.path("raw.csv"), &report)?;
    write_summary_csv(run.path("summary.csv"), &report)?;
    run.say(report.slope_table());
    if let Some((bm, bp)) = baseline {
        let n = *cfg.n_grid.iter().max().expect("nonempty grid");
        let mut text = String::from("method,proposal,n,f_id,factor\n");
        for &m in &cfg.methods {
            for p in names {
                let f = reduction_factors(&report, (bm, &bp), (m, p), n)?;
                let mean = f.iter().map(|x| x.1).sum::<f64>() / f.len() as f64;
                let above = f.iter().filter(|x| x.1 > 1.0).count();
                run.say(format!(
                    "reduction vs {}/{bp} at n = {n}: {}/{p} mean {mean:.3}, > 1 for {above}/{}",
                    bm.name(),
                    m.name(),
                    f.len()
                ));
                for (id, factor) in &f {
                    text += &format!("{},{p},{n},{id},{factor}\n", m.name());
                }
            }
        }
        write_text(&run.path("reductions.csv"), &text)?;
    }
    run.say(format!("wrote {} and {}", run.path("raw.csv").display(), run.path("summary.csv").display()));
    Ok(())
}
