//! Acceptance criteria, one test per criterion. Each prints a single
//! `ACCEPTANCE <name>: PASS|FAIL (<details>)` line; run with `--nocapture` to
//! see them.

use std::time::Instant;

use tqmc::estimate::{
    default_fns, mse_benchmark, reduction_factors, reference_estimate, snis_estimate, weighted_sample,
    BananaExactProposal, BenchConfig, GaussianProposal, GroundTruth, Method, MomentFn, TransportProposal,
};
use tqmc::flow::{ShapeGrid, Structure, TransportMap};
use tqmc::lowdisc::{generate, owen_scramble, sobol_raw, DirectionNumbers, PointKind, PointSet};
use tqmc::rng::{derive_seed, SplitMix64};
use tqmc::specfun::{beta_cdf, norm_cdf, norm_icdf, BaseKind, EPS};
use tqmc::subspace::{estimate_subspace, split_map_config};
use tqmc::targets::{make_logistic_synthetic, BananaTarget, GaussianTarget, LogisticTarget, Target};
use tqmc::train::{fit, fit_from, kl_objective, FitConfig};

fn verdict(name: &str, checks: &[(String, bool)]) {
    let pass = checks.iter().all(|c| c.1);
    let detail: Vec<String> =
        checks.iter().map(|(d, ok)| format!("{d} [{}]", if *ok { "ok" } else { "FAIL" })).collect();
    println!("ACCEPTANCE {name}: {} ({})", if pass { "PASS" } else { "FAIL" }, detail.join("; "));
    assert!(pass, "acceptance criterion {name} failed: {}", detail.join("; "));
}

fn pow2_grid(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|m| 1usize << m).collect()
}

#[test]
fn convergence_rate_separation() {
    let start = Instant::now();
    let target = GaussianTarget::standard(2);
    let map = TransportMap::identity(2, BaseKind::Gauss, 3, ShapeGrid::default());
    let p = TransportProposal::new(map, "identity");
    let fns = [MomentFn::Coord(0), MomentFn::Square(0)];
    let cfg = BenchConfig { n_grid: pow2_grid(6, 13), replicates: 50, methods: vec![Method::Mc, Method::Rqmc] };
    let report = mse_benchmark(&[&p], &target, &fns, None, &cfg, 2024).unwrap();
    let mut checks = Vec::new();
    for f in &fns {
        let id = f.id();
        let mc = report.slope(Method::Mc, "identity", &id).unwrap();
        let rq = report.slope(Method::Rqmc, "identity", &id).unwrap();
        let factor = report.mse(Method::Mc, "identity", 1024, &id).unwrap()
            / report.mse(Method::Rqmc, "identity", 1024, &id).unwrap();
        checks.push((format!("{id} MC slope {mc:.3} in [-1.25, -0.75]"), (-1.25..=-0.75).contains(&mc)));
        checks.push((format!("{id} RQMC slope {rq:.3} <= -1.5"), rq <= -1.5));
        checks.push((format!("{id} MC/RQMC MSE at n=2^10 {factor:.1} >= 10"), factor >= 10.0));
    }
    let secs = start.elapsed().as_secs_f64();
    checks.push((format!("runtime {secs:.1}s <= 120s"), secs <= 120.0));
    verdict("convergence-rate-separation", &checks);
}

#[test]
fn banana_experiment() {
    let start = Instant::now();
    let target = BananaTarget;
    let config = FitConfig { layers: 2, shape_bound: 10, n_train: 64, ..FitConfig::default() };
    let res = fit(&target, &config, 1).unwrap();
    let drop = res.trace[0] - res.trace.last().unwrap();
    let p = TransportProposal::new(res.map, "tqmc");
    let n = 1 << 11;
    let mut x2sq = 0.0;
    let mut ess = 0.0;
    for s in 0..20 {
        let ps = generate(PointKind::SobolScrambled, n, 2, derive_seed(7, &format!("banana.scramble.{s}"))).unwrap();
        let out = snis_estimate(&p, &target, &[MomentFn::Square(1)], &ps).unwrap();
        x2sq += out.estimates[0] / 20.0;
        ess += out.ess / 20.0;
    }
    let rel = (x2sq - 2.5).abs() / 2.5;
    let cfg = BenchConfig { n_grid: pow2_grid(6, 13), replicates: 50, methods: vec![Method::Mc, Method::Rqmc] };
    let report = mse_benchmark(&[&p], &target, &[MomentFn::Coord(0)], None, &cfg, 11).unwrap();
    let mc = report.slope(Method::Mc, "tqmc", "x1").unwrap();
    let rq = report.slope(Method::Rqmc, "tqmc", "x1").unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "banana-experiment",
        &[
            (format!("(a) objective drop {drop:.3} > 0.5 nats"), drop > 0.5),
            (format!("(b) E[x2^2] = {x2sq:.4}, rel. error {rel:.4} <= 0.05"), rel <= 0.05),
            (format!("(c) ESS/n = {:.3} >= 0.3", ess / n as f64), ess / n as f64 >= 0.3),
            (format!("(d) RQMC slope {rq:.3} <= -1.2"), rq <= -1.2),
            (format!("(d) MC slope {mc:.3} in [-1.25, -0.75]"), (-1.25..=-0.75).contains(&mc)),
            (format!("runtime {secs:.1}s <= 300s"), secs <= 300.0),
        ],
    );
}

#[test]
fn logistic_regression_experiment() {
    let start = Instant::now();
    let (data, _) = make_logistic_synthetic(50, 20, 1).unwrap();
    assert_eq!(data.sigma2, 1.0);
    let target = LogisticTarget::new(data);
    let seed = 1;
    let sub =
        estimate_subspace(&target, 256, derive_seed(seed, "subspace"), PointKind::SobolScrambled, 0.99).unwrap();
    let mass = sub.mass(sub.r);
    let config = FitConfig::default();
    let template = split_map_config(&sub, &config).unwrap();
    let res = fit_from(&target, &template, &config, seed).unwrap();
    let tqmc = TransportProposal::new(res.map, "tqmc");
    let prior = GaussianProposal::prior(50, 1.0).unwrap();
    let fns = default_fns(50);
    let truth = reference_estimate(&tqmc, &target, &fns, 1 << 12, 32, derive_seed(seed, "reference")).unwrap();
    let cfg = BenchConfig { n_grid: vec![1 << 11], replicates: 50, methods: vec![Method::Mc, Method::Rqmc] };
    let report = mse_benchmark(&[&tqmc, &prior], &target, &fns, Some(truth), &cfg, seed).unwrap();
    let base = (Method::Mc, "prior");
    let f_tqmc = reduction_factors(&report, base, (Method::Rqmc, "tqmc"), 1 << 11).unwrap();
    let f_prior = reduction_factors(&report, base, (Method::Rqmc, "prior"), 1 << 11).unwrap();
    let above = f_tqmc.iter().filter(|f| f.1 > 1.0).count();
    let mean = |f: &[(String, f64)]| f.iter().map(|x| x.1).sum::<f64>() / f.len() as f64;
    let (m_tqmc, m_prior) = (mean(&f_tqmc), mean(&f_prior));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "logistic-regression-experiment",
        &[
            (format!("r = {} <= 10", sub.r), sub.r <= 10),
            (format!("top-r mass {mass:.4} >= 0.99"), mass >= 0.99),
            (format!("TQMC factor > 1 for {above}/100 >= 90"), above >= 90),
            (format!("mean factor TQMC {m_tqmc:.2} > Prior-RQMC {m_prior:.2}"), m_tqmc > m_prior),
            (format!("runtime {secs:.1}s <= 900s"), secs <= 900.0),
        ],
    );
}

fn perturbed(map: &TransportMap, seed: u64, scale: f64) -> TransportMap {
    let mut r = SplitMix64::new(seed);
    let theta: Vec<f64> = map.pack().iter().map(|&t| t + scale * r.normal()).collect();
    map.unpack(&theta).unwrap()
}

/// Largest `|g - fd| / max(|fd|, 1)` over all parameters.
fn worst_gradient_error(map: &TransportMap, target: &dyn Target, ps: &PointSet) -> f64 {
    let (_, g) = kl_objective(map, target, ps).unwrap();
    let theta = map.pack();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..theta.len() {
        let mut t = theta.clone();
        t[k] = theta[k] + h;
        let fp = kl_objective(&map.unpack(&t).unwrap(), target, ps).unwrap().0;
        t[k] = theta[k] - h;
        let fm = kl_objective(&map.unpack(&t).unwrap(), target, ps).unwrap().0;
        let fd = (fp - fm) / (2.0 * h);
        worst = worst.max((g[k] - fd).abs() / fd.abs().max(1.0));
    }
    worst
}

#[test]
fn gradient_suite() {
    let banana = BananaTarget;
    let (data, _) = make_logistic_synthetic(6, 20, 3).unwrap();
    let logistic = LogisticTarget::new(data);
    let cases: [(&str, &dyn Target, usize, u32); 2] = [("banana", &banana, 2, 10), ("logistic", &logistic, 2, 7)];
    let mut checks = Vec::new();
    for (name, target, k, bound) in cases {
        let d = target.dim();
        let base = TransportMap::initial(d, BaseKind::Gauss, k, ShapeGrid::with_bound(bound).unwrap(), Structure::Full)
            .unwrap();
        let ps = generate(PointKind::SobolScrambled, 64, d, 5).unwrap();
        let mut worst: f64 = 0.0;
        for s in 0..20 {
            let map = perturbed(&base, derive_seed(17, &format!("{name}.{s}")), 0.3);
            worst = worst.max(worst_gradient_error(&map, target, &ps));
        }
        checks.push((format!("{name}: worst relative error {worst:.2e} <= 1e-5 over 20 theta"), worst <= 1e-5));
    }
    verdict("gradient-suite", &checks);
}

/// `log|det|` by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        acc += a[c][c].abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    acc
}

#[test]
fn logdet_oracle() {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for d in 1..=4 {
        for s in 0..10 {
            let base =
                TransportMap::initial(d, BaseKind::Gauss, 2, ShapeGrid::with_bound(7).unwrap(), Structure::Full).unwrap();
            let map = perturbed(&base, derive_seed(23, &format!("logdet.{d}.{s}")), 0.4);
            let mut r = SplitMix64::new(derive_seed(29, &format!("u.{d}.{s}")));
            let u: Vec<f64> = (0..d).map(|_| 0.05 + 0.9 * r.next_open01()).collect();
            let (_, logdet) = map.transform(&u).unwrap();
            let h = 1e-6;
            let mut jac = vec![vec![0.0; d]; d];
            for j in 0..d {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[j] += h;
                um[j] -= h;
                let (xp, _) = map.transform(&up).unwrap();
                let (xm, _) = map.transform(&um).unwrap();
                for i in 0..d {
                    jac[i][j] = (xp[i] - xm[i]) / (2.0 * h);
                }
            }
            let fd = log_abs_det(jac);
            worst = worst.max((logdet - fd).abs() / fd.abs().max(1.0));
            cases += 1;
        }
    }
    verdict("logdet-oracle", &[(format!("worst relative error {worst:.2e} <= 1e-4 over {cases} maps"), worst <= 1e-4)]);
}

fn binomial_oracle(x: f64, a: u32, b: u32) -> f64 {
    // I_x(a, b) = P(Bin(a + b - 1, x) >= a) for integer shapes.
    let n = a + b - 1;
    let mut total = 0.0;
    for j in a..=n {
        let mut c = 1.0;
        for i in 0..j {
            c = c * (n - i) as f64 / (i + 1) as f64;
        }
        total += c * x.powi(j as i32) * (1.0 - x).powi((n - j) as i32);
    }
    total
}

#[test]
fn special_function_suite() {
    let mut rt: f64 = 0.0;
    for i in 1..2000 {
        let u = i as f64 / 2000.0;
        rt = rt.max((norm_cdf(norm_icdf(u).unwrap()) - u).abs());
    }
    // Relative error in the lower tail down to the quantile clamp.
    let mut tail: f64 = 0.0;
    for e in 2..=15 {
        let u = 10f64.powi(-e);
        tail = tail.max((norm_cdf(norm_icdf(u).unwrap()) - u).abs() / u);
    }
    assert_eq!(norm_icdf(EPS / 4.0).unwrap(), norm_icdf(EPS).unwrap());
    // For z > 0, Phi(z) rounds toward 1 and z is no longer recoverable.
    let mut zrt: f64 = 0.0;
    for i in -800..=0 {
        let z = i as f64 / 100.0;
        zrt = zrt.max((norm_icdf(norm_cdf(z)).unwrap() - z).abs());
    }
    let mut beta: f64 = 0.0;
    for a in 1..10u32 {
        for b in 1..=(10 - a) {
            for i in 0..=200 {
                let x = i as f64 / 200.0;
                beta = beta.max((beta_cdf(x, a as f64, b as f64).unwrap() - binomial_oracle(x, a, b)).abs());
            }
        }
    }
    let mut sym: f64 = 0.0;
    for kind in [BaseKind::Gauss, BaseKind::Logistic] {
        for i in 0..=2000 {
            let x = i as f64 / 100.0;
            sym = sym.max((kind.cdf(x) + kind.cdf(-x) - 1.0).abs());
        }
    }
    verdict(
        "special-function-suite",
        &[
            (format!("Phi(Phi^-1(u)) - u max {rt:.1e} <= 1e-9"), rt <= 1e-9),
            (format!("relative lower-tail roundtrip max {tail:.1e} <= 1e-9 down to u = 1e-15"), tail <= 1e-9),
            (format!("Phi^-1(Phi(z)) - z max {zrt:.1e} <= 1e-9 on [-8, 0]"), zrt <= 1e-9),
            (format!("beta_cdf vs binomial sum max {beta:.1e} <= 1e-6 (a+b <= 10)"), beta <= 1e-6),
            (format!("F(x) + F(-x) - 1 max {sym:.1e} <= 1e-12"), sym <= 1e-12),
        ],
    );
}

fn balanced(ps: &PointSet, m: u32) -> bool {
    let n = ps.n();
    (0..ps.dim()).all(|j| {
        let col = ps.column(j);
        (0..=m).all(|k| {
            let cells = 1usize << k;
            let mut counts = vec![0usize; cells];
            for &v in &col {
                counts[((v * cells as f64) as usize).min(cells - 1)] += 1;
            }
            counts.iter().all(|&c| c == n / cells)
        })
    })
}

fn ks_statistic(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

#[test]
fn net_property_suite() {
    let dirs = DirectionNumbers::bundled();
    let mut raw_ok = true;
    let mut owen_ok = true;
    for m in 0..=12u32 {
        for d in 1..=5 {
            let ps = sobol_raw(1 << m, d, dirs).unwrap();
            raw_ok &= balanced(&ps, m);
            for s in 0..3 {
                owen_ok &= balanced(&owen_scramble(&ps, derive_seed(31, &format!("{m}.{d}.{s}"))).unwrap(), m);
            }
        }
    }
    let n = 1 << 12;
    let crit = 1.628 / (n as f64).sqrt();
    let mut checks = vec![
        ("sobol_raw dyadic balance, m <= 12, d <= 5".to_string(), raw_ok),
        ("owen_scramble dyadic balance, m <= 12, d <= 5, 3 seeds".to_string(), owen_ok),
    ];
    for kind in [PointKind::SobolScrambled, PointKind::SobolShifted] {
        let sets: Vec<PointSet> = (0..32).map(|s| generate(kind, n, 5, derive_seed(37, &format!("ks.{s}"))).unwrap()).collect();
        let worst = (0..5)
            .map(|j| sets.iter().filter(|ps| ks_statistic(ps.column(j)) < crit).count())
            .min()
            .unwrap();
        checks.push((format!("{} KS at 1% level: worst coordinate {worst}/32 >= 30", kind.name()), worst >= 30));
    }
    verdict("net-property-suite", &checks);
}

#[test]
fn self_consistency() {
    let n = 1 << 12;
    let gauss = GaussianTarget::standard(3);
    let ident = TransportProposal::new(TransportMap::identity(3, BaseKind::Gauss, 2, ShapeGrid::default()), "identity");
    let mut checks = Vec::new();
    let cases: [(&str, &dyn tqmc::estimate::Proposal, &dyn Target); 2] =
        [("gaussian/identity", &ident, &gauss), ("banana/exact", &BananaExactProposal, &BananaTarget)];
    for (name, p, t) in cases {
        let ps = generate(PointKind::SobolScrambled, n, t.dim(), 41).unwrap();
        let s = weighted_sample(p, t, &ps).unwrap();
        let lo = s.log_w.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = snis_estimate(p, t, &default_fns(t.dim()), &ps).unwrap();
        checks.push((format!("{name}: log-weight spread {:.1e} <= 1e-8", hi - lo), hi - lo <= 1e-8));
        checks.push((
            format!("{name}: |ESS - n| = {:.1e} <= 1e-6 n", (out.ess - n as f64).abs()),
            (out.ess - n as f64).abs() <= 1e-6 * n as f64,
        ));
    }
    let truth = GroundTruth::from_target(&gauss, &default_fns(3)).unwrap();
    checks.push(("gaussian ground truth known".into(), truth.exact));
    verdict("self-consistency", &checks);
}
