//! End-to-end checks across lowdisc, flow, train and estimate.

use tqmc::estimate::{snis_estimate, weighted_sample, BananaExactProposal, MomentFn, TransportProposal};
use tqmc::flow::{ElementwiseTransform, ShapeGrid, TransportMap};
use tqmc::lowdisc::{generate, PointKind};
use tqmc::specfun::{norm_cdf, BaseKind};
use tqmc::targets::{BananaTarget, GaussianTarget, Target};
use tqmc::train::{fit, kl_value, restart_batch, FitConfig};

fn ks_against(mut v: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

#[test]
fn identity_pushforward_is_standard_normal() {
    let n = 1 << 12;
    let map = TransportMap::identity(3, BaseKind::Gauss, 3, ShapeGrid::default());
    let crit = 1.628 / (n as f64).sqrt();
    for seed in 0..4 {
        let ps = generate(PointKind::SobolScrambled, n, 3, seed).unwrap();
        let xs: Vec<Vec<f64>> = ps.points().map(|u| map.transform(u).unwrap().0).collect();
        for j in 0..3 {
            let ks = ks_against(xs.iter().map(|x| x[j]).collect(), norm_cdf);
            assert!(ks < crit, "seed {seed} coordinate {j}: KS {ks} >= {crit}");
        }
    }
}

#[test]
fn training_init_is_close_to_identity() {
    for bound in [7, 10] {
        let grid = ShapeGrid::with_bound(bound).unwrap();
        let map = FitConfig { shape_bound: bound, ..FitConfig::default() }.initial_map(2).unwrap();
        let logits = map.layers()[0].logits()[..grid.len()].to_vec();
        let t = ElementwiseTransform::new(BaseKind::Gauss, grid, logits).unwrap();
        let worst = (1..1000).map(|i| i as f64 / 1000.0).map(|u| (t.psi(u) - u).abs()).fold(0.0, f64::max);
        assert!(worst <= 1e-2, "bound {bound}: max |psi(u) - u| = {worst}");
        // Every component still receives weight, so gradients reach it.
        assert!(t.weights().iter().all(|&w| w > 1e-4));
    }
}

#[test]
fn gaussian_fit_stays_at_the_reference() {
    let target = GaussianTarget::standard(2);
    let config = FitConfig { layers: 1, restarts: 3, ..FitConfig::default() };
    let res = fit(&target, &config, 4).unwrap();
    let batch = restart_batch(&config, 2, 4, res.restart).unwrap();
    let identity = TransportMap::identity(2, BaseKind::Gauss, 1, ShapeGrid::default());
    let id_obj = kl_value(&identity, &target, &batch).unwrap();
    assert!((res.objective - id_obj).abs() <= 1e-3, "fit {} vs identity {id_obj}", res.objective);
    let q = TransportProposal::new(res.map, "fit");
    let ess = snis_estimate(&q, &target, &[MomentFn::Coord(0)], &batch).unwrap().ess;
    let ess_id =
        snis_estimate(&TransportProposal::new(identity, "id"), &target, &[MomentFn::Coord(0)], &batch).unwrap().ess;
    assert!((ess_id - batch.n() as f64).abs() < 1e-6);
    assert!(ess >= 0.99 * ess_id, "fit ESS {ess} vs identity {ess_id}");
}

#[test]
fn banana_exact_map_moments() {
    let n = 1 << 14;
    let ps = generate(PointKind::SobolScrambled, n, 2, 8).unwrap();
    let s = weighted_sample(&BananaExactProposal, &BananaTarget, &ps).unwrap();
    let fns = [MomentFn::Coord(0), MomentFn::Coord(1), MomentFn::Square(0), MomentFn::Square(1)];
    let truth = BananaTarget.true_moments().unwrap();
    for f in fns {
        let v: Vec<f64> = s.xs.iter().map(|x| f.eval(x)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let want = f.truth(&truth);
        assert!((mean - want).abs() <= 3.0 * se, "{}: {mean} vs {want} (se {se})", f.id());
    }
    assert_eq!([0.0, 0.0, 1.0, 2.5], [truth.mean[0], truth.mean[1], truth.second[0], truth.second[1]]);
}
