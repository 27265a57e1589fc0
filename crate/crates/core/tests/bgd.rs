mod common;

use dlflow::driver::run_bgd;
use dlflow::physical::{AggTree, ClusterConfig};
use dlflow::runtime::RunOptions;
use dlflow::tasks::bgd::{record, sequential_bgd, softplus, Bgd, BgdParams};
use dlflow::Value;
use rand::Rng;

pub fn cfg(p: usize, tree: AggTree) -> ClusterConfig {
    let workers = p.min(4);
    ClusterConfig { workers, partitions_per_worker: p / workers, agg_tree: tree, ..ClusterConfig::default() }
}

#[test]
fn map_gradient_matches_finite_differences() {
    let mut rng = common::rng(11);
    let dim = 6;
    let bgd = Bgd::new(BgdParams::new(dim));
    for _ in 0..100 {
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x: Vec<(u32, f64)> = Vec::new();
        for i in 0..dim as u32 {
            if rng.gen_bool(0.7) {
                x.push((i, rng.gen_range(-2.0..2.0)));
            }
        }
        let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let s = bgd.map(&[record(y, x.clone()), Value::vector(w.clone())]).unwrap().remove(0);
        let s = s.as_vector().unwrap().to_vec();
        let loss = |w: &[f64]| softplus(-y * x.iter().map(|&(i, v)| w[i as usize] * v).sum::<f64>());
        assert!((s[0] - loss(&w)).abs() <= 1e-12);
        for i in 0..dim {
            let h = 1e-6;
            let mut hi = w.clone();
            let mut lo = w.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
            let g = s[1 + i];
            assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-6), "coordinate {i}: {fd} vs {g}");
        }
    }
}

#[test]
fn partitions_and_trees_match_sequential() {
    let mut rng = common::rng(5);
    let pts = common::random_points(&mut rng, 300, 8);
    let mut params = BgdParams::new(8);
    params.max_iters = 10;
    let want = sequential_bgd(&pts, &params);
    assert_eq!(want.len(), 11);
    for p in [1, 4, 16] {
        for tree in [AggTree::Flat, AggTree::SqrtLayer, AggTree::Fanin(4)] {
            let c = cfg(p, tree);
            let run = run_bgd(&pts, &params, &c, &RunOptions::default()).unwrap();
            assert!(common::max_rel_diff(&run.model, want.last().unwrap()) <= 1e-8, "P={p} {tree}");
            let opts = RunOptions { deterministic: true, ..RunOptions::default() };
            let d = run_bgd(&pts, &params, &c, &opts).unwrap().model;
            let same = want.last().unwrap().iter().zip(&d).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "deterministic P={p} {tree} differs bitwise from the sequential model");
        }
    }
}

#[test]
fn halts_when_update_returns_the_prior_model() {
    let mut rng = common::rng(9);
    let pts = common::random_points(&mut rng, 50, 4);
    let mut params = BgdParams::new(4);
    params.max_iters = 3;
    let opts = RunOptions { max_iters: 100, ..RunOptions::default() };
    let run = run_bgd(&pts, &params, &ClusterConfig::default(), &opts).unwrap();
    assert!(run.result.halted);
    assert_eq!(run.result.iterations, 4);
    let want = sequential_bgd(&pts, &params);
    assert!(common::max_rel_diff(&run.model, want.last().unwrap()) <= 1e-10);

    // A large tolerance makes the very first update a no-op.
    params.max_iters = 100;
    params.tolerance = 1e9;
    let run = run_bgd(&pts, &params, &ClusterConfig::default(), &opts).unwrap();
    assert!(run.result.halted);
    assert_eq!(run.result.iterations, 1);
    assert!(run.model.iter().all(|w| *w == 0.0));
}
