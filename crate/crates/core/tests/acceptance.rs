//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use dlflow::datalog::parse_program;
use dlflow::driver::{bench, run_bgd, run_pagerank, BenchInput, BenchMatrix};
use dlflow::logical::{canonical_serialize, compile_program};
use dlflow::physical::{optimize, validate_plan, AggTree, ClusterConfig, ConnectorChoice};
use dlflow::runtime::RunOptions;
use dlflow::strat::check;
use dlflow::tasks::bgd::{record, sequential_bgd, softplus, Bgd, BgdParams};
use dlflow::tasks::pagerank::{power_iteration, DAMPING};
use dlflow::Value;
use rand::Rng;

const SUPERSTEPS: u32 = 30;

fn cluster(connector: ConnectorChoice) -> ClusterConfig {
    ClusterConfig { workers: 4, partitions_per_worker: 2, connector, ..ClusterConfig::default() }
}

fn criterion_graphs() -> Vec<Vec<(i64, Vec<i64>)>> {
    let mut rng = common::rng(2024);
    (0..20)
        .map(|i| {
            // Pin the extremes of the size range.
            let n = match i {
                0 => 10,
                1 => 200,
                _ => rng.gen_range(10..=200),
            };
            common::random_graph(&mut rng, n)
        })
        .collect()
}

fn c1() -> Result<String> {
    for (name, p) in [("pregel", common::pregel()), ("imru", common::imru())] {
        let v = check(&p);
        ensure!(v.xy_stratified, "{name} rejected: {v}");
    }
    let xy = check(&common::imru()).transformed.expect("transformed program");
    ensure!(xy.program.rules_text() == common::golden("imru.xy.txt"), "transformed IMRU text differs");
    let ms = common::mutations();
    ensure!(ms.len() >= 5, "only {} mutations", ms.len());
    for (name, src, rule, clause) in &ms {
        let v = check(&parse_program(src)?);
        ensure!(!v.xy_stratified, "{name} accepted");
        let named = v.violations.iter().any(|x| x.clause == Some(*clause) && x.message.starts_with(rule));
        ensure!(named, "{name}: expected {rule} {} in {v}", clause.name());
    }
    Ok(format!("{} mutations rejected", ms.len()))
}

fn c2() -> Result<String> {
    for (name, p) in [("pregel", common::pregel()), ("imru", common::imru())] {
        let lp = compile_program(&p)?;
        ensure!(canonical_serialize(&lp) == common::golden(&format!("{name}.logical.txt")), "{name} logical plan differs");
        let report = validate_plan(&optimize(&lp, &ClusterConfig::default())?);
        ensure!(report.is_ok(), "{name} physical plan: {:?}", report.violations);
    }
    Ok("pregel and imru plans match".into())
}

struct Reference {
    graph: Vec<(i64, Vec<i64>)>,
    power: BTreeMap<i64, f64>,
    interp: BTreeMap<i64, f64>,
}

/// Oracle ranks for the criterion graphs, computed once and shared.
fn references() -> &'static [Reference] {
    static REFS: OnceLock<Vec<Reference>> = OnceLock::new();
    REFS.get_or_init(|| {
        criterion_graphs()
            .into_iter()
            .map(|graph| {
                let power = power_iteration(&graph, SUPERSTEPS, DAMPING);
                let interp = common::interpreter_ranks(&graph, SUPERSTEPS);
                Reference { graph, power, interp }
            })
            .collect()
    })
}

fn pagerank_agreement(connector: ConnectorChoice) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, r) in references().iter().enumerate() {
        let run = run_pagerank(&r.graph, SUPERSTEPS, &cluster(connector), &RunOptions::default())?;
        ensure!(run.result.halted, "graph {i} did not halt");
        let d = common::max_abs_diff(&run.ranks, &r.power)
            .max(common::max_abs_diff(&r.interp, &r.power))
            .max(common::max_abs_diff(&run.ranks, &r.interp));
        ensure!(d <= 1e-9, "graph {i} ({} vertices): deviation {d:e}", r.graph.len());
        worst = worst.max(d);
    }
    Ok(worst)
}

fn c3() -> Result<String> {
    let worst = pagerank_agreement(ConnectorChoice::HashMerge)?;
    Ok(format!("20 graphs, max deviation {worst:.1e}"))
}

fn c4() -> Result<String> {
    let mut rng = common::rng(31);
    let dim = 6;
    let bgd = Bgd::new(BgdParams::new(dim));
    for k in 0..100 {
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x: Vec<(u32, f64)> = Vec::new();
        for i in 0..dim as u32 {
            if rng.gen_bool(0.7) {
                x.push((i, rng.gen_range(-2.0..2.0)));
            }
        }
        let y = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let s = bgd.map(&[record(y, x.clone()), Value::vector(w.clone())])?.remove(0);
        let s = s.as_vector().expect("statistics vector").to_vec();
        let loss = |w: &[f64]| softplus(-y * x.iter().map(|&(i, v)| w[i as usize] * v).sum::<f64>());
        for i in 0..dim {
            let h = 1e-6;
            let (mut hi, mut lo) = (w.clone(), w.clone());
            hi[i] += h;
            lo[i] -= h;
            let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
            ensure!((fd - s[1 + i]).abs() <= 1e-5 * s[1 + i].abs().max(1e-6), "sample {k} coordinate {i}: {fd} vs {}", s[1 + i]);
        }
    }

    let pts = common::random_points(&mut rng, 400, 10);
    let mut params = BgdParams::new(10);
    params.max_iters = 10;
    let want = sequential_bgd(&pts, &params);
    let want = want.last().expect("sequential model");
    for p in [1usize, 4, 16] {
        for tree in [AggTree::Flat, AggTree::SqrtLayer, AggTree::Fanin(4)] {
            let w = p.min(4);
            let cfg = ClusterConfig { workers: w, partitions_per_worker: p / w, agg_tree: tree, ..ClusterConfig::default() };
            let run = run_bgd(&pts, &params, &cfg, &RunOptions::default())?;
            ensure!(run.result.iterations == 11 && run.result.halted, "P={p} {tree}: {} iterations", run.result.iterations);
            let d = common::max_rel_diff(&run.model, want);
            ensure!(d <= 1e-8, "P={p} {tree}: relative deviation {d:e}");
            let dm = run_bgd(&pts, &params, &cfg, &RunOptions { deterministic: true, ..RunOptions::default() })?.model;
            ensure!(
                want.iter().zip(&dm).all(|(a, b)| a.to_bits() == b.to_bits()),
                "deterministic P={p} {tree} not bitwise equal to the sequential model"
            );
        }
    }

    params.max_iters = 3;
    let run = run_bgd(&pts, &params, &ClusterConfig::default(), &RunOptions { max_iters: 50, ..RunOptions::default() })?;
    ensure!(run.result.halted && run.result.iterations == 4, "IMRU ran {} iterations", run.result.iterations);
    Ok("gradient, 9 configurations and halting check out".into())
}

fn c5() -> Result<String> {
    let g = common::synthetic_graph(500, 1500, 5);
    let avg_out = g.iter().map(|(_, d)| d.len()).sum::<usize>() as f64 / g.len() as f64;
    ensure!(avg_out >= 2.0);
    let cfg = |combiner| ClusterConfig { combiner, ..cluster(ConnectorChoice::HashMerge) };
    let on = run_pagerank(&g, 10, &cfg(true), &RunOptions::default())?;
    let off = run_pagerank(&g, 10, &cfg(false), &RunOptions::default())?;
    let d = common::max_abs_diff(&on.ranks, &off.ranks);
    ensure!(d <= 1e-12, "combiner changed ranks by {d:e}");
    let (a, b) = (on.result.traffic(&on.plan.step_shuffles()), off.result.traffic(&off.plan.step_shuffles()));
    ensure!(a.tuples < b.tuples, "shuffle tuples {} with combiner vs {} without", a.tuples, b.tuples);
    Ok(format!("shuffle tuples {} vs {}", a.tuples, b.tuples))
}

fn c6() -> Result<String> {
    let opts = RunOptions { capture_streams: true, ..RunOptions::default() };
    let mut streams = 0;
    for (i, g) in references().iter().map(|r| &r.graph).take(5).enumerate() {
        let a = run_pagerank(g, 10, &cluster(ConnectorChoice::HashMerge), &opts)?;
        let b = run_pagerank(g, 10, &cluster(ConnectorChoice::HashThenSort), &opts)?;
        let sa: Vec<_> = a.result.streams.iter().filter(|s| s.tap == "messages").collect();
        let sb: Vec<_> = b.result.streams.iter().filter(|s| s.tap == "messages").collect();
        ensure!(!sa.is_empty() && sa.len() == sb.len(), "graph {i}: {} vs {} captured streams", sa.len(), sb.len());
        for (x, y) in sa.iter().zip(&sb) {
            ensure!(x.partitions == y.partitions, "graph {i}: streams differ at iteration {}", x.iteration);
        }
        ensure!(a.ranks == b.ranks, "graph {i}: ranks differ");
        streams += sa.len();
    }
    let worst = pagerank_agreement(ConnectorChoice::HashThenSort)?;
    Ok(format!("{streams} stream captures equal, hash_then_sort max deviation {worst:.1e}"))
}

fn c7() -> Result<String> {
    let g = common::synthetic_graph(200, 800, 17);
    let opts = RunOptions { shadow_step: true, count_invocations: true, ..RunOptions::default() };
    let run = run_pagerank(&g, 8, &cluster(ConnectorChoice::HashMerge), &opts)?;
    let Some(shadow) = run.result.shadow else { bail!("no shadow report") };
    ensure!(shadow.derived_tuples == 0 && shadow.store_updates == 0, "shadow step derived {shadow:?}");
    let inv = &run.result.invocations;
    ensure!(!inv.pending.is_empty() && inv.pending.len() == inv.per_iteration.len());
    for (j, (calls, pending)) in inv.per_iteration.iter().zip(&inv.pending).enumerate() {
        let empty = BTreeMap::new();
        let calls = calls.get("update").unwrap_or(&empty);
        let called: BTreeSet<Value> = calls.keys().cloned().collect();
        ensure!(&called == pending, "superstep {j}: updated set differs from pending set");
        ensure!(calls.values().all(|&c| c == 1), "superstep {j}: a vertex updated more than once");
    }

    let mut rng = common::rng(3);
    let pts = common::random_points(&mut rng, 100, 6);
    let mut params = BgdParams::new(6);
    params.max_iters = 5;
    let run = run_bgd(&pts, &params, &ClusterConfig::default(), &RunOptions { shadow_step: true, ..RunOptions::default() })?;
    ensure!(run.result.shadow.is_some_and(|s| s.model_unchanged), "IMRU shadow step changed the model");
    Ok(format!("{} supersteps checked", inv.pending.len()))
}

fn c8() -> Result<String> {
    let g = common::synthetic_graph(20_000, 100_000, 1);
    let input = BenchInput::Graph { graph: &g, supersteps: 5 };
    let rows = bench(&input, &BenchMatrix { repetitions: 3, ..BenchMatrix::workers(&[1, 2, 4], 8) })?;
    println!("    workers  avg_iter_ms  worker_seconds  shuffle_tuples");
    for r in &rows {
        println!("    {:>7}  {:>11.1}  {:>14.2}  {:>14}", r.workers, r.avg_iteration_ms, r.worker_seconds, r.shuffle_tuples);
    }
    for w in rows.windows(2) {
        ensure!(
            w[1].avg_iteration_ms <= w[0].avg_iteration_ms,
            "avg iteration time rose from {:.1} ms at {} workers to {:.1} ms at {} ({} cpus available)",
            w[0].avg_iteration_ms,
            w[0].workers,
            w[1].avg_iteration_ms,
            w[1].workers,
            std::thread::available_parallelism().map_or(1, |n| n.get())
        );
    }
    Ok("avg iteration time non-increasing".into())
}

/// Number, name, time limit and check.
type Criterion = (u32, &'static str, Duration, fn() -> Result<String>);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "XY-stratification and mutations", Duration::from_secs(1), c1),
        (2, "golden logical plans", Duration::from_secs(1), c2),
        (3, "PageRank equivalence", Duration::from_secs(30), c3),
        (4, "BGD correctness", Duration::from_secs(30), c4),
        (5, "combiner", Duration::from_secs(10), c5),
        (6, "connector equivalence", Duration::from_secs(30), c6),
        (7, "shadow step and exactly-once", Duration::from_secs(10), c7),
        (8, "worker scaling", Duration::from_secs(120), c8),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, limit, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(anyhow::anyhow!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > limit => Err(anyhow::anyhow!("took {:.2}s, limit {}s", took.as_secs_f64(), limit.as_secs())),
            o => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS in {:.2}s: {detail}", took.as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL in {:.2}s: {e:#}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
