mod common;

use std::collections::{BTreeMap, BTreeSet};

use dlflow::driver::{run_bgd, run_pagerank};
use dlflow::physical::{ClusterConfig, ConnectorChoice};
use dlflow::runtime::RunOptions;
use dlflow::tasks::bgd::BgdParams;
use dlflow::tasks::pagerank::{power_iteration, DAMPING};
use dlflow::Value;

fn cfg(connector: ConnectorChoice, combiner: bool) -> ClusterConfig {
    ClusterConfig { workers: 4, partitions_per_worker: 2, connector, combiner, ..ClusterConfig::default() }
}

#[test]
fn combiner_keeps_results_and_cuts_shuffle_traffic() {
    let g = common::synthetic_graph(120, 480, 21);
    let on = run_pagerank(&g, 10, &cfg(ConnectorChoice::HashMerge, true), &RunOptions::default()).unwrap();
    let off = run_pagerank(&g, 10, &cfg(ConnectorChoice::HashMerge, false), &RunOptions::default()).unwrap();
    assert!(common::max_abs_diff(&on.ranks, &off.ranks) <= 1e-12);
    let t_on = on.result.traffic(&on.plan.step_shuffles());
    let t_off = off.result.traffic(&off.plan.step_shuffles());
    assert!(t_on.tuples < t_off.tuples, "{} vs {}", t_on.tuples, t_off.tuples);
}

#[test]
fn merge_and_hash_sort_deliver_identical_streams() {
    let g = common::synthetic_graph(80, 300, 4);
    let opts = RunOptions { capture_streams: true, ..RunOptions::default() };
    let a = run_pagerank(&g, 8, &cfg(ConnectorChoice::HashMerge, true), &opts).unwrap();
    let b = run_pagerank(&g, 8, &cfg(ConnectorChoice::HashThenSort, true), &opts).unwrap();
    let sa: Vec<_> = a.result.streams.iter().filter(|s| s.tap == "messages").collect();
    let sb: Vec<_> = b.result.streams.iter().filter(|s| s.tap == "messages").collect();
    assert!(!sa.is_empty());
    assert_eq!(sa.len(), sb.len());
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(x.iteration, y.iteration);
        assert_eq!(x.partitions, y.partitions, "iteration {}", x.iteration);
    }
    assert_eq!(a.ranks, b.ranks);
    assert!(common::max_abs_diff(&a.ranks, &power_iteration(&g, 8, DAMPING)) <= 1e-9);
}

#[test]
fn pregel_shadow_step_derives_nothing() {
    let g = common::synthetic_graph(40, 120, 8);
    let opts = RunOptions { shadow_step: true, ..RunOptions::default() };
    let run = run_pagerank(&g, 5, &ClusterConfig::default(), &opts).unwrap();
    let shadow = run.result.shadow.unwrap();
    assert_eq!(shadow.derived_tuples, 0);
    assert_eq!(shadow.store_updates, 0);
    let again = run_pagerank(&g, 5, &ClusterConfig::default(), &RunOptions::default()).unwrap();
    assert_eq!(run.ranks, again.ranks);
}

#[test]
fn imru_shadow_step_keeps_the_model() {
    let mut rng = common::rng(2);
    let pts = common::random_points(&mut rng, 60, 5);
    let mut params = BgdParams::new(5);
    params.max_iters = 4;
    let opts = RunOptions { shadow_step: true, ..RunOptions::default() };
    let run = run_bgd(&pts, &params, &ClusterConfig::default(), &opts).unwrap();
    assert!(run.result.shadow.unwrap().model_unchanged);
}

#[test]
fn each_pending_vertex_updates_exactly_once() {
    let g = common::synthetic_graph(60, 150, 13);
    let opts = RunOptions { count_invocations: true, ..RunOptions::default() };
    let run = run_pagerank(&g, 6, &cfg(ConnectorChoice::HashThenSort, true), &opts).unwrap();
    let inv = &run.result.invocations;
    assert_eq!(inv.per_iteration.len(), inv.pending.len());
    assert!(!inv.per_iteration.is_empty());
    for (j, (calls, pending)) in inv.per_iteration.iter().zip(&inv.pending).enumerate() {
        let empty = BTreeMap::new();
        let calls = calls.get("update").unwrap_or(&empty);
        let called: BTreeSet<Value> = calls.keys().cloned().collect();
        assert_eq!(&called, pending, "superstep {j}");
        assert!(calls.values().all(|&c| c == 1), "superstep {j}");
    }
}
