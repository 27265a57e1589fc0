mod common;

use dlflow::driver::run_pagerank;
use dlflow::physical::{ClusterConfig, ConnectorChoice};
use dlflow::runtime::RunOptions;
use dlflow::tasks::pagerank::{power_iteration, DAMPING};
use rand::Rng;

fn cfg(connector: ConnectorChoice) -> ClusterConfig {
    ClusterConfig { workers: 4, partitions_per_worker: 2, connector, ..ClusterConfig::default() }
}

#[test]
fn engine_matches_interpreter_and_power_iteration() {
    let mut rng = common::rng(7);
    for _ in 0..4 {
        let n = rng.gen_range(10..=60);
        let g = common::random_graph(&mut rng, n);
        let reference = power_iteration(&g, 30, DAMPING);
        let interp = common::interpreter_ranks(&g, 30);
        assert!(common::max_abs_diff(&interp, &reference) <= 1e-9);
        for c in [ConnectorChoice::HashMerge, ConnectorChoice::HashThenSort] {
            let run = run_pagerank(&g, 30, &cfg(c), &RunOptions::default()).unwrap();
            assert!(run.result.halted);
            assert!(common::max_abs_diff(&run.ranks, &reference) <= 1e-9);
        }
    }
}

#[test]
fn destination_only_and_dangling_vertices() {
    // 3 only appears as a destination; 2 has no out-edges.
    let g = dlflow::tasks::ingest::parse_graph("0 1 3\n1 0 2\n2\n").unwrap();
    assert_eq!(g.len(), 4);
    let run = run_pagerank(&g, 20, &cfg(ConnectorChoice::HashMerge), &RunOptions::default()).unwrap();
    let total: f64 = run.ranks.values().sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
    assert!(common::max_abs_diff(&run.ranks, &power_iteration(&g, 20, DAMPING)) <= 1e-12);
}

#[test]
fn single_worker_single_partition() {
    let g = common::synthetic_graph(50, 200, 3);
    let one = ClusterConfig { workers: 1, partitions_per_worker: 1, ..ClusterConfig::default() };
    let run = run_pagerank(&g, 10, &one, &RunOptions::default()).unwrap();
    assert!(common::max_abs_diff(&run.ranks, &power_iteration(&g, 10, DAMPING)) <= 1e-9);
}
