mod common;

use std::path::Path;
use std::process::{Command, Output};

fn dlflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dlflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pagerank_on_a_two_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("g.txt");
    std::fs::write(&input, "0 1\n1 0\n").unwrap();
    let out = dir.path().join("out");
    let summary = ok(&["run", "pagerank", "--input", p(&input), "--workers", "4", "--supersteps", "30", "--out", p(&out)]);
    let summary: serde_json::Value = serde_json::from_str(summary.trim()).unwrap();
    assert_eq!(summary["halted"], true);
    assert!(summary["worker_seconds"].as_f64().unwrap() > 0.0);
    let ranks = std::fs::read_to_string(out.join("ranks.tsv")).unwrap();
    for line in ranks.lines() {
        let r: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!((r - 0.5).abs() < 1e-15);
    }
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), summary["iterations"].as_u64().unwrap() as usize + 1);
}

#[test]
fn connectors_write_identical_rank_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("g.txt");
    let g = common::synthetic_graph(300, 1200, 6);
    let text: String = g.iter().map(|(v, d)| format!("{v} {}\n", d.iter().map(i64::to_string).collect::<Vec<_>>().join(" "))).collect();
    std::fs::write(&input, text).unwrap();
    let ingested = dir.path().join("ingested");
    ok(&["ingest-graph", p(&input), "--out", p(&ingested), "--partitions", "4"]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "pagerank", "--input", p(&ingested), "--connector", "merge", "--supersteps", "10", "--out", p(&a)]);
    ok(&["run", "pagerank", "--input", p(&input), "--connector", "hash-sort", "--supersteps", "10", "--out", p(&b)]);
    assert_eq!(std::fs::read(a.join("ranks.tsv")).unwrap(), std::fs::read(b.join("ranks.tsv")).unwrap());
}

#[test]
fn deterministic_bgd_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pts.txt");
    let mut rng = common::rng(12);
    let text: String = common::random_points(&mut rng, 80, 5)
        .iter()
        .map(|(y, x)| {
            let feats: Vec<String> = x.iter().map(|(i, v)| format!("{i}:{v}")).collect();
            format!("{} {}\n", if *y > 0.0 { "+1" } else { "-1" }, feats.join(" "))
        })
        .collect();
    std::fs::write(&input, text).unwrap();
    let mut models = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "1"), ("c", "4")] {
        let out = dir.path().join(name);
        ok(&["run", "bgd-logistic", "--input", p(&input), "--deterministic", "--workers", workers, "--steps", "15", "--out", p(&out)]);
        models.push(std::fs::read(out.join("model.txt")).unwrap());
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(models[0], models[2]);
}

#[test]
fn plan_views() {
    let strat = ok(&["plan", "--check-strat", "--task", "bgd-logistic"]);
    assert!(strat.contains("xy-stratified: yes"));
    assert!(strat.contains("G3: new_model(NewM) :- old_collect(AggrS), old_model(M), old_update(M, AggrS, NewM), M != NewM."));
    assert_eq!(ok(&["plan", "--logical", "--task", "pagerank"]), common::golden("pregel.logical.txt"));
    let phys = ok(&["plan", "--physical", "--task", "pagerank", "--connector", "hash-sort"]);
    assert!(phys.contains("m_to_n_hash"));
    assert!(phys.contains("O1 "));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.dl");
    let src = dlflow::datalog::IMRU_TEMPLATE.replace("G3: model(J+1, NewM)", "G3: model(J, NewM)");
    std::fs::write(&bad, src).unwrap();
    let out = dlflow(&["plan", "--check-strat", "--program", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("G3"));
}

#[test]
fn ingest_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("pts.txt");
    std::fs::write(&pts, "+1 0:1\n+1 3:1 1:2\n").unwrap();
    let out = dlflow(&["ingest-points", p(&pts), "--out", p(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let g = dir.path().join("g.txt");
    std::fs::write(&g, "0 1\n1 x\n").unwrap();
    let out = dlflow(&["ingest-graph", p(&g), "--out", p(&dir.path().join("o"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "").unwrap();
    let out = dlflow(&["run", "pagerank", "--input", p(&empty), "--out", p(&dir.path().join("r"))]);
    assert!(!out.status.success());
}

#[test]
fn bench_emits_one_row_per_configuration() {
    let out = ok(&["bench", "pagerank", "--edges", "600", "--vertices", "150", "--supersteps", "3", "--combiner", "on,off"]);
    let rows: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r["workers"].as_u64().unwrap()).collect::<Vec<_>>(), [1, 2, 4, 1, 2, 4]);
    assert!(rows[0]["shuffle_tuples"].as_u64() < rows[3]["shuffle_tuples"].as_u64());
    let single = ok(&["bench", "pagerank", "--edges", "300", "--vertices", "100", "--workers", "2", "--supersteps", "2"]);
    assert_eq!(single.lines().count(), 1);
}
