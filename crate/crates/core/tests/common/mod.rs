#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use dlflow::datalog::{parse_program, Program, IMRU_TEMPLATE, PREGEL_TEMPLATE};
use dlflow::driver::pagerank_binding;
use dlflow::tasks::ingest::{graph_dataset, Point};
use dlflow::tasks::interpreter::interpret;
use dlflow::strat::Clause;
use dlflow::tasks::pagerank::rank_of;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

pub fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("reading {}: {e}", p.display()))
}

pub fn pregel() -> Program {
    parse_program(PREGEL_TEMPLATE).unwrap()
}

pub fn imru() -> Program {
    parse_program(IMRU_TEMPLATE).unwrap()
}

pub fn rng(seed: u64) -> SmallRng {
    SmallRng::seed_from_u64(seed)
}

/// A graph on `n` vertices where roughly a fifth have no out-edges and
/// others have between one and five (possibly repeated) neighbors.
pub fn random_graph(rng: &mut SmallRng, n: usize) -> Vec<(i64, Vec<i64>)> {
    let mut g: Vec<(i64, Vec<i64>)> = (0..n as i64)
        .map(|v| {
            let deg = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=5) };
            (v, (0..deg).map(|_| rng.gen_range(0..n as i64)).collect())
        })
        .collect();
    if g.iter().all(|(_, d)| !d.is_empty()) {
        g[0].1.clear();
    }
    if g.iter().all(|(_, d)| d.is_empty()) {
        g[0].1.push(1 % n as i64);
    }
    g
}

/// Graph with exactly `edges` edges over `n` vertices, fixed by the seed.
pub fn synthetic_graph(n: usize, edges: usize, seed: u64) -> Vec<(i64, Vec<i64>)> {
    let mut r = rng(seed);
    let mut adj: Vec<Vec<i64>> = vec![Vec::new(); n];
    for e in 0..edges {
        let src = if e < n { e } else { r.gen_range(0..n) };
        adj[src].push(r.gen_range(0..n as i64));
    }
    adj.into_iter().enumerate().map(|(v, d)| (v as i64, d)).collect()
}

pub fn interpreter_ranks(graph: &[(i64, Vec<i64>)], supersteps: u32) -> BTreeMap<i64, f64> {
    let t = pagerank_binding(graph, supersteps);
    let ds = graph_dataset(graph, 1);
    let edb: HashMap<String, Vec<dlflow::Tuple>> = [("data".to_string(), ds.tuples().cloned().collect())].into();
    let out = interpret(&t.program, &edb, &t.registry, supersteps as usize + 5).unwrap();
    out.latest("vertex")
        .into_iter()
        .map(|(k, row)| (k.as_int().unwrap(), rank_of(&row[1]).unwrap()))
        .collect()
}

pub fn max_abs_diff(a: &BTreeMap<i64, f64>, b: &BTreeMap<i64, f64>) -> f64 {
    assert_eq!(a.len(), b.len(), "vertex sets differ");
    a.iter().map(|(k, x)| (x - b[k]).abs()).fold(0.0, f64::max)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(1e-12)).fold(0.0, f64::max)
}

/// Labeled sparse points with a planted separator.
pub fn random_points(rng: &mut SmallRng, n: usize, dim: usize) -> Vec<Point> {
    let truth: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..n)
        .map(|_| {
            let mut x: Vec<(u32, f64)> = Vec::new();
            for i in 0..dim {
                if rng.gen_bool(0.4) {
                    x.push((i as u32, rng.gen_range(-2.0..2.0)));
                }
            }
            let z: f64 = x.iter().map(|&(i, v)| truth[i as usize] * v).sum();
            let y = if z + rng.gen_range(-0.3..0.3) >= 0.0 { 1.0 } else { -1.0 };
            (y, x)
        })
        .collect()
}

/// Single-clause mutations with the rule and clause each must be blamed on.
pub fn mutations() -> Vec<(&'static str, String, &'static str, Clause)> {
    vec![
        (
            "G3 head at current state",
            IMRU_TEMPLATE.replace("G3: model(J+1, NewM)", "G3: model(J, NewM)"),
            "G3",
            Clause::YSuccessorHead,
        ),
        (
            "L7 head at current state",
            PREGEL_TEMPLATE.replace("L7: vertex(J+1, Id, State)", "L7: vertex(J, Id, State)"),
            "L7",
            Clause::YSuccessorHead,
        ),
        (
            "L8 head at current state",
            PREGEL_TEMPLATE.replace("L8: send(J+1, Id, M)", "L8: send(J, Id, M)"),
            "L8",
            Clause::YSuccessorHead,
        ),
        (
            "G3 loses its current-state goal",
            IMRU_TEMPLATE.replace("collect(J, AggrS), model(J, M)", "collect(J+1, AggrS), model(J+1, M)"),
            "G3",
            Clause::YCurrentGoal,
        ),
        (
            "L7 loses its current-state goal",
            PREGEL_TEMPLATE.replace(":- superstep(J, Id, State, _)", ":- superstep(J+1, Id, State, _)"),
            "L7",
            Clause::YCurrentGoal,
        ),
        (
            "G2 negates its own head",
            IMRU_TEMPLATE.replace("map(R, M, S).", "map(R, M, S), !collect(J, S)."),
            "G2",
            Clause::YSuccessorHead,
        ),
        (
            "L3 negates its own head",
            PREGEL_TEMPLATE.replace("send(J, Id, Msg).", "send(J, Id, Msg), !collect(J, Id, Msg)."),
            "L3",
            Clause::YSuccessorHead,
        ),
    ]
}
