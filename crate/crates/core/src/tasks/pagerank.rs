//! PageRank on the Pregel template.
//!
//! Vertex state is `[rank, neighbors]`. Superstep 0 only activates vertices;
//! superstep `j` in `1..=T` sets `rank = (1-d)/N + d * sum(messages)` and
//! superstep `T` sends nothing, so the computation halts with `send` empty.
//! A vertex without out-edges spreads `rank/N` over every vertex. Each
//! vertex also messages itself `0.0` so it stays active.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::udf::{FnAggregate, Registry, UdfError};
use crate::value::Value;

pub const DAMPING: f64 = 0.85;

#[derive(Clone, Debug)]
pub struct PageRank {
    pub supersteps: u32,
    pub damping: f64,
    /// Every vertex id, used to spread dangling mass.
    pub vertices: Arc<[i64]>,
}

impl PageRank {
    pub fn new(vertices: Vec<i64>, supersteps: u32) -> Self {
        PageRank { supersteps, damping: DAMPING, vertices: Arc::from(vertices) }
    }

    fn n(&self) -> f64 {
        self.vertices.len().max(1) as f64
    }

    pub fn init_vertex(&self, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        let [_, datum] = args else { return Err(UdfError::new("init_vertex expects (Id, Datum)")) };
        if datum.as_list().is_none() {
            return Err(UdfError::new(format!("vertex datum must be a neighbor list, got {datum}")));
        }
        Ok(vec![Value::list(vec![Value::Float(1.0 / self.n()), datum.clone()])])
    }

    pub fn update(&self, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        let [j, id, state, msgs] = args else { return Err(UdfError::new("update expects (J, Id, State, Msgs)")) };
        let j = j.as_int().ok_or_else(|| UdfError::new("superstep must be an integer"))?;
        let (rank, neighbors) = match state.as_list() {
            Some([Value::Float(r), Value::List(n)]) => (*r, n.clone()),
            _ => return Err(UdfError::new(format!("malformed vertex state {state}"))),
        };
        let rank = if j == 0 {
            rank
        } else {
            let sum = msgs.as_float().ok_or_else(|| UdfError::new(format!("combined message must be a number, got {msgs}")))?;
            (1.0 - self.damping) / self.n() + self.damping * sum
        };
        let mut out = Vec::new();
        if j < self.supersteps as i64 {
            out.push(Value::list(vec![id.clone(), Value::Float(0.0)]));
            if neighbors.is_empty() {
                let share = Value::Float(rank / self.n());
                out.extend(self.vertices.iter().map(|&v| Value::list(vec![Value::Int(v), share.clone()])));
            } else {
                let share = Value::Float(rank / neighbors.len() as f64);
                out.extend(neighbors.iter().map(|n| Value::list(vec![n.clone(), share.clone()])));
            }
        }
        Ok(vec![Value::list(vec![Value::Float(rank), Value::List(neighbors)]), Value::list(out)])
    }

    pub fn registry(&self) -> Registry {
        let mut r = Registry::new();
        let me = self.clone();
        r.register_function("init_vertex", move |a: &[Value]| me.init_vertex(a));
        let me = self.clone();
        r.register_function("update", move |a: &[Value]| me.update(a));
        r.register_aggregate(
            "combine",
            FnAggregate {
                lift: |v: &Value| Ok(Value::Float(if let Value::Float(x) = v { *x } else { 0.0 })),
                merge: |acc: Value, o: &Value| match (acc, o) {
                    (Value::Float(a), Value::Float(b)) => Ok(Value::Float(a + b)),
                    (a, b) => Err(UdfError::new(format!("combine expects numbers, got {a} and {b}"))),
                },
                commutative_associative: true,
            },
        );
        r
    }
}

/// Rank of a vertex from its state value.
pub fn rank_of(state: &Value) -> Option<f64> {
    match state.as_list() {
        Some([Value::Float(r), _]) => Some(*r),
        _ => None,
    }
}

/// Power iteration: `r' = (1-d)/N + d * (A^T (r / outdeg) + dangling / N)`,
/// starting from the uniform vector, `iterations` times.
pub fn power_iteration(graph: &[(i64, Vec<i64>)], iterations: u32, damping: f64) -> BTreeMap<i64, f64> {
    let index: BTreeMap<i64, usize> = graph.iter().enumerate().map(|(i, (v, _))| (*v, i)).collect();
    let n = graph.len();
    let mut r = vec![1.0 / n as f64; n];
    for _ in 0..iterations {
        let mut next = vec![0.0; n];
        let mut dangling = 0.0;
        for (u, (_, out)) in graph.iter().enumerate() {
            if out.is_empty() {
                dangling += r[u];
            } else {
                let share = r[u] / out.len() as f64;
                for d in out {
                    next[index[d]] += share;
                }
            }
        }
        for x in next.iter_mut() {
            *x = (1.0 - damping) / n as f64 + damping * (*x + dangling / n as f64);
        }
        r = next;
    }
    graph.iter().map(|(v, _)| *v).zip(r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_conserves_mass() {
        let g = vec![(0, vec![1, 2]), (1, vec![2]), (2, vec![0]), (3, vec![])];
        let r = power_iteration(&g, 50, DAMPING);
        let total: f64 = r.values().sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn update_sends_shares_and_stops() {
        let pr = PageRank::new(vec![0, 1], 2);
        let state = Value::list(vec![Value::Float(0.5), Value::list(vec![Value::Int(1)])]);
        let out = pr.update(&[Value::Int(1), Value::Int(0), state.clone(), Value::Float(0.2)]).unwrap();
        assert!((rank_of(&out[0]).unwrap() - (0.15 / 2.0 + 0.85 * 0.2)).abs() < 1e-15);
        assert_eq!(out[1].as_list().unwrap().len(), 2);
        let out = pr.update(&[Value::Int(2), Value::Int(0), state, Value::Float(0.2)]).unwrap();
        assert!(out[1].as_list().unwrap().is_empty());
    }
}
