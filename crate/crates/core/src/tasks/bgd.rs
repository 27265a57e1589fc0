//! Batch gradient descent for L2-regularized logistic regression on the
//! map-reduce-update template.
//!
//! A record is `[label, features]` with label `±1` and sparse features. The
//! model is the dense weight vector. `map` yields `[loss, gradient...]`,
//! `reduce` sums componentwise and `update` takes one step
//! `w' = w - eta * (lambda * w + G)`. Once the iteration cap is reached or the
//! step is smaller than the tolerance, `update` returns its input model.

use std::sync::Arc;

use crate::udf::{FnAggregate, Registry, UdfError};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct BgdParams {
    pub dim: usize,
    pub eta: f64,
    pub lambda: f64,
    pub max_iters: u32,
    pub tolerance: f64,
}

impl BgdParams {
    pub fn new(dim: usize) -> Self {
        BgdParams { dim, eta: 0.1, lambda: 1.0, max_iters: 100, tolerance: 0.0 }
    }
}

/// `ln(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn record(label: f64, features: Vec<(u32, f64)>) -> Value {
    Value::list(vec![Value::Float(label), Value::Sparse(Arc::from(features))])
}

type Features = [(u32, f64)];

fn parse_record(r: &Value) -> Result<(f64, &Features), UdfError> {
    match r.as_list() {
        Some([Value::Float(y), Value::Sparse(x)]) => Ok((*y, x)),
        _ => Err(UdfError::new(format!("malformed training record {r}"))),
    }
}

fn weights(m: &Value) -> Result<&[f64], UdfError> {
    m.as_vector().ok_or_else(|| UdfError::new(format!("model must be a vector, got {m}")))
}

#[derive(Clone, Debug)]
pub struct Bgd {
    pub params: BgdParams,
}

impl Bgd {
    pub fn new(params: BgdParams) -> Self {
        Bgd { params }
    }

    pub fn init_model(&self) -> Value {
        Value::vector(vec![0.0; self.params.dim])
    }

    pub fn map(&self, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        let [r, m] = args else { return Err(UdfError::new("map expects (Record, Model)")) };
        let (y, x) = parse_record(r)?;
        let w = weights(m)?;
        let mut z = 0.0;
        for &(i, v) in x {
            let wi = w.get(i as usize).ok_or_else(|| {
                UdfError::new(format!("feature index {i} exceeds model dimension {}", w.len()))
            })?;
            z += wi * v;
        }
        let coef = -y / (1.0 + (y * z).exp());
        let mut s = vec![0.0; w.len() + 1];
        s[0] = softplus(-y * z);
        for &(i, v) in x {
            s[1 + i as usize] = coef * v;
        }
        Ok(vec![Value::vector(s)])
    }

    pub fn update(&self, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        let [j, m, g] = args else { return Err(UdfError::new("update expects (J, Model, Statistics)")) };
        let j = j.as_int().ok_or_else(|| UdfError::new("iteration must be an integer"))?;
        let w = weights(m)?;
        let g = g.as_vector().ok_or_else(|| UdfError::new("statistics must be a vector"))?;
        if g.len() != w.len() + 1 {
            return Err(UdfError::new(format!("statistics length {} does not match model dimension {}", g.len(), w.len())));
        }
        if j >= self.params.max_iters as i64 {
            return Ok(vec![m.clone()]);
        }
        let p = &self.params;
        let next: Vec<f64> = w.iter().zip(&g[1..]).map(|(wi, gi)| wi - p.eta * (p.lambda * wi + gi)).collect();
        let delta = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if delta < p.tolerance {
            return Ok(vec![m.clone()]);
        }
        Ok(vec![Value::vector(next)])
    }

    pub fn registry(&self) -> Registry {
        let mut r = Registry::new();
        let model = self.init_model();
        r.register_function("init_model", move |_: &[Value]| Ok(vec![model.clone()]));
        let me = self.clone();
        r.register_function("map", move |a: &[Value]| me.map(a));
        let me = self.clone();
        r.register_function("update", move |a: &[Value]| me.update(a));
        r.register_aggregate(
            "reduce",
            FnAggregate {
                lift: |v: &Value| Ok(v.clone()),
                merge: |acc: Value, o: &Value| match (acc.as_vector(), o.as_vector()) {
                    (Some(a), Some(b)) if a.len() == b.len() => {
                        Ok(Value::vector(a.iter().zip(b).map(|(x, y)| x + y).collect()))
                    }
                    _ => Err(UdfError::new("reduce expects statistics vectors of equal length")),
                },
                commutative_associative: true,
            },
        );
        r.set_equality(|a, b| match (a.as_vector(), b.as_vector()) {
            (Some(x), Some(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()),
            _ => a == b,
        });
        r.set_distance(|a, b| match (a.as_vector(), b.as_vector()) {
            (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max),
            _ => f64::NAN,
        });
        r
    }
}

/// Plain sequential gradient descent over records in the given order.
/// Returns the model after each applied step, starting with the initial one.
pub fn sequential_bgd(records: &[(f64, Vec<(u32, f64)>)], p: &BgdParams) -> Vec<Vec<f64>> {
    let mut w = vec![0.0; p.dim];
    let mut out = vec![w.clone()];
    for _ in 0..p.max_iters {
        let mut g = vec![0.0; p.dim];
        for (y, x) in records {
            let z: f64 = x.iter().fold(0.0, |acc, &(i, v)| acc + w[i as usize] * v);
            let coef = -y / (1.0 + (y * z).exp());
            for &(i, v) in x {
                g[i as usize] += coef * v;
            }
        }
        let next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - p.eta * (p.lambda * wi + gi)).collect();
        let delta = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if delta < p.tolerance {
            break;
        }
        w = next;
        out.push(w.clone());
    }
    out
}

/// Mean logistic loss of `w` over `records`.
pub fn mean_loss(records: &[(f64, Vec<(u32, f64)>)], w: &[f64]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|(y, x)| softplus(-y * x.iter().map(|&(i, v)| w[i as usize] * v).sum::<f64>()))
        .sum();
    total / records.len().max(1) as f64
}

/// Probability of the positive class.
pub fn predict(w: &[f64], x: &[(u32, f64)]) -> f64 {
    let z: f64 = x.iter().map(|&(i, v)| w[i as usize] * v).sum();
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_reduce_update_matches_sequential_step() {
        let data = vec![(1.0, vec![(0, 1.0), (1, 2.0)]), (-1.0, vec![(1, 1.0)])];
        let p = BgdParams { max_iters: 1, ..BgdParams::new(2) };
        let bgd = Bgd::new(p.clone());
        let reg = bgd.registry();
        let m = bgd.init_model();
        let stats: Vec<Value> = data
            .iter()
            .map(|(y, x)| bgd.map(&[record(*y, x.clone()), m.clone()]).unwrap().remove(0))
            .collect();
        let g = reg.fold("reduce", stats).unwrap().unwrap();
        let next = bgd.update(&[Value::Int(0), m.clone(), g]).unwrap().remove(0);
        let seq = sequential_bgd(&data, &p);
        assert_eq!(next.as_vector().unwrap(), seq[1].as_slice());
        let same = bgd.update(&[Value::Int(1), next.clone(), Value::vector(vec![0.0; 3])]).unwrap().remove(0);
        assert!(reg.values_equal(&same, &next));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let bgd = Bgd::new(BgdParams::new(1));
        assert!(bgd.map(&[record(1.0, vec![(3, 1.0)]), bgd.init_model()]).is_err());
    }
}
