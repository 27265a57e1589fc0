//! Evaluation of one operator instance over its materialized inputs.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::connector::{first_unsorted, sort_on};
use super::store::{StoreError, VertexStore};
use super::EngineError;
use crate::dataset::Catalog;
use crate::logical::{Operand, Predicate};
use crate::physical::{AggInput, PhysKind, PhysOp};
use crate::udf::{AggregateUdf, Registry};
use crate::value::{Tuple, Value};

pub(crate) struct OpCtx<'a> {
    pub registry: &'a Registry,
    pub catalog: &'a Catalog,
    pub datasets: &'a HashMap<String, Vec<Vec<Tuple>>>,
    pub stores: &'a HashMap<String, VertexStore>,
    pub iteration: i64,
    pub deterministic: bool,
    /// The operator's output crosses partitions, so it aggregates partially.
    pub partial: bool,
    pub count_invocations: bool,
}

/// Side results of one instance.
#[derive(Default)]
pub(crate) struct InstanceStats {
    /// Calls per function, keyed by the first column argument when counting.
    pub calls: BTreeMap<String, BTreeMap<Value, u64>>,
    pub totals: BTreeMap<String, u64>,
    pub store_updates: u64,
}

fn operand(o: &Operand, t: &[Value], iteration: i64, elem: Option<&Value>) -> Result<Value, String> {
    Ok(match o {
        Operand::Column(c) => t.get(*c).cloned().ok_or_else(|| format!("column {c} out of range"))?,
        Operand::Iteration(k) => Value::Int(iteration + k),
        Operand::Const(v, _) => v.clone(),
        Operand::Element(None) => elem.cloned().ok_or("element outside an unnest")?,
        Operand::Element(Some(i)) => {
            let e = elem.ok_or("element outside an unnest")?;
            e.as_list().and_then(|l| l.get(*i)).cloned().ok_or_else(|| format!("element {e} has no component {i}"))?
        }
    })
}

fn property(op: &PhysOp, iteration: i64, message: String) -> EngineError {
    EngineError::Property { op: op.id, iteration, message }
}

fn store_err(op: &PhysOp, iteration: i64, e: StoreError) -> EngineError {
    match e {
        StoreError::UnknownVertex(k) => EngineError::UnknownVertex { op: op.id, iteration, key: k.to_string() },
        other => property(op, iteration, other.to_string()),
    }
}

fn aggregate<'r>(ctx: &OpCtx<'r>, op: &PhysOp, name: &str) -> Result<&'r Arc<dyn AggregateUdf>, EngineError> {
    ctx.registry.aggregate(name).ok_or_else(|| EngineError::Udf {
        op: op.id,
        udf: name.to_string(),
        iteration: ctx.iteration,
        message: format!("aggregate `{name}` is not registered"),
    })
}

/// Folds a group: raw values are lifted, partial accumulators merged.
fn fold(
    agg: &dyn AggregateUdf,
    values: impl IntoIterator<Item = Value>,
    input: AggInput,
    deterministic: bool,
) -> Result<Option<Value>, crate::udf::UdfError> {
    let mut values: Vec<Value> = values.into_iter().collect();
    if deterministic {
        values.sort();
    }
    let mut acc: Option<Value> = None;
    for v in values {
        let next = match input {
            AggInput::Raw => agg.lift(&v)?,
            AggInput::Partial => v,
        };
        acc = Some(match acc {
            None => next,
            Some(a) => agg.merge(a, &next)?,
        });
    }
    Ok(acc)
}

pub(crate) fn run_instance(
    op: &PhysOp,
    instance: usize,
    inputs: &[Arc<Vec<Tuple>>],
    ctx: &OpCtx<'_>,
    stats: &mut InstanceStats,
) -> Result<Vec<Tuple>, EngineError> {
    let it = ctx.iteration;
    let input = || inputs.first().map(|a| a.as_slice()).unwrap_or(&[]);
    let udf_err = |udf: &str, message: String| EngineError::Udf { op: op.id, udf: udf.to_string(), iteration: it, message };
    Ok(match &op.kind {
        PhysKind::FileScan { dataset } => {
            let d = ctx.catalog.get(dataset).ok_or_else(|| EngineError::MissingInput(dataset.clone()))?;
            d.slice_for(instance, op.instances).cloned().collect()
        }
        PhysKind::DatasetRead { name, replicated } => {
            let parts = ctx.datasets.get(name).ok_or_else(|| EngineError::MissingInput(name.clone()))?;
            if *replicated {
                parts.iter().flatten().cloned().collect()
            } else {
                parts.get(instance).cloned().unwrap_or_default()
            }
        }
        PhysKind::DatasetWrite { .. } => input().to_vec(),
        PhysKind::ProjectionFn { items, unnest } => {
            let mut out = Vec::with_capacity(input().len());
            for t in input() {
                match unnest {
                    None => {
                        let row: Result<Tuple, String> = items.iter().map(|o| operand(o, t, it, None)).collect();
                        out.push(row.map_err(|m| property(op, it, m))?);
                    }
                    Some(u) => {
                        let elems = match &t[*u] {
                            Value::Null => continue,
                            v => v.as_list().ok_or_else(|| property(op, it, format!("cannot unnest {v}")))?,
                        };
                        for e in elems {
                            let row: Result<Tuple, String> = items.iter().map(|o| operand(o, t, it, Some(e))).collect();
                            out.push(row.map_err(|m| property(op, it, m))?);
                        }
                    }
                }
            }
            out
        }
        PhysKind::Selection { pred } => {
            let Predicate { op: cmp, lhs, rhs } = pred;
            let mut out = Vec::new();
            for t in input() {
                let l = operand(lhs, t, it, None).map_err(|m| property(op, it, m))?;
                let r = operand(rhs, t, it, None).map_err(|m| property(op, it, m))?;
                if ctx.registry.compare(*cmp, &l, &r) {
                    out.push(t.clone());
                }
            }
            out
        }
        PhysKind::FunctionCall { udf, args, outputs } => {
            let f = ctx.registry.function(udf).ok_or_else(|| udf_err(udf, format!("function `{udf}` is not registered")))?;
            let key_arg = args.iter().find(|a| matches!(a, Operand::Column(_)));
            let mut call = |t: &[Value]| -> Result<Tuple, EngineError> {
                let a: Result<Vec<Value>, String> = args.iter().map(|o| operand(o, t, it, None)).collect();
                let a = a.map_err(|m| property(op, it, m))?;
                let res = f.call(&a).map_err(|e| udf_err(udf, e.0))?;
                if res.len() != *outputs {
                    return Err(udf_err(udf, format!("returned {} values, expected {outputs}", res.len())));
                }
                *stats.totals.entry(udf.clone()).or_default() += 1;
                if ctx.count_invocations {
                    let key = key_arg.and_then(|k| operand(k, t, it, None).ok()).unwrap_or(Value::Null);
                    *stats.calls.entry(udf.clone()).or_default().entry(key).or_default() += 1;
                }
                let mut row = t.to_vec();
                row.extend(res);
                Ok(row)
            };
            if inputs.is_empty() {
                vec![call(&[])?]
            } else {
                input().iter().map(|t| call(t)).collect::<Result<_, _>>()?
            }
        }
        PhysKind::Sort { keys } => {
            let mut rows = input().to_vec();
            sort_on(&mut rows, keys);
            rows
        }
        PhysKind::BTreeBulkLoad { store, .. } => {
            let s = &ctx.stores[store];
            s.bulk_load(instance, input()).map_err(|e| store_err(op, it, e))?;
            Vec::new()
        }
        PhysKind::BTreeUpdate { store, .. } => {
            let s = &ctx.stores[store];
            stats.store_updates += s.update(instance, input()).map_err(|e| store_err(op, it, e))? as u64;
            Vec::new()
        }
        PhysKind::BTreeIndexJoin { store, key } => {
            let probe = input();
            if let Some(p) = first_unsorted(probe, &[*key]) {
                return Err(property(op, it, format!("probe stream not sorted on its key at position {}", p + 1)));
            }
            let s = &ctx.stores[store];
            s.with_partition(instance, |map| {
                probe
                    .iter()
                    .filter_map(|t| {
                        map.get(&t[*key]).map(|row| {
                            let mut out = t.clone();
                            out.extend(row.iter().cloned());
                            out
                        })
                    })
                    .collect()
            })
        }
        PhysKind::HashJoin { on } => {
            let (l, r) = (input(), inputs.get(1).map(|a| a.as_slice()).unwrap_or(&[]));
            let mut table: HashMap<Vec<Value>, Vec<&Tuple>> = HashMap::new();
            for t in r {
                table.entry(on.iter().map(|(_, c)| t[*c].clone()).collect()).or_default().push(t);
            }
            let mut out = Vec::new();
            for t in l {
                let k: Vec<Value> = on.iter().map(|(c, _)| t[*c].clone()).collect();
                for m in table.get(&k).into_iter().flatten() {
                    let mut row = t.clone();
                    row.extend(m.iter().cloned());
                    out.push(row);
                }
            }
            out
        }
        PhysKind::CrossProduct => {
            let (l, r) = (input(), inputs.get(1).map(|a| a.as_slice()).unwrap_or(&[]));
            let mut out = Vec::with_capacity(l.len() * r.len());
            for a in l {
                for b in r {
                    let mut row = a.clone();
                    row.extend(b.iter().cloned());
                    out.push(row);
                }
            }
            out
        }
        PhysKind::PreclusteredGroupBy { keys, aggregate: name, over, input: agg_in }
        | PhysKind::HashGroupBy { keys, aggregate: name, over, input: agg_in } => {
            let rows = input();
            let preclustered = matches!(op.kind, PhysKind::PreclusteredGroupBy { .. });
            if preclustered {
                if let Some(p) = first_unsorted(rows, keys) {
                    return Err(property(op, it, format!("input not clustered on the group key at position {}", p + 1)));
                }
            }
            if ctx.deterministic && ctx.partial {
                return Ok(rows
                    .iter()
                    .map(|t| keys.iter().chain([over]).map(|&c| t[c].clone()).collect())
                    .collect());
            }
            let agg_in = if ctx.deterministic { AggInput::Raw } else { *agg_in };
            let agg = aggregate(ctx, op, name)?;
            let mut groups: Vec<(Vec<Value>, Vec<Value>)> = Vec::new();
            if preclustered {
                for t in rows {
                    let k: Vec<Value> = keys.iter().map(|&c| t[c].clone()).collect();
                    match groups.last_mut() {
                        Some((gk, vs)) if *gk == k => vs.push(t[*over].clone()),
                        _ => groups.push((k, vec![t[*over].clone()])),
                    }
                }
            } else {
                let mut m: BTreeMap<Vec<Value>, Vec<Value>> = BTreeMap::new();
                for t in rows {
                    m.entry(keys.iter().map(|&c| t[c].clone()).collect()).or_default().push(t[*over].clone());
                }
                groups = m.into_iter().collect();
            }
            let mut out = Vec::with_capacity(groups.len());
            for (mut k, vs) in groups {
                let acc = fold(agg.as_ref(), vs, agg_in, ctx.deterministic).map_err(|e| udf_err(name, e.0))?;
                if let Some(a) = acc {
                    k.push(a);
                    out.push(k);
                }
            }
            out
        }
        PhysKind::GroupAll { aggregate: name, over, input: agg_in, .. } => {
            let rows = input();
            if ctx.deterministic && ctx.partial {
                return Ok(rows.to_vec());
            }
            let agg = aggregate(ctx, op, name)?;
            let acc = if ctx.deterministic {
                // Reduce in the order of the producing rows, value last.
                let mut ordered: Vec<&Tuple> = rows.iter().collect();
                let rest = |t: &Tuple| -> Vec<Value> {
                    t.iter().enumerate().filter(|&(c, _)| c != *over).map(|(_, v)| v.clone()).chain([t[*over].clone()]).collect()
                };
                ordered.sort_by_cached_key(|t| rest(t));
                fold(agg.as_ref(), ordered.into_iter().map(|t| t[*over].clone()), AggInput::Raw, false)
            } else {
                fold(agg.as_ref(), rows.iter().map(|t| t[*over].clone()), *agg_in, false)
            }
            .map_err(|e| udf_err(name, e.0))?;
            acc.map(|a| vec![vec![a]]).unwrap_or_default()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physical::Props;
    use crate::udf::ListAppend;

    fn op(kind: PhysKind) -> PhysOp {
        PhysOp {
            id: 1,
            kind,
            instances: 1,
            inputs: Vec::new(),
            schema: Vec::new(),
            props: Props { part: crate::physical::Part::Any, sorted: None },
            tap: None,
        }
    }

    fn run(kind: PhysKind, rows: Vec<Tuple>, registry: &Registry) -> Result<Vec<Tuple>, EngineError> {
        let catalog = Catalog::new();
        let datasets = HashMap::new();
        let stores = HashMap::new();
        let ctx = OpCtx {
            registry,
            catalog: &catalog,
            datasets: &datasets,
            stores: &stores,
            iteration: 0,
            deterministic: false,
            partial: false,
            count_invocations: false,
        };
        run_instance(&op(kind), 0, &[Arc::new(rows)], &ctx, &mut InstanceStats::default())
    }

    #[test]
    fn preclustered_list_append() {
        let mut r = Registry::new();
        r.register_aggregate("combine", ListAppend);
        let rows = vec![
            vec![Value::Int(1), Value::str("a")],
            vec![Value::Int(1), Value::str("b")],
            vec![Value::Int(2), Value::str("c")],
        ];
        let kind = PhysKind::PreclusteredGroupBy { keys: vec![0], aggregate: "combine".into(), over: 1, input: AggInput::Raw };
        let out = run(kind, rows, &r).unwrap();
        assert_eq!(
            out,
            vec![
                vec![Value::Int(1), Value::list(vec![Value::str("a"), Value::str("b")])],
                vec![Value::Int(2), Value::list(vec![Value::str("c")])],
            ]
        );
    }

    #[test]
    fn preclustered_rejects_unsorted_input() {
        let r = Registry::new();
        let rows = vec![vec![Value::Int(2), Value::Int(1)], vec![Value::Int(1), Value::Int(1)]];
        let kind = PhysKind::PreclusteredGroupBy { keys: vec![0], aggregate: "sum".into(), over: 1, input: AggInput::Raw };
        assert!(matches!(run(kind, rows, &r), Err(EngineError::Property { .. })));
    }

    #[test]
    fn index_join_on_empty_probe_is_empty() {
        let r = Registry::new();
        let catalog = Catalog::new();
        let datasets = HashMap::new();
        let mut stores = HashMap::new();
        stores.insert("vertex".to_string(), VertexStore::new(0, 1));
        let ctx = OpCtx {
            registry: &r,
            catalog: &catalog,
            datasets: &datasets,
            stores: &stores,
            iteration: 0,
            deterministic: false,
            partial: false,
            count_invocations: false,
        };
        let o = op(PhysKind::BTreeIndexJoin { store: "vertex".into(), key: 0 });
        let out = run_instance(&o, 0, &[Arc::new(Vec::new())], &ctx, &mut InstanceStats::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn unnest_projects_elements() {
        let r = Registry::new();
        let msgs = Value::list(vec![
            Value::list(vec![Value::Int(3), Value::Float(0.5)]),
            Value::list(vec![Value::Int(4), Value::Float(0.25)]),
        ]);
        let kind = PhysKind::ProjectionFn { items: vec![Operand::Element(Some(0)), Operand::Element(Some(1))], unnest: Some(1) };
        let out = run(kind, vec![vec![Value::Int(1), msgs]], &r).unwrap();
        assert_eq!(out, vec![vec![Value::Int(3), Value::Float(0.5)], vec![Value::Int(4), Value::Float(0.25)]]);
    }

    #[test]
    fn udf_failure_names_the_operator() {
        let mut r = Registry::new();
        r.register_function("boom", |_: &[Value]| Err(crate::udf::UdfError::new("nope")));
        let kind = PhysKind::FunctionCall { udf: "boom".into(), args: vec![Operand::Column(0)], outputs: 1 };
        match run(kind, vec![vec![Value::Int(1)]], &r) {
            Err(EngineError::Udf { op: 1, udf, .. }) => assert_eq!(udf, "boom"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
