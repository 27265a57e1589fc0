//! Executes physical plans to a fixpoint on worker threads.
//!
//! Each worker thread plays one machine. Instance `i` of an operator with `n`
//! instances runs on worker `floor(i * W / n)`. Operators run stage by stage:
//! every instance of an operator finishes before its consumers start, and
//! each sender fills its own slot per receiver, so receiver streams never
//! depend on thread timing.

pub mod buffer;
pub mod connector;
pub mod ops;
pub mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;

pub use buffer::{SpillPolicy, TupleBuffer, SPILL_DIR_ENV};
pub use store::{StoreError, VertexStore};

use crate::dataset::Catalog;
use crate::logical::Halt;
use crate::physical::{validate_plan, ConnectorKind, PhysKind, PhysOp, PhysicalPlan};
use crate::udf::Registry;
use crate::value::{encode_tuple, tuple_encoded_len, Tuple, Value};
use ops::{InstanceStats, OpCtx};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("UDF `{udf}` failed in O{op} at iteration {iteration}: {message}")]
    Udf { op: usize, udf: String, iteration: i64, message: String },
    #[error("partition property violated in O{op} at iteration {iteration}: {message}")]
    Property { op: usize, iteration: i64, message: String },
    #[error("O{op} at iteration {iteration}: update for unknown vertex {key}")]
    UnknownVertex { op: usize, iteration: i64, key: String },
    #[error("missing input dataset `{0}`")]
    MissingInput(String),
    #[error("invalid plan:\n{0}")]
    InvalidPlan(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Iterations of the step dataflow at most.
    pub max_iters: usize,
    /// With a positive value, a guarded model also halts once it moves less
    /// than this distance (task distance UDF).
    pub float_tolerance: f64,
    /// Aggregates fold raw values in sorted order on one instance.
    pub deterministic: bool,
    pub spill: SpillPolicy,
    /// Directory receiving single-instance datasets after every iteration.
    pub run_dir: Option<PathBuf>,
    /// Record the input streams of tapped operators.
    pub capture_streams: bool,
    /// After halting, run one more step without committing it.
    pub shadow_step: bool,
    /// Record per-key function invocations.
    pub count_invocations: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iters: 1000,
            float_tolerance: 0.0,
            deterministic: false,
            spill: SpillPolicy::default(),
            run_dir: None,
            capture_streams: false,
            shadow_step: false,
            count_invocations: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ConnectorStats {
    pub tuples: u64,
    pub bytes: u64,
}

/// One line of the metrics log.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iter: i64,
    pub wall_ms: f64,
    pub connectors: BTreeMap<String, ConnectorStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_delta: Option<f64>,
}

impl IterationMetrics {
    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn connector(&self, id: usize) -> ConnectorStats {
        self.connectors.get(&format!("c{id}")).cloned().unwrap_or_default()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShadowReport {
    /// Tuples the extra step wrote to datasets.
    pub derived_tuples: u64,
    /// Stored rows the extra step would have changed.
    pub store_updates: u64,
    /// Every guarded dataset would keep its content.
    pub model_unchanged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapturedStream {
    pub iteration: i64,
    pub op: usize,
    pub tap: String,
    pub partitions: Vec<Vec<Tuple>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Invocations {
    pub totals: BTreeMap<String, u64>,
    /// Per step iteration: function → key → calls.
    pub per_iteration: Vec<BTreeMap<String, BTreeMap<Value, u64>>>,
    /// Per step iteration: keys present in the driving dataset.
    pub pending: Vec<BTreeSet<Value>>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// Step iterations executed.
    pub iterations: usize,
    /// The halt condition fired (as opposed to the iteration cap).
    pub halted: bool,
    pub init_metrics: IterationMetrics,
    pub metrics: Vec<IterationMetrics>,
    pub datasets: BTreeMap<String, Vec<Vec<Tuple>>>,
    pub stores: BTreeMap<String, Vec<Tuple>>,
    pub shadow: Option<ShadowReport>,
    pub streams: Vec<CapturedStream>,
    pub invocations: Invocations,
    /// Guarded models in the order they were committed.
    pub models: Vec<Tuple>,
    pub wall_ms: f64,
}

impl RunResult {
    pub fn dataset_rows(&self, name: &str) -> Vec<Tuple> {
        self.datasets.get(name).map(|p| p.iter().flatten().cloned().collect()).unwrap_or_default()
    }

    pub fn avg_iteration_ms(&self) -> f64 {
        if self.metrics.is_empty() {
            0.0
        } else {
            self.metrics.iter().map(|m| m.wall_ms).sum::<f64>() / self.metrics.len() as f64
        }
    }

    /// Traffic summed over every step iteration.
    pub fn connector_totals(&self) -> BTreeMap<String, ConnectorStats> {
        let mut out: BTreeMap<String, ConnectorStats> = BTreeMap::new();
        for m in &self.metrics {
            for (k, v) in &m.connectors {
                let e = out.entry(k.clone()).or_default();
                e.tuples += v.tuples;
                e.bytes += v.bytes;
            }
        }
        out
    }

    /// Summed traffic over the given connectors across all iterations.
    pub fn traffic(&self, connectors: &[usize]) -> ConnectorStats {
        let mut t = ConnectorStats::default();
        for m in &self.metrics {
            for &c in connectors {
                let s = m.connector(c);
                t.tuples += s.tuples;
                t.bytes += s.bytes;
            }
        }
        t
    }
}

/// Which worker runs instance `i` of `n`.
pub fn worker_of(i: usize, n: usize, workers: usize) -> usize {
    i * workers / n.max(1)
}

struct OpOutput {
    local: Vec<Arc<Vec<Tuple>>>,
    /// Connector id → `[sender][receiver]` slots.
    routed: HashMap<usize, Vec<Vec<Mutex<Option<TupleBuffer>>>>>,
}

struct DagRun {
    writes: BTreeMap<String, Vec<Vec<Tuple>>>,
    connectors: BTreeMap<String, ConnectorStats>,
    stats: InstanceStats,
    captured: Vec<CapturedStream>,
}

struct Engine<'a> {
    pp: &'a PhysicalPlan,
    catalog: &'a Catalog,
    registry: &'a Registry,
    opts: &'a RunOptions,
    datasets: HashMap<String, Vec<Vec<Tuple>>>,
    stores: HashMap<String, VertexStore>,
}

type InstanceResult = (usize, Vec<Tuple>, HashMap<usize, Vec<TupleBuffer>>, InstanceStats, Option<Vec<Tuple>>);

impl Engine<'_> {
    fn workers(&self) -> usize {
        self.pp.config.workers.max(1)
    }

    fn run_dag(&self, ops: &[PhysOp], iteration: i64) -> Result<DagRun, EngineError> {
        let mut consumers: HashMap<usize, Vec<(usize, &crate::physical::PhysInput)>> = HashMap::new();
        for op in ops {
            for input in &op.inputs {
                consumers.entry(input.from).or_default().push((op.instances, input));
            }
        }
        let instances: HashMap<usize, usize> = ops.iter().map(|o| (o.id, o.instances)).collect();
        let mut outputs: HashMap<usize, OpOutput> = HashMap::new();
        let mut run = DagRun {
            writes: BTreeMap::new(),
            connectors: BTreeMap::new(),
            stats: InstanceStats::default(),
            captured: Vec::new(),
        };
        for op in ops {
            let outs = consumers.get(&op.id).cloned().unwrap_or_default();
            let partial = outs.iter().any(|(_, i)| {
                matches!(i.connector.kind, ConnectorKind::MToNHash { .. } | ConnectorKind::MToNHashMerge { .. } | ConnectorKind::Gather | ConnectorKind::AggregateToOne)
            });
            let ctx = OpCtx {
                registry: self.registry,
                catalog: self.catalog,
                datasets: &self.datasets,
                stores: &self.stores,
                iteration,
                deterministic: self.opts.deterministic,
                partial,
                count_invocations: self.opts.count_invocations,
            };
            let capture = self.opts.capture_streams && op.tap.is_some();
            let run_one = |i: usize| -> Result<InstanceResult, EngineError> {
                let mut ins = Vec::with_capacity(op.inputs.len());
                for input in &op.inputs {
                    ins.push(self.gather(input, i, op, &instances, &outputs, iteration)?);
                }
                let captured = capture.then(|| ins.first().map(|a| a.as_ref().clone()).unwrap_or_default());
                let mut stats = InstanceStats::default();
                let rows = ops::run_instance(op, i, &ins, &ctx, &mut stats)?;
                let mut routed = HashMap::new();
                for (n, input) in &outs {
                    let kind = &input.connector.kind;
                    if matches!(kind, ConnectorKind::OneToOne | ConnectorKind::Broadcast) {
                        continue;
                    }
                    let mut slots: Vec<TupleBuffer> = (0..*n).map(|_| TupleBuffer::new(&self.opts.spill)).collect();
                    for t in &rows {
                        let r = connector::receiver(kind, t, i, op.instances, *n).expect("routed connector");
                        slots[r].push(t.clone()).map_err(|e| EngineError::Io(e.to_string()))?;
                    }
                    routed.insert(input.connector.id, slots);
                }
                Ok((i, rows, routed, stats, captured))
            };
            let results = self.parallel(op.instances, &run_one)?;
            let mut local: Vec<Arc<Vec<Tuple>>> = (0..op.instances).map(|_| Arc::new(Vec::new())).collect();
            let mut routed: HashMap<usize, Vec<Vec<Mutex<Option<TupleBuffer>>>>> = HashMap::new();
            let mut captured = vec![Vec::new(); if capture { op.instances } else { 0 }];
            for (i, rows, r, stats, cap) in results {
                for (cid, slots) in r {
                    let e = run.connectors.entry(format!("c{cid}")).or_default();
                    for s in &slots {
                        e.tuples += s.len() as u64;
                        e.bytes += s.bytes() as u64;
                    }
                    let senders = routed.entry(cid).or_insert_with(|| (0..op.instances).map(|_| Vec::new()).collect());
                    senders[i] = slots.into_iter().map(|s| Mutex::new(Some(s))).collect();
                }
                merge_stats(&mut run.stats, stats);
                if let Some(c) = cap {
                    captured[i] = c;
                }
                if let PhysKind::DatasetWrite { name } = &op.kind {
                    let parts = run.writes.entry(name.clone()).or_insert_with(|| vec![Vec::new(); op.instances]);
                    parts[i] = rows;
                    continue;
                }
                local[i] = Arc::new(rows);
            }
            for (receivers, input) in &outs {
                if input.connector.kind == ConnectorKind::Broadcast {
                    let e = run.connectors.entry(format!("c{}", input.connector.id)).or_default();
                    for rows in &local {
                        e.tuples += (rows.len() * receivers) as u64;
                        e.bytes += (rows.iter().map(|t| tuple_encoded_len(t)).sum::<usize>() * receivers) as u64;
                    }
                }
            }
            if capture {
                run.captured.push(CapturedStream {
                    iteration,
                    op: op.id,
                    tap: op.tap.clone().unwrap_or_default(),
                    partitions: captured,
                });
            }
            outputs.insert(op.id, OpOutput { local, routed });
        }
        Ok(run)
    }

    /// Assembles the stream instance `i` of `op` reads over one input.
    fn gather(
        &self,
        input: &crate::physical::PhysInput,
        i: usize,
        op: &PhysOp,
        instances: &HashMap<usize, usize>,
        outputs: &HashMap<usize, OpOutput>,
        iteration: i64,
    ) -> Result<Arc<Vec<Tuple>>, EngineError> {
        let src = outputs.get(&input.from).ok_or_else(|| EngineError::InvalidPlan(format!("O{} reads O{} before it runs", op.id, input.from)))?;
        let m = instances.get(&input.from).copied().unwrap_or(1);
        let take = |s: usize| -> Result<Vec<Tuple>, EngineError> {
            let slot = src.routed.get(&input.connector.id).and_then(|senders| senders.get(s)).and_then(|r| r.get(i));
            match slot.and_then(|m| m.lock().expect("slot lock").take()) {
                Some(b) => b.into_vec().map_err(|e| EngineError::Io(e.to_string())),
                None => Ok(Vec::new()),
            }
        };
        Ok(match &input.connector.kind {
            ConnectorKind::OneToOne => src.local.get(i).cloned().unwrap_or_default(),
            ConnectorKind::Broadcast => Arc::new(src.local.iter().flat_map(|l| l.iter().cloned()).collect()),
            ConnectorKind::MToNHashMerge { sort, .. } => {
                let mut streams = Vec::with_capacity(m);
                for s in 0..m {
                    let rows = take(s)?;
                    if let Some(p) = connector::first_unsorted(&rows, sort) {
                        return Err(EngineError::Property {
                            op: op.id,
                            iteration,
                            message: format!("merge connector c{} got an unsorted run from sender {s} at position {}", input.connector.id, p + 1),
                        });
                    }
                    streams.push(rows);
                }
                Arc::new(connector::merge_sorted(streams, sort))
            }
            _ => {
                let mut all = Vec::new();
                for s in 0..m {
                    all.extend(take(s)?);
                }
                Arc::new(all)
            }
        })
    }

    /// Runs every instance on its worker's thread.
    fn parallel<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> Result<T, EngineError> + Sync)) -> Result<Vec<T>, EngineError> {
        let w = self.workers();
        let mut per_worker: Vec<Vec<usize>> = vec![Vec::new(); w];
        for i in 0..n {
            per_worker[worker_of(i, n, w)].push(i);
        }
        per_worker.retain(|v| !v.is_empty());
        if per_worker.len() <= 1 {
            return (0..n).map(f).collect();
        }
        let results: Vec<Result<Vec<T>, EngineError>> = std::thread::scope(|s| {
            let handles: Vec<_> = per_worker
                .iter()
                .map(|mine| s.spawn(move || mine.iter().map(|&i| f(i)).collect::<Result<Vec<T>, EngineError>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });
        let mut out = Vec::with_capacity(n);
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn commit(&mut self, writes: BTreeMap<String, Vec<Vec<Tuple>>>, keep_if_empty: &BTreeSet<String>) {
        for (name, parts) in writes {
            let empty = parts.iter().all(Vec::is_empty);
            if empty && keep_if_empty.contains(&name) {
                continue;
            }
            self.datasets.insert(name, parts);
        }
    }

    fn persist(&self) -> Result<(), EngineError> {
        let Some(dir) = &self.opts.run_dir else { return Ok(()) };
        let io = |e: std::io::Error| EngineError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        for (name, layout) in &self.pp.datasets {
            if layout.instances != 1 {
                continue;
            }
            let mut buf = Vec::new();
            for t in self.datasets.get(name).into_iter().flatten().flatten() {
                encode_tuple(&mut buf, t).map_err(io)?;
            }
            std::fs::write(dir.join(format!("{name}.blob")), buf).map_err(io)?;
        }
        Ok(())
    }
}

fn merge_stats(into: &mut InstanceStats, from: InstanceStats) {
    for (f, keys) in from.calls {
        let e = into.calls.entry(f).or_default();
        for (k, c) in keys {
            *e.entry(k).or_default() += c;
        }
    }
    for (f, c) in from.totals {
        *into.totals.entry(f).or_default() += c;
    }
    into.store_updates += from.store_updates;
}

fn count(parts: &[Vec<Tuple>]) -> u64 {
    parts.iter().map(|p| p.len() as u64).sum()
}

/// Runs the initial dataflow once, then the step dataflow until the halt
/// condition fires or `max_iters` is reached, then the final dataflow.
pub fn execute(pp: &PhysicalPlan, catalog: &Catalog, registry: &Registry, opts: &RunOptions) -> Result<RunResult, EngineError> {
    let report = validate_plan(pp);
    if !report.is_ok() {
        return Err(EngineError::InvalidPlan(report.to_string()));
    }
    for op in pp.init.iter().chain(&pp.step).chain(&pp.post) {
        if let PhysKind::FileScan { dataset } = &op.kind {
            if !catalog.contains_key(dataset) {
                return Err(EngineError::MissingInput(dataset.clone()));
            }
        }
    }
    let start = Instant::now();
    let mut engine = Engine {
        pp,
        catalog,
        registry,
        opts,
        datasets: pp.datasets.iter().map(|(n, l)| (n.clone(), vec![Vec::new(); l.instances])).collect(),
        stores: pp.stores.iter().map(|(n, s)| (n.clone(), VertexStore::new(s.key, s.instances))).collect(),
    };
    let (driving, guarded): (Option<String>, BTreeSet<String>) = match &pp.halt {
        Some(Halt::DatasetEmpty(d)) => (Some(d.clone()), BTreeSet::new()),
        Some(Halt::FunctionUnchanged { dataset, .. }) => (None, [dataset.clone()].into()),
        None => (None, BTreeSet::new()),
    };
    let model_of = |e: &Engine<'_>| -> Option<Tuple> {
        guarded.iter().next().and_then(|d| e.datasets.get(d)).and_then(|p| p.iter().flatten().next().cloned())
    };

    let t0 = Instant::now();
    let init = engine.run_dag(&pp.init, 0)?;
    let mut invocations = Invocations::default();
    for (f, c) in &init.stats.totals {
        *invocations.totals.entry(f.clone()).or_default() += c;
    }
    let init_metrics = IterationMetrics {
        iter: -1,
        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        connectors: init.connectors,
        active_count: None,
        model_delta: None,
    };
    engine.commit(init.writes, &BTreeSet::new());
    engine.persist()?;
    let mut streams = init.captured;
    let mut models: Vec<Tuple> = model_of(&engine).into_iter().collect();

    let mut metrics = Vec::new();
    let mut halted = pp.halt.is_none() || pp.step.is_empty();
    let mut k = 0usize;
    while !halted && k < opts.max_iters {
        let t = Instant::now();
        let iteration = k as i64;
        let active = driving.as_ref().map(|d| engine.datasets.get(d).map_or(0, |p| count(p)));
        if opts.count_invocations {
            let keys = driving
                .as_ref()
                .and_then(|d| engine.datasets.get(d))
                .map(|p| p.iter().flatten().filter_map(|t| t.first().cloned()).collect())
                .unwrap_or_default();
            invocations.pending.push(keys);
        }
        let before = model_of(&engine);
        let run = engine.run_dag(&pp.step, iteration)?;
        halted = match &pp.halt {
            Some(Halt::DatasetEmpty(d)) => run.writes.get(d).is_none_or(|p| count(p) == 0),
            Some(Halt::FunctionUnchanged { dataset, .. }) => run.writes.get(dataset).is_none_or(|p| count(p) == 0),
            None => true,
        };
        for (f, c) in &run.stats.totals {
            *invocations.totals.entry(f.clone()).or_default() += c;
        }
        if opts.count_invocations {
            invocations.per_iteration.push(run.stats.calls.clone());
        }
        streams.extend(run.captured);
        engine.commit(run.writes, &guarded);
        let after = model_of(&engine);
        let model_delta = match (&before, &after) {
            (Some(b), Some(a)) if !guarded.is_empty() => {
                Some(registry.distance(&b[0], &a[0]).unwrap_or(if registry.values_equal(&b[0], &a[0]) { 0.0 } else { f64::NAN }))
            }
            _ => None,
        };
        if !halted && opts.float_tolerance > 0.0 && model_delta.is_some_and(|d| d <= opts.float_tolerance) {
            halted = true;
        }
        if !guarded.is_empty() && before != after {
            models.extend(after.clone());
        }
        engine.persist()?;
        metrics.push(IterationMetrics {
            iter: iteration,
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
            connectors: run.connectors,
            active_count: active,
            model_delta,
        });
        k += 1;
    }

    let shadow = if opts.shadow_step && halted && !pp.step.is_empty() {
        let snapshots: HashMap<String, Vec<BTreeMap<Value, Tuple>>> =
            engine.stores.iter().map(|(n, s)| (n.clone(), s.snapshot())).collect();
        let before = model_of(&engine);
        let run = engine.run_dag(&pp.step, k as i64)?;
        let derived: u64 = run.writes.values().map(|p| count(p)).sum();
        let unchanged = guarded.iter().all(|d| run.writes.get(d).is_none_or(|p| count(p) == 0)) && before == model_of(&engine);
        for (n, s) in snapshots {
            engine.stores[&n].restore(s);
        }
        Some(ShadowReport { derived_tuples: derived, store_updates: run.stats.store_updates, model_unchanged: unchanged })
    } else {
        None
    };

    if !pp.post.is_empty() {
        let run = engine.run_dag(&pp.post, k as i64)?;
        engine.commit(run.writes, &BTreeSet::new());
    }
    Ok(RunResult {
        iterations: k,
        halted,
        init_metrics,
        metrics,
        datasets: engine.datasets.into_iter().collect(),
        stores: engine.stores.iter().map(|(n, s)| (n.clone(), s.rows())).collect(),
        shadow,
        streams,
        invocations,
        models,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical::compile_program;
    use crate::physical::{optimize, ClusterConfig};
    use crate::tasks::ingest::graph_dataset;
    use crate::tasks::pagerank::{rank_of, PageRank};
    use crate::tasks::{bgd, TaskBinding};

    fn pagerank(graph: &[(i64, Vec<i64>)], supersteps: u32, cfg: &ClusterConfig) -> RunResult {
        let pr = PageRank::new(graph.iter().map(|(v, _)| *v).collect(), supersteps);
        let t = TaskBinding::pagerank(&pr);
        let pp = optimize(&compile_program(&t.program).unwrap(), cfg).unwrap();
        let mut catalog = Catalog::new();
        catalog.insert("data".into(), graph_dataset(graph, cfg.partitions()));
        let opts = RunOptions { shadow_step: true, count_invocations: true, ..Default::default() };
        execute(&pp, &catalog, &t.registry, &opts).unwrap()
    }

    fn ranks(r: &RunResult) -> Vec<f64> {
        r.stores["vertex"].iter().map(|row| rank_of(&row[1]).unwrap()).collect()
    }

    #[test]
    fn two_cycle_ranks_are_half() {
        let r = pagerank(&[(0, vec![1]), (1, vec![0])], 30, &ClusterConfig::default());
        assert!(r.halted);
        assert_eq!(r.iterations, 31);
        for x in ranks(&r) {
            assert!((x - 0.5).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn three_cycle_ranks_are_a_third() {
        let g = vec![(0, vec![1]), (1, vec![2]), (2, vec![0])];
        let r = pagerank(&g, 30, &ClusterConfig { workers: 2, ..Default::default() });
        for x in ranks(&r) {
            assert!((x - 1.0 / 3.0).abs() < 1e-12, "{x}");
        }
        let shadow = r.shadow.unwrap();
        assert_eq!(shadow.derived_tuples, 0);
        assert_eq!(shadow.store_updates, 0);
    }

    #[test]
    fn update_runs_once_per_pending_vertex() {
        let g = vec![(0, vec![1, 2]), (1, vec![2]), (2, vec![]), (3, vec![0])];
        let r = pagerank(&g, 5, &ClusterConfig::default());
        assert_eq!(r.invocations.per_iteration.len(), r.iterations);
        for (calls, pending) in r.invocations.per_iteration.iter().zip(&r.invocations.pending) {
            let upd = &calls["update"];
            assert!(upd.values().all(|&c| c == 1));
            assert_eq!(upd.keys().cloned().collect::<BTreeSet<_>>(), *pending);
        }
    }

    #[test]
    fn identity_update_halts_after_one_iteration() {
        let b = bgd::Bgd::new(bgd::BgdParams::new(2));
        let mut reg = b.registry();
        reg.register_function("update", |a: &[Value]| Ok(vec![a[1].clone()]));
        let t = TaskBinding::new(crate::tasks::imru_program(), reg);
        let cfg = ClusterConfig::default();
        let pp = optimize(&compile_program(&t.program).unwrap(), &cfg).unwrap();
        let pts = vec![bgd::record(1.0, vec![(0, 1.0)]), bgd::record(-1.0, vec![(1, 2.0)])];
        let rows = pts.into_iter().enumerate().map(|(i, r)| vec![Value::Int(i as i64), r]).collect();
        let mut catalog = Catalog::new();
        catalog.insert(
            "training_data".into(),
            crate::dataset::PartitionedDataset::round_robin("training_data", &["Id", "Record"], rows, cfg.partitions()),
        );
        let opts = RunOptions { shadow_step: true, ..Default::default() };
        let r = execute(&pp, &catalog, &t.registry, &opts).unwrap();
        assert!(r.halted);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.dataset_rows("model"), vec![vec![Value::vector(vec![0.0, 0.0])]]);
        assert!(r.shadow.unwrap().model_unchanged);
    }

    #[test]
    fn spilling_does_not_change_results() {
        let g: Vec<(i64, Vec<i64>)> = (0..40).map(|v| (v, vec![(v + 1) % 40, (v * 7) % 40])).collect();
        let base = pagerank(&g, 6, &ClusterConfig::default());
        let pr = PageRank::new((0..40).collect(), 6);
        let t = TaskBinding::pagerank(&pr);
        let cfg = ClusterConfig::default();
        let pp = optimize(&compile_program(&t.program).unwrap(), &cfg).unwrap();
        let mut catalog = Catalog::new();
        catalog.insert("data".into(), graph_dataset(&g, cfg.partitions()));
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions { spill: SpillPolicy { budget: 64, dir: Some(dir.path().into()) }, ..Default::default() };
        let spilled = execute(&pp, &catalog, &t.registry, &opts).unwrap();
        assert_eq!(ranks(&base), ranks(&spilled));
    }

    #[test]
    fn missing_input_is_reported() {
        let pr = PageRank::new(vec![0], 2);
        let t = TaskBinding::pagerank(&pr);
        let pp = optimize(&compile_program(&t.program).unwrap(), &ClusterConfig::default()).unwrap();
        let err = execute(&pp, &Catalog::new(), &t.registry, &RunOptions::default()).unwrap_err();
        assert_eq!(err, EngineError::MissingInput("data".into()));
    }

    #[test]
    fn placement_spreads_instances() {
        let w: Vec<usize> = (0..8).map(|i| worker_of(i, 8, 4)).collect();
        assert_eq!(w, vec![0, 0, 1, 1, 2, 2, 3, 3]);
        assert_eq!(worker_of(0, 1, 4), 0);
    }
}
