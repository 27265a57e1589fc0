//! Physical plans: partitioned operators joined by connectors.
//!
//! [`optimize`] lowers a [`LogicalPlan`] for a [`ClusterConfig`] and applies a
//! fixed sequence of rewrites: storage selection, shared scan, early
//! grouping, join selection, order property, aggregation tree and connector
//! choice. [`validate_plan`] re-derives every data property from scratch and
//! checks each operator's input requirements.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::logical::{Dag, Halt, LogicalKind, LogicalPlan, NodeId, Operand, Predicate, StateRef};

pub type OpId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectorChoice {
    /// Receivers merge sorted sender streams.
    HashMerge,
    /// Receivers sort what plain hash partitioning delivers.
    HashThenSort,
}

impl fmt::Display for ConnectorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConnectorChoice::HashMerge => "merge",
            ConnectorChoice::HashThenSort => "hash-sort",
        })
    }
}

impl std::str::FromStr for ConnectorChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "merge" | "hash-merge" | "hash_merge" => Ok(ConnectorChoice::HashMerge),
            "hash-sort" | "hash_then_sort" | "hash-then-sort" => Ok(ConnectorChoice::HashThenSort),
            other => Err(format!("unknown connector `{other}` (merge, hash-sort)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggTree {
    Flat,
    /// One layer of `ceil(sqrt(m))` aggregators over `m` machines.
    SqrtLayer,
    /// Layers of fan-in `k` until one aggregator remains.
    Fanin(usize),
}

impl fmt::Display for AggTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggTree::Flat => write!(f, "flat"),
            AggTree::SqrtLayer => write!(f, "sqrt"),
            AggTree::Fanin(k) => write!(f, "fanin{k}"),
        }
    }
}

impl std::str::FromStr for AggTree {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "flat" => Ok(AggTree::Flat),
            "sqrt" | "sqrt-layer" | "sqrt_layer" => Ok(AggTree::SqrtLayer),
            other => {
                let k = other
                    .strip_prefix("fanin")
                    .map(|k| k.trim_start_matches([':', '-', '=', '(']).trim_end_matches(')'))
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| format!("unknown aggregation tree `{other}` (flat, sqrt, fanin:K)"))?;
                Ok(AggTree::Fanin(k))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterConfig {
    pub workers: usize,
    pub partitions_per_worker: usize,
    pub connector: ConnectorChoice,
    pub agg_tree: AggTree,
    pub combiner: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            workers: 4,
            partitions_per_worker: 2,
            connector: ConnectorChoice::HashMerge,
            agg_tree: AggTree::Fanin(4),
            combiner: true,
        }
    }
}

impl ClusterConfig {
    pub fn partitions(&self) -> usize {
        self.workers * self.partitions_per_worker
    }

    pub fn check(&self) -> Result<(), String> {
        if self.workers == 0 {
            return Err("workers must be at least 1".into());
        }
        if self.partitions_per_worker == 0 {
            return Err("partitions per worker must be at least 1".into());
        }
        if let AggTree::Fanin(k) = self.agg_tree {
            if k < 2 {
                return Err(format!("aggregation fan-in must be at least 2, got {k}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ConnectorKind {
    OneToOne,
    MToNHash { key: Vec<usize> },
    /// Hash routing; each receiver merges its sorted sender streams.
    MToNHashMerge { key: Vec<usize>, sort: Vec<usize> },
    AggregateToOne,
    /// Every receiver gets every tuple.
    Broadcast,
    /// Sender `i` of `m` feeds receiver `floor(i * n / m)`.
    Gather,
}

impl ConnectorKind {
    pub fn crosses_partitions(&self) -> bool {
        !matches!(self, ConnectorKind::OneToOne)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Materialization {
    Pipelined,
    /// The sender finishes before receivers read.
    Blocking,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub id: usize,
    pub kind: ConnectorKind,
    pub materialization: Materialization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysInput {
    pub from: OpId,
    pub connector: Connector,
}

/// Whether an aggregate consumes raw values or partial accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggInput {
    Raw,
    Partial,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhysKind {
    FileScan { dataset: String },
    /// `replicated`: every instance reads the whole dataset.
    DatasetRead { name: String, replicated: bool },
    DatasetWrite { name: String },
    ProjectionFn { items: Vec<Operand>, unnest: Option<usize> },
    Selection { pred: Predicate },
    FunctionCall { udf: String, args: Vec<Operand>, outputs: usize },
    /// Sorts by `keys`, ties broken by the whole tuple.
    Sort { keys: Vec<usize> },
    BTreeBulkLoad { store: String, key: usize },
    /// Overwrites stored rows; rows holding a null leave the stored row as is.
    BTreeUpdate { store: String, key: usize },
    /// Probes the store with column `key`; emits probe row ++ stored row.
    BTreeIndexJoin { store: String, key: usize },
    HashJoin { on: Vec<(usize, usize)> },
    CrossProduct,
    PreclusteredGroupBy { keys: Vec<usize>, aggregate: String, over: usize, input: AggInput },
    HashGroupBy { keys: Vec<usize>, aggregate: String, over: usize, input: AggInput },
    /// `last`: the root of an aggregation tree.
    GroupAll { aggregate: String, over: usize, input: AggInput, last: bool },
}

impl PhysKind {
    pub fn name(&self) -> &'static str {
        match self {
            PhysKind::FileScan { .. } => "file_scan",
            PhysKind::DatasetRead { .. } => "dataset_read",
            PhysKind::DatasetWrite { .. } => "dataset_write",
            PhysKind::ProjectionFn { .. } => "projection_fn",
            PhysKind::Selection { .. } => "selection",
            PhysKind::FunctionCall { .. } => "function_call",
            PhysKind::Sort { .. } => "sort",
            PhysKind::BTreeBulkLoad { .. } => "btree_bulk_load",
            PhysKind::BTreeUpdate { .. } => "btree_update",
            PhysKind::BTreeIndexJoin { .. } => "btree_index_join",
            PhysKind::HashJoin { .. } => "hash_join",
            PhysKind::CrossProduct => "cross_product",
            PhysKind::PreclusteredGroupBy { .. } => "preclustered_group_by",
            PhysKind::HashGroupBy { .. } => "hash_group_by",
            PhysKind::GroupAll { .. } => "group_all",
        }
    }

    /// Whether the operator consumes its whole input before emitting.
    pub fn blocking(&self) -> bool {
        matches!(
            self,
            PhysKind::Sort { .. } | PhysKind::BTreeBulkLoad { .. } | PhysKind::HashGroupBy { .. } | PhysKind::GroupAll { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Hash(Vec<usize>),
    Any,
    /// Every instance holds all tuples.
    Replicated,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Props {
    pub part: Part,
    pub sorted: Option<Vec<usize>>,
}

impl Props {
    fn any() -> Props {
        Props { part: Part::Any, sorted: None }
    }

    fn is_sorted_on(&self, keys: &[usize]) -> bool {
        self.sorted.as_ref().is_some_and(|s| s.len() >= keys.len() && s[..keys.len()] == *keys)
    }
}

/// Whether tuples equal on `keys` always share an instance.
fn clustered_on(props: &Props, instances: usize, keys: &[usize]) -> bool {
    instances == 1 || matches!(&props.part, Part::Hash(k) if !k.is_empty() && k.iter().all(|c| keys.contains(c)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysOp {
    pub id: OpId,
    pub kind: PhysKind,
    pub instances: usize,
    pub inputs: Vec<PhysInput>,
    pub schema: Vec<String>,
    pub props: Props,
    /// Capture the input streams of this operator when tracing is on.
    pub tap: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetLayout {
    pub instances: usize,
    pub props: Props,
    /// Aggregate already applied per key before writing.
    pub grouped: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoreLayout {
    pub key: usize,
    pub instances: usize,
    pub schema: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalPlan {
    pub init: Vec<PhysOp>,
    pub step: Vec<PhysOp>,
    pub post: Vec<PhysOp>,
    pub halt: Option<Halt>,
    pub datasets: BTreeMap<String, DatasetLayout>,
    pub stores: BTreeMap<String, StoreLayout>,
    /// Connectors whose traffic is counted per iteration.
    pub metrics_taps: Vec<usize>,
    pub config: ClusterConfig,
    /// Rewrites that changed the plan, in application order.
    pub rewrites: Vec<String>,
    /// Logical nodes (per dataflow) without a physical counterpart.
    pub uncovered: Vec<String>,
}

impl PhysicalPlan {
    pub fn dags(&self) -> [(&'static str, &Vec<PhysOp>); 3] {
        [("init", &self.init), ("step", &self.step), ("post", &self.post)]
    }

    pub fn op(&self, id: OpId) -> Option<&PhysOp> {
        self.init.iter().chain(&self.step).chain(&self.post).find(|o| o.id == id)
    }

    pub fn connectors(&self) -> impl Iterator<Item = (&PhysOp, &PhysInput)> {
        self.init.iter().chain(&self.step).chain(&self.post).flat_map(|o| o.inputs.iter().map(move |i| (o, i)))
    }

    /// Ids of the many-to-many hash connectors in the step DAG.
    pub fn step_shuffles(&self) -> Vec<usize> {
        self.step
            .iter()
            .flat_map(|o| &o.inputs)
            .filter(|i| matches!(i.connector.kind, ConnectorKind::MToNHash { .. } | ConnectorKind::MToNHashMerge { .. }))
            .map(|i| i.connector.id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("invalid cluster configuration: {0}")]
    Config(String),
    #[error("cannot plan {what}: {msg}")]
    Unsupported { what: String, msg: String },
    #[error("plan violates its own requirements:\n{0}")]
    Invalid(String),
}

/// Properties at the receiving end of a connector.
pub fn receiver_props(sender: &Props, sender_instances: usize, kind: &ConnectorKind, receivers: usize) -> Props {
    match kind {
        ConnectorKind::OneToOne => sender.clone(),
        ConnectorKind::MToNHash { key } => Props { part: Part::Hash(key.clone()), sorted: None },
        ConnectorKind::MToNHashMerge { key, sort } => {
            Props { part: Part::Hash(key.clone()), sorted: sender.is_sorted_on(sort).then(|| sort.clone()) }
        }
        ConnectorKind::AggregateToOne => {
            Props { part: Part::Any, sorted: if sender_instances == 1 { sender.sorted.clone() } else { None } }
        }
        ConnectorKind::Broadcast => Props { part: Part::Replicated, sorted: None },
        ConnectorKind::Gather => Props {
            part: if receivers == 1 { Part::Any } else { sender.part.clone() },
            sorted: if sender_instances == receivers { sender.sorted.clone() } else { None },
        },
    }
}

fn map_cols(cols: &[usize], items: &[Operand]) -> Option<Vec<usize>> {
    cols.iter().map(|c| items.iter().position(|o| *o == Operand::Column(*c))).collect()
}

fn map_prefix(cols: &[usize], items: &[Operand]) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    for c in cols {
        match items.iter().position(|o| *o == Operand::Column(*c)) {
            Some(p) => out.push(p),
            None => break,
        }
    }
    (!out.is_empty()).then_some(out)
}

/// Output properties of an operator given its input properties.
pub fn derive_props(kind: &PhysKind, inputs: &[Props], layout: Option<&DatasetLayout>) -> Props {
    let first = inputs.first().cloned().unwrap_or_else(Props::any);
    match kind {
        PhysKind::FileScan { .. } => Props::any(),
        PhysKind::DatasetRead { replicated: true, .. } => Props { part: Part::Replicated, sorted: None },
        PhysKind::DatasetRead { .. } => layout.map(|l| l.props.clone()).unwrap_or_else(Props::any),
        PhysKind::ProjectionFn { items, .. } => Props {
            part: match &first.part {
                Part::Hash(k) => map_cols(k, items).map(Part::Hash).unwrap_or(Part::Any),
                other => other.clone(),
            },
            sorted: first.sorted.as_ref().and_then(|s| map_prefix(s, items)),
        },
        PhysKind::Selection { .. } | PhysKind::FunctionCall { .. } | PhysKind::BTreeIndexJoin { .. } => {
            if inputs.is_empty() {
                Props::any()
            } else {
                first
            }
        }
        PhysKind::Sort { keys } => Props { part: first.part, sorted: Some(keys.clone()) },
        PhysKind::PreclusteredGroupBy { keys, .. } | PhysKind::HashGroupBy { keys, .. } => {
            let out: Vec<usize> = (0..keys.len()).collect();
            let part = match &first.part {
                Part::Hash(k) => map_prefix_exact(k, keys).map(Part::Hash).unwrap_or(Part::Any),
                _ => Part::Any,
            };
            Props { part, sorted: Some(out) }
        }
        PhysKind::GroupAll { .. } => Props::any(),
        PhysKind::HashJoin { .. } => Props { part: first.part, sorted: None },
        PhysKind::CrossProduct => match first.part {
            Part::Replicated => Props::any(),
            _ => first,
        },
        PhysKind::DatasetWrite { .. } | PhysKind::BTreeBulkLoad { .. } | PhysKind::BTreeUpdate { .. } => Props::any(),
    }
}

fn map_prefix_exact(cols: &[usize], keys: &[usize]) -> Option<Vec<usize>> {
    cols.iter().map(|c| keys.iter().position(|k| k == c)).collect()
}

/// Where a consumer attaches: an operator and the connector to use.
#[derive(Clone, Debug)]
struct Port {
    from: OpId,
    connector: ConnectorKind,
    instances: usize,
    props: Props,
}

#[derive(Clone, Debug, PartialEq)]
enum Need {
    Hash(Vec<usize>, usize),
    Single,
}

struct Analysis {
    /// Stored dataset name per storage-selected dataset.
    stores: BTreeMap<String, StoreLayout>,
    /// Step node computing a store's latest rows.
    latest: HashMap<NodeId, String>,
    /// Step nodes replaced by store access.
    absorbed: BTreeSet<NodeId>,
    /// Datasets written already grouped, with their aggregate.
    grouped: BTreeMap<String, String>,
    /// Group-by nodes made redundant by grouped writes, mapped to their read.
    grouped_reads: HashMap<NodeId, NodeId>,
}

fn phase_dags(lp: &LogicalPlan) -> [&Dag; 3] {
    [&lp.init, &lp.step, &lp.post]
}

fn reads_of<'a>(lp: &'a LogicalPlan, name: &'a str) -> impl Iterator<Item = (usize, NodeId, StateRef)> + 'a {
    phase_dags(lp).into_iter().enumerate().flat_map(move |(d, dag)| {
        dag.nodes.iter().enumerate().filter_map(move |(i, n)| match &n.kind {
            LogicalKind::DatasetRead { name: m, state } if m == name => Some((d, i, *state)),
            _ => None,
        })
    })
}

fn writes_of<'a>(lp: &'a LogicalPlan, name: &'a str) -> impl Iterator<Item = (usize, NodeId, StateRef)> + 'a {
    phase_dags(lp).into_iter().enumerate().flat_map(move |(d, dag)| {
        dag.nodes.iter().enumerate().filter_map(move |(i, n)| match &n.kind {
            LogicalKind::DatasetWrite { name: m, state } if m == name => Some((d, i, *state)),
            _ => None,
        })
    })
}

/// Finds `max`-latest-state patterns over history reads and grouped reads.
fn analyze(lp: &LogicalPlan, partitions: usize) -> Analysis {
    let step = &lp.step;
    let mut a = Analysis {
        stores: BTreeMap::new(),
        latest: HashMap::new(),
        absorbed: BTreeSet::new(),
        grouped: BTreeMap::new(),
        grouped_reads: HashMap::new(),
    };
    // Storage selection.
    let mut candidates: BTreeMap<String, Vec<(NodeId, Vec<NodeId>)>> = BTreeMap::new();
    for (pi, p) in step.nodes.iter().enumerate() {
        let LogicalKind::Projection { items, unnest: None } = &p.kind else { continue };
        let j = p.inputs[0];
        let LogicalKind::InnerJoin { on } = &step.nodes[j].kind else { continue };
        let (g, r2) = (step.nodes[j].inputs[0], step.nodes[j].inputs[1]);
        let LogicalKind::GroupBy { keys, aggregate, over: 0 } = &step.nodes[g].kind else { continue };
        if aggregate != "max" || keys != &[1] {
            continue;
        }
        let r1 = step.nodes[g].inputs[0];
        let (LogicalKind::DatasetRead { name: x1, state: StateRef::History }, LogicalKind::DatasetRead { name: x2, state: StateRef::History }) =
            (&step.nodes[r1].kind, &step.nodes[r2].kind)
        else {
            continue;
        };
        if x1 != x2 {
            continue;
        }
        let width = step.nodes[r2].schema.len();
        let mut on_sorted = on.clone();
        on_sorted.sort();
        if on_sorted != vec![(0, 1), (1, 0)] {
            continue;
        }
        let mut expect = vec![Operand::Column(0)];
        expect.extend((2..width).map(|c| Operand::Column(2 + c)));
        if *items != expect {
            continue;
        }
        let single_use = |n: NodeId, by: NodeId| step.consumers(n) == vec![by];
        if !(single_use(r1, g) && single_use(g, j) && single_use(r2, j) && single_use(j, pi)) {
            continue;
        }
        candidates.entry(x1.clone()).or_default().push((pi, vec![r1, g, r2, j]));
    }
    for (x, pats) in candidates {
        let history: BTreeSet<NodeId> = pats.iter().flat_map(|(_, ns)| [ns[0], ns[2]]).collect();
        let other_reads = reads_of(lp, &x).any(|(d, i, _)| d != 1 || !history.contains(&i));
        let writes: Vec<StateRef> = writes_of(lp, &x).map(|(_, _, s)| s).collect();
        let ok_writes = !writes.is_empty() && writes.iter().all(|s| matches!(s, StateRef::Fixed(_) | StateRef::Next));
        if other_reads || !ok_writes {
            continue;
        }
        let schema = step.nodes[pats[0].0].schema.clone();
        a.stores.insert(x.clone(), StoreLayout { key: 0, instances: partitions, schema });
        for (p, ns) in pats {
            a.latest.insert(p, x.clone());
            a.absorbed.extend(ns);
        }
    }
    // Grouped writes: a dataset read only by a group-by on its first column.
    let mut names: BTreeSet<String> = BTreeSet::new();
    for dag in phase_dags(lp) {
        for n in &dag.nodes {
            if let LogicalKind::DatasetRead { name, state: StateRef::Current } = &n.kind {
                names.insert(name.clone());
            }
        }
    }
    for name in names {
        if a.stores.contains_key(&name) {
            continue;
        }
        let mut agg: Option<String> = None;
        let mut pairs = Vec::new();
        let mut ok = true;
        for (d, r, state) in reads_of(lp, &name) {
            let dag = phase_dags(lp)[d];
            let cons = dag.consumers(r);
            let good = d == 1 && state == StateRef::Current && dag.nodes[r].schema.len() == 2 && cons.len() == 1 && {
                match &dag.nodes[cons[0]].kind {
                    LogicalKind::GroupBy { keys, aggregate, over: 1 } if keys == &[0] => {
                        agg.get_or_insert_with(|| aggregate.clone()) == aggregate
                    }
                    _ => false,
                }
            };
            if !good {
                ok = false;
                break;
            }
            pairs.push((cons[0], r));
        }
        if ok && !pairs.is_empty() && writes_of(lp, &name).next().is_some() {
            a.grouped.insert(name.clone(), agg.expect("set with pairs"));
            a.grouped_reads.extend(pairs);
        }
    }
    a
}

/// Moves projections that keep only columns a function passes through in
/// front of that function, so they read the function's input directly.
fn rebase_projections(dag: &mut Dag) -> bool {
    let mut changed = false;
    for pi in 0..dag.nodes.len() {
        let LogicalKind::Projection { items, unnest: None } = dag.nodes[pi].kind.clone() else { continue };
        let mut items = items;
        let mut cur = dag.nodes[pi].inputs[0];
        let mut moved = false;
        loop {
            match dag.nodes[cur].kind.clone() {
                LogicalKind::Projection { items: inner, unnest: None } => {
                    let resolved: Option<Vec<Operand>> = items
                        .iter()
                        .map(|o| match o {
                            Operand::Column(c) => inner.get(*c).cloned(),
                            other => Some(other.clone()),
                        })
                        .collect();
                    match resolved {
                        Some(r) => {
                            items = r;
                            cur = dag.nodes[cur].inputs[0];
                        }
                        None => break,
                    }
                }
                LogicalKind::FunctionApply { .. } if !dag.nodes[cur].inputs.is_empty() => {
                    let input = dag.nodes[cur].inputs[0];
                    let width = dag.nodes[input].schema.len();
                    if items.iter().all(|o| !matches!(o, Operand::Column(c) if *c >= width)) {
                        cur = input;
                        moved = true;
                    } else {
                        break;
                    }
                }
                _ => break,
            }
        }
        if moved {
            dag.nodes[pi].kind = LogicalKind::Projection { items, unnest: None };
            dag.nodes[pi].inputs = vec![cur];
            changed = true;
        }
    }
    changed
}

struct Builder<'a> {
    cfg: &'a ClusterConfig,
    aggregates: &'a BTreeMap<String, bool>,
    ops: Vec<PhysOp>,
    next_op: OpId,
    next_conn: usize,
    datasets: BTreeMap<String, DatasetLayout>,
    stores: BTreeMap<String, StoreLayout>,
    scans: HashMap<String, Port>,
    reads: HashMap<(String, bool, usize), Port>,
    rewrites: BTreeSet<&'static str>,
}

impl Builder<'_> {
    fn p(&self) -> usize {
        self.cfg.partitions()
    }

    fn add(&mut self, kind: PhysKind, inputs: Vec<Port>, instances: usize, schema: Vec<String>) -> Port {
        let props_in: Vec<Props> = inputs.iter().map(|p| p.props.clone()).collect();
        let layout = match &kind {
            PhysKind::DatasetRead { name, .. } => self.datasets.get(name),
            _ => None,
        };
        let props = derive_props(&kind, &props_in, layout);
        let id = self.next_op;
        self.next_op += 1;
        let inputs = inputs
            .into_iter()
            .map(|p| {
                let materialization = if kind.blocking() || matches!(p.connector, ConnectorKind::MToNHashMerge { .. }) {
                    Materialization::Blocking
                } else {
                    Materialization::Pipelined
                };
                self.next_conn += 1;
                PhysInput { from: p.from, connector: Connector { id: self.next_conn, kind: p.connector, materialization } }
            })
            .collect();
        self.ops.push(PhysOp { id, kind, instances, inputs, schema, props: props.clone(), tap: None });
        Port { from: id, connector: ConnectorKind::OneToOne, instances, props }
    }

    fn schema_of(&self, port: &Port) -> Vec<String> {
        self.ops.iter().find(|o| o.id == port.from).map(|o| o.schema.clone()).unwrap_or_default()
    }

    /// Satisfies a partitioning and ordering need, adding a connector and a
    /// sort where the port does not already provide them.
    fn enforce(&mut self, port: Port, need: &Need, sorted: Option<&[usize]>) -> Port {
        let part_ok = match need {
            Need::Hash(k, n) => port.instances == *n && clustered_on(&port.props, port.instances, k),
            Need::Single => port.instances == 1,
        };
        let sort_ok = sorted.is_none_or(|k| port.props.is_sorted_on(k));
        if part_ok && sort_ok {
            return port;
        }
        let schema = self.schema_of(&port);
        let routed = if part_ok {
            port
        } else {
            let (connector, n) = match need {
                Need::Hash(k, n) => (ConnectorKind::MToNHash { key: k.clone() }, *n),
                Need::Single => (ConnectorKind::AggregateToOne, 1),
            };
            let props = receiver_props(&port.props, port.instances, &connector, n);
            Port { from: port.from, connector, instances: n, props }
        };
        match sorted {
            Some(k) if !routed.props.is_sorted_on(k) => {
                let n = routed.instances;
                self.add(PhysKind::Sort { keys: k.to_vec() }, vec![routed], n, schema)
            }
            _ => {
                if routed.connector == ConnectorKind::OneToOne {
                    routed
                } else {
                    // A connector needs a receiving operator.
                    let n = routed.instances;
                    let items = (0..schema.len()).map(Operand::Column).collect();
                    self.add(PhysKind::ProjectionFn { items, unnest: None }, vec![routed], n, schema)
                }
            }
        }
    }

    fn commutative(&self, aggregate: &str) -> bool {
        self.aggregates.get(aggregate).copied().unwrap_or(false)
    }

    /// Group-by on `keys` over column `over`, ending hash-partitioned on the
    /// keys across all partitions and sorted by them.
    fn group_by(&mut self, input: Port, keys: &[usize], aggregate: &str, over: usize, schema: Vec<String>) -> Port {
        let p = self.p();
        let out_keys: Vec<usize> = (0..keys.len()).collect();
        if input.instances == p && clustered_on(&input.props, input.instances, keys) {
            let input = if input.props.is_sorted_on(keys) {
                self.rewrites.insert("order_property");
                input
            } else {
                let s = self.schema_of(&input);
                let n = input.instances;
                self.add(PhysKind::Sort { keys: keys.to_vec() }, vec![input], n, s)
            };
            let n = input.instances;
            let kind = PhysKind::PreclusteredGroupBy { keys: keys.to_vec(), aggregate: aggregate.into(), over, input: AggInput::Raw };
            return self.add(kind, vec![input], n, schema);
        }
        let in_schema = self.schema_of(&input);
        let sender_sorted = |b: &mut Self, port: Port| -> Port {
            if port.props.is_sorted_on(keys) {
                port
            } else {
                let n = port.instances;
                b.add(PhysKind::Sort { keys: keys.to_vec() }, vec![port], n, in_schema.clone())
            }
        };
        let combine = self.cfg.combiner && self.commutative(aggregate);
        let (sender, shuffle_keys, over_col, agg_input) = if combine {
            self.rewrites.insert("early_grouping");
            let sorted = sender_sorted(self, input);
            let n = sorted.instances;
            let kind = PhysKind::PreclusteredGroupBy { keys: keys.to_vec(), aggregate: aggregate.into(), over, input: AggInput::Raw };
            let partial = self.add(kind, vec![sorted], n, schema.clone());
            (partial, out_keys.clone(), keys.len(), AggInput::Partial)
        } else {
            let s = match self.cfg.connector {
                ConnectorChoice::HashMerge => sender_sorted(self, input),
                ConnectorChoice::HashThenSort => input,
            };
            (s, keys.to_vec(), over, AggInput::Raw)
        };
        let sender_schema = self.schema_of(&sender);
        let receiver = match self.cfg.connector {
            ConnectorChoice::HashMerge => {
                let connector = ConnectorKind::MToNHashMerge { key: shuffle_keys.clone(), sort: shuffle_keys.clone() };
                let props = receiver_props(&sender.props, sender.instances, &connector, p);
                Port { from: sender.from, connector, instances: p, props }
            }
            ConnectorChoice::HashThenSort => {
                let connector = ConnectorKind::MToNHash { key: shuffle_keys.clone() };
                let props = receiver_props(&sender.props, sender.instances, &connector, p);
                let routed = Port { from: sender.from, connector, instances: p, props };
                self.add(PhysKind::Sort { keys: shuffle_keys.clone() }, vec![routed], p, sender_schema)
            }
        };
        self.rewrites.insert("connector_choice");
        let kind = PhysKind::PreclusteredGroupBy { keys: shuffle_keys, aggregate: aggregate.into(), over: over_col, input: agg_input };
        let out = self.add(kind, vec![receiver], p, schema);
        self.ops.last_mut().expect("just added").tap = Some("messages".into());
        out
    }

    /// Aggregates everything into one tuple through the configured tree.
    fn group_all(&mut self, input: Port, aggregate: &str, over: usize, schema: Vec<String>) -> Port {
        let w = self.cfg.workers;
        let mut port = input;
        let mut over = over;
        let in_schema = self.schema_of(&port);
        if in_schema.len() > 1 && over != 0 {
            // The aggregated column goes first; the rest of the row rides
            // along as the reduction order in deterministic mode.
            let n = port.instances;
            let order: Vec<usize> = std::iter::once(over).chain((0..in_schema.len()).filter(|&c| c != over)).collect();
            let items = order.iter().map(|&c| Operand::Column(c)).collect();
            let names = order.iter().map(|&c| in_schema[c].clone()).collect();
            port = self.add(PhysKind::ProjectionFn { items, unnest: None }, vec![port], n, names);
            over = 0;
        }
        let mut agg_input = AggInput::Raw;
        let partial = |b: &mut Self, port: Port, connector: ConnectorKind, n: usize, input: AggInput| -> Port {
            let props = receiver_props(&port.props, port.instances, &connector, n);
            let routed = Port { from: port.from, connector, instances: n, props };
            let kind = PhysKind::GroupAll { aggregate: aggregate.into(), over: 0, input, last: false };
            b.add(kind, vec![routed], n, schema.clone())
        };
        if port.instances > 1 && self.cfg.combiner && self.commutative(aggregate) {
            self.rewrites.insert("early_grouping");
            let n = port.instances;
            let kind = PhysKind::GroupAll { aggregate: aggregate.into(), over, input: AggInput::Raw, last: false };
            port = self.add(kind, vec![port], n, schema.clone());
            over = 0;
            agg_input = AggInput::Partial;
            if w > 1 && w < port.instances {
                port = partial(self, port, ConnectorKind::Gather, w, AggInput::Partial);
            }
        }
        if port.instances > 1 && self.commutative(aggregate) {
            let m = port.instances;
            let layers: Vec<usize> = match self.cfg.agg_tree {
                AggTree::Flat => vec![],
                AggTree::SqrtLayer => {
                    let k = (m as f64).sqrt().ceil() as usize;
                    if k > 1 && k < m {
                        vec![k]
                    } else {
                        vec![]
                    }
                }
                AggTree::Fanin(f) => {
                    let mut out = Vec::new();
                    let mut m = m;
                    while m > f {
                        m = m.div_ceil(f);
                        out.push(m);
                    }
                    out
                }
            };
            if !layers.is_empty() {
                self.rewrites.insert("aggregation_tree");
            }
            for n in layers {
                port = partial(self, port, ConnectorKind::Gather, n, agg_input);
                over = 0;
                agg_input = AggInput::Partial;
            }
        }
        let connector = if port.instances == 1 { ConnectorKind::OneToOne } else { ConnectorKind::AggregateToOne };
        let props = receiver_props(&port.props, port.instances, &connector, 1);
        let routed = Port { from: port.from, connector, instances: 1, props };
        let kind = PhysKind::GroupAll { aggregate: aggregate.into(), over, input: agg_input, last: true };
        self.add(kind, vec![routed], 1, schema)
    }

    fn scan(&mut self, dataset: &str, schema: Vec<String>) -> Port {
        if let Some(p) = self.scans.get(dataset) {
            self.rewrites.insert("shared_scan");
            return p.clone();
        }
        let p = self.p();
        let port = self.add(PhysKind::FileScan { dataset: dataset.into() }, vec![], p, schema);
        self.scans.insert(dataset.into(), port.clone());
        port
    }

    fn read(&mut self, name: &str, replicated_to: Option<usize>, schema: Vec<String>) -> Result<Port, PlanError> {
        let layout = self.datasets.get(name).cloned().ok_or_else(|| PlanError::Unsupported {
            what: format!("dataset `{name}`"),
            msg: "read without a writer".into(),
        })?;
        let (replicated, n) = match replicated_to {
            Some(n) if n != layout.instances || layout.instances > 1 => (true, n),
            _ => (false, layout.instances),
        };
        let key = (name.to_string(), replicated, n);
        if let Some(p) = self.reads.get(&key) {
            return Ok(p.clone());
        }
        let port = self.add(PhysKind::DatasetRead { name: name.into(), replicated }, vec![], n, schema);
        self.reads.insert(key, port.clone());
        Ok(port)
    }
}

fn is_single(port: &Port) -> bool {
    port.instances == 1
}

/// Columns a store write needs hash-partitioned and sorted, traced back
/// through operators that keep both properties.
fn store_demands(dag: &Dag, stores: &BTreeMap<String, StoreLayout>, absorbed: &BTreeSet<NodeId>, sort: bool) -> HashMap<NodeId, Vec<usize>> {
    let mut out = HashMap::new();
    for n in &dag.nodes {
        let LogicalKind::DatasetWrite { name, .. } = &n.kind else { continue };
        let Some(store) = stores.get(name) else { continue };
        let mut node = n.inputs[0];
        let mut cols = vec![store.key];
        loop {
            let cur = &dag.nodes[node];
            let next = match &cur.kind {
                LogicalKind::Projection { items, unnest: None } => {
                    let mapped: Option<Vec<usize>> = cols
                        .iter()
                        .map(|c| match items.get(*c) {
                            Some(Operand::Column(k)) => Some(*k),
                            _ => None,
                        })
                        .collect();
                    mapped.map(|m| (cur.inputs[0], m))
                }
                LogicalKind::Selection { .. } => Some((cur.inputs[0], cols.clone())),
                LogicalKind::FunctionApply { .. } if !cur.inputs.is_empty() => {
                    let input = cur.inputs[0];
                    let width = dag.nodes[input].schema.len();
                    cols.iter().all(|c| *c < width).then(|| (input, cols.clone()))
                }
                _ => None,
            };
            match next {
                Some((n2, c2)) if !absorbed.contains(&n2) && dag.consumers(n2).len() <= 2 => {
                    node = n2;
                    cols = c2;
                }
                _ => break,
            }
        }
        if sort || !out.contains_key(&node) {
            out.insert(node, cols);
        }
    }
    out
}

/// Whether a node's output is a single tuple stream (one instance).
fn single_nodes(dag: &Dag, single_datasets: &BTreeSet<String>) -> Vec<bool> {
    let mut out = vec![false; dag.nodes.len()];
    for (i, n) in dag.nodes.iter().enumerate() {
        out[i] = match &n.kind {
            LogicalKind::GroupAll { .. } => true,
            LogicalKind::FunctionApply { .. } if n.inputs.is_empty() => true,
            LogicalKind::DatasetRead { name, state } => *state != StateRef::Edb && single_datasets.contains(name),
            LogicalKind::DatasetWrite { .. } | LogicalKind::GroupBy { .. } => false,
            _ => n.inputs.iter().all(|&k| out[k]),
        };
    }
    out
}

pub fn optimize(lp: &LogicalPlan, cfg: &ClusterConfig) -> Result<PhysicalPlan, PlanError> {
    cfg.check().map_err(PlanError::Config)?;
    let p = cfg.partitions();
    let analysis = analyze(lp, p);
    let mut rewrites: Vec<String> = Vec::new();
    for s in analysis.stores.keys() {
        rewrites.push(format!("storage_selection({s})"));
    }
    let mut dags = [lp.init.clone(), lp.step.clone(), lp.post.clone()];
    let mut rebased = false;
    for d in &mut dags {
        rebased |= rebase_projections(d);
    }

    // Dataset layouts: single-tuple datasets stay on one instance, grouped
    // ones are hash-partitioned and sorted on the group key.
    let mut single: BTreeSet<String> = BTreeSet::new();
    let mut multi: BTreeSet<String> = BTreeSet::new();
    for _ in 0..2 {
        for dag in &dags {
            let flags = single_nodes(dag, &single);
            for n in &dag.nodes {
                if let LogicalKind::DatasetWrite { name, .. } = &n.kind {
                    if flags[n.inputs[0]] && !multi.contains(name) {
                        single.insert(name.clone());
                    } else {
                        single.remove(name);
                        multi.insert(name.clone());
                    }
                }
            }
        }
    }
    let mut datasets = BTreeMap::new();
    for dag in &dags {
        for n in &dag.nodes {
            let LogicalKind::DatasetWrite { name, .. } = &n.kind else { continue };
            if analysis.stores.contains_key(name) || datasets.contains_key(name) {
                continue;
            }
            let layout = if let Some(agg) = analysis.grouped.get(name) {
                DatasetLayout { instances: p, props: Props { part: Part::Hash(vec![0]), sorted: Some(vec![0]) }, grouped: Some(agg.clone()) }
            } else if single.contains(name) {
                DatasetLayout { instances: 1, props: Props::any(), grouped: None }
            } else {
                DatasetLayout { instances: p, props: Props { part: Part::Hash(vec![0]), sorted: None }, grouped: None }
            };
            datasets.insert(name.clone(), layout);
        }
    }
    for (name, agg) in &analysis.grouped {
        rewrites.push(format!("group_pushdown({name}, {agg})"));
    }

    let mut b = Builder {
        cfg,
        aggregates: &lp.aggregates,
        ops: Vec::new(),
        next_op: 1,
        next_conn: 0,
        datasets,
        stores: analysis.stores.clone(),
        scans: HashMap::new(),
        reads: HashMap::new(),
        rewrites: BTreeSet::new(),
    };
    if rebased {
        b.rewrites.insert("shared_scan");
    }
    let mut out: [Vec<PhysOp>; 3] = Default::default();
    let mut uncovered = Vec::new();
    for (d, dag) in dags.iter().enumerate() {
        b.scans.clear();
        b.reads.clear();
        let in_step = d == 1;
        let bulk = d == 0;
        let none = BTreeSet::new();
        let demands = store_demands(dag, &analysis.stores, if in_step { &analysis.absorbed } else { &none }, bulk);
        let mut low: Vec<Option<Port>> = vec![None; dag.nodes.len()];
        let live = live_nodes(dag);
        for (i, n) in dag.nodes.iter().enumerate() {
            if !live[i] {
                continue;
            }
            if in_step && analysis.absorbed.contains(&i) {
                continue;
            }
            let input = |k: usize| -> Result<Port, PlanError> {
                low[n.inputs[k]].clone().ok_or_else(|| PlanError::Unsupported {
                    what: format!("rule {}", n.rule),
                    msg: format!("input of `{}` has no physical form", n.schema.join(", ")),
                })
            };
            let schema = n.schema.clone();
            let port: Port = if in_step && analysis.latest.contains_key(&i) {
                // Stands for the store; only the index join below consumes it.
                Port { from: 0, connector: ConnectorKind::OneToOne, instances: p, props: Props::any() }
            } else if let (true, Some(&r)) = (in_step, analysis.grouped_reads.get(&i)) {
                low[r].clone().expect("read lowered first")
            } else {
                match &n.kind {
                    LogicalKind::DatasetRead { name, state } => match state {
                        StateRef::Edb => b.scan(name, schema),
                        StateRef::History => {
                            return Err(PlanError::Unsupported {
                                what: format!("rule {}", n.rule),
                                msg: format!("reading every state of `{name}` needs a latest-state pattern"),
                            })
                        }
                        _ => {
                            let consumers = dag.consumers(i);
                            let replicate = consumers.iter().find_map(|&c| match dag.nodes[c].kind {
                                LogicalKind::CrossProduct => {
                                    let other = dag.nodes[c].inputs.iter().find(|&&k| k != i).copied();
                                    other.and_then(|o| low[o].as_ref().map(|p| p.instances))
                                }
                                _ => None,
                            });
                            b.read(name, replicate.filter(|&n| n > 1), schema)?
                        }
                    },
                    LogicalKind::DatasetWrite { name, .. } => {
                        let src = input(0)?;
                        if let Some(store) = b.stores.get(name).cloned() {
                            let need = Need::Hash(vec![store.key], store.instances);
                            if bulk {
                                let port = b.enforce(src, &need, Some(&[store.key]));
                                let n = port.instances;
                                b.add(PhysKind::BTreeBulkLoad { store: name.clone(), key: store.key }, vec![port], n, schema)
                            } else {
                                let port = b.enforce(src, &need, None);
                                let n = port.instances;
                                b.add(PhysKind::BTreeUpdate { store: name.clone(), key: store.key }, vec![port], n, schema)
                            }
                        } else {
                            let layout = b.datasets[name].clone();
                            let port = if let Some(agg) = &layout.grouped {
                                let gschema = vec![schema[0].clone(), format!("{agg}<{}>", schema.get(1).cloned().unwrap_or_default())];
                                b.group_by(src, &[0], agg, 1, gschema)
                            } else if layout.instances == 1 {
                                b.enforce(src, &Need::Single, None)
                            } else {
                                b.enforce(src, &Need::Hash(vec![0], layout.instances), None)
                            };
                            let n = port.instances;
                            b.add(PhysKind::DatasetWrite { name: name.clone() }, vec![port], n, schema)
                        }
                    }
                    LogicalKind::Projection { items, unnest } => {
                        let src = input(0)?;
                        let n = src.instances;
                        b.add(PhysKind::ProjectionFn { items: items.clone(), unnest: *unnest }, vec![src], n, schema)
                    }
                    LogicalKind::Selection { pred } => {
                        let src = input(0)?;
                        let n = src.instances;
                        b.add(PhysKind::Selection { pred: pred.clone() }, vec![src], n, schema)
                    }
                    LogicalKind::FunctionApply { udf, args, outputs } => {
                        let kind = PhysKind::FunctionCall { udf: udf.clone(), args: args.clone(), outputs: *outputs };
                        if n.inputs.is_empty() {
                            b.add(kind, vec![], 1, schema)
                        } else {
                            let src = input(0)?;
                            let n = src.instances;
                            b.add(kind, vec![src], n, schema)
                        }
                    }
                    LogicalKind::GroupBy { keys, aggregate, over } => {
                        let src = input(0)?;
                        b.group_by(src, keys, aggregate, *over, schema)
                    }
                    LogicalKind::GroupAll { aggregate, over } => {
                        let src = input(0)?;
                        b.group_all(src, aggregate, *over, schema)
                    }
                    LogicalKind::InnerJoin { on } => {
                        let right_node = n.inputs[1];
                        if let (true, Some(store)) = (in_step, analysis.latest.get(&right_node)) {
                            let [(l, 0)] = on.as_slice() else {
                                return Err(PlanError::Unsupported {
                                    what: format!("rule {}", n.rule),
                                    msg: "store lookup must join on the stored key".into(),
                                });
                            };
                            let st = b.stores[store].clone();
                            b.rewrites.insert("join_selection");
                            let probe = b.enforce(input(0)?, &Need::Hash(vec![*l], st.instances), Some(&[*l]));
                            let n = probe.instances;
                            b.add(PhysKind::BTreeIndexJoin { store: store.clone(), key: *l }, vec![probe], n, schema)
                        } else {
                            let (lk, rk): (Vec<usize>, Vec<usize>) = on.iter().copied().unzip();
                            let (l, r) = (input(0)?, input(1)?);
                            let (l, r) = if is_single(&l) && is_single(&r) {
                                (l, r)
                            } else {
                                (b.enforce(l, &Need::Hash(lk, p), None), b.enforce(r, &Need::Hash(rk, p), None))
                            };
                            let n = l.instances;
                            b.add(PhysKind::HashJoin { on: on.clone() }, vec![l, r], n, schema)
                        }
                    }
                    LogicalKind::CrossProduct => {
                        let (l, r) = (input(0)?, input(1)?);
                        let (l, r) = match (l.instances, r.instances) {
                            (a, c) if a == c && (a == 1 || l.props.part == Part::Replicated || r.props.part == Part::Replicated) => (l, r),
                            (_, 1) => {
                                let n = l.instances;
                                let props = receiver_props(&r.props, 1, &ConnectorKind::Broadcast, n);
                                (l, Port { from: r.from, connector: ConnectorKind::Broadcast, instances: n, props })
                            }
                            (1, _) => {
                                let n = r.instances;
                                let props = receiver_props(&l.props, 1, &ConnectorKind::Broadcast, n);
                                (Port { from: l.from, connector: ConnectorKind::Broadcast, instances: n, props }, r)
                            }
                            _ => {
                                let n = l.instances;
                                let props = receiver_props(&r.props, r.instances, &ConnectorKind::Broadcast, n);
                                (l, Port { from: r.from, connector: ConnectorKind::Broadcast, instances: n, props })
                            }
                        };
                        let n = l.instances;
                        b.add(PhysKind::CrossProduct, vec![l, r], n, schema)
                    }
                }
            };
            let port = match demands.get(&i) {
                Some(cols) if !(in_step && analysis.latest.contains_key(&i)) => {
                    let need = Need::Hash(cols.clone(), p);
                    b.enforce(port, &need, if bulk { Some(cols) } else { None })
                }
                _ => port,
            };
            low[i] = Some(port);
        }
        for (i, n) in dag.nodes.iter().enumerate() {
            if live[i] && low[i].is_none() && !(in_step && analysis.absorbed.contains(&i)) {
                uncovered.push(format!("{} n{i} ({})", ["init", "step", "post"][d], n.rule));
            }
        }
        out[d] = std::mem::take(&mut b.ops);
    }
    // Rewrites in their fixed order.
    let order = ["shared_scan", "early_grouping", "join_selection", "order_property", "aggregation_tree", "connector_choice"];
    for r in order {
        if b.rewrites.contains(r) {
            let detail = match r {
                "aggregation_tree" => format!("aggregation_tree({})", cfg.agg_tree),
                "connector_choice" => format!(
                    "connector_choice({})",
                    match cfg.connector {
                        ConnectorChoice::HashMerge => "hash_merge",
                        ConnectorChoice::HashThenSort => "hash_then_sort",
                    }
                ),
                other => other.to_string(),
            };
            rewrites.push(detail);
        }
    }
    let [init, step, post] = out;
    let mut plan = PhysicalPlan {
        init,
        step,
        post,
        halt: lp.halt.clone(),
        datasets: b.datasets,
        stores: b.stores,
        metrics_taps: Vec::new(),
        config: cfg.clone(),
        rewrites,
        uncovered,
    };
    plan.metrics_taps =
        plan.connectors().filter(|(_, i)| i.connector.kind.crosses_partitions()).map(|(_, i)| i.connector.id).collect();
    let report = validate_plan(&plan);
    if !report.is_ok() {
        return Err(PlanError::Invalid(report.to_string()));
    }
    Ok(plan)
}

/// Nodes that reach a sink through consumers (dead ones are skipped).
fn live_nodes(dag: &Dag) -> Vec<bool> {
    let mut live = vec![false; dag.nodes.len()];
    for i in (0..dag.nodes.len()).rev() {
        let n = &dag.nodes[i];
        if matches!(n.kind, LogicalKind::DatasetWrite { .. }) || dag.consumers(i).iter().any(|&c| live[c]) {
            live[i] = true;
        }
    }
    live
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanViolationKind {
    Connectivity,
    Sortedness,
    Clustering,
    Layout,
    Coverage,
    Order,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanViolation {
    pub op: Option<OpId>,
    pub kind: PlanViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PlanReport {
    pub violations: Vec<PlanViolation>,
}

impl PlanReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: PlanViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            match v.op {
                Some(o) => writeln!(f, "O{o}: {:?}: {}", v.kind, v.message)?,
                None => writeln!(f, "{:?}: {}", v.kind, v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every operator and connector requirement, recomputing properties
/// from the operators alone.
pub fn validate_plan(pp: &PhysicalPlan) -> PlanReport {
    let mut v = Vec::new();
    let mut push = |op: Option<OpId>, kind: PlanViolationKind, message: String| v.push(PlanViolation { op, kind, message });
    for u in &pp.uncovered {
        push(None, PlanViolationKind::Coverage, format!("logical node {u} has no physical operator"));
    }
    for (_, ops) in pp.dags() {
        let mut props: HashMap<OpId, (Props, usize)> = HashMap::new();
        for op in ops {
            let mut ins = Vec::new();
            for input in &op.inputs {
                let Some((sp, sn)) = props.get(&input.from).cloned() else {
                    push(Some(op.id), PlanViolationKind::Order, format!("input O{} is not an earlier operator of this dataflow", input.from));
                    continue;
                };
                let kind = &input.connector.kind;
                match kind {
                    ConnectorKind::OneToOne if sn != op.instances => push(
                        Some(op.id),
                        PlanViolationKind::Connectivity,
                        format!("O{} has {sn} partitions but O{} has {}; a connector is missing", input.from, op.id, op.instances),
                    ),
                    ConnectorKind::AggregateToOne if op.instances != 1 => {
                        push(Some(op.id), PlanViolationKind::Connectivity, "aggregate connector into more than one partition".into())
                    }
                    ConnectorKind::Gather if op.instances > sn => {
                        push(Some(op.id), PlanViolationKind::Connectivity, "gather connector fans out".into())
                    }
                    ConnectorKind::MToNHashMerge { sort, .. } if !sp.is_sorted_on(sort) => push(
                        Some(op.id),
                        PlanViolationKind::Sortedness,
                        format!("merge connector c{} fed by unsorted O{}", input.connector.id, input.from),
                    ),
                    _ => {}
                }
                ins.push((receiver_props(&sp, sn, kind, op.instances), sn));
            }
            let first = ins.first().cloned();
            let need_sorted = |keys: &[usize]| first.as_ref().is_some_and(|(p, _)| p.is_sorted_on(keys));
            let need_clustered = |keys: &[usize]| first.as_ref().is_some_and(|(p, _)| clustered_on(p, op.instances, keys));
            match &op.kind {
                PhysKind::PreclusteredGroupBy { keys, .. } => {
                    if !need_sorted(keys) {
                        push(Some(op.id), PlanViolationKind::Sortedness, format!("pre-clustered group-by input not sorted on {keys:?}"));
                    }
                    let partial_side = op.inputs.first().is_some_and(|i| i.connector.kind == ConnectorKind::OneToOne)
                        && ops.iter().any(|c| {
                            c.inputs.iter().any(|i| {
                                i.from == op.id
                                    && matches!(i.connector.kind, ConnectorKind::MToNHash { .. } | ConnectorKind::MToNHashMerge { .. })
                            })
                        });
                    if !partial_side && !need_clustered(keys) {
                        push(Some(op.id), PlanViolationKind::Clustering, format!("group-by input not partitioned on {keys:?}"));
                    }
                }
                PhysKind::HashGroupBy { keys, .. } => {
                    if !need_clustered(keys) {
                        push(Some(op.id), PlanViolationKind::Clustering, format!("group-by input not partitioned on {keys:?}"));
                    }
                }
                PhysKind::BTreeIndexJoin { store, key } | PhysKind::BTreeBulkLoad { store, key } => {
                    if !need_sorted(&[*key]) {
                        push(Some(op.id), PlanViolationKind::Sortedness, format!("{} input not sorted on column {key}", op.kind.name()));
                    }
                    match pp.stores.get(store) {
                        Some(s) if s.instances == op.instances && need_clustered(&[*key]) => {}
                        _ => push(Some(op.id), PlanViolationKind::Clustering, format!("input not routed to the partitions of store `{store}`")),
                    }
                }
                PhysKind::BTreeUpdate { store, key } => match pp.stores.get(store) {
                    Some(s) if s.instances == op.instances && need_clustered(&[*key]) => {}
                    _ => push(Some(op.id), PlanViolationKind::Clustering, format!("input not routed to the partitions of store `{store}`")),
                },
                PhysKind::HashJoin { on } => {
                    if op.instances > 1 {
                        let l: Vec<usize> = on.iter().map(|p| p.0).collect();
                        let r: Vec<usize> = on.iter().map(|p| p.1).collect();
                        let ok = ins.len() == 2 && clustered_on(&ins[0].0, op.instances, &l) && clustered_on(&ins[1].0, op.instances, &r);
                        if !ok {
                            push(Some(op.id), PlanViolationKind::Clustering, "join inputs not co-partitioned".into());
                        }
                    }
                }
                PhysKind::CrossProduct => {
                    let replicated = ins.iter().any(|(p, n)| p.part == Part::Replicated || *n == 1);
                    if op.instances > 1 && !replicated {
                        push(Some(op.id), PlanViolationKind::Clustering, "cross product without a replicated side".into());
                    }
                }
                PhysKind::GroupAll { last: true, .. } if op.instances != 1 => {
                    push(Some(op.id), PlanViolationKind::Connectivity, "final aggregate must run on one partition".into())
                }
                PhysKind::DatasetWrite { name } => match pp.datasets.get(name) {
                    Some(l) => {
                        let ok = l.instances == op.instances
                            && match (&l.props.part, first.as_ref()) {
                                (Part::Hash(k), Some((p, _))) => clustered_on(p, op.instances, k),
                                _ => true,
                            }
                            && l.props.sorted.as_ref().is_none_or(|s| need_sorted(s));
                        if !ok {
                            push(Some(op.id), PlanViolationKind::Layout, format!("write does not match the layout of `{name}`"));
                        }
                    }
                    None => push(Some(op.id), PlanViolationKind::Layout, format!("no layout for dataset `{name}`")),
                },
                _ => {}
            }
            let in_props: Vec<Props> = ins.iter().map(|(p, _)| p.clone()).collect();
            let layout = match &op.kind {
                PhysKind::DatasetRead { name, .. } => pp.datasets.get(name),
                _ => None,
            };
            props.insert(op.id, (derive_props(&op.kind, &in_props, layout), op.instances));
        }
    }
    PlanReport { violations: v }
}

fn connector_text(c: &ConnectorKind, schema: &[String]) -> String {
    let cols = |k: &[usize]| k.iter().map(|&c| schema.get(c).cloned().unwrap_or_else(|| format!("#{c}"))).collect::<Vec<_>>().join(", ");
    match c {
        ConnectorKind::OneToOne => "one_to_one".into(),
        ConnectorKind::MToNHash { key } => format!("m_to_n_hash[{}]", cols(key)),
        ConnectorKind::MToNHashMerge { key, sort } => format!("m_to_n_hash_merge[{}; sort {}]", cols(key), cols(sort)),
        ConnectorKind::AggregateToOne => "aggregate_to_one".into(),
        ConnectorKind::Broadcast => "broadcast".into(),
        ConnectorKind::Gather => "gather".into(),
    }
}

fn op_text(op: &PhysOp, input_schema: &[String]) -> String {
    let col = |c: usize| input_schema.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
    let opnd = |o: &Operand| match o {
        Operand::Column(c) => col(*c),
        Operand::Iteration(0) => "@iter".into(),
        Operand::Iteration(k) => format!("@iter+{k}"),
        Operand::Const(_, Some(n)) => n.clone(),
        Operand::Const(v, None) => v.to_string(),
        Operand::Element(None) => "@elem".into(),
        Operand::Element(Some(i)) => format!("@elem.{i}"),
    };
    let list = |ks: &[usize]| ks.iter().map(|&k| col(k)).collect::<Vec<_>>().join(", ");
    let agg_in = |i: &AggInput| match i {
        AggInput::Raw => "",
        AggInput::Partial => " merge",
    };
    match &op.kind {
        PhysKind::FileScan { dataset } => format!("file_scan({dataset})"),
        PhysKind::DatasetRead { name, replicated } => {
            format!("dataset_read({name}){}", if *replicated { " replicated" } else { "" })
        }
        PhysKind::DatasetWrite { name } => format!("dataset_write({name})"),
        PhysKind::ProjectionFn { items, unnest } => {
            let items: Vec<String> = items.iter().map(opnd).collect();
            match unnest {
                Some(u) => format!("projection_fn unnest {} [{}]", col(*u), items.join(", ")),
                None => format!("projection_fn [{}]", items.join(", ")),
            }
        }
        PhysKind::Selection { pred } => format!("selection {} {} {}", opnd(&pred.lhs), pred.op.symbol(), opnd(&pred.rhs)),
        PhysKind::FunctionCall { udf, args, .. } => {
            format!("function_call {udf}({})", args.iter().map(opnd).collect::<Vec<_>>().join(", "))
        }
        PhysKind::Sort { keys } => format!("sort[{}]", list(keys)),
        PhysKind::BTreeBulkLoad { store, key } => format!("btree_bulk_load({store}) key {}", col(*key)),
        PhysKind::BTreeUpdate { store, key } => format!("btree_update({store}) key {}", col(*key)),
        PhysKind::BTreeIndexJoin { store, key } => format!("btree_index_join({store}) probe {}", col(*key)),
        PhysKind::HashJoin { on } => {
            format!("hash_join on {}", on.iter().map(|(l, r)| format!("{}={}", col(*l), r)).collect::<Vec<_>>().join(", "))
        }
        PhysKind::CrossProduct => "cross_product".into(),
        PhysKind::PreclusteredGroupBy { keys, aggregate, over, input } => {
            format!("preclustered_group_by[{}] {aggregate}<{}>{}", list(keys), col(*over), agg_in(input))
        }
        PhysKind::HashGroupBy { keys, aggregate, over, input } => {
            format!("hash_group_by[{}] {aggregate}<{}>{}", list(keys), col(*over), agg_in(input))
        }
        PhysKind::GroupAll { aggregate, over, input, last } => {
            format!("group_all {aggregate}<{}>{}{}", col(*over), agg_in(input), if *last { " final" } else { "" })
        }
    }
}

fn props_text(p: &Props, schema: &[String]) -> String {
    let cols = |k: &[usize]| k.iter().map(|&c| schema.get(c).cloned().unwrap_or_else(|| format!("#{c}"))).collect::<Vec<_>>().join(", ");
    let part = match &p.part {
        Part::Hash(k) => format!("hash[{}]", cols(k)),
        Part::Any => "any".into(),
        Part::Replicated => "replicated".into(),
    };
    match &p.sorted {
        Some(s) => format!("{part} sorted[{}]", cols(s)),
        None => part,
    }
}

impl fmt::Display for PhysicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "config: workers={} partitions_per_worker={} connector={} agg_tree={} combiner={}",
            c.workers,
            c.partitions_per_worker,
            match c.connector {
                ConnectorChoice::HashMerge => "hash_merge",
                ConnectorChoice::HashThenSort => "hash_then_sort",
            },
            c.agg_tree,
            if c.combiner { "on" } else { "off" }
        )?;
        for (name, ops) in self.dags() {
            if name == "post" && ops.is_empty() {
                continue;
            }
            writeln!(f, "{name}:")?;
            let schemas: HashMap<OpId, &Vec<String>> = ops.iter().map(|o| (o.id, &o.schema)).collect();
            for op in ops {
                let in_schema: Vec<String> =
                    op.inputs.iter().flat_map(|i| schemas.get(&i.from).map(|s| s.to_vec()).unwrap_or_default()).collect();
                let mut line = format!("  O{} {} x{}", op.id, op_text(op, &in_schema), op.instances);
                if !op.inputs.is_empty() {
                    let ins: Vec<String> = op
                        .inputs
                        .iter()
                        .map(|i| {
                            let s = schemas.get(&i.from).map(|s| s.as_slice()).unwrap_or(&[]);
                            let mat = match i.connector.materialization {
                                Materialization::Pipelined => "",
                                Materialization::Blocking => " blocking",
                            };
                            format!("O{} via c{} {}{mat}", i.from, i.connector.id, connector_text(&i.connector.kind, s))
                        })
                        .collect();
                    let _ = write!(line, " <- {}", ins.join(", "));
                }
                let _ = write!(line, " : ({}) {{{}}}", op.schema.join(", "), props_text(&op.props, &op.schema));
                if let Some(t) = &op.tap {
                    let _ = write!(line, " tap={t}");
                }
                writeln!(f, "{line}")?;
            }
        }
        for (name, s) in &self.stores {
            writeln!(f, "store {name}: btree key {} x{}", s.schema.get(s.key).cloned().unwrap_or_default(), s.instances)?;
        }
        for (name, l) in &self.datasets {
            let grouped = l.grouped.as_ref().map(|g| format!(" grouped {g}")).unwrap_or_default();
            writeln!(f, "dataset {name}: x{} {}{grouped}", l.instances, props_text(&l.props, &[]))?;
        }
        match &self.halt {
            Some(h) => writeln!(f, "halt: {h}")?,
            None => writeln!(f, "halt: none")?,
        }
        writeln!(f, "rewrites: {}", self.rewrites.join(", "))?;
        writeln!(f, "metrics: {}", self.metrics_taps.iter().map(|c| format!("c{c}")).collect::<Vec<_>>().join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logical::compile_program;
    use crate::tasks::{bgd, imru_program, pagerank, pregel_program, TaskBinding};

    fn pregel_lp() -> LogicalPlan {
        let t = TaskBinding::pagerank(&pagerank::PageRank::new(vec![0, 1], 3));
        compile_program(&t.program).unwrap()
    }

    fn imru_lp() -> LogicalPlan {
        let t = TaskBinding::bgd(&bgd::Bgd::new(bgd::BgdParams::new(2)));
        compile_program(&t.program).unwrap()
    }

    fn kinds(ops: &[PhysOp]) -> Vec<&'static str> {
        ops.iter().map(|o| o.kind.name()).collect()
    }

    #[test]
    fn pregel_default_plan() {
        let pp = optimize(&pregel_lp(), &ClusterConfig::default()).unwrap();
        assert_eq!(
            kinds(&pp.init),
            vec!["file_scan", "sort", "function_call", "projection_fn", "btree_bulk_load", "projection_fn", "preclustered_group_by", "dataset_write"]
        );
        assert_eq!(
            kinds(&pp.step),
            vec![
                "dataset_read",
                "btree_index_join",
                "function_call",
                "projection_fn",
                "selection",
                "projection_fn",
                "btree_update",
                "projection_fn",
                "sort",
                "preclustered_group_by",
                "preclustered_group_by",
                "dataset_write"
            ]
        );
        assert!(pp.stores.contains_key("vertex"));
        assert!(validate_plan(&pp).is_ok());
        let merge = pp.step.iter().flat_map(|o| &o.inputs).filter(|i| matches!(i.connector.kind, ConnectorKind::MToNHashMerge { .. })).count();
        assert_eq!(merge, 1);
    }

    #[test]
    fn pregel_hash_then_sort_adds_receiver_sort() {
        let cfg = ClusterConfig { connector: ConnectorChoice::HashThenSort, ..Default::default() };
        let pp = optimize(&pregel_lp(), &cfg).unwrap();
        let sorts = pp.step.iter().filter(|o| matches!(o.kind, PhysKind::Sort { .. })).count();
        assert_eq!(sorts, 2);
        assert!(pp.step.iter().flat_map(|o| &o.inputs).any(|i| matches!(i.connector.kind, ConnectorKind::MToNHash { .. })));
    }

    #[test]
    fn combiner_off_has_no_sender_group_by() {
        let cfg = ClusterConfig { combiner: false, ..Default::default() };
        let pp = optimize(&pregel_lp(), &cfg).unwrap();
        let groups = pp.step.iter().filter(|o| matches!(o.kind, PhysKind::PreclusteredGroupBy { .. })).count();
        assert_eq!(groups, 1);
        assert!(validate_plan(&pp).is_ok());
    }

    #[test]
    fn imru_sqrt_tree() {
        let cfg = ClusterConfig { workers: 9, partitions_per_worker: 4, agg_tree: AggTree::SqrtLayer, ..Default::default() };
        let pp = optimize(&imru_lp(), &cfg).unwrap();
        let layers: Vec<usize> = pp.step.iter().filter(|o| matches!(o.kind, PhysKind::GroupAll { .. })).map(|o| o.instances).collect();
        assert_eq!(layers, vec![36, 9, 3, 1]);
    }

    #[test]
    fn imru_fanin_and_flat() {
        let cfg = ClusterConfig { workers: 16, partitions_per_worker: 1, agg_tree: AggTree::Fanin(4), ..Default::default() };
        let pp = optimize(&imru_lp(), &cfg).unwrap();
        let layers: Vec<usize> = pp.step.iter().filter(|o| matches!(o.kind, PhysKind::GroupAll { .. })).map(|o| o.instances).collect();
        assert_eq!(layers, vec![16, 4, 1]);
        let cfg = ClusterConfig { agg_tree: AggTree::Flat, ..cfg };
        let pp = optimize(&imru_lp(), &cfg).unwrap();
        let layers: Vec<usize> = pp.step.iter().filter(|o| matches!(o.kind, PhysKind::GroupAll { .. })).map(|o| o.instances).collect();
        assert_eq!(layers, vec![16, 1]);
    }

    #[test]
    fn preclustered_after_plain_hash_is_rejected() {
        let mut pp = optimize(&pregel_lp(), &ClusterConfig::default()).unwrap();
        let gb = pp.step.iter().position(|o| o.tap.is_some()).unwrap();
        let sender = pp.step[gb].inputs[0].from;
        pp.step[gb].inputs[0].connector.kind = ConnectorKind::MToNHash { key: vec![0] };
        let s = pp.step.iter().position(|o| o.id == sender).unwrap();
        pp.step[s].kind = PhysKind::ProjectionFn { items: vec![Operand::Column(0), Operand::Column(1)], unnest: None };
        let report = validate_plan(&pp);
        assert!(report.has(PlanViolationKind::Sortedness), "{report}");
    }

    #[test]
    fn missing_connector_is_rejected() {
        let cfg = ClusterConfig { workers: 2, partitions_per_worker: 2, ..Default::default() };
        let mut pp = optimize(&imru_lp(), &cfg).unwrap();
        let last = pp.step.iter_mut().find(|o| matches!(o.kind, PhysKind::GroupAll { last: true, .. })).unwrap();
        last.inputs[0].connector.kind = ConnectorKind::OneToOne;
        assert!(validate_plan(&pp).has(PlanViolationKind::Connectivity));
    }

    #[test]
    fn templates_without_udfs_still_plan() {
        for p in [pregel_program(), imru_program()] {
            let lp = compile_program(&p).unwrap();
            let pp = optimize(&lp, &ClusterConfig::default()).unwrap();
            assert!(validate_plan(&pp).is_ok());
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = ClusterConfig { agg_tree: AggTree::Fanin(1), ..Default::default() };
        assert!(matches!(optimize(&imru_lp(), &cfg), Err(PlanError::Config(_))));
    }

    #[test]
    fn agg_tree_parses() {
        assert_eq!("fanin:4".parse::<AggTree>().unwrap(), AggTree::Fanin(4));
        assert_eq!("sqrt".parse::<AggTree>().unwrap(), AggTree::SqrtLayer);
        assert!("tree".parse::<AggTree>().is_err());
    }
}
