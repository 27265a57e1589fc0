//! Logical plans in extended relational algebra.
//!
//! A plan has three dataflows: `init` runs once, `step` runs once per
//! iteration and `post` runs after the fixpoint. Temporal predicates that
//! cross an iteration boundary become datasets; predicates derived and
//! consumed inside one dataflow are wired directly from producer to
//! consumer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use crate::datalog::analysis::{predicate_info, PredicateInfo};
use crate::datalog::{literal_order, Atom, AtomRole, CmpOp, Program, Rule, Term};
use crate::strat::{check, Strata};
use crate::value::Value;

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Column(usize),
    /// Current iteration number plus an offset.
    Iteration(i64),
    /// A constant, with the declared name it came from, if any.
    Const(Value, Option<String>),
    /// Inside an unnesting projection: the current element, or one field of it.
    Element(Option<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predicate {
    pub op: CmpOp,
    pub lhs: Operand,
    pub rhs: Operand,
}

/// Which state of a dataset an access refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateRef {
    /// Input data.
    Edb,
    /// The state of the running iteration.
    Current,
    /// The state the running iteration produces.
    Next,
    /// A fixed state, written by the init dataflow.
    Fixed(i64),
    /// Every state so far, with the state number as the first column.
    History,
    /// A predicate without states.
    Plain,
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateRef::Edb => write!(f, "edb"),
            StateRef::Current => write!(f, "current"),
            StateRef::Next => write!(f, "next"),
            StateRef::Fixed(k) => write!(f, "state {k}"),
            StateRef::History => write!(f, "history"),
            StateRef::Plain => write!(f, "plain"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LogicalKind {
    DatasetRead { name: String, state: StateRef },
    DatasetWrite { name: String, state: StateRef },
    CrossProduct,
    /// Pairs of (left column, right column).
    InnerJoin { on: Vec<(usize, usize)> },
    Projection { items: Vec<Operand>, unnest: Option<usize> },
    Selection { pred: Predicate },
    GroupBy { keys: Vec<usize>, aggregate: String, over: usize },
    GroupAll { aggregate: String, over: usize },
    /// Appends the function's outputs to each input row. Without an input it
    /// emits a single row.
    FunctionApply { udf: String, args: Vec<Operand>, outputs: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicalNode {
    pub kind: LogicalKind,
    pub inputs: Vec<NodeId>,
    pub schema: Vec<String>,
    /// Label of the rule the node was compiled from.
    pub rule: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dag {
    pub nodes: Vec<LogicalNode>,
}

impl Dag {
    fn add(&mut self, kind: LogicalKind, inputs: Vec<NodeId>, schema: Vec<String>, rule: &str) -> NodeId {
        self.nodes.push(LogicalNode { kind, inputs, schema, rule: rule.to_string() });
        self.nodes.len() - 1
    }

    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&n| self.nodes[n].inputs.contains(&id)).collect()
    }

    pub fn sinks(&self) -> Vec<NodeId> {
        let used: BTreeSet<NodeId> = self.nodes.iter().flat_map(|n| n.inputs.iter().copied()).collect();
        (0..self.nodes.len()).filter(|n| !used.contains(n)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Halt {
    /// Stop once an iteration writes nothing to the dataset.
    DatasetEmpty(String),
    /// Stop once the function returns its input unchanged, which the guard
    /// on its output turns into an empty write to `dataset`.
    FunctionUnchanged { udf: String, dataset: String },
}

impl fmt::Display for Halt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Halt::DatasetEmpty(d) => write!(f, "dataset_empty({d})"),
            Halt::FunctionUnchanged { udf, dataset } => write!(f, "function_unchanged({udf}, {dataset})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogicalPlan {
    pub init: Dag,
    pub step: Dag,
    pub post: Dag,
    /// Datasets read by one iteration and written for the next.
    pub recursive_datasets: Vec<String>,
    pub halt: Option<Halt>,
    /// Aggregates used by the program, flagged when commutative and associative.
    pub aggregates: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("program is not XY-stratified:\n{0}")]
    NotStratified(String),
    #[error("rule {rule}: unsupported construct: {msg}")]
    Unsupported { rule: String, msg: String },
}

fn unsupported(rule: &str, msg: impl Into<String>) -> CompileError {
    CompileError::Unsupported { rule: rule.to_string(), msg: msg.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Init,
    Step,
    Post,
}

/// A rule's intermediate result: a node and the variable held by each column.
#[derive(Clone, Debug)]
struct Stream {
    node: NodeId,
    vars: Vec<Option<String>>,
}

impl Stream {
    fn col(&self, v: &str) -> Option<usize> {
        self.vars.iter().position(|x| x.as_deref() == Some(v))
    }
}

struct RuleCtx<'a> {
    program: &'a Program,
    info: &'a PredicateInfo,
    rule: &'a Rule,
    label: String,
    /// Temporal variable bound to the iteration number.
    iter_var: Option<String>,
}

impl RuleCtx<'_> {
    fn access(&self, a: &Atom) -> Result<StateRef, CompileError> {
        if self.program.edb(&a.predicate).is_some() {
            return Ok(StateRef::Edb);
        }
        if !self.info.temporal.contains(&a.predicate) {
            return Ok(StateRef::Plain);
        }
        match a.args.first() {
            Some(Term::Var(v)) if Some(v) == self.iter_var.as_ref() => Ok(StateRef::Current),
            Some(Term::Var(_)) => Ok(StateRef::History),
            Some(Term::Const(Value::Int(k))) => Ok(StateRef::Fixed(*k)),
            Some(t) => Err(unsupported(&self.label, format!("state argument `{t}` of `{}` in a body", a.predicate))),
            None => Err(unsupported(&self.label, format!("`{}` has no state argument", a.predicate))),
        }
    }

    fn head_state(&self) -> StateRef {
        let h = &self.rule.head;
        if !self.info.temporal.contains(&h.predicate) {
            return StateRef::Plain;
        }
        match h.args.first() {
            Some(Term::Succ(_)) => StateRef::Next,
            Some(Term::Const(Value::Int(k))) => StateRef::Fixed(*k),
            _ => StateRef::Current,
        }
    }

    fn operand(&self, t: &Term, s: Option<&Stream>) -> Result<Operand, CompileError> {
        match t {
            Term::Var(v) => {
                if let Some(c) = s.and_then(|s| s.col(v)) {
                    Ok(Operand::Column(c))
                } else if Some(v) == self.iter_var.as_ref() {
                    Ok(Operand::Iteration(0))
                } else {
                    Err(unsupported(&self.label, format!("variable `{v}` is not bound here")))
                }
            }
            Term::Succ(v) if Some(v) == self.iter_var.as_ref() => Ok(Operand::Iteration(1)),
            Term::Const(c) => Ok(Operand::Const(c.clone(), None)),
            Term::Symbol(name) => match self.program.constant(name) {
                Some(v) => Ok(Operand::Const(v.clone(), Some(name.clone()))),
                None => Err(unsupported(&self.label, format!("undeclared constant `{name}`"))),
            },
            other => Err(unsupported(&self.label, format!("term `{other}` cannot be evaluated"))),
        }
    }
}

fn operand_name(o: &Operand, schema: &[String]) -> String {
    match o {
        Operand::Column(c) => schema[*c].clone(),
        Operand::Iteration(0) => "@iter".into(),
        Operand::Iteration(k) => format!("@iter+{k}"),
        Operand::Const(_, Some(n)) => n.clone(),
        Operand::Const(v, None) => v.to_string(),
        Operand::Element(None) => "@elem".into(),
        Operand::Element(Some(i)) => format!("@elem.{i}"),
    }
}

struct Builder<'a> {
    program: &'a Program,
    info: PredicateInfo,
    dags: [Dag; 3],
    produced: [HashMap<(String, StateRef), NodeId>; 3],
    /// Predicates read by each phase, by access mode.
    reads: [BTreeSet<(String, StateRef)>; 3],
    recursive: BTreeSet<String>,
}

fn phase_index(p: Phase) -> usize {
    match p {
        Phase::Init => 0,
        Phase::Step => 1,
        Phase::Post => 2,
    }
}

impl<'a> Builder<'a> {
    fn dag(&mut self, p: Phase) -> &mut Dag {
        &mut self.dags[phase_index(p)]
    }

    fn read_elsewhere(&self, pred: &str, phase: Phase) -> bool {
        (0..3).any(|i| i != phase_index(phase) && self.reads[i].iter().any(|(p, _)| p == pred))
    }

    fn read_anywhere(&self, pred: &str) -> bool {
        self.reads.iter().any(|r| r.iter().any(|(p, _)| p == pred))
    }

    fn atom_stream(&mut self, ctx: &RuleCtx, phase: Phase, a: &Atom) -> Result<Stream, CompileError> {
        let state = ctx.access(a)?;
        let temporal = self.info.temporal.contains(&a.predicate);
        let args: &[Term] = if temporal && state != StateRef::History { &a.args[1..] } else { &a.args };
        let inline = self.produced[phase_index(phase)].get(&(a.predicate.clone(), state)).copied();
        let label = ctx.label.clone();
        let mut node = match inline {
            Some(n) => {
                if self.dag(phase).nodes[n].schema.len() != args.len() {
                    return Err(unsupported(&label, format!("`{}` read with a different arity", a.predicate)));
                }
                n
            }
            None => {
                if matches!(state, StateRef::Current | StateRef::History | StateRef::Fixed(_)) {
                    self.recursive.insert(a.predicate.clone());
                }
                let schema = args.iter().map(|t| t.to_string()).collect();
                self.dag(phase).add(LogicalKind::DatasetRead { name: a.predicate.clone(), state }, vec![], schema, &label)
            }
        };
        let mut vars: Vec<Option<String>> = vec![None; args.len()];
        let mut set_col = None;
        for (k, t) in args.iter().enumerate() {
            let eq = match t {
                Term::Var(v) => {
                    if let Some(j) = vars.iter().position(|x| x.as_deref() == Some(v.as_str())) {
                        Some(Operand::Column(j))
                    } else if Some(v) == ctx.iter_var.as_ref() {
                        Some(Operand::Iteration(0))
                    } else {
                        vars[k] = Some(v.clone());
                        None
                    }
                }
                Term::Wildcard => None,
                Term::Const(_) | Term::Symbol(_) => Some(ctx.operand(t, None)?),
                Term::Set(_) => {
                    if set_col.replace(k).is_some() {
                        return Err(unsupported(&label, "more than one set-valued argument in one atom"));
                    }
                    None
                }
                other => return Err(unsupported(&label, format!("argument `{other}` in a body atom"))),
            };
            if let Some(rhs) = eq {
                let schema = self.dag(phase).nodes[node].schema.clone();
                node = self.dag(phase).add(
                    LogicalKind::Selection { pred: Predicate { op: CmpOp::Eq, lhs: Operand::Column(k), rhs } },
                    vec![node],
                    schema,
                    &label,
                );
            }
        }
        if let Some(u) = set_col {
            let Term::Set(inner) = &args[u] else { unreachable!() };
            let mut items = Vec::new();
            let mut names = Vec::new();
            let mut out_vars = Vec::new();
            let in_schema = self.dag(phase).nodes[node].schema.clone();
            for (k, v) in vars.iter().enumerate() {
                if let Some(v) = v {
                    items.push(Operand::Column(k));
                    names.push(in_schema[k].clone());
                    out_vars.push(Some(v.clone()));
                }
            }
            let mut push_elem = |t: &Term, idx: Option<usize>| -> Result<(), CompileError> {
                match t {
                    Term::Var(v) if !out_vars.iter().any(|x| x.as_deref() == Some(v.as_str())) => {
                        items.push(Operand::Element(idx));
                        names.push(v.clone());
                        out_vars.push(Some(v.clone()));
                        Ok(())
                    }
                    Term::Wildcard => Ok(()),
                    other => Err(unsupported(&label, format!("element pattern `{other}`"))),
                }
            };
            match inner.as_ref() {
                Term::Tuple(ts) => {
                    for (i, t) in ts.iter().enumerate() {
                        push_elem(t, Some(i))?;
                    }
                }
                t => push_elem(t, None)?,
            }
            node = self.dag(phase).add(LogicalKind::Projection { items, unnest: Some(u) }, vec![node], names, &label);
            vars = out_vars;
        }
        Ok(Stream { node, vars })
    }

    fn combine(&mut self, phase: Phase, label: &str, left: Stream, right: Stream) -> Stream {
        let mut on = Vec::new();
        for (lc, v) in left.vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(rc) = right.col(v) {
                    on.push((lc, rc));
                }
            }
        }
        let mut schema = self.dag(phase).nodes[left.node].schema.clone();
        schema.extend(self.dag(phase).nodes[right.node].schema.clone());
        let mut vars = left.vars.clone();
        vars.extend(right.vars.iter().map(|v| v.clone().filter(|v| left.col(v).is_none())));
        let kind = if on.is_empty() { LogicalKind::CrossProduct } else { LogicalKind::InnerJoin { on } };
        let node = self.dag(phase).add(kind, vec![left.node, right.node], schema, label);
        Stream { node, vars }
    }

    fn compile_rule(&mut self, idx: usize, phase: Phase) -> Result<(), CompileError> {
        let program = self.program;
        let rule = &program.rules[idx];
        let label = rule.display_label(idx);
        let iter_var = match phase {
            Phase::Step => rule.temporal.as_ref().map(|t| t.var.clone()),
            _ => None,
        };
        let ctx = RuleCtx { program, info: &self.info.clone(), rule, label: label.clone(), iter_var: iter_var.clone() };
        let prebound: Vec<String> = iter_var.iter().cloned().collect();
        let order = literal_order(rule, &prebound).map_err(|m| unsupported(&label, m))?;
        let mut stream: Option<Stream> = None;
        for i in order {
            let a = &rule.body[i];
            match a.role {
                AtomRole::Extensional | AtomRole::Intensional => {
                    if a.negated {
                        return Err(unsupported(&label, format!("negated goal `{a}`")));
                    }
                    let s = self.atom_stream(&ctx, phase, a)?;
                    stream = Some(match stream.take() {
                        None => s,
                        Some(l) => self.combine(phase, &label, l, s),
                    });
                }
                AtomRole::Function { inputs } => {
                    let args =
                        a.args[..inputs].iter().map(|t| ctx.operand(t, stream.as_ref())).collect::<Result<Vec<_>, _>>()?;
                    let (mut schema, mut vars, inputs_ids) = match &stream {
                        Some(s) => (self.dag(phase).nodes[s.node].schema.clone(), s.vars.clone(), vec![s.node]),
                        None => (vec![], vec![], vec![]),
                    };
                    let mut guards = Vec::new();
                    for t in &a.args[inputs..] {
                        let col = schema.len();
                        match t {
                            Term::Var(v) => match vars.iter().position(|x| x.as_deref() == Some(v.as_str())) {
                                Some(j) => {
                                    schema.push("_".into());
                                    vars.push(None);
                                    guards.push((col, Operand::Column(j)));
                                }
                                None => {
                                    schema.push(v.clone());
                                    vars.push(Some(v.clone()));
                                }
                            },
                            Term::Wildcard => {
                                schema.push("_".into());
                                vars.push(None);
                            }
                            other => {
                                schema.push("_".into());
                                vars.push(None);
                                guards.push((col, ctx.operand(other, None)?));
                            }
                        }
                    }
                    let outputs = a.args.len() - inputs;
                    let mut node = self.dag(phase).add(
                        LogicalKind::FunctionApply { udf: a.predicate.clone(), args, outputs },
                        inputs_ids,
                        schema.clone(),
                        &label,
                    );
                    for (col, rhs) in guards {
                        node = self.dag(phase).add(
                            LogicalKind::Selection { pred: Predicate { op: CmpOp::Eq, lhs: Operand::Column(col), rhs } },
                            vec![node],
                            schema.clone(),
                            &label,
                        );
                    }
                    stream = Some(Stream { node, vars });
                }
                AtomRole::Comparison(op) => {
                    let s = stream.as_ref().ok_or_else(|| unsupported(&label, format!("comparison `{a}` before any goal")))?;
                    let pred = Predicate { op, lhs: ctx.operand(&a.args[0], Some(s))?, rhs: ctx.operand(&a.args[1], Some(s))? };
                    let schema = self.dag(phase).nodes[s.node].schema.clone();
                    let node = self.dag(phase).add(LogicalKind::Selection { pred }, vec![s.node], schema, &label);
                    stream = Some(Stream { node, vars: s.vars.clone() });
                }
            }
        }
        let stream = stream.ok_or_else(|| unsupported(&label, "rule without goals"))?;
        let head_state = ctx.head_state();
        let drop = usize::from(self.info.temporal.contains(&rule.head.predicate));
        let head_args = &rule.head.args[drop..];
        let mut node = stream.node;
        let mut in_schema = self.dag(phase).nodes[node].schema.clone();
        let items: Vec<Operand>;
        let names: Vec<String> = head_args.iter().map(|t| t.to_string()).collect();
        if let Some(agg) = &rule.aggregate {
            let pos = agg.position - drop;
            let over = match ctx.operand(&agg.over, Some(&stream))? {
                Operand::Column(c) => c,
                _ => return Err(unsupported(&label, "aggregate over a non-column term")),
            };
            let mut keys = Vec::new();
            let mut key_items = Vec::new();
            for (k, t) in head_args.iter().enumerate() {
                if k == pos {
                    continue;
                }
                match ctx.operand(t, Some(&stream))? {
                    Operand::Column(c) => {
                        key_items.push(Operand::Column(keys.len()));
                        keys.push(c);
                    }
                    other => key_items.push(other),
                }
            }
            let agg_name = format!("{}<{}>", agg.name, agg.over);
            let mut schema: Vec<String> = keys.iter().map(|&c| in_schema[c].clone()).collect();
            schema.push(agg_name);
            let kind = if keys.is_empty() {
                LogicalKind::GroupAll { aggregate: agg.name.clone(), over }
            } else {
                LogicalKind::GroupBy { keys: keys.clone(), aggregate: agg.name.clone(), over }
            };
            node = self.dag(phase).add(kind, vec![node], schema.clone(), &label);
            in_schema = schema;
            let mut it = key_items;
            it.insert(pos, Operand::Column(keys.len()));
            items = it;
        } else {
            items = head_args.iter().map(|t| ctx.operand(t, Some(&stream))).collect::<Result<_, _>>()?;
        }
        let identity = items.len() == in_schema.len() && items.iter().enumerate().all(|(i, o)| *o == Operand::Column(i));
        if !identity {
            node = self.dag(phase).add(LogicalKind::Projection { items, unnest: None }, vec![node], names, &label);
        }
        let pred = rule.head.predicate.clone();
        let key = (pred.clone(), head_state);
        if self.produced[phase_index(phase)].insert(key, node).is_some() {
            return Err(unsupported(&label, format!("`{pred}` is derived by more than one rule in one dataflow")));
        }
        let write = match head_state {
            StateRef::Next | StateRef::Fixed(_) => true,
            _ => self.read_elsewhere(&pred, phase) || !self.read_anywhere(&pred),
        };
        if write {
            if matches!(head_state, StateRef::Next) {
                self.recursive.insert(pred.clone());
            }
            let schema = self.dag(phase).nodes[node].schema.clone();
            self.dag(phase).add(LogicalKind::DatasetWrite { name: pred, state: head_state }, vec![node], schema, &label);
        }
        Ok(())
    }
}

/// Compiles an XY-stratified program following its firing schedule.
pub fn compile_logical(p: &Program, s: &Strata) -> Result<LogicalPlan, CompileError> {
    let info = predicate_info(p);
    let mut reads: [BTreeSet<(String, StateRef)>; 3] = Default::default();
    let phases = [(Phase::Init, &s.init), (Phase::Step, &s.iteration), (Phase::Post, &s.post)];
    for (phase, rules) in phases {
        for &i in rules.iter() {
            let r = &p.rules[i];
            let iter_var = if phase == Phase::Step { r.temporal.as_ref().map(|t| t.var.clone()) } else { None };
            let ctx = RuleCtx { program: p, info: &info, rule: r, label: r.display_label(i), iter_var };
            for a in r.body.iter().filter(|a| a.is_relational()) {
                reads[phase_index(phase)].insert((a.predicate.clone(), ctx.access(a)?));
            }
        }
    }
    let mut b = Builder {
        program: p,
        info,
        dags: Default::default(),
        produced: Default::default(),
        reads,
        recursive: BTreeSet::new(),
    };
    for (phase, rules) in phases {
        for &i in rules.iter() {
            b.compile_rule(i, phase)?;
        }
    }
    let [init, step, post] = b.dags;
    let halt = if step.is_empty() { None } else { Some(detect_halt(p, s, &step)) };
    let recursive_datasets = b.recursive.into_iter().filter(|d| p.edb(d).is_none()).collect();
    let mut aggregates: BTreeMap<String, bool> = ["max", "min", "sum", "count"].iter().map(|a| (a.to_string(), true)).collect();
    for d in p.udf_decls.iter().filter(|d| d.is_aggregate) {
        aggregates.insert(d.name.clone(), d.is_commutative_associative);
    }
    Ok(LogicalPlan { init, step, post, recursive_datasets, halt, aggregates })
}

/// Compiles a program after checking it.
pub fn compile_program(p: &Program) -> Result<LogicalPlan, CompileError> {
    let verdict = check(p);
    match (&verdict.strata, verdict.xy_stratified) {
        (Some(s), true) => compile_logical(p, s),
        _ => Err(CompileError::NotStratified(verdict.to_string())),
    }
}

/// A Y-rule guarding a function's output against one of its inputs with
/// `!=` halts once the function returns that input. Otherwise iteration
/// stops once the next-state dataset read at the current state is empty.
fn detect_halt(p: &Program, s: &Strata, step: &Dag) -> Halt {
    for &i in &s.iteration {
        let r = &p.rules[i];
        if !r.temporal.as_ref().is_some_and(|t| t.head_offset == 1) {
            continue;
        }
        for f in r.body.iter().filter(|a| a.is_function()) {
            let AtomRole::Function { inputs } = f.role else { continue };
            let mut ins = Vec::new();
            f.args[..inputs].iter().for_each(|t| t.vars(&mut ins));
            let mut outs = Vec::new();
            f.args[inputs..].iter().for_each(|t| t.vars(&mut outs));
            let guarded = r.body.iter().any(|c| {
                c.role == AtomRole::Comparison(CmpOp::Ne)
                    && match (c.args[0].as_var(), c.args[1].as_var()) {
                        (Some(x), Some(y)) => {
                            let (x, y) = (x.to_string(), y.to_string());
                            (ins.contains(&x) && outs.contains(&y)) || (ins.contains(&y) && outs.contains(&x))
                        }
                        _ => false,
                    }
            });
            if guarded {
                return Halt::FunctionUnchanged { udf: f.predicate.clone(), dataset: r.head.predicate.clone() };
            }
        }
    }
    let written: BTreeSet<&str> = step
        .nodes
        .iter()
        .filter_map(|n| match &n.kind {
            LogicalKind::DatasetWrite { name, state: StateRef::Next } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    let driving = step.nodes.iter().find_map(|n| match &n.kind {
        LogicalKind::DatasetRead { name, state: StateRef::Current } if written.contains(name.as_str()) => Some(name.clone()),
        _ => None,
    });
    Halt::DatasetEmpty(driving.or_else(|| written.iter().next().map(|s| s.to_string())).unwrap_or_default())
}

fn kind_text(n: &LogicalNode, dag: &Dag) -> String {
    let input_schema: Vec<String> = n.inputs.iter().flat_map(|&i| dag.nodes[i].schema.clone()).collect();
    let col = |c: usize| display_column(&input_schema, c);
    let opnd = |o: &Operand| match o {
        Operand::Column(c) => col(*c),
        other => operand_name(other, &input_schema),
    };
    match &n.kind {
        LogicalKind::DatasetRead { name, state } => format!("dataset_read {name} [{state}]"),
        LogicalKind::DatasetWrite { name, state } => format!("dataset_write {name} [{state}]"),
        LogicalKind::CrossProduct => "cross_product".into(),
        LogicalKind::InnerJoin { on } => {
            let left = dag.nodes[n.inputs[0]].schema.len();
            let pairs: Vec<String> = on.iter().map(|(l, r)| format!("{}={}", col(*l), col(left + r))).collect();
            format!("inner_join on {}", pairs.join(", "))
        }
        LogicalKind::Projection { items, unnest } => {
            let items: Vec<String> = items.iter().map(opnd).collect();
            match unnest {
                Some(u) => format!("projection unnest {} [{}]", col(*u), items.join(", ")),
                None => format!("projection [{}]", items.join(", ")),
            }
        }
        LogicalKind::Selection { pred } => {
            format!("selection {} {} {}", opnd(&pred.lhs), pred.op.symbol(), opnd(&pred.rhs))
        }
        LogicalKind::GroupBy { keys, aggregate, over } => {
            let keys: Vec<String> = keys.iter().map(|&k| col(k)).collect();
            format!("group_by [{}] {aggregate}<{}>", keys.join(", "), col(*over))
        }
        LogicalKind::GroupAll { aggregate, over } => format!("group_all {aggregate}<{}>", col(*over)),
        LogicalKind::FunctionApply { udf, args, outputs } => {
            let args: Vec<String> = args.iter().map(opnd).collect();
            let outs = &n.schema[n.schema.len() - outputs..];
            format!("function_apply {udf}({}) -> ({})", args.join(", "), outs.join(", "))
        }
    }
}

/// Column name, disambiguated by position when the name repeats.
fn display_column(schema: &[String], c: usize) -> String {
    let name = &schema[c];
    if schema.iter().filter(|s| *s == name).count() > 1 {
        format!("{name}#{c}")
    } else {
        name.clone()
    }
}

fn serialize_dag(dag: &Dag, out: &mut String) {
    let mut sig: Vec<Option<String>> = vec![None; dag.nodes.len()];
    fn signature(dag: &Dag, id: NodeId, sig: &mut Vec<Option<String>>) -> String {
        if let Some(s) = &sig[id] {
            return s.clone();
        }
        let n = &dag.nodes[id];
        let ins: Vec<String> = n.inputs.iter().map(|&i| signature(dag, i, sig)).collect();
        let s = format!("{}({})", kind_text(n, dag), ins.join(";"));
        sig[id] = Some(s.clone());
        s
    }
    let mut sinks = dag.sinks();
    sinks.sort_by_cached_key(|&s| signature(dag, s, &mut sig));
    let mut pos: HashMap<NodeId, usize> = HashMap::new();
    fn visit(dag: &Dag, id: NodeId, pos: &mut HashMap<NodeId, usize>, out: &mut String) {
        if pos.contains_key(&id) {
            return;
        }
        for &i in &dag.nodes[id].inputs {
            visit(dag, i, pos, out);
        }
        let k = pos.len();
        pos.insert(id, k);
        let n = &dag.nodes[id];
        let ins: Vec<String> = n.inputs.iter().map(|i| format!("n{}", pos[i])).collect();
        let arrow = if ins.is_empty() { String::new() } else { format!(" <- {}", ins.join(", ")) };
        let _ = writeln!(out, "  n{k} = {}{arrow} : ({}) [{}]", kind_text(n, dag), n.schema.join(", "), n.rule);
    }
    for s in sinks {
        visit(dag, s, &mut pos, out);
    }
}

/// Deterministic text form. Node ids are positions in a depth-first
/// post-order walk from the sinks, sinks taken in signature order.
pub fn canonical_serialize(lp: &LogicalPlan) -> String {
    let mut out = String::new();
    for (name, dag) in [("init", &lp.init), ("step", &lp.step), ("post", &lp.post)] {
        if name == "post" && dag.is_empty() {
            continue;
        }
        let _ = writeln!(out, "{name}:");
        serialize_dag(dag, &mut out);
    }
    let _ = writeln!(out, "recursive: {}", lp.recursive_datasets.join(", "));
    match &lp.halt {
        Some(h) => {
            let _ = writeln!(out, "halt: {h}");
        }
        None => {
            let _ = writeln!(out, "halt: none");
        }
    }
    out
}

impl fmt::Display for LogicalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_serialize(self))
    }
}

/// Counts of each operator kind, for quick structural checks.
pub fn kind_histogram(dag: &Dag) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::new();
    for n in &dag.nodes {
        let k = match n.kind {
            LogicalKind::DatasetRead { .. } => "dataset_read",
            LogicalKind::DatasetWrite { .. } => "dataset_write",
            LogicalKind::CrossProduct => "cross_product",
            LogicalKind::InnerJoin { .. } => "inner_join",
            LogicalKind::Projection { .. } => "projection",
            LogicalKind::Selection { .. } => "selection",
            LogicalKind::GroupBy { .. } => "group_by",
            LogicalKind::GroupAll { .. } => "group_all",
            LogicalKind::FunctionApply { .. } => "function_apply",
        };
        *out.entry(k).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalog::parse_program;
    use crate::tasks::{imru_program, pregel_program};

    #[test]
    fn nonrecursive_rule_is_init_only() {
        let p = parse_program(".decl in(X)\nout(X) :- in(X).").unwrap();
        let lp = compile_program(&p).unwrap();
        assert!(lp.step.is_empty());
        assert_eq!(lp.halt, None);
        let text = canonical_serialize(&lp);
        assert!(text.contains("n0 = dataset_read in [edb]"), "{text}");
        assert!(text.contains("n1 = dataset_write out [plain] <- n0"), "{text}");
    }

    #[test]
    fn serialization_is_deterministic() {
        let lp = compile_program(&pregel_program()).unwrap();
        assert_eq!(canonical_serialize(&lp), canonical_serialize(&lp.clone()));
    }

    #[test]
    fn ids_do_not_matter() {
        let mut lp = compile_program(&imru_program()).unwrap();
        let before = canonical_serialize(&lp);
        // Reverse node storage order and remap inputs.
        let n = lp.step.nodes.len();
        let mut nodes = lp.step.nodes.clone();
        nodes.reverse();
        for node in &mut nodes {
            for i in &mut node.inputs {
                *i = n - 1 - *i;
            }
        }
        lp.step.nodes = nodes;
        assert_eq!(canonical_serialize(&lp), before);
    }

    #[test]
    fn pregel_structure() {
        let lp = compile_program(&pregel_program()).unwrap();
        let h = kind_histogram(&lp.step);
        assert_eq!(h["group_by"], 2);
        assert_eq!(h["inner_join"], 2);
        assert_eq!(h["function_apply"], 1);
        assert_eq!(h["projection"], 4);
        assert_eq!(h["selection"], 1);
        assert_eq!(lp.halt, Some(Halt::DatasetEmpty("send".into())));
        assert_eq!(lp.recursive_datasets, vec!["send".to_string(), "vertex".to_string()]);
    }

    #[test]
    fn imru_structure() {
        let lp = compile_program(&imru_program()).unwrap();
        let h = kind_histogram(&lp.step);
        assert_eq!(h["cross_product"], 2);
        assert_eq!(h["group_all"], 1);
        assert_eq!(h["function_apply"], 2);
        assert_eq!(lp.halt, Some(Halt::FunctionUnchanged { udf: "update".into(), dataset: "model".into() }));
    }

    #[test]
    fn negation_is_reported_with_rule() {
        let p = parse_program(".decl e(X)\n.decl f(X)\nR1: out(X) :- e(X), !f(X).").unwrap();
        match compile_program(&p) {
            Err(CompileError::Unsupported { rule, .. }) => assert_eq!(rule, "R1"),
            other => panic!("{other:?}"),
        }
    }
}
