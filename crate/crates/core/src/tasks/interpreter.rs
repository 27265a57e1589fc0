//! Naive bottom-up evaluation of an XY-stratified program.
//!
//! Every relation is materialized as an explicit bag of tuples. The init
//! rules fire once, then each iteration fires the X-rules and Y-rules once in
//! schedule order with the temporal variable bound to the iteration number.
//! Relations keep duplicates: `send` drops the sender, so equal messages from
//! different vertices must both reach the aggregate. Iteration stops once an
//! iteration derives nothing for the next state.

use std::collections::{BTreeMap, HashMap};

use crate::datalog::analysis::predicate_info;
use crate::datalog::{literal_order, AtomRole, Program, Rule, Term};
use crate::strat::{check, StratError};
use crate::udf::{Registry, UdfError};
use crate::value::{Tuple, Value};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Strat(#[from] StratError),
    #[error("rule {rule}: {source}")]
    Udf { rule: String, source: UdfError },
    #[error("rule {rule}: {msg}")]
    Eval { rule: String, msg: String },
    #[error("no fixpoint after {0} iterations")]
    NoFixpoint(usize),
}

/// Facts of one state: for temporal predicates, the tuples at that state
/// without the state column; for views, their contents during that state.
pub type StateFacts = BTreeMap<String, Vec<Tuple>>;

#[derive(Debug, Clone)]
pub struct InterpreterOutput {
    /// `states[j]` holds the facts of state `j`.
    pub states: Vec<StateFacts>,
    /// Iterations fired, including the last one that derived nothing new.
    pub iterations: usize,
    /// Every relation at the end, with state columns.
    pub relations: HashMap<String, Vec<Tuple>>,
}

impl InterpreterOutput {
    /// Latest tuple of a temporal predicate per value of its first
    /// non-state column.
    pub fn latest(&self, pred: &str) -> BTreeMap<Value, Tuple> {
        let mut out = BTreeMap::new();
        for s in &self.states {
            if let Some(ts) = s.get(pred) {
                for t in ts {
                    out.insert(t[0].clone(), t.clone());
                }
            }
        }
        out
    }
}

/// Variable bindings; rules have few variables, so a vector beats a map.
type Binding<'a> = Vec<(&'a str, Value)>;

fn lookup<'v>(b: &'v Binding<'_>, name: &str) -> Option<&'v Value> {
    b.iter().find(|(n, _)| *n == name).map(|(_, v)| v)
}

struct Ctx<'a> {
    program: &'a Program,
    registry: &'a Registry,
}

impl<'a> Ctx<'a> {
    fn constant(&self, name: &str) -> Option<Value> {
        self.program.constant(name).cloned()
    }

    fn eval_term(&self, t: &Term, b: &Binding<'_>) -> Option<Value> {
        match t {
            Term::Var(v) => lookup(b, v).cloned(),
            Term::Succ(v) => lookup(b, v).and_then(Value::as_int).map(|i| Value::Int(i + 1)),
            Term::Const(c) => Some(c.clone()),
            Term::Symbol(s) => self.constant(s),
            Term::Tuple(ts) => ts.iter().map(|t| self.eval_term(t, b)).collect::<Option<Vec<_>>>().map(Value::list),
            Term::Wildcard | Term::Set(_) => None,
        }
    }

    /// All extensions of `b` under which `t` matches `v`.
    fn unify(&self, t: &'a Term, v: &Value, b: &Binding<'a>) -> Vec<Binding<'a>> {
        match t {
            Term::Wildcard => vec![b.clone()],
            Term::Var(name) => match lookup(b, name) {
                Some(bound) if bound == v => vec![b.clone()],
                Some(_) => vec![],
                None => {
                    let mut nb = b.clone();
                    nb.push((name.as_str(), v.clone()));
                    vec![nb]
                }
            },
            Term::Succ(name) => match (lookup(b, name), v.as_int()) {
                (Some(bound), Some(i)) if bound.as_int() == Some(i - 1) => vec![b.clone()],
                (None, Some(i)) => {
                    let mut nb = b.clone();
                    nb.push((name.as_str(), Value::Int(i - 1)));
                    vec![nb]
                }
                _ => vec![],
            },
            Term::Const(c) => {
                if c == v {
                    vec![b.clone()]
                } else {
                    vec![]
                }
            }
            Term::Symbol(s) => {
                if self.constant(s).as_ref() == Some(v) {
                    vec![b.clone()]
                } else {
                    vec![]
                }
            }
            Term::Tuple(ts) => match v.as_list() {
                Some(items) if items.len() == ts.len() => {
                    let mut acc = vec![b.clone()];
                    for (t, x) in ts.iter().zip(items.iter()) {
                        acc = acc.iter().flat_map(|bb| self.unify(t, x, bb)).collect();
                    }
                    acc
                }
                _ => vec![],
            },
            Term::Set(inner) => match v.as_list() {
                Some(items) => items.iter().flat_map(|x| self.unify(inner, x, b)).collect(),
                None => vec![],
            },
        }
    }

    fn unify_args(&self, args: &'a [Term], tuple: &[Value], b: &Binding<'a>) -> Vec<Binding<'a>> {
        if args.len() != tuple.len() {
            return vec![];
        }
        let mut acc = vec![b.clone()];
        for (t, v) in args.iter().zip(tuple) {
            acc = acc.iter().flat_map(|bb| self.unify(t, v, bb)).collect();
            if acc.is_empty() {
                break;
            }
        }
        acc
    }

    fn fire(&self, rule: &'a Rule, label: &str, db: &HashMap<String, Vec<Tuple>>, seed: Binding<'a>) -> Result<Vec<Tuple>, EvalError> {
        let prebound: Vec<String> = seed.iter().map(|(n, _)| n.to_string()).collect();
        let order = literal_order(rule, &prebound).map_err(|msg| EvalError::Eval { rule: label.to_string(), msg })?;
        let mut bindings = vec![seed];
        let empty = Vec::new();
        for i in order {
            let a = &rule.body[i];
            let mut next = Vec::new();
            match a.role {
                AtomRole::Comparison(op) => {
                    for b in bindings {
                        let (l, r) = (self.eval_term(&a.args[0], &b), self.eval_term(&a.args[1], &b));
                        match (l, r) {
                            (Some(l), Some(r)) => {
                                if self.registry.compare(op, &l, &r) {
                                    next.push(b);
                                }
                            }
                            _ => return Err(EvalError::Eval { rule: label.into(), msg: format!("unbound comparison `{a}`") }),
                        }
                    }
                }
                AtomRole::Function { inputs } => {
                    for b in bindings {
                        let args = a.args[..inputs]
                            .iter()
                            .map(|t| self.eval_term(t, &b))
                            .collect::<Option<Vec<_>>>()
                            .ok_or_else(|| EvalError::Eval { rule: label.into(), msg: format!("unbound input in `{a}`") })?;
                        let outs = self
                            .registry
                            .call(&a.predicate, &args)
                            .map_err(|source| EvalError::Udf { rule: label.into(), source })?;
                        next.extend(self.unify_args(&a.args[inputs..], &outs, &b));
                    }
                }
                AtomRole::Extensional | AtomRole::Intensional => {
                    let rel = db.get(&a.predicate).unwrap_or(&empty);
                    // Index on the arguments already determined by the bindings.
                    let probe_cols: Vec<usize> = match bindings.first() {
                        Some(b0) => (0..a.args.len())
                            .filter(|&k| !matches!(a.args[k], Term::Set(_) | Term::Tuple(_)) && self.eval_term(&a.args[k], b0).is_some())
                            .collect(),
                        None => vec![],
                    };
                    let rel = same_state_slice(rel, &probe_cols, &bindings, |b| self.eval_term(&a.args[0], b));
                    let mut index: HashMap<Vec<&Value>, Vec<&Tuple>> = HashMap::new();
                    for t in rel {
                        if t.len() == a.args.len() {
                            index.entry(probe_cols.iter().map(|&k| &t[k]).collect()).or_default().push(t);
                        }
                    }
                    for b in bindings {
                        let key: Vec<Value> = probe_cols.iter().map(|&k| self.eval_term(&a.args[k], &b).expect("bound")).collect();
                        let hits = index.get(&key.iter().collect::<Vec<_>>());
                        if a.negated {
                            let any = hits.is_some_and(|ts| ts.iter().any(|t| !self.unify_args(&a.args, t, &b).is_empty()));
                            if !any {
                                next.push(b);
                            }
                        } else if let Some(ts) = hits {
                            for t in ts {
                                next.extend(self.unify_args(&a.args, t, &b));
                            }
                        }
                    }
                }
            }
            bindings = next;
            if bindings.is_empty() {
                break;
            }
        }
        self.project_head(rule, label, bindings)
    }

    fn project_head(&self, rule: &Rule, label: &str, bindings: Vec<Binding<'_>>) -> Result<Vec<Tuple>, EvalError> {
        let head_value = |t: &Term, b: &Binding<'_>| {
            self.eval_term(t, b)
                .ok_or_else(|| EvalError::Eval { rule: label.into(), msg: format!("head term `{t}` is unbound") })
        };
        match &rule.aggregate {
            None => bindings.iter().map(|b| rule.head.args.iter().map(|t| head_value(t, b)).collect()).collect(),
            Some(agg) => {
                let mut groups: Vec<(Vec<Value>, Vec<Value>)> = Vec::new();
                let mut pos: HashMap<Vec<Value>, usize> = HashMap::new();
                for b in &bindings {
                    let key = rule
                        .head
                        .args
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != agg.position)
                        .map(|(_, t)| head_value(t, b))
                        .collect::<Result<Vec<_>, _>>()?;
                    let v = head_value(&agg.over, b)?;
                    let slot = *pos.entry(key.clone()).or_insert_with(|| {
                        groups.push((key, Vec::new()));
                        groups.len() - 1
                    });
                    groups[slot].1.push(v);
                }
                let mut out = Vec::new();
                for (key, vals) in groups {
                    let acc = self
                        .registry
                        .fold(&agg.name, vals)
                        .map_err(|source| EvalError::Udf { rule: label.into(), source })?
                        .expect("non-empty group");
                    let mut t = key;
                    t.insert(agg.position, acc);
                    out.push(t);
                }
                Ok(out)
            }
        }
    }
}

/// Narrows `rel` to the tuples whose first column equals the value every
/// binding gives it, when `rel` is ordered on that column. Temporal relations
/// grow in state order, so this skips all earlier states.
fn same_state_slice<'t>(
    rel: &'t [Tuple],
    probe_cols: &[usize],
    bindings: &[Binding<'_>],
    first: impl Fn(&Binding<'_>) -> Option<Value>,
) -> &'t [Tuple] {
    if probe_cols.first() != Some(&0) || rel.len() < 64 {
        return rel;
    }
    let Some(v) = bindings.first().and_then(&first) else { return rel };
    if bindings.iter().skip(1).any(|b| first(b).as_ref() != Some(&v)) {
        return rel;
    }
    if rel.iter().any(Vec::is_empty) || !rel.windows(2).all(|w| w[0][0] <= w[1][0]) {
        return rel;
    }
    let lo = rel.partition_point(|t| t[0] < v);
    let hi = rel.partition_point(|t| t[0] <= v);
    &rel[lo..hi]
}

/// Evaluates `program` over `edb` until no iteration derives a new state, or
/// fails after `max_iterations`.
pub fn interpret(
    program: &Program,
    edb: &HashMap<String, Vec<Tuple>>,
    registry: &Registry,
    max_iterations: usize,
) -> Result<InterpreterOutput, EvalError> {
    let verdict = check(program);
    let strata = match verdict.strata {
        Some(s) if verdict.xy_stratified => s,
        _ => return Err(StratError::IllFormed(verdict.violations).into()),
    };
    let info = predicate_info(program);
    let ctx = Ctx { program, registry };
    let mut db: HashMap<String, Vec<Tuple>> = edb.clone();
    let label = |i: usize| program.rules[i].display_label(i);

    for &i in &strata.init {
        let derived = ctx.fire(&program.rules[i], &label(i), &db, Binding::new())?;
        db.entry(program.rules[i].head.predicate.clone()).or_default().extend(derived);
    }

    let snapshot = |db: &HashMap<String, Vec<Tuple>>, j: i64| -> StateFacts {
        let mut s = StateFacts::new();
        for p in &info.temporal {
            let state = Value::Int(j);
            let ts: Vec<Tuple> = db
                .get(p)
                .map(|ts| {
                    let range = same_state_slice(ts, &[0], &[Binding::new()], |_| Some(state.clone()));
                    range.iter().filter(|t| t[0] == state).map(|t| t[1..].to_vec()).collect()
                })
                .unwrap_or_default();
            s.insert(p.clone(), ts);
        }
        for p in &info.views {
            s.insert(p.clone(), db.get(p).cloned().unwrap_or_default());
        }
        s
    };

    let mut states = Vec::new();
    let mut j: i64 = 0;
    loop {
        if j as usize >= max_iterations {
            return Err(EvalError::NoFixpoint(max_iterations));
        }
        for v in &info.views {
            db.remove(v);
        }
        let mut next_state = 0usize;
        for &i in &strata.iteration {
            let r = &program.rules[i];
            let mut seed = Binding::new();
            if let Some(t) = &r.temporal {
                seed.push((t.var.as_str(), Value::Int(j)));
            }
            let derived = ctx.fire(r, &label(i), &db, seed)?;
            if r.temporal.as_ref().is_some_and(|t| t.head_offset == 1) {
                next_state += derived.len();
            }
            db.entry(r.head.predicate.clone()).or_default().extend(derived);
        }
        states.push(snapshot(&db, j));
        j += 1;
        if next_state == 0 {
            break;
        }
    }
    for &i in &strata.post {
        let derived = ctx.fire(&program.rules[i], &label(i), &db, Binding::new())?;
        db.entry(program.rules[i].head.predicate.clone()).or_default().extend(derived);
    }
    Ok(InterpreterOutput { states, iterations: j as usize, relations: db })
}
