//! XY-stratification.
//!
//! Recursive rules are classified as X-rules (every recursive goal at the
//! head's state) or Y-rules (head at `J+1`, some positive goal at `J`, all
//! other recursive goals at `J` or `J+1`). The transform renames predicates
//! at the head's state to `new_*` and the rest to `old_*`, drops temporal
//! arguments, and the result is stratified by longest path over the
//! condensation of its dependency graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::datalog::analysis::{predicate_info, predicate_nodes, PredicateInfo};
use crate::datalog::{Atom, AtomRole, Program, Rule, Term, UdfDecl};
use crate::graph::tarjan_scc;
use crate::value::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Positive,
    Negated,
    Aggregated,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DepEdge {
    pub from: String,
    pub to: String,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, Default)]
pub struct DependencyGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<DepEdge>,
}

impl DependencyGraph {
    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    pub fn edge_kinds(&self, from: &str, to: &str) -> Vec<EdgeKind> {
        self.edges.iter().filter(|e| e.from == from && e.to == to).map(|e| e.kind).collect()
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect()
    }

    /// Components in topological order (sources first).
    fn components(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let idx = self.index();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[idx[e.from.as_str()]].push(idx[e.to.as_str()]);
        }
        let mut comps = tarjan_scc(self.nodes.len(), &adj);
        comps.reverse();
        let mut comp_of = vec![0; self.nodes.len()];
        for (c, members) in comps.iter().enumerate() {
            for &m in members {
                comp_of[m] = c;
            }
        }
        (comps, comp_of)
    }
}

/// One edge per (body predicate, head predicate, kind). Edges into the head
/// of a rule with a head aggregate are aggregated; edges from negated goals
/// are negated.
pub fn build_dependency_graph(p: &Program) -> DependencyGraph {
    let nodes = predicate_nodes(p);
    let mut edges: BTreeSet<DepEdge> = BTreeSet::new();
    for r in &p.rules {
        for a in &r.body {
            if matches!(a.role, AtomRole::Comparison(_)) {
                continue;
            }
            let kind = if a.negated {
                EdgeKind::Negated
            } else if r.aggregate.is_some() {
                EdgeKind::Aggregated
            } else {
                EdgeKind::Positive
            };
            edges.insert(DepEdge { from: a.predicate.clone(), to: r.head.predicate.clone(), kind });
        }
    }
    DependencyGraph { nodes, edges: edges.into_iter().collect() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Clause {
    /// Every recursive predicate carries a state index (or is a view of the current state).
    TemporalArgument,
    /// X-rule goals sit at the head's state.
    XRuleState,
    /// A cycle through aggregation or negation must pass through a Y-rule whose head is at `J+1`.
    YSuccessorHead,
    /// A Y-rule has a positive goal at the current state `J`.
    YCurrentGoal,
    /// The remaining recursive goals of a Y-rule sit at `J` or `J+1`.
    YGoalStates,
}

impl Clause {
    pub fn name(self) -> &'static str {
        match self {
            Clause::TemporalArgument => "temporal-argument",
            Clause::XRuleState => "x-rule-state",
            Clause::YSuccessorHead => "y-rule head at successor state",
            Clause::YCurrentGoal => "y-rule positive goal at current state",
            Clause::YGoalStates => "y-rule goals at current or successor state",
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleClass {
    NonRecursive,
    XRule,
    YRule,
    IllFormed(Vec<Clause>),
}

impl RuleClass {
    pub fn name(&self) -> String {
        match self {
            RuleClass::NonRecursive => "nonrecursive".into(),
            RuleClass::XRule => "x_rule".into(),
            RuleClass::YRule => "y_rule".into(),
            RuleClass::IllFormed(cs) => {
                format!("ill_formed({})", cs.iter().map(|c| c.name()).collect::<Vec<_>>().join("; "))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StratViolation {
    pub rule: Option<usize>,
    pub clause: Option<Clause>,
    pub message: String,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum StratError {
    #[error("program is not XY-stratified: {}", .0.iter().map(|v| v.message.clone()).collect::<Vec<_>>().join("; "))]
    IllFormed(Vec<StratViolation>),
    #[error("not stratifiable: cycle through aggregation or negation: {}", .cycle.join(" -> "))]
    NotStratifiable { cycle: Vec<String> },
}

/// State index of a recursive goal or head, relative to the rule.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum StateTerm {
    Var(String),
    Succ(String),
    Const(i64),
    /// A current-state view, which sits at whatever state the rule is at.
    Current,
    Other,
}

fn state_of(a: &Atom, info: &PredicateInfo) -> StateTerm {
    if info.views.contains(&a.predicate) {
        return StateTerm::Current;
    }
    match a.args.first() {
        Some(Term::Var(v)) => StateTerm::Var(v.clone()),
        Some(Term::Succ(v)) => StateTerm::Succ(v.clone()),
        Some(Term::Const(Value::Int(i))) => StateTerm::Const(*i),
        _ => StateTerm::Other,
    }
}

struct RuleFacts {
    recursive: bool,
    /// State the head sits at: `Var(J)`, `Succ(J)`, `Const(c)`.
    head_state: StateTerm,
    /// State the rule's non-successor goals are expected at.
    current: StateTerm,
}

fn rule_facts(r: &Rule, info: &PredicateInfo) -> RuleFacts {
    let recursive = r.body.iter().any(|a| info.same_component(&a.predicate, &r.head.predicate));
    let head_state = if info.views.contains(&r.head.predicate) {
        StateTerm::Current
    } else if info.temporal.contains(&r.head.predicate) {
        state_of(&r.head, info)
    } else {
        StateTerm::Other
    };
    let current = match &head_state {
        StateTerm::Succ(v) => StateTerm::Var(v.clone()),
        StateTerm::Current => r
            .body
            .iter()
            .filter(|a| a.is_relational() && info.temporal.contains(&a.predicate))
            .find_map(|a| match state_of(a, info) {
                s @ StateTerm::Var(_) => Some(s),
                _ => None,
            })
            .unwrap_or(StateTerm::Current),
        other => other.clone(),
    };
    RuleFacts { recursive, head_state, current }
}

fn has_init_rule(p: &Program, pred: &str) -> bool {
    p.rules
        .iter()
        .any(|r| r.head.predicate == pred && matches!(r.head.args.first(), Some(Term::Const(Value::Int(_)))))
}

/// Classifies each rule and collects clause violations.
pub fn classify_with_violations(p: &Program) -> (Vec<RuleClass>, Vec<StratViolation>) {
    let info = predicate_info(p);
    let mut clauses: Vec<BTreeSet<Clause>> = vec![BTreeSet::new(); p.rules.len()];
    let mut violations = Vec::new();
    let mut base: Vec<RuleClass> = Vec::new();

    for (i, r) in p.rules.iter().enumerate() {
        let label = r.display_label(i);
        let facts = rule_facts(r, &info);
        if !facts.recursive {
            base.push(RuleClass::NonRecursive);
            continue;
        }
        let mut bad = |c: Clause, msg: String, clauses: &mut Vec<BTreeSet<Clause>>| {
            clauses[i].insert(c);
            violations.push(StratViolation { rule: Some(i), clause: Some(c), message: format!("{label}: {msg}") });
        };
        let goals: Vec<(&Atom, StateTerm)> = r
            .body
            .iter()
            .filter(|a| a.is_relational() && info.recursive.contains(&a.predicate))
            .map(|a| (a, state_of(a, &info)))
            .collect();

        if info.views.contains(&r.head.predicate) {
            let aggregated_var = r.aggregate.as_ref().filter(|a| a.name == "max").and_then(|a| a.over.as_var());
            let view_bound: BTreeSet<String> = r
                .body
                .iter()
                .filter(|a| a.is_relational() && info.views.contains(&a.predicate))
                .flat_map(|a| a.vars())
                .collect();
            let temporal_goals: Vec<&Atom> = goals.iter().filter(|(a, _)| info.temporal.contains(&a.predicate)).map(|(a, _)| *a).collect();
            let grounded = !temporal_goals.is_empty()
                && temporal_goals.iter().all(|a| match a.args.first() {
                    Some(Term::Var(v)) => aggregated_var == Some(v.as_str()) || view_bound.contains(v),
                    _ => false,
                });
            let over_views = temporal_goals.is_empty() && goals.iter().any(|(a, _)| !a.negated && a.predicate != r.head.predicate);
            if !(grounded || over_views) {
                bad(
                    Clause::TemporalArgument,
                    format!("recursive predicate `{}` has no temporal argument and is not a view of the latest state", r.head.predicate),
                    &mut clauses,
                );
            }
            base.push(RuleClass::XRule);
            continue;
        }

        match &facts.head_state {
            StateTerm::Succ(j) => {
                let cur = StateTerm::Var(j.clone());
                let has_current = goals.iter().any(|(a, s)| !a.negated && (*s == cur || *s == StateTerm::Current));
                if !has_current {
                    bad(Clause::YCurrentGoal, format!("no positive recursive goal at state {j}"), &mut clauses);
                }
                for (a, s) in &goals {
                    let ok = *s == cur || *s == StateTerm::Current || *s == StateTerm::Succ(j.clone());
                    if !ok {
                        bad(
                            Clause::YGoalStates,
                            format!("goal `{}` is not at state {j} or {j}+1", a.predicate),
                            &mut clauses,
                        );
                    }
                }
                base.push(RuleClass::YRule);
            }
            StateTerm::Var(_) | StateTerm::Const(_) => {
                for (a, s) in &goals {
                    let ok = *s == facts.head_state || *s == StateTerm::Current;
                    if !ok {
                        bad(
                            Clause::XRuleState,
                            format!("goal `{}` is not at the head's state", a.predicate),
                            &mut clauses,
                        );
                    }
                }
                base.push(RuleClass::XRule);
            }
            _ => {
                bad(
                    Clause::TemporalArgument,
                    format!("recursive predicate `{}` has no temporal argument", r.head.predicate),
                    &mut clauses,
                );
                base.push(RuleClass::XRule);
            }
        }
    }

    same_state_cycles(p, &info, &base, &mut clauses, &mut violations);

    let classes = base
        .into_iter()
        .zip(clauses)
        .map(|(c, cs)| if cs.is_empty() { c } else { RuleClass::IllFormed(cs.into_iter().collect()) })
        .collect();
    (classes, violations)
}

/// Within one state, recursion through aggregation or negation has no
/// well-defined order; such a cycle must be cut by a Y-rule.
fn same_state_cycles(
    p: &Program,
    info: &PredicateInfo,
    base: &[RuleClass],
    clauses: &mut [BTreeSet<Clause>],
    violations: &mut Vec<StratViolation>,
) {
    // (state key, from, to, kind, rule)
    let mut edges: Vec<(StateTerm, String, String, EdgeKind, usize)> = Vec::new();
    for (i, r) in p.rules.iter().enumerate() {
        if base[i] == RuleClass::NonRecursive {
            continue;
        }
        let facts = rule_facts(r, info);
        let kind_of = |a: &Atom| {
            if a.negated {
                EdgeKind::Negated
            } else if r.aggregate.is_some() {
                EdgeKind::Aggregated
            } else {
                EdgeKind::Positive
            }
        };
        for a in r.body.iter().filter(|a| a.is_relational() && info.recursive.contains(&a.predicate)) {
            let s = state_of(a, info);
            let key = match (&facts.head_state, &s) {
                (StateTerm::Succ(j), StateTerm::Succ(k)) if j == k => StateTerm::Succ(String::new()),
                (StateTerm::Succ(_), _) => continue,
                (StateTerm::Const(c), _) => StateTerm::Const(*c),
                _ => StateTerm::Current,
            };
            edges.push((key, a.predicate.clone(), r.head.predicate.clone(), kind_of(a), i));
        }
    }
    let keys: BTreeSet<StateTerm> = edges.iter().map(|e| e.0.clone()).collect();
    let mut reported: BTreeSet<Vec<usize>> = BTreeSet::new();
    for key in keys {
        let es: Vec<&(StateTerm, String, String, EdgeKind, usize)> = edges.iter().filter(|e| e.0 == key).collect();
        let mut names: Vec<String> = Vec::new();
        for e in &es {
            for n in [&e.1, &e.2] {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        let idx: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut adj = vec![Vec::new(); names.len()];
        for e in &es {
            adj[idx[e.1.as_str()]].push(idx[e.2.as_str()]);
        }
        for comp in tarjan_scc(names.len(), &adj) {
            let inside: Vec<&&(StateTerm, String, String, EdgeKind, usize)> = es
                .iter()
                .filter(|e| comp.contains(&idx[e.1.as_str()]) && comp.contains(&idx[e.2.as_str()]))
                .collect();
            if !inside.iter().any(|e| e.3 != EdgeKind::Positive) {
                continue;
            }
            let rules_on_cycle: BTreeSet<usize> = inside.iter().map(|e| e.4).collect();
            let positive: BTreeSet<usize> = inside.iter().filter(|e| e.3 == EdgeKind::Positive).map(|e| e.4).collect();
            let mut culprits: Vec<usize> =
                positive.iter().copied().filter(|&i| has_init_rule(p, &p.rules[i].head.predicate)).collect();
            if culprits.is_empty() {
                culprits = positive.iter().copied().filter(|&i| info.temporal.contains(&p.rules[i].head.predicate)).collect();
            }
            if culprits.is_empty() {
                culprits = rules_on_cycle.iter().copied().collect();
            }
            if !reported.insert(culprits.clone()) {
                continue;
            }
            let mut cycle: Vec<String> = comp.iter().map(|&c| names[c].clone()).collect();
            cycle.sort();
            for i in culprits {
                clauses[i].insert(Clause::YSuccessorHead);
                violations.push(StratViolation {
                    rule: Some(i),
                    clause: Some(Clause::YSuccessorHead),
                    message: format!(
                        "{}: cycle {{{}}} passes through aggregation or negation within one state; its head must be at the successor state",
                        p.rules[i].display_label(i),
                        cycle.join(", ")
                    ),
                });
            }
        }
    }
}

pub fn classify_rules(p: &Program) -> Vec<RuleClass> {
    classify_with_violations(p).0
}

/// Where a rule fires in the evaluation schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleRole {
    /// Fires once before the first iteration.
    Init,
    /// Fires every iteration, deriving the current state.
    X,
    /// Fires every iteration, deriving the next state.
    Y,
    /// Nonrecursive rule reading recursive results; fires after the fixpoint.
    Post,
}

#[derive(Clone, Debug)]
pub struct XyProgram {
    pub program: Program,
    pub roles: Vec<RuleRole>,
}

fn rename_dropping_state(a: &Atom, prefix: &str, drop_first: bool) -> Atom {
    let args = if drop_first { a.args[1..].to_vec() } else { a.args.clone() };
    let role = match a.role {
        AtomRole::Function { inputs } if drop_first => AtomRole::Function { inputs: inputs - 1 },
        other => other,
    };
    Atom { predicate: format!("{prefix}{}", a.predicate), args, negated: a.negated, role }
}

pub fn xy_transform(p: &Program) -> Result<XyProgram, StratError> {
    let (classes, violations) = classify_with_violations(p);
    if !violations.is_empty() {
        return Err(StratError::IllFormed(violations));
    }
    let info = predicate_info(p);
    let feeds_from_recursion = depends_on_recursion(p, &info);
    let mut out = Program { edb_decls: p.edb_decls.clone(), consts: p.consts.clone(), ..Default::default() };
    let mut udfs: Vec<UdfDecl> = p.udf_decls.clone();
    let mut roles = Vec::new();

    for (i, r) in p.rules.iter().enumerate() {
        let facts = rule_facts(r, &info);
        let role = match (&classes[i], &facts.head_state) {
            (RuleClass::NonRecursive, StateTerm::Const(_)) => RuleRole::Init,
            (RuleClass::NonRecursive, _) if feeds_from_recursion.contains(&r.head.predicate) => RuleRole::Post,
            (RuleClass::NonRecursive, _) => RuleRole::Init,
            (RuleClass::YRule, _) => RuleRole::Y,
            (_, StateTerm::Const(_)) => RuleRole::Init,
            _ => RuleRole::X,
        };
        roles.push(role);
        let is_y = role == RuleRole::Y;
        let head_temporal = info.temporal.contains(&r.head.predicate);
        let head = if head_temporal {
            rename_dropping_state(&r.head, "new_", true)
        } else if info.views.contains(&r.head.predicate) {
            rename_dropping_state(&r.head, "new_", false)
        } else {
            r.head.clone()
        };
        let aggregate = r.aggregate.clone().map(|mut a| {
            if head_temporal {
                a.position -= 1;
            }
            a
        });
        let at_head_state = |s: &StateTerm| -> bool {
            match (&facts.head_state, s) {
                (StateTerm::Succ(j), StateTerm::Succ(k)) => j == k,
                (StateTerm::Succ(_), _) => false,
                (StateTerm::Current, StateTerm::Var(_)) => *s == facts.current,
                (h, s) => h == s,
            }
        };
        let temporal_var = match &facts.current {
            StateTerm::Var(v) => Some(v.clone()),
            _ => None,
        };
        let mut body = Vec::new();
        for a in &r.body {
            let renamed = match a.role {
                AtomRole::Extensional | AtomRole::Intensional if info.temporal.contains(&a.predicate) => {
                    let prefix = if at_head_state(&state_of(a, &info)) { "new_" } else { "old_" };
                    rename_dropping_state(a, prefix, true)
                }
                AtomRole::Extensional | AtomRole::Intensional if info.views.contains(&a.predicate) => {
                    rename_dropping_state(a, if is_y { "old_" } else { "new_" }, false)
                }
                AtomRole::Function { inputs } if inputs > 0 => {
                    let prefix = match (&a.args[0], &temporal_var) {
                        (Term::Var(v), Some(j)) if v == j => Some(if is_y { "old_" } else { "new_" }),
                        (Term::Succ(v), Some(j)) if v == j => Some("new_"),
                        _ => None,
                    };
                    match prefix {
                        Some(prefix) => {
                            let renamed = rename_dropping_state(a, prefix, true);
                            if let Some(u) = p.udf(&a.predicate) {
                                if !udfs.iter().any(|d| d.name == renamed.predicate) {
                                    udfs.push(UdfDecl { name: renamed.predicate.clone(), input_arity: u.input_arity - 1, ..u.clone() });
                                }
                            }
                            renamed
                        }
                        None => a.clone(),
                    }
                }
                _ => a.clone(),
            };
            body.push(renamed);
        }
        out.rules.push(Rule { label: r.label.clone(), head, aggregate, body, temporal: None, line: r.line });
    }
    out.udf_decls = udfs;
    Ok(XyProgram { program: out, roles })
}

/// Nonrecursive predicates computed from recursive ones.
fn depends_on_recursion(p: &Program, info: &PredicateInfo) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = BTreeSet::new();
    loop {
        let mut grew = false;
        for r in &p.rules {
            if info.recursive.contains(&r.head.predicate) || out.contains(&r.head.predicate) {
                continue;
            }
            if r.body.iter().any(|a| info.recursive.contains(&a.predicate) || out.contains(&a.predicate)) {
                out.insert(r.head.predicate.clone());
                grew = true;
            }
        }
        if !grew {
            return out;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Strata {
    pub assignment: BTreeMap<String, usize>,
    pub count: usize,
    /// Rules fired once before iterating, in order.
    pub init: Vec<usize>,
    /// Rules fired each iteration, in order.
    pub iteration: Vec<usize>,
    /// Rules fired after the fixpoint.
    pub post: Vec<usize>,
}

pub fn stratify(xy: &XyProgram) -> Result<Strata, StratError> {
    let p = &xy.program;
    let g = build_dependency_graph(p);
    let idx = g.index();
    let (comps, comp_of) = g.components();
    for comp in &comps {
        let bad = g.edges.iter().find(|e| {
            e.kind != EdgeKind::Positive && comp.contains(&idx[e.from.as_str()]) && comp.contains(&idx[e.to.as_str()])
        });
        if let Some(e) = bad {
            let mut cycle: Vec<String> = comp.iter().map(|&i| g.nodes[i].clone()).collect();
            if cycle.len() == 1 {
                cycle.push(e.to.clone());
            }
            return Err(StratError::NotStratifiable { cycle });
        }
    }
    let mut level = vec![0usize; comps.len()];
    for (c, members) in comps.iter().enumerate() {
        for e in &g.edges {
            let (f, t) = (comp_of[idx[e.from.as_str()]], comp_of[idx[e.to.as_str()]]);
            if t == c && f != c {
                let w = usize::from(e.kind != EdgeKind::Positive);
                level[c] = level[c].max(level[f] + w);
            }
        }
        let _ = members;
    }
    let assignment: BTreeMap<String, usize> =
        g.nodes.iter().enumerate().map(|(i, n)| (n.clone(), level[comp_of[i]])).collect();
    let count = assignment.values().copied().max().map_or(0, |m| m + 1);

    let order = |role: RuleRole| -> Vec<usize> {
        let rules: Vec<usize> = (0..p.rules.len()).filter(|&i| xy.roles[i] == role).collect();
        schedule(p, &rules, &assignment)
    };
    let mut iteration = order(RuleRole::X);
    iteration.extend(order(RuleRole::Y));
    Ok(Strata { init: order(RuleRole::Init), iteration, post: order(RuleRole::Post), assignment, count })
}

/// Orders rules by stratum, then so that a rule follows the rules whose
/// heads it reads, then by source position.
fn schedule(p: &Program, rules: &[usize], assignment: &BTreeMap<String, usize>) -> Vec<usize> {
    let mut remaining: Vec<usize> = rules.to_vec();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let ready: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                let r = &p.rules[i];
                !remaining.iter().any(|&j| {
                    j != i
                        && p.rules[j].head.predicate != r.head.predicate
                        && r.body.iter().any(|a| !a.negated && a.predicate == p.rules[j].head.predicate)
                })
            })
            .collect();
        let pool = if ready.is_empty() { remaining.clone() } else { ready };
        let next = *pool
            .iter()
            .min_by_key(|&&i| (assignment.get(&p.rules[i].head.predicate).copied().unwrap_or(0), i))
            .expect("non-empty pool");
        out.push(next);
        remaining.retain(|&i| i != next);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub xy_stratified: bool,
    pub classes: Vec<RuleClass>,
    pub violations: Vec<StratViolation>,
    pub transformed: Option<XyProgram>,
    pub strata: Option<Strata>,
}

pub fn check(p: &Program) -> Verdict {
    let (classes, mut violations) = classify_with_violations(p);
    let mut transformed = None;
    let mut strata = None;
    if violations.is_empty() {
        match xy_transform(p) {
            Ok(xy) => {
                match stratify(&xy) {
                    Ok(s) => strata = Some(s),
                    Err(e) => violations.push(StratViolation { rule: None, clause: None, message: e.to_string() }),
                }
                transformed = Some(xy);
            }
            Err(StratError::IllFormed(vs)) => violations.extend(vs),
            Err(e) => violations.push(StratViolation { rule: None, clause: None, message: e.to_string() }),
        }
    }
    Verdict { xy_stratified: violations.is_empty() && strata.is_some(), classes, violations, transformed, strata }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "xy-stratified: {}", if self.xy_stratified { "yes" } else { "no" })?;
        writeln!(f, "rules:")?;
        let labels: Vec<String> = match &self.transformed {
            Some(xy) => xy.program.rules.iter().enumerate().map(|(i, r)| r.display_label(i)).collect(),
            None => (0..self.classes.len()).map(|i| format!("rule#{}", i + 1)).collect(),
        };
        for (i, c) in self.classes.iter().enumerate() {
            writeln!(f, "  {}: {}", labels.get(i).cloned().unwrap_or_default(), c.name())?;
        }
        if !self.violations.is_empty() {
            writeln!(f, "violations:")?;
            for v in &self.violations {
                match v.clause {
                    Some(c) => writeln!(f, "  [{c}] {}", v.message)?,
                    None => writeln!(f, "  {}", v.message)?,
                }
            }
        }
        if let Some(xy) = &self.transformed {
            writeln!(f, "transformed:")?;
            for r in &xy.program.rules {
                writeln!(f, "  {r}")?;
            }
        }
        if let (Some(s), Some(xy)) = (&self.strata, &self.transformed) {
            writeln!(f, "strata: {}", s.count)?;
            for k in 0..s.count {
                let preds: Vec<&str> = s
                    .assignment
                    .iter()
                    .filter(|(p, &l)| l == k && xy.program.rules.iter().any(|r| &r.head.predicate == *p))
                    .map(|(p, _)| p.as_str())
                    .collect();
                writeln!(f, "  {k}: {}", preds.join(", "))?;
            }
            let names = |v: &[usize]| v.iter().map(|&i| xy.program.rules[i].display_label(i)).collect::<Vec<_>>().join(", ");
            writeln!(f, "schedule:")?;
            writeln!(f, "  init: {}", names(&s.init))?;
            writeln!(f, "  iteration: {}", names(&s.iteration))?;
            if !s.post.is_empty() {
                writeln!(f, "  after fixpoint: {}", names(&s.post))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalog::{parse_program, IMRU_TEMPLATE, PREGEL_TEMPLATE};

    fn labels(p: &Program, v: &[usize]) -> Vec<String> {
        v.iter().map(|&i| p.rules[i].label.clone().unwrap()).collect()
    }

    #[test]
    fn imru_transform_matches_expected_text() {
        let p = parse_program(IMRU_TEMPLATE).unwrap();
        let xy = xy_transform(&p).unwrap();
        let expected = "\
G1: new_model(M) :- init_model(M).
G2: new_collect(reduce<S>) :- new_model(M), training_data(Id, R), map(R, M, S).
G3: new_model(NewM) :- old_collect(AggrS), old_model(M), old_update(M, AggrS, NewM), M != NewM.
";
        assert_eq!(xy.program.rules_text(), expected);
        let s = stratify(&xy).unwrap();
        assert_eq!(labels(&p, &s.init), ["G1"]);
        assert_eq!(labels(&p, &s.iteration), ["G2", "G3"]);
        assert_eq!(s.count, 2);
        assert_eq!(s.assignment["new_collect"], 1);
        assert_eq!(s.assignment["new_model"], 0);
    }

    #[test]
    fn pregel_classes_and_schedule() {
        let p = parse_program(PREGEL_TEMPLATE).unwrap();
        let classes = classify_rules(&p);
        use RuleClass::*;
        assert_eq!(classes, vec![NonRecursive, XRule, XRule, XRule, XRule, XRule, YRule, YRule]);
        let v = check(&p);
        assert!(v.xy_stratified, "{v}");
        let s = v.strata.unwrap();
        assert_eq!(labels(&p, &s.init), ["L1", "L2"]);
        assert_eq!(labels(&p, &s.iteration), ["L3", "L4", "L5", "L6", "L7", "L8"]);
        assert_eq!(s.count, 2);
    }

    #[test]
    fn dependency_graph_edges() {
        let p = parse_program(IMRU_TEMPLATE).unwrap();
        let g = build_dependency_graph(&p);
        assert_eq!(g.edge_kinds("model", "collect"), vec![EdgeKind::Aggregated]);
        assert_eq!(g.edge_kinds("collect", "model"), vec![EdgeKind::Positive]);
        let p = parse_program(PREGEL_TEMPLATE).unwrap();
        let g = build_dependency_graph(&p);
        assert_eq!(g.edge_kinds("vertex", "maxVertexJ"), vec![EdgeKind::Aggregated]);
        assert!(g.has_edge("superstep", "vertex"));
        assert!(g.has_edge("send", "collect"));
    }

    #[test]
    fn mutated_heads_name_the_successor_clause() {
        let src = IMRU_TEMPLATE.replace("G3: model(J+1, NewM)", "G3: model(J, NewM)");
        let p = parse_program(&src).unwrap();
        let v = check(&p);
        assert!(!v.xy_stratified);
        assert_eq!(v.classes[2], RuleClass::IllFormed(vec![Clause::YSuccessorHead]));
        assert_eq!(v.classes[1], RuleClass::XRule);
    }

    #[test]
    fn self_negation_is_rejected() {
        let p = parse_program(".decl e(X)\np(X) :- e(X), !p(X).").unwrap();
        let v = check(&p);
        assert!(!v.xy_stratified);
        assert!(v.violations.iter().any(|x| x.clause == Some(Clause::TemporalArgument)));
    }

    #[test]
    fn nonrecursive_programs_stratify() {
        let p = parse_program(".decl e(X, Y)\np(X) :- e(X, _).\nq(X) :- e(X, _), !p(X).").unwrap();
        let v = check(&p);
        assert!(v.xy_stratified, "{v}");
        let s = v.strata.unwrap();
        assert_eq!(s.assignment["q"], 1);
        assert_eq!(s.init, vec![0, 1]);
    }
}
