//! Recursion and temporal-argument detection.
//!
//! A recursive predicate is temporal when its first argument carries the
//! state index: it appears somewhere with a `J+1` or integer first argument,
//! or every rule defining it puts the rule's temporal variable first.
//! Recursive predicates without a temporal argument are current-state views.

use std::collections::{BTreeSet, HashMap};

use super::ast::*;
use crate::graph::tarjan_scc;
use crate::value::Value;

#[derive(Clone, Debug, Default)]
pub struct PredicateInfo {
    pub recursive: BTreeSet<String>,
    pub temporal: BTreeSet<String>,
    /// Recursive predicates without a temporal argument.
    pub views: BTreeSet<String>,
    /// Strongly connected component of each recursive predicate.
    pub component: HashMap<String, usize>,
}

impl PredicateInfo {
    pub fn same_component(&self, a: &str, b: &str) -> bool {
        matches!((self.component.get(a), self.component.get(b)), (Some(x), Some(y)) if x == y)
    }
}

/// Predicates of `p` (relational and functional) in first-occurrence order.
pub fn predicate_nodes(p: &Program) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut add = |s: &str| {
        if !out.iter().any(|x| x == s) {
            out.push(s.to_string());
        }
    };
    for d in &p.edb_decls {
        add(&d.name);
    }
    for r in &p.rules {
        add(&r.head.predicate);
        for a in &r.body {
            if !matches!(a.role, AtomRole::Comparison(_)) {
                add(&a.predicate);
            }
        }
    }
    out
}

pub fn recursive_predicates(p: &Program) -> BTreeSet<String> {
    recursive_components(p).into_keys().collect()
}

fn recursive_components(p: &Program) -> HashMap<String, usize> {
    let nodes = predicate_nodes(p);
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut adj = vec![Vec::new(); nodes.len()];
    let mut self_loop = vec![false; nodes.len()];
    for r in &p.rules {
        let h = index[r.head.predicate.as_str()];
        for a in &r.body {
            if matches!(a.role, AtomRole::Comparison(_)) {
                continue;
            }
            let b = index[a.predicate.as_str()];
            adj[b].push(h);
            if b == h {
                self_loop[h] = true;
            }
        }
    }
    let mut out = HashMap::new();
    for (c, comp) in tarjan_scc(nodes.len(), &adj).into_iter().enumerate() {
        if comp.len() > 1 || self_loop[comp[0]] {
            out.extend(comp.iter().map(|&i| (nodes[i].clone(), c)));
        }
    }
    out
}

fn first_arg(a: &Atom) -> Option<&Term> {
    a.args.first()
}

fn is_state_marker(t: Option<&Term>) -> bool {
    matches!(t, Some(Term::Succ(_)) | Some(Term::Const(Value::Int(_))))
}

pub fn predicate_info(p: &Program) -> PredicateInfo {
    let component = recursive_components(p);
    let recursive: BTreeSet<String> = component.keys().cloned().collect();
    let mut temporal: BTreeSet<String> = BTreeSet::new();
    for r in &p.rules {
        let atoms = std::iter::once(&r.head).chain(r.body.iter().filter(|a| a.is_relational()));
        for a in atoms {
            if recursive.contains(&a.predicate) && is_state_marker(first_arg(a)) {
                temporal.insert(a.predicate.clone());
            }
        }
    }
    loop {
        let mut added = false;
        for pred in &recursive {
            if temporal.contains(pred) {
                continue;
            }
            let defs: Vec<&Rule> = p.rules.iter().filter(|r| &r.head.predicate == pred).collect();
            let all_temporal = !defs.is_empty()
                && defs.iter().all(|r| match first_arg(&r.head) {
                    Some(Term::Var(v)) => r.body.iter().any(|b| {
                        b.is_relational() && temporal.contains(&b.predicate) && first_arg(b) == Some(&Term::Var(v.clone()))
                    }),
                    _ => false,
                })
                && r_aggregate_not_first(&defs);
            if all_temporal {
                temporal.insert(pred.clone());
                added = true;
            }
        }
        if !added {
            break;
        }
    }
    let views = recursive.difference(&temporal).cloned().collect();
    PredicateInfo { recursive, temporal, views, component }
}

fn r_aggregate_not_first(defs: &[&Rule]) -> bool {
    defs.iter().all(|r| r.aggregate.as_ref().is_none_or(|a| a.position != 0))
}

/// Fills `Rule::temporal` for rules whose head is a temporal predicate with a
/// variable or successor first argument.
pub fn annotate_temporal(p: &mut Program) {
    let info = predicate_info(p);
    for r in &mut p.rules {
        r.temporal = if info.temporal.contains(&r.head.predicate) {
            match first_arg(&r.head) {
                Some(Term::Var(v)) => Some(Temporal { var: v.clone(), head_offset: 0 }),
                Some(Term::Succ(v)) => Some(Temporal { var: v.clone(), head_offset: 1 }),
                _ => None,
            }
        } else {
            None
        };
    }
}
