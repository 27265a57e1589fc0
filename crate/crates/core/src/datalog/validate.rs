use std::collections::{BTreeSet, HashMap};
use std::fmt;

use super::analysis::predicate_info;
use super::ast::*;

pub const BUILTIN_AGGREGATES: [&str; 4] = ["max", "min", "sum", "count"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    RangeRestriction,
    UnboundVariable,
    UnknownAggregate,
    UnknownPredicate,
    ArityMismatch,
    SetInHead,
    WildcardInHead,
    TemporalPosition,
    SuccessorPosition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            match v.rule {
                Some(r) => writeln!(f, "rule {}: {:?}: {}", r + 1, v.kind, v.message)?,
                None => writeln!(f, "{:?}: {}", v.kind, v.message)?,
            }
        }
        Ok(())
    }
}

fn contains_set(t: &Term) -> bool {
    match t {
        Term::Set(_) => true,
        Term::Tuple(ts) => ts.iter().any(contains_set),
        _ => false,
    }
}

fn contains_succ(t: &Term) -> bool {
    match t {
        Term::Succ(_) => true,
        Term::Set(inner) => contains_succ(inner),
        Term::Tuple(ts) => ts.iter().any(contains_succ),
        _ => false,
    }
}

/// Variables bound by the positive body: relational atoms bind all their
/// variables, functions bind their outputs once their inputs are bound.
pub fn bound_vars(rule: &Rule) -> (BTreeSet<String>, Vec<String>) {
    let mut bound: BTreeSet<String> = BTreeSet::new();
    for a in &rule.body {
        if a.is_relational() && !a.negated {
            bound.extend(a.vars());
        }
    }
    let mut pending: Vec<&Atom> = rule.body.iter().filter(|a| a.is_function()).collect();
    loop {
        let before = pending.len();
        pending.retain(|a| {
            let AtomRole::Function { inputs } = a.role else { unreachable!() };
            let mut ins = Vec::new();
            a.args[..inputs].iter().for_each(|t| t.vars(&mut ins));
            if ins.iter().all(|v| bound.contains(v)) {
                a.args[inputs..].iter().for_each(|t| {
                    let mut outs = Vec::new();
                    t.vars(&mut outs);
                    bound.extend(outs);
                });
                false
            } else {
                true
            }
        });
        if pending.len() == before {
            break;
        }
    }
    let mut unbound_inputs = Vec::new();
    for a in pending {
        let AtomRole::Function { inputs } = a.role else { unreachable!() };
        let mut ins = Vec::new();
        a.args[..inputs].iter().for_each(|t| t.vars(&mut ins));
        unbound_inputs.extend(ins.into_iter().filter(|v| !bound.contains(v)));
    }
    (bound, unbound_inputs)
}

/// Evaluation order of a rule body: at each step the first literal, in
/// source order, whose inputs are bound. Positive relational atoms are
/// always ready; functions need their inputs; comparisons and negated atoms
/// need all their variables.
pub fn literal_order(rule: &Rule, prebound: &[String]) -> Result<Vec<usize>, String> {
    let mut bound: BTreeSet<String> = prebound.iter().cloned().collect();
    let mut remaining: Vec<usize> = (0..rule.body.len()).collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let ready = remaining.iter().position(|&i| {
            let a = &rule.body[i];
            match a.role {
                AtomRole::Function { inputs } => {
                    let mut ins = Vec::new();
                    a.args[..inputs].iter().for_each(|t| t.vars(&mut ins));
                    ins.iter().all(|v| bound.contains(v))
                }
                AtomRole::Comparison(_) => a.vars().iter().all(|v| bound.contains(v)),
                _ if a.negated => a.vars().iter().all(|v| bound.contains(v)),
                _ => true,
            }
        });
        let Some(k) = ready else {
            let a = &rule.body[remaining[0]];
            return Err(format!("no evaluation order binds the inputs of `{a}`"));
        };
        let i = remaining.remove(k);
        bound.extend(rule.body[i].vars());
        out.push(i);
    }
    Ok(out)
}

pub fn validate(program: &Program) -> ValidationReport {
    let mut out = Vec::new();
    let info = predicate_info(program);
    let defined: BTreeSet<&str> = program.rules.iter().map(|r| r.head.predicate.as_str()).collect();
    let mut arity: HashMap<&str, usize> = program.edb_decls.iter().map(|d| (d.name.as_str(), d.attrs.len())).collect();

    for (i, r) in program.rules.iter().enumerate() {
        let label = r.display_label(i);
        let mut push = |kind: ViolationKind, message: String| out.push(Violation { rule: Some(i), kind, message });

        let (bound, unbound_inputs) = bound_vars(r);
        for v in unbound_inputs {
            push(ViolationKind::UnboundVariable, format!("{label}: function input `{v}` is never bound"));
        }
        let mut head_vars = Vec::new();
        for (pos, t) in r.head.args.iter().enumerate() {
            if contains_set(t) {
                push(ViolationKind::SetInHead, format!("{label}: set-valued term in head position {pos}"));
            }
            if *t == Term::Wildcard {
                push(ViolationKind::WildcardInHead, format!("{label}: wildcard in head position {pos}"));
            }
            if pos > 0 && contains_succ(t) {
                push(ViolationKind::SuccessorPosition, format!("{label}: successor term outside the first argument"));
            }
            t.vars(&mut head_vars);
        }
        for v in head_vars {
            if !bound.contains(&v) {
                push(ViolationKind::RangeRestriction, format!("{label}: head variable `{v}` not bound by a positive body atom"));
            }
        }
        if let Some(agg) = &r.aggregate {
            let declared = program.udf(&agg.name).is_some_and(|u| u.is_aggregate);
            if !declared && !BUILTIN_AGGREGATES.contains(&agg.name.as_str()) {
                push(ViolationKind::UnknownAggregate, format!("{label}: unknown aggregate `{}`", agg.name));
            }
        }
        for a in &r.body {
            match a.role {
                AtomRole::Comparison(_) => {
                    for v in a.vars() {
                        if !bound.contains(&v) {
                            push(ViolationKind::UnboundVariable, format!("{label}: comparison variable `{v}` is never bound"));
                        }
                    }
                }
                AtomRole::Function { .. } => {
                    if program.udf(&a.predicate).is_none() {
                        push(ViolationKind::UnknownPredicate, format!("{label}: undeclared function `{}`", a.predicate));
                    }
                }
                AtomRole::Extensional | AtomRole::Intensional => {
                    if program.edb(&a.predicate).is_none() && !defined.contains(a.predicate.as_str()) {
                        push(ViolationKind::UnknownPredicate, format!("{label}: predicate `{}` is neither declared nor defined", a.predicate));
                    }
                    if a.negated {
                        for v in a.vars() {
                            if !bound.contains(&v) {
                                push(ViolationKind::UnboundVariable, format!("{label}: variable `{v}` occurs only under negation"));
                            }
                        }
                    }
                }
            }
            for (pos, t) in a.args.iter().enumerate() {
                if contains_succ(t) && (pos > 0 || !a.is_relational()) {
                    push(ViolationKind::SuccessorPosition, format!("{label}: successor term outside the first argument of `{}`", a.predicate));
                }
            }
        }
        let relational = std::iter::once(&r.head).chain(r.body.iter().filter(|a| a.is_relational()));
        for a in relational {
            match arity.get(a.predicate.as_str()) {
                Some(&n) if n != a.args.len() => push(
                    ViolationKind::ArityMismatch,
                    format!("{label}: `{}` used with arity {} but has arity {n}", a.predicate, a.args.len()),
                ),
                Some(_) => {}
                None => {
                    arity.insert(a.predicate.as_str(), a.args.len());
                }
            }
            if info.temporal.contains(&a.predicate) {
                if let Some(tv) = &r.temporal {
                    let misplaced = a.args.iter().skip(1).any(|t| {
                        let mut vs = Vec::new();
                        t.vars(&mut vs);
                        vs.contains(&tv.var)
                    });
                    if misplaced {
                        push(
                            ViolationKind::TemporalPosition,
                            format!("{label}: temporal variable `{}` must be the first argument of `{}`", tv.var, a.predicate),
                        );
                    }
                }
                if !matches!(a.args.first(), Some(Term::Var(_) | Term::Succ(_) | Term::Const(_))) {
                    push(
                        ViolationKind::TemporalPosition,
                        format!("{label}: `{}` needs a state index as its first argument", a.predicate),
                    );
                }
            }
        }
    }
    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datalog::parse_program;

    #[test]
    fn unknown_aggregate_is_reported() {
        let p = parse_program(".decl s(J, Id, M)\nc(Id, combine<M>) :- s(J, Id, M).").unwrap();
        let r = validate(&p);
        assert!(r.has(ViolationKind::UnknownAggregate), "{r}");
    }

    #[test]
    fn range_restriction_and_negation_safety() {
        let p = parse_program(".decl e(A)\np(X, Y) :- e(X).\nq(X) :- e(Y), !e(X).").unwrap();
        let r = validate(&p);
        assert!(r.has(ViolationKind::RangeRestriction));
        assert!(r.has(ViolationKind::UnboundVariable));
    }

    #[test]
    fn set_in_head_is_rejected() {
        let p = parse_program(".decl e(A)\np({X}) :- e(X).").unwrap();
        assert!(validate(&p).has(ViolationKind::SetInHead));
    }

    #[test]
    fn function_outputs_bind() {
        let p = parse_program(".decl e(A)\n.udf f/1 -> 1\np(Y) :- e(X), f(X, Y).").unwrap();
        assert!(validate(&p).is_ok());
    }
}
