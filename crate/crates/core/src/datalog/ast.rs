use std::fmt;

use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub edb_decls: Vec<EdbDecl>,
    pub udf_decls: Vec<UdfDecl>,
    pub consts: Vec<ConstDecl>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdbDecl {
    pub name: String,
    pub attrs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UdfDecl {
    pub name: String,
    pub input_arity: usize,
    pub output_arity: usize,
    pub is_aggregate: bool,
    pub is_commutative_associative: bool,
}

/// Named constant. Declared without a literal, it stands for a distinguished
/// blob holding the name's bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstDecl {
    pub name: String,
    pub value: Value,
    pub explicit: bool,
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub label: Option<String>,
    pub head: Atom,
    pub aggregate: Option<HeadAggregate>,
    pub body: Vec<Atom>,
    pub temporal: Option<Temporal>,
    pub line: usize,
}

/// Source lines are ignored so that reprinted programs compare equal.
impl PartialEq for Rule {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.head == other.head
            && self.aggregate == other.aggregate
            && self.body == other.body
            && self.temporal == other.temporal
    }
}

/// `name<Var>` at `position` of the head. The head keeps the aggregated term
/// at that position.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadAggregate {
    pub position: usize,
    pub name: String,
    pub over: Term,
}

/// The temporal variable of a rule whose head is a temporal predicate, and
/// whether the head sits at `var` (offset 0) or `var+1` (offset 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Temporal {
    pub var: String,
    pub head_offset: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
    pub negated: bool,
    pub role: AtomRole,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomRole {
    Extensional,
    Intensional,
    Function { inputs: usize },
    Comparison(CmpOp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Var(String),
    Wildcard,
    /// `V+1`
    Succ(String),
    Const(Value),
    /// Reference to a declared constant.
    Symbol(String),
    /// `{t}`: a set-valued column unnested element by element.
    Set(Box<Term>),
    Tuple(Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Variables occurring in the term, in order.
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) | Term::Succ(v) => out.push(v.clone()),
            Term::Set(t) => t.vars(out),
            Term::Tuple(ts) => ts.iter().for_each(|t| t.vars(out)),
            Term::Wildcard | Term::Const(_) | Term::Symbol(_) => {}
        }
    }
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>, role: AtomRole) -> Atom {
        Atom { predicate: predicate.to_string(), args, negated: false, role }
    }

    pub fn comparison(op: CmpOp, lhs: Term, rhs: Term) -> Atom {
        Atom { predicate: op.symbol().to_string(), args: vec![lhs, rhs], negated: false, role: AtomRole::Comparison(op) }
    }

    pub fn is_relational(&self) -> bool {
        matches!(self.role, AtomRole::Extensional | AtomRole::Intensional)
    }

    pub fn is_function(&self) -> bool {
        matches!(self.role, AtomRole::Function { .. })
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.args.iter().for_each(|t| t.vars(&mut out));
        out
    }
}

impl Rule {
    pub fn display_label(&self, index: usize) -> String {
        self.label.clone().unwrap_or_else(|| format!("rule#{}", index + 1))
    }
}

impl Program {
    pub fn edb(&self, name: &str) -> Option<&EdbDecl> {
        self.edb_decls.iter().find(|d| d.name == name)
    }

    pub fn udf(&self, name: &str) -> Option<&UdfDecl> {
        self.udf_decls.iter().find(|d| d.name == name)
    }

    pub fn constant(&self, name: &str) -> Option<&Value> {
        self.consts.iter().find(|c| c.name == name).map(|c| &c.value)
    }

    /// Predicates defined by at least one rule.
    pub fn idb_predicates(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rules {
            if !out.contains(&r.head.predicate) {
                out.push(r.head.predicate.clone());
            }
        }
        out
    }

    pub fn rule_by_label(&self, label: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.label.as_deref() == Some(label))
    }

    /// Rules printed one per line, without headers.
    pub fn rules_text(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Symbol(v) => write!(f, "{v}"),
            Term::Wildcard => write!(f, "_"),
            Term::Succ(v) => write!(f, "{v}+1"),
            Term::Const(c) => write!(f, "{c}"),
            Term::Set(t) => write!(f, "{{{t}}}"),
            Term::Tuple(ts) => {
                write!(f, "(")?;
                write_list(f, ts)?;
                write!(f, ")")
            }
        }
    }
}

fn write_list<T: fmt::Display>(f: &mut fmt::Formatter<'_>, items: &[T]) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let AtomRole::Comparison(op) = self.role {
            return write!(f, "{} {} {}", self.args[0], op.symbol(), self.args[1]);
        }
        if self.negated {
            write!(f, "!")?;
        }
        write!(f, "{}(", self.predicate)?;
        write_list(f, &self.args)?;
        write!(f, ")")
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = &self.label {
            write!(f, "{l}: ")?;
        }
        write!(f, "{}(", self.head.predicate)?;
        for (i, t) in self.head.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match &self.aggregate {
                Some(a) if a.position == i => write!(f, "{}<{}>", a.name, a.over)?,
                _ => write!(f, "{t}")?,
            }
        }
        write!(f, ")")?;
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            write_list(f, &self.body)?;
        }
        write!(f, ".")
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.edb_decls {
            writeln!(f, ".decl {}({})", d.name, d.attrs.join(", "))?;
        }
        for u in &self.udf_decls {
            if u.is_aggregate {
                let flags = if u.is_commutative_associative { " commutative associative" } else { "" };
                writeln!(f, ".agg {}{flags}", u.name)?;
            } else {
                writeln!(f, ".udf {}/{} -> {}", u.name, u.input_arity, u.output_arity)?;
            }
        }
        for c in &self.consts {
            if c.explicit {
                writeln!(f, ".const {} = {}", c.name, c.value)?;
            } else {
                writeln!(f, ".const {}", c.name)?;
            }
        }
        for r in &self.rules {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}
