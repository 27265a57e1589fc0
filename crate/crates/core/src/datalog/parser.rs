use std::collections::HashMap;
use std::sync::Arc;

use super::analysis;
use super::ast::*;
use crate::value::Value;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("arity mismatch for `{predicate}` at line {line}: expected {expected}, found {found}")]
    ArityMismatch { predicate: String, expected: usize, found: usize, line: usize },
    #[error("undeclared UDF `{name}` at line {line}")]
    UndeclaredUdf { name: String, line: usize },
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Blob(Vec<u8>),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    ColonDash,
    Colon,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    Bang,
    Plus,
    Minus,
    Slash,
    Arrow,
    Eof,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, col, msg: msg.into() }
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '%' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line: l0, col: c0 });
        if c == 'x' && chars.get(i + 1) == Some(&'"') {
            bump!();
            bump!();
            let mut hex = String::new();
            while i < chars.len() && chars[i] != '"' {
                hex.push(chars[i]);
                bump!();
            }
            if i >= chars.len() {
                return Err(syntax(l0, c0, "unterminated blob literal"));
            }
            bump!();
            if !hex.len().is_multiple_of(2) {
                return Err(syntax(l0, c0, "blob literal needs an even number of hex digits"));
            }
            let bytes = (0..hex.len())
                .step_by(2)
                .map(|k| u8::from_str_radix(&hex[k..k + 2], 16))
                .collect::<Result<Vec<u8>, _>>()
                .map_err(|_| syntax(l0, c0, "invalid hex digit in blob literal"))?;
            push(&mut out, Tok::Blob(bytes));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                bump!();
            }
            push(&mut out, Tok::Ident(s));
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                bump!();
            }
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                is_float = true;
                s.push('.');
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(chars[i]);
                    bump!();
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    is_float = true;
                    while i < j {
                        s.push(chars[i]);
                        bump!();
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(chars[i]);
                        bump!();
                    }
                }
            }
            let tok = if is_float {
                Tok::Float(s.parse().map_err(|_| syntax(l0, c0, "invalid float literal"))?)
            } else {
                Tok::Int(s.parse().map_err(|_| syntax(l0, c0, "integer literal out of range"))?)
            };
            push(&mut out, tok);
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                if i >= chars.len() {
                    return Err(syntax(l0, c0, "unterminated string literal"));
                }
                let ch = chars[i];
                bump!();
                match ch {
                    '"' => break,
                    '\\' => {
                        if i >= chars.len() {
                            return Err(syntax(l0, c0, "unterminated string literal"));
                        }
                        let e = chars[i];
                        bump!();
                        match e {
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            'r' => s.push('\r'),
                            '0' => s.push('\0'),
                            '\\' | '"' | '\'' => s.push(e),
                            'u' => {
                                if i >= chars.len() || chars[i] != '{' {
                                    return Err(syntax(line, col, "expected `{` in unicode escape"));
                                }
                                bump!();
                                let mut hex = String::new();
                                while i < chars.len() && chars[i] != '}' {
                                    hex.push(chars[i]);
                                    bump!();
                                }
                                if i >= chars.len() {
                                    return Err(syntax(line, col, "unterminated unicode escape"));
                                }
                                bump!();
                                let ch = u32::from_str_radix(&hex, 16)
                                    .ok()
                                    .and_then(char::from_u32)
                                    .ok_or_else(|| syntax(line, col, "invalid unicode escape"))?;
                                s.push(ch);
                            }
                            other => return Err(syntax(line, col, format!("unknown escape `\\{other}`"))),
                        }
                    }
                    _ => s.push(ch),
                }
            }
            push(&mut out, Tok::Str(s));
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, width) = match (c, next) {
            (':', Some('-')) => (Tok::ColonDash, 2),
            ('<', Some('=')) => (Tok::Le, 2),
            ('>', Some('=')) => (Tok::Ge, 2),
            ('!', Some('=')) => (Tok::Ne, 2),
            ('-', Some('>')) => (Tok::Arrow, 2),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('{', _) => (Tok::LBrace, 1),
            ('}', _) => (Tok::RBrace, 1),
            (',', _) => (Tok::Comma, 1),
            ('.', _) => (Tok::Dot, 1),
            (':', _) => (Tok::Colon, 1),
            ('<', _) => (Tok::Lt, 1),
            ('>', _) => (Tok::Gt, 1),
            ('=', _) => (Tok::Eq, 1),
            ('!', _) => (Tok::Bang, 1),
            ('+', _) => (Tok::Plus, 1),
            ('-', _) => (Tok::Minus, 1),
            ('/', _) => (Tok::Slash, 1),
            _ => return Err(syntax(l0, c0, format!("unexpected character `{c}`"))),
        };
        for _ in 0..width {
            bump!();
        }
        push(&mut out, tok);
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

fn is_var_name(s: &str) -> bool {
    s.chars().next().is_some_and(|c| c.is_uppercase() || c == '_') && s != "_"
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

/// Raw statement before predicate roles are resolved.
enum RawAtom {
    Rel { pred: String, args: Vec<Term>, negated: bool, line: usize },
    Cmp(CmpOp, Term, Term),
}

struct RawRule {
    label: Option<String>,
    head_pred: String,
    head_args: Vec<Term>,
    aggregate: Option<HeadAggregate>,
    body: Vec<RawAtom>,
    line: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let s = &self.toks[self.pos];
        (s.line, s.col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (l, c) = self.here();
        Err(syntax(l, c, msg))
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            self.err(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            other => self.err(format!("expected {what}, found {other:?}")),
        }
    }

    fn uint(&mut self, what: &str) -> Result<usize, ParseError> {
        match self.peek().clone() {
            Tok::Int(i) if i >= 0 => {
                self.next();
                Ok(i as usize)
            }
            other => self.err(format!("expected {what}, found {other:?}")),
        }
    }

    /// Consumes a trailing `.` after a directive unless it starts the next one.
    fn optional_dot(&mut self) {
        if *self.peek() != Tok::Dot {
            return;
        }
        let dot = &self.toks[self.pos];
        let next = &self.toks[(self.pos + 1).min(self.toks.len() - 1)];
        let starts_directive = matches!(next.tok, Tok::Ident(_)) && next.line == dot.line && next.col == dot.col + 1;
        if !starts_directive {
            self.next();
        }
    }

    fn literal_value(&mut self) -> Result<Option<Value>, ParseError> {
        let neg = if *self.peek() == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let v = match self.peek().clone() {
            Tok::Int(i) => Value::Int(if neg { -i } else { i }),
            Tok::Float(f) => Value::Float(if neg { -f } else { f }),
            _ if neg => return self.err("expected a number after `-`"),
            Tok::Str(s) => Value::Str(Arc::from(s.as_str())),
            Tok::Blob(b) => Value::Blob(Arc::from(b)),
            Tok::Ident(s) if s == "null" => Value::Null,
            Tok::Ident(s) if s == "true" => Value::Bool(true),
            Tok::Ident(s) if s == "false" => Value::Bool(false),
            _ => return Ok(None),
        };
        self.next();
        Ok(Some(v))
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        if let Some(v) = self.literal_value()? {
            return Ok(Term::Const(v));
        }
        match self.peek().clone() {
            Tok::LBrace => {
                self.next();
                let inner = self.term()?;
                self.expect(Tok::RBrace, "`}`")?;
                Ok(Term::Set(Box::new(inner)))
            }
            Tok::LParen => {
                self.next();
                let mut items = vec![self.term()?];
                while *self.peek() == Tok::Comma {
                    self.next();
                    items.push(self.term()?);
                }
                self.expect(Tok::RParen, "`)`")?;
                Ok(Term::Tuple(items))
            }
            Tok::Ident(s) if s == "_" => {
                self.next();
                Ok(Term::Wildcard)
            }
            Tok::Ident(s) if is_var_name(&s) => {
                self.next();
                if *self.peek() == Tok::Plus {
                    self.next();
                    match self.peek() {
                        Tok::Int(1) => {
                            self.next();
                            Ok(Term::Succ(s))
                        }
                        _ => self.err("only `+1` successor terms are supported"),
                    }
                } else {
                    Ok(Term::Var(s))
                }
            }
            other => self.err(format!("expected a term, found {other:?}")),
        }
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        };
        self.next();
        Some(op)
    }

    fn body_literal(&mut self) -> Result<RawAtom, ParseError> {
        let negated = if *self.peek() == Tok::Bang {
            self.next();
            true
        } else {
            false
        };
        let is_atom = matches!(self.peek(), Tok::Ident(s) if !is_var_name(s) && s != "_")
            && *self.peek_at(1) == Tok::LParen;
        if is_atom {
            let line = self.here().0;
            let pred = self.ident("predicate")?;
            self.expect(Tok::LParen, "`(`")?;
            let mut args = Vec::new();
            if *self.peek() != Tok::RParen {
                loop {
                    if matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Lt {
                        return self.err("aggregates are only allowed in rule heads");
                    }
                    args.push(self.term()?);
                    if *self.peek() == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RParen, "`)`")?;
            return Ok(RawAtom::Rel { pred, args, negated, line });
        }
        if negated {
            return self.err("negation applies only to atoms");
        }
        let lhs = self.term()?;
        let op = match self.cmp_op() {
            Some(op) => op,
            None => return self.err(format!("expected a comparison operator, found {:?}", self.peek())),
        };
        let rhs = self.term()?;
        Ok(RawAtom::Cmp(op, lhs, rhs))
    }

    fn rule(&mut self) -> Result<RawRule, ParseError> {
        let line = self.here().0;
        let mut label = None;
        if matches!(self.peek(), Tok::Ident(_)) && *self.peek_at(1) == Tok::Colon {
            label = Some(self.ident("label")?);
            self.next();
        }
        let head_pred = self.ident("head predicate")?;
        if is_var_name(&head_pred) {
            return self.err(format!("predicate names start with a lowercase letter: `{head_pred}`"));
        }
        self.expect(Tok::LParen, "`(`")?;
        let mut head_args = Vec::new();
        let mut aggregate = None;
        if *self.peek() != Tok::RParen {
            loop {
                let is_agg = matches!(self.peek(), Tok::Ident(s) if !is_var_name(s) && !matches!(s.as_str(), "null" | "true" | "false"))
                    && *self.peek_at(1) == Tok::Lt;
                if is_agg {
                    if aggregate.is_some() {
                        return self.err("at most one aggregate per rule head");
                    }
                    let name = self.ident("aggregate")?;
                    self.expect(Tok::Lt, "`<`")?;
                    let over = self.term()?;
                    self.expect(Tok::Gt, "`>`")?;
                    aggregate = Some(HeadAggregate { position: head_args.len(), name, over: over.clone() });
                    head_args.push(over);
                } else {
                    head_args.push(self.term()?);
                }
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        let mut body = Vec::new();
        if *self.peek() == Tok::ColonDash {
            self.next();
            loop {
                body.push(self.body_literal()?);
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Dot, "`.` at end of rule")?;
        Ok(RawRule { label, head_pred, head_args, aggregate, body, line })
    }
}

pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let mut program = Program::default();
    let mut raw_rules = Vec::new();
    while *p.peek() != Tok::Eof {
        if *p.peek() == Tok::Dot {
            p.next();
            let (line, col) = p.here();
            let kw = p.ident("directive")?;
            match kw.as_str() {
                "decl" => {
                    let name = p.ident("relation name")?;
                    let attrs = if *p.peek() == Tok::Slash {
                        p.next();
                        let n = p.uint("arity")?;
                        (0..n).map(|i| format!("a{i}")).collect()
                    } else {
                        p.expect(Tok::LParen, "`(` or `/`")?;
                        let mut attrs = Vec::new();
                        if *p.peek() != Tok::RParen {
                            loop {
                                attrs.push(p.ident("attribute")?);
                                if *p.peek() == Tok::Comma {
                                    p.next();
                                } else {
                                    break;
                                }
                            }
                        }
                        p.expect(Tok::RParen, "`)`")?;
                        attrs
                    };
                    program.edb_decls.push(EdbDecl { name, attrs });
                }
                "udf" => {
                    let name = p.ident("function name")?;
                    p.expect(Tok::Slash, "`/`")?;
                    let input_arity = p.uint("input arity")?;
                    p.expect(Tok::Arrow, "`->`")?;
                    let output_arity = p.uint("output arity")?;
                    program.udf_decls.push(UdfDecl {
                        name,
                        input_arity,
                        output_arity,
                        is_aggregate: false,
                        is_commutative_associative: false,
                    });
                }
                "agg" => {
                    let name = p.ident("aggregate name")?;
                    let (mut comm, mut assoc) = (false, false);
                    while let Tok::Ident(flag) = p.peek().clone() {
                        if *p.peek_at(1) == Tok::Colon || *p.peek_at(1) == Tok::LParen {
                            break;
                        }
                        match flag.as_str() {
                            "commutative" => comm = true,
                            "associative" => assoc = true,
                            _ => break,
                        }
                        p.next();
                    }
                    program.udf_decls.push(UdfDecl {
                        name,
                        input_arity: 1,
                        output_arity: 1,
                        is_aggregate: true,
                        is_commutative_associative: comm && assoc,
                    });
                }
                "const" => {
                    let name = p.ident("constant name")?;
                    let (value, explicit) = if *p.peek() == Tok::Eq {
                        p.next();
                        match p.literal_value()? {
                            Some(v) => (v, true),
                            None => return p.err("expected a literal after `=`"),
                        }
                    } else {
                        (Value::Blob(Arc::from(name.as_bytes())), false)
                    };
                    program.consts.push(ConstDecl { name, value, explicit });
                }
                other => return Err(syntax(line, col, format!("unknown directive `.{other}`"))),
            }
            p.optional_dot();
            continue;
        }
        raw_rules.push(p.rule()?);
    }
    resolve(program, raw_rules)
}

fn resolve_term(t: Term, consts: &[ConstDecl]) -> Term {
    match t {
        Term::Var(v) if consts.iter().any(|c| c.name == v) => Term::Symbol(v),
        Term::Set(inner) => Term::Set(Box::new(resolve_term(*inner, consts))),
        Term::Tuple(ts) => Term::Tuple(ts.into_iter().map(|t| resolve_term(t, consts)).collect()),
        other => other,
    }
}

fn resolve(mut program: Program, raw: Vec<RawRule>) -> Result<Program, ParseError> {
    let mut arity: HashMap<String, usize> = HashMap::new();
    for d in &program.edb_decls {
        arity.insert(d.name.clone(), d.attrs.len());
    }
    let mut check_arity = |pred: &str, n: usize, line: usize| -> Result<(), ParseError> {
        match arity.get(pred) {
            Some(&expected) if expected != n => Err(ParseError::ArityMismatch {
                predicate: pred.to_string(),
                expected,
                found: n,
                line,
            }),
            Some(_) => Ok(()),
            None => {
                arity.insert(pred.to_string(), n);
                Ok(())
            }
        }
    };
    let defined: Vec<String> = raw.iter().map(|r| r.head_pred.clone()).collect();
    for r in &raw {
        if program.udf(&r.head_pred).is_some() {
            return Err(syntax(r.line, 1, format!("`{}` is declared as a function and cannot be a rule head", r.head_pred)));
        }
        check_arity(&r.head_pred, r.head_args.len(), r.line)?;
    }
    for r in raw {
        let consts = &program.consts;
        let mut body = Vec::new();
        for a in r.body {
            match a {
                RawAtom::Cmp(op, l, rhs) => {
                    body.push(Atom::comparison(op, resolve_term(l, consts), resolve_term(rhs, consts)))
                }
                RawAtom::Rel { pred, args, negated, line } => {
                    let args: Vec<Term> = args.into_iter().map(|t| resolve_term(t, consts)).collect();
                    let role = if let Some(u) = program.udf(&pred) {
                        if u.is_aggregate {
                            return Err(syntax(line, 1, format!("aggregate `{pred}` used as a body atom")));
                        }
                        let want = u.input_arity + u.output_arity;
                        if args.len() != want {
                            return Err(ParseError::ArityMismatch {
                                predicate: pred,
                                expected: want,
                                found: args.len(),
                                line,
                            });
                        }
                        AtomRole::Function { inputs: u.input_arity }
                    } else if defined.contains(&pred) {
                        check_arity(&pred, args.len(), line)?;
                        AtomRole::Intensional
                    } else if program.edb(&pred).is_some() {
                        check_arity(&pred, args.len(), line)?;
                        AtomRole::Extensional
                    } else {
                        return Err(ParseError::UndeclaredUdf { name: pred, line });
                    };
                    if negated && matches!(role, AtomRole::Function { .. }) {
                        return Err(syntax(line, 1, format!("function `{pred}` cannot be negated")));
                    }
                    body.push(Atom { predicate: pred, args, negated, role });
                }
            }
        }
        let head_args: Vec<Term> = r.head_args.into_iter().map(|t| resolve_term(t, consts)).collect();
        let aggregate = r.aggregate.map(|a| HeadAggregate { over: resolve_term(a.over, consts), ..a });
        program.rules.push(Rule {
            label: r.label,
            head: Atom::new(&r.head_pred, head_args, AtomRole::Intensional),
            aggregate,
            body,
            temporal: None,
            line: r.line,
        });
    }
    analysis::annotate_temporal(&mut program);
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_labels_successor_aggregate_and_sets() {
        let src = "
            .decl data(Id, Datum)
            .udf update/2 -> 2
            .agg combine
            .const ACT
            L1: v(0, Id, D) :- data(Id, D).
            L3: c(J, Id, combine<M>) :- s(J, Id, M).
            L7: v(J+1, Id, S) :- c(J, Id, S), S != null.
            L8: s(J+1, Id, M) :- v(J, X, S), update(X, S, Out, {(Id, M)}), !c(J, X, ACT).
            L2: s(0, Id, ACT) :- v(0, Id, _).
        ";
        let p = parse_program(src).unwrap();
        assert_eq!(p.rules.len(), 5);
        let l3 = &p.rules[1];
        assert_eq!(l3.aggregate.as_ref().unwrap().name, "combine");
        assert_eq!(l3.aggregate.as_ref().unwrap().position, 2);
        assert_eq!(p.rules[2].head.args[0], Term::Succ("J".into()));
        assert!(p.rules[3].body[2].negated);
        assert_eq!(p.rules[3].body[1].role, AtomRole::Function { inputs: 2 });
        assert_eq!(p.rules[4].head.args[2], Term::Symbol("ACT".into()));
        assert_eq!(p.rules[2].temporal, Some(Temporal { var: "J".into(), head_offset: 1 }));
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_program("p(X) :- q(X)\n r(Y).").unwrap_err();
        match err {
            ParseError::Syntax { line, .. } => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_and_undeclared_errors() {
        let e = parse_program(".decl e(A, B)\np(X) :- e(X).").unwrap_err();
        assert!(matches!(e, ParseError::ArityMismatch { .. }));
        let e = parse_program("p(X) :- mystery(X).").unwrap_err();
        assert!(matches!(e, ParseError::UndeclaredUdf { .. }));
        let e = parse_program(".udf f/1 -> 1\n.decl e(A)\np(Y) :- e(X), f(X).").unwrap_err();
        assert!(matches!(e, ParseError::ArityMismatch { .. }));
    }

    #[test]
    fn literals() {
        let p = parse_program(".decl e(A)\np(X) :- e(X), X != -2.5e3, X != x\"00ff\", X != \"a\\\"b\".").unwrap();
        assert_eq!(p.rules[0].body[1].args[1], Term::Const(Value::Float(-2500.0)));
        assert_eq!(p.rules[0].body[2].args[1], Term::Const(Value::Blob(Arc::from(vec![0u8, 255]))));
        assert_eq!(p.rules[0].body[3].args[1], Term::Const(Value::str("a\"b")));
    }
}
