//! The Datalog dialect: parsing, printing and static checks.

pub mod analysis;
mod ast;
mod parser;
mod validate;

pub use ast::*;
pub use parser::{parse_program, ParseError};
pub use validate::{bound_vars, literal_order, validate, ValidationReport, Violation, ViolationKind, BUILTIN_AGGREGATES};

/// Text of the Pregel template program.
pub const PREGEL_TEMPLATE: &str = include_str!("../templates/pregel.dl");
/// Text of the iterative map-reduce-update template program.
pub const IMRU_TEMPLATE: &str = include_str!("../templates/imru.dl");

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn templates_parse_and_validate() {
        for src in [PREGEL_TEMPLATE, IMRU_TEMPLATE] {
            let p = parse_program(src).unwrap();
            let report = validate(&p);
            assert!(report.is_ok(), "{report}");
        }
    }

    #[test]
    fn printing_roundtrips_templates() {
        for src in [PREGEL_TEMPLATE, IMRU_TEMPLATE] {
            let p = parse_program(src).unwrap();
            let again = parse_program(&p.to_string()).unwrap();
            assert_eq!(p, again);
        }
    }

    fn var() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["X", "Y", "Z", "Id", "M"]).prop_map(String::from)
    }

    fn term() -> impl Strategy<Value = Term> {
        prop_oneof![
            var().prop_map(Term::Var),
            Just(Term::Wildcard),
            (-50i64..50).prop_map(|i| Term::Const(crate::value::Value::Int(i))),
            "[a-z ]{0,4}".prop_map(|s| Term::Const(crate::value::Value::str(&s))),
            (-4.0f64..4.0).prop_map(|f| Term::Const(crate::value::Value::Float(f))),
            (var(), var()).prop_map(|(a, b)| Term::Set(Box::new(Term::Tuple(vec![Term::Var(a), Term::Var(b)])))),
        ]
    }

    fn body_atom() -> impl Strategy<Value = Atom> {
        prop_oneof![
            (prop::collection::vec(term(), 2), any::<bool>()).prop_map(|(args, neg)| {
                let mut a = Atom::new("e", args, AtomRole::Extensional);
                a.negated = neg;
                a
            }),
            (var(), var(), 0usize..6).prop_map(|(a, b, op)| {
                let ops = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
                Atom::comparison(ops[op], Term::Var(a), Term::Var(b))
            }),
        ]
    }

    proptest! {
        #[test]
        fn print_parse_print_is_identity(bodies in prop::collection::vec(prop::collection::vec(body_atom(), 1..4), 1..4), labels in any::<bool>()) {
            let mut program = Program {
                edb_decls: vec![EdbDecl { name: "e".into(), attrs: vec!["A".into(), "B".into()] }],
                ..Default::default()
            };
            for (i, body) in bodies.into_iter().enumerate() {
                program.rules.push(Rule {
                    label: labels.then(|| format!("R{i}")),
                    head: Atom::new("p", vec![Term::var("X")], AtomRole::Intensional),
                    aggregate: None,
                    body,
                    temporal: None,
                    line: 0,
                });
            }
            let text = program.to_string();
            let parsed = parse_program(&text).unwrap();
            prop_assert_eq!(parsed.to_string(), text);
        }
    }
}
