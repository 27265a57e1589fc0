//! Task bindings for the two templates, their reference oracles, input
//! ingestion and a naive interpreter used to check the engine.

pub mod bgd;
pub mod ingest;
pub mod interpreter;
pub mod pagerank;

use crate::datalog::{parse_program, Program, IMRU_TEMPLATE, PREGEL_TEMPLATE};
use crate::udf::Registry;

/// A template program together with the UDFs that instantiate it.
#[derive(Clone, Debug)]
pub struct TaskBinding {
    pub program: Program,
    pub registry: Registry,
}

impl TaskBinding {
    /// Binds `program` to `registry`, copying each registered aggregate's
    /// algebraic properties into the program's declarations.
    pub fn new(mut program: Program, registry: Registry) -> Self {
        for decl in program.udf_decls.iter_mut().filter(|d| d.is_aggregate) {
            if let Some(a) = registry.aggregate(&decl.name) {
                decl.is_commutative_associative = a.commutative_associative();
            }
        }
        TaskBinding { program, registry }
    }

    pub fn pagerank(task: &pagerank::PageRank) -> Self {
        Self::new(pregel_program(), task.registry())
    }

    pub fn bgd(task: &bgd::Bgd) -> Self {
        Self::new(imru_program(), task.registry())
    }

    /// A shipped task with placeholder parameters, enough for planning.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "pagerank" => Some(Self::pagerank(&pagerank::PageRank::new(Vec::new(), 1))),
            "bgd-logistic" => Some(Self::bgd(&bgd::Bgd::new(bgd::BgdParams::new(1)))),
            _ => None,
        }
    }
}

pub fn pregel_program() -> Program {
    parse_program(PREGEL_TEMPLATE).expect("Pregel template parses")
}

pub fn imru_program() -> Program {
    parse_program(IMRU_TEMPLATE).expect("IMRU template parses")
}
