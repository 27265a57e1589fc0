//! Iterative dataflow driven by Datalog.
//!
//! A program is parsed ([`datalog`]), checked for XY-stratification
//! ([`strat`]), compiled to a logical plan ([`logical`]), optimized into a
//! partitioned physical plan ([`physical`]) and executed to a fixpoint by
//! [`runtime`]. [`tasks`] binds the Pregel and map-reduce-update templates to
//! PageRank and logistic-regression gradient descent.

pub mod dataset;
pub mod datalog;
pub mod driver;
pub mod graph;
pub mod logical;
pub mod physical;
pub mod runtime;
pub mod strat;
pub mod tasks;
pub mod udf;
pub mod value;

pub use value::{Tuple, Value};
