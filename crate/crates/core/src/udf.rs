//! User-defined functions and aggregates.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::datalog::CmpOp;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct UdfError(pub String);

impl UdfError {
    pub fn new(msg: impl Into<String>) -> Self {
        UdfError(msg.into())
    }
}

/// A function atom `f(in1..ink, out1..outm)`: maps `k` inputs to exactly one
/// row of `m` outputs.
pub trait FunctionUdf: Send + Sync {
    fn call(&self, args: &[Value]) -> Result<Vec<Value>, UdfError>;
}

impl<F> FunctionUdf for F
where
    F: Fn(&[Value]) -> Result<Vec<Value>, UdfError> + Send + Sync,
{
    fn call(&self, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        self(args)
    }
}

/// A head aggregate. Raw values are lifted into accumulators and accumulators
/// are merged; the final accumulator is the aggregate's value.
pub trait AggregateUdf: Send + Sync {
    fn lift(&self, v: &Value) -> Result<Value, UdfError>;
    fn merge(&self, acc: Value, other: &Value) -> Result<Value, UdfError>;
    /// Whether partial aggregation in any grouping and order is allowed.
    fn commutative_associative(&self) -> bool;
}

pub type Equality = Arc<dyn Fn(&Value, &Value) -> bool + Send + Sync>;
pub type Distance = Arc<dyn Fn(&Value, &Value) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct Registry {
    functions: BTreeMap<String, Arc<dyn FunctionUdf>>,
    aggregates: BTreeMap<String, Arc<dyn AggregateUdf>>,
    equality: Option<Equality>,
    distance: Option<Distance>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("functions", &self.functions.keys().collect::<Vec<_>>())
            .field("aggregates", &self.aggregates.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}

impl Registry {
    /// A registry holding the built-in aggregates `max`, `min`, `sum`, `count`.
    pub fn new() -> Self {
        let mut r = Registry { functions: BTreeMap::new(), aggregates: BTreeMap::new(), equality: None, distance: None };
        r.register_aggregate("max", Builtin::Max);
        r.register_aggregate("min", Builtin::Min);
        r.register_aggregate("sum", Builtin::Sum);
        r.register_aggregate("count", Builtin::Count);
        r
    }

    pub fn register_function(&mut self, name: &str, f: impl FunctionUdf + 'static) -> &mut Self {
        self.functions.insert(name.to_string(), Arc::new(f));
        self
    }

    pub fn register_function_arc(&mut self, name: &str, f: Arc<dyn FunctionUdf>) -> &mut Self {
        self.functions.insert(name.to_string(), f);
        self
    }

    pub fn register_aggregate(&mut self, name: &str, a: impl AggregateUdf + 'static) -> &mut Self {
        self.aggregates.insert(name.to_string(), Arc::new(a));
        self
    }

    /// Equality used by `=` and `!=` on opaque values (lists, vectors, blobs).
    pub fn set_equality(&mut self, eq: impl Fn(&Value, &Value) -> bool + Send + Sync + 'static) -> &mut Self {
        self.equality = Some(Arc::new(eq));
        self
    }

    /// Distance between successive models, reported in per-iteration metrics.
    pub fn set_distance(&mut self, d: impl Fn(&Value, &Value) -> f64 + Send + Sync + 'static) -> &mut Self {
        self.distance = Some(Arc::new(d));
        self
    }

    pub fn function(&self, name: &str) -> Option<&Arc<dyn FunctionUdf>> {
        self.functions.get(name)
    }

    pub fn aggregate(&self, name: &str) -> Option<&Arc<dyn AggregateUdf>> {
        self.aggregates.get(name)
    }

    pub fn function_names(&self) -> impl Iterator<Item = &String> {
        self.functions.keys()
    }

    pub fn aggregate_names(&self) -> impl Iterator<Item = &String> {
        self.aggregates.keys()
    }

    pub fn distance(&self, a: &Value, b: &Value) -> Option<f64> {
        self.distance.as_ref().map(|d| d(a, b))
    }

    pub fn call(&self, name: &str, args: &[Value]) -> Result<Vec<Value>, UdfError> {
        self.function(name).ok_or_else(|| UdfError::new(format!("function `{name}` is not registered")))?.call(args)
    }

    pub fn values_equal(&self, a: &Value, b: &Value) -> bool {
        let opaque = |v: &Value| matches!(v, Value::List(_) | Value::Vector(_) | Value::Blob(_) | Value::Sparse(_));
        match &self.equality {
            Some(eq) if opaque(a) && opaque(b) => eq(a, b),
            _ => a == b,
        }
    }

    pub fn compare(&self, op: CmpOp, a: &Value, b: &Value) -> bool {
        match op {
            CmpOp::Eq => self.values_equal(a, b),
            CmpOp::Ne => !self.values_equal(a, b),
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    /// Folds raw values in order.
    pub fn fold(&self, name: &str, values: impl IntoIterator<Item = Value>) -> Result<Option<Value>, UdfError> {
        let agg = self.aggregate(name).ok_or_else(|| UdfError::new(format!("aggregate `{name}` is not registered")))?;
        let mut acc: Option<Value> = None;
        for v in values {
            let lifted = agg.lift(&v)?;
            acc = Some(match acc {
                None => lifted,
                Some(a) => agg.merge(a, &lifted)?,
            });
        }
        Ok(acc)
    }
}

#[derive(Clone, Copy, Debug)]
enum Builtin {
    Max,
    Min,
    Sum,
    Count,
}

fn add(a: &Value, b: &Value) -> Result<Value, UdfError> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(Value::Int(x.wrapping_add(*y))),
        (x, y) => match (x.as_float(), y.as_float()) {
            (Some(x), Some(y)) => Ok(Value::Float(x + y)),
            _ => Err(UdfError::new(format!("cannot add {a} and {b}"))),
        },
    }
}

impl AggregateUdf for Builtin {
    fn lift(&self, v: &Value) -> Result<Value, UdfError> {
        Ok(match self {
            Builtin::Count => Value::Int(1),
            _ => v.clone(),
        })
    }

    fn merge(&self, acc: Value, other: &Value) -> Result<Value, UdfError> {
        match self {
            Builtin::Max => Ok(if *other > acc { other.clone() } else { acc }),
            Builtin::Min => Ok(if *other < acc { other.clone() } else { acc }),
            Builtin::Sum | Builtin::Count => add(&acc, other),
        }
    }

    fn commutative_associative(&self) -> bool {
        true
    }
}

/// Collects values into a list in arrival order.
#[derive(Clone, Copy, Debug, Default)]
pub struct ListAppend;

impl AggregateUdf for ListAppend {
    fn lift(&self, v: &Value) -> Result<Value, UdfError> {
        Ok(Value::list(vec![v.clone()]))
    }

    fn merge(&self, acc: Value, other: &Value) -> Result<Value, UdfError> {
        match (&acc, other) {
            (Value::List(a), Value::List(b)) => Ok(Value::list(a.iter().chain(b.iter()).cloned().collect())),
            _ => Err(UdfError::new("list-append expects list accumulators")),
        }
    }

    fn commutative_associative(&self) -> bool {
        false
    }
}

/// Aggregate built from closures.
pub struct FnAggregate<L, M> {
    pub lift: L,
    pub merge: M,
    pub commutative_associative: bool,
}

impl<L, M> AggregateUdf for FnAggregate<L, M>
where
    L: Fn(&Value) -> Result<Value, UdfError> + Send + Sync,
    M: Fn(Value, &Value) -> Result<Value, UdfError> + Send + Sync,
{
    fn lift(&self, v: &Value) -> Result<Value, UdfError> {
        (self.lift)(v)
    }

    fn merge(&self, acc: Value, other: &Value) -> Result<Value, UdfError> {
        (self.merge)(acc, other)
    }

    fn commutative_associative(&self) -> bool {
        self.commutative_associative
    }
}
