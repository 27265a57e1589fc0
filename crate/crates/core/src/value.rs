//! Runtime values and tuples.
//!
//! Floats compare by `f64::total_cmp`, which gives `Value` a total order and
//! lets tuples be sorted, grouped and hashed without special cases.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::io::{self, Read, Write};
use std::sync::Arc;

pub type Tuple = Vec<Value>;

#[derive(Clone, Debug)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    Blob(Arc<[u8]>),
    List(Arc<[Value]>),
    /// Dense numeric vector.
    Vector(Arc<[f64]>),
    /// Sparse numeric vector as ascending `(index, value)` pairs.
    Sparse(Arc<[(u32, f64)]>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Arc::from(items))
    }

    pub fn vector(items: Vec<f64>) -> Value {
        Value::Vector(Arc::from(items))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Value::Float(f) => Some(*f),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Str(_) => 4,
            Value::Blob(_) => 5,
            Value::List(_) => 6,
            Value::Vector(_) => 7,
            Value::Sparse(_) => 8,
        }
    }

    /// Size in bytes of the binary encoding produced by [`encode`].
    pub fn encoded_len(&self) -> usize {
        1 + match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Float(_) => 8,
            Value::Str(s) => 4 + s.len(),
            Value::Blob(b) => 4 + b.len(),
            Value::List(items) => 4 + items.iter().map(Value::encoded_len).sum::<usize>(),
            Value::Vector(v) => 4 + 8 * v.len(),
            Value::Sparse(v) => 4 + 12 * v.len(),
        }
    }
}

pub fn tuple_encoded_len(t: &[Value]) -> usize {
    4 + t.iter().map(Value::encoded_len).sum::<usize>()
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Blob(a), Value::Blob(b)) => a.cmp(b),
            (Value::List(a), Value::List(b)) => a.iter().cmp(b.iter()),
            (Value::Vector(a), Value::Vector(b)) => cmp_floats(a.iter().copied(), b.iter().copied()),
            (Value::Sparse(a), Value::Sparse(b)) => {
                for (x, y) in a.iter().zip(b.iter()) {
                    let o = x.0.cmp(&y.0).then(x.1.total_cmp(&y.1));
                    if o != Ordering::Equal {
                        return o;
                    }
                }
                a.len().cmp(&b.len())
            }
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

fn cmp_floats(a: impl Iterator<Item = f64>, mut b: impl Iterator<Item = f64>) -> Ordering {
    for x in a {
        match b.next() {
            None => return Ordering::Greater,
            Some(y) => {
                let o = x.total_cmp(&y);
                if o != Ordering::Equal {
                    return o;
                }
            }
        }
    }
    if b.next().is_some() {
        Ordering::Less
    } else {
        Ordering::Equal
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u8(self.rank());
        match self {
            Value::Null => {}
            Value::Bool(b) => b.hash(state),
            Value::Int(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Str(s) => s.hash(state),
            Value::Blob(b) => b.hash(state),
            Value::List(items) => items.hash(state),
            Value::Vector(v) => {
                state.write_usize(v.len());
                v.iter().for_each(|x| state.write_u64(x.to_bits()));
            }
            Value::Sparse(v) => {
                state.write_usize(v.len());
                for (i, x) in v.iter() {
                    state.write_u32(*i);
                    state.write_u64(x.to_bits());
                }
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Blob(b) => {
                write!(f, "x\"")?;
                for byte in b.iter() {
                    write!(f, "{byte:02x}")?;
                }
                write!(f, "\"")
            }
            Value::List(items) => {
                write!(f, "[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{v}")?;
                }
                write!(f, "]")
            }
            Value::Vector(v) => write!(f, "vec{v:?}"),
            Value::Sparse(v) => {
                write!(f, "sparse[")?;
                for (i, (k, x)) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{k}:{x:?}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// Stable 64-bit hash of a key, used for partition routing.
pub fn stable_hash(key: &[&Value]) -> u64 {
    let mut h = StableHasher(0xcbf2_9ce4_8422_2325);
    for v in key {
        v.hash(&mut h);
    }
    let mut z = h.0;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct StableHasher(u64);

impl Hasher for StableHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

pub fn partition_of(tuple: &[Value], key: &[usize], partitions: usize) -> usize {
    let refs: Vec<&Value> = key.iter().map(|&k| &tuple[k]).collect();
    (stable_hash(&refs) % partitions as u64) as usize
}

pub fn encode_value<W: Write>(w: &mut W, v: &Value) -> io::Result<()> {
    w.write_all(&[v.rank()])?;
    match v {
        Value::Null => Ok(()),
        Value::Bool(b) => w.write_all(&[*b as u8]),
        Value::Int(i) => w.write_all(&i.to_le_bytes()),
        Value::Float(x) => w.write_all(&x.to_le_bytes()),
        Value::Str(s) => {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())
        }
        Value::Blob(b) => {
            w.write_all(&(b.len() as u32).to_le_bytes())?;
            w.write_all(b)
        }
        Value::List(items) => {
            w.write_all(&(items.len() as u32).to_le_bytes())?;
            items.iter().try_for_each(|x| encode_value(w, x))
        }
        Value::Vector(v) => {
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))
        }
        Value::Sparse(v) => {
            w.write_all(&(v.len() as u32).to_le_bytes())?;
            for (i, x) in v.iter() {
                w.write_all(&i.to_le_bytes())?;
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        }
    }
}

pub fn encode_tuple<W: Write>(w: &mut W, t: &[Value]) -> io::Result<()> {
    w.write_all(&(t.len() as u32).to_le_bytes())?;
    t.iter().try_for_each(|v| encode_value(w, v))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn decode_value<R: Read>(r: &mut R) -> io::Result<Value> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    Ok(match tag[0] {
        0 => Value::Null,
        1 => {
            r.read_exact(&mut tag)?;
            Value::Bool(tag[0] != 0)
        }
        2 => Value::Int(read_u64(r)? as i64),
        3 => Value::Float(f64::from_bits(read_u64(r)?)),
        4 => {
            let mut buf = vec![0u8; read_u32(r)? as usize];
            r.read_exact(&mut buf)?;
            let s = String::from_utf8(buf).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            Value::Str(Arc::from(s))
        }
        5 => {
            let mut buf = vec![0u8; read_u32(r)? as usize];
            r.read_exact(&mut buf)?;
            Value::Blob(Arc::from(buf))
        }
        6 => {
            let n = read_u32(r)? as usize;
            let items = (0..n).map(|_| decode_value(r)).collect::<io::Result<Vec<_>>>()?;
            Value::list(items)
        }
        7 => {
            let n = read_u32(r)? as usize;
            let items = (0..n).map(|_| read_u64(r).map(f64::from_bits)).collect::<io::Result<Vec<_>>>()?;
            Value::vector(items)
        }
        8 => {
            let n = read_u32(r)? as usize;
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                let i = read_u32(r)?;
                items.push((i, f64::from_bits(read_u64(r)?)));
            }
            Value::Sparse(Arc::from(items))
        }
        t => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("bad value tag {t}"))),
    })
}

pub fn decode_tuple<R: Read>(r: &mut R) -> io::Result<Tuple> {
    let n = read_u32(r)? as usize;
    (0..n).map(|_| decode_value(r)).collect()
}
