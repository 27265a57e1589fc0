//! Per-partition B-tree vertex stores.

use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::value::{partition_of, Tuple, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("update for unknown vertex {0}")]
    UnknownVertex(Value),
    #[error("key {key} does not belong to partition {partition}")]
    WrongPartition { key: Value, partition: usize },
    #[error("bulk load input not sorted on the key at {0}")]
    Unsorted(Value),
}

/// Rows keyed by one column, split into hash partitions.
#[derive(Debug)]
pub struct VertexStore {
    pub key: usize,
    partitions: Vec<Mutex<BTreeMap<Value, Tuple>>>,
}

impl VertexStore {
    pub fn new(key: usize, partitions: usize) -> Self {
        VertexStore { key, partitions: (0..partitions).map(|_| Mutex::new(BTreeMap::new())).collect() }
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.len()
    }

    fn check_owner(&self, row: &Tuple, partition: usize) -> Result<(), StoreError> {
        if partition_of(row, &[self.key], self.partitions.len()) != partition {
            return Err(StoreError::WrongPartition { key: row[self.key].clone(), partition });
        }
        Ok(())
    }

    /// Loads rows sorted on the key. A repeated key keeps its last row.
    pub fn bulk_load(&self, partition: usize, rows: &[Tuple]) -> Result<(), StoreError> {
        let mut map = self.partitions[partition].lock().expect("store lock");
        for (i, row) in rows.iter().enumerate() {
            if i > 0 && rows[i - 1][self.key] > row[self.key] {
                return Err(StoreError::Unsorted(row[self.key].clone()));
            }
            self.check_owner(row, partition)?;
            map.insert(row[self.key].clone(), row.clone());
        }
        Ok(())
    }

    /// Overwrites stored rows. Rows holding a null leave the stored row as is.
    /// Returns how many rows changed the store.
    pub fn update(&self, partition: usize, rows: &[Tuple]) -> Result<usize, StoreError> {
        let mut map = self.partitions[partition].lock().expect("store lock");
        let mut applied = 0;
        for row in rows {
            self.check_owner(row, partition)?;
            let slot = map.get_mut(&row[self.key]).ok_or_else(|| StoreError::UnknownVertex(row[self.key].clone()))?;
            if row.iter().any(Value::is_null) {
                continue;
            }
            *slot = row.clone();
            applied += 1;
        }
        Ok(applied)
    }

    pub fn get(&self, partition: usize, key: &Value) -> Option<Tuple> {
        self.partitions[partition].lock().expect("store lock").get(key).cloned()
    }

    /// Calls `f` with the partition's map held.
    pub fn with_partition<R>(&self, partition: usize, f: impl FnOnce(&BTreeMap<Value, Tuple>) -> R) -> R {
        f(&self.partitions[partition].lock().expect("store lock"))
    }

    pub fn snapshot(&self) -> Vec<BTreeMap<Value, Tuple>> {
        self.partitions.iter().map(|p| p.lock().expect("store lock").clone()).collect()
    }

    pub fn restore(&self, snapshot: Vec<BTreeMap<Value, Tuple>>) {
        for (p, s) in self.partitions.iter().zip(snapshot) {
            *p.lock().expect("store lock") = s;
        }
    }

    /// All rows ordered by key.
    pub fn rows(&self) -> Vec<Tuple> {
        let mut all: Vec<Tuple> = self.snapshot().into_iter().flat_map(|m| m.into_values()).collect();
        all.sort_by(|a, b| a[self.key].cmp(&b[self.key]));
        all
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(keys: &[i64]) -> VertexStore {
        let s = VertexStore::new(0, 4);
        for p in 0..4 {
            let mut rows: Vec<Tuple> = keys
                .iter()
                .map(|&k| vec![Value::Int(k), Value::str("s")])
                .filter(|r| partition_of(r, &[0], 4) == p)
                .collect();
            rows.sort();
            s.bulk_load(p, &rows).unwrap();
        }
        s
    }

    fn owner(k: i64) -> usize {
        partition_of(&[Value::Int(k)], &[0], 4)
    }

    #[test]
    fn update_overwrites() {
        let s = store_with(&[7, 8]);
        let n = s.update(owner(7), &[vec![Value::Int(7), Value::str("s'")]]).unwrap();
        assert_eq!(n, 1);
        assert_eq!(s.get(owner(7), &Value::Int(7)).unwrap()[1], Value::str("s'"));
    }

    #[test]
    fn null_update_keeps_state() {
        let s = store_with(&[7]);
        let n = s.update(owner(7), &[vec![Value::Int(7), Value::Null]]).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.get(owner(7), &Value::Int(7)).unwrap()[1], Value::str("s"));
    }

    #[test]
    fn unknown_vertex_is_an_error() {
        let s = store_with(&[7]);
        let err = s.update(owner(99), &[vec![Value::Int(99), Value::str("x")]]).unwrap_err();
        assert_eq!(err, StoreError::UnknownVertex(Value::Int(99)));
    }

    #[test]
    fn unsorted_bulk_load_is_rejected() {
        let s = VertexStore::new(0, 1);
        let rows = vec![vec![Value::Int(2), Value::Null], vec![Value::Int(1), Value::Null]];
        assert!(matches!(s.bulk_load(0, &rows), Err(StoreError::Unsorted(_))));
    }

    #[test]
    fn rows_from_the_wrong_partition_are_rejected() {
        let s = VertexStore::new(0, 4);
        let k = (0..).find(|&k| owner(k) != 0).unwrap();
        assert!(matches!(s.bulk_load(0, &[vec![Value::Int(k)]]), Err(StoreError::WrongPartition { .. })));
    }
}
