//! Partitioned input datasets.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::value::{decode_tuple, encode_tuple, partition_of, Tuple};

const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    name: String,
    schema: Vec<String>,
    /// Hash key columns, or absent for round robin.
    hash_key: Option<Vec<usize>>,
    counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Partitioning {
    /// Tuples placed by a hash of the key columns.
    Hash(Vec<usize>),
    RoundRobin,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedDataset {
    pub name: String,
    pub schema: Vec<String>,
    pub partitioning: Partitioning,
    pub partitions: Vec<Vec<Tuple>>,
}

impl PartitionedDataset {
    pub fn hash_partitioned(name: &str, schema: &[&str], key: Vec<usize>, tuples: Vec<Tuple>, n: usize) -> Self {
        let n = n.max(1);
        let mut partitions = vec![Vec::new(); n];
        for t in tuples {
            let p = partition_of(&t, &key, n);
            partitions[p].push(t);
        }
        PartitionedDataset {
            name: name.to_string(),
            schema: schema.iter().map(|s| s.to_string()).collect(),
            partitioning: Partitioning::Hash(key),
            partitions,
        }
    }

    pub fn round_robin(name: &str, schema: &[&str], tuples: Vec<Tuple>, n: usize) -> Self {
        let n = n.max(1);
        let mut partitions = vec![Vec::new(); n];
        for (i, t) in tuples.into_iter().enumerate() {
            partitions[i % n].push(t);
        }
        PartitionedDataset {
            name: name.to_string(),
            schema: schema.iter().map(|s| s.to_string()).collect(),
            partitioning: Partitioning::RoundRobin,
            partitions,
        }
    }

    pub fn len(&self) -> usize {
        self.partitions.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All tuples in partition order.
    pub fn tuples(&self) -> impl Iterator<Item = &Tuple> {
        self.partitions.iter().flatten()
    }

    /// Writes a manifest and one binary file per partition into `dir`.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            name: self.name.clone(),
            schema: self.schema.clone(),
            hash_key: match &self.partitioning {
                Partitioning::Hash(k) => Some(k.clone()),
                Partitioning::RoundRobin => None,
            },
            counts: self.partitions.iter().map(Vec::len).collect(),
        };
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        for (i, part) in self.partitions.iter().enumerate() {
            let mut w = BufWriter::new(std::fs::File::create(dir.join(format!("part-{i:05}.bin")))?);
            for t in part {
                encode_tuple(&mut w, t)?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> io::Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?;
        let mut partitions = Vec::with_capacity(manifest.counts.len());
        for (i, &n) in manifest.counts.iter().enumerate() {
            let mut r = BufReader::new(std::fs::File::open(dir.join(format!("part-{i:05}.bin")))?);
            partitions.push((0..n).map(|_| decode_tuple(&mut r)).collect::<io::Result<Vec<_>>>()?);
        }
        Ok(PartitionedDataset {
            name: manifest.name,
            schema: manifest.schema,
            partitioning: manifest.hash_key.map_or(Partitioning::RoundRobin, Partitioning::Hash),
            partitions,
        })
    }

    /// The same tuples spread over `n` partitions.
    pub fn repartition(&self, n: usize) -> Self {
        let schema: Vec<&str> = self.schema.iter().map(String::as_str).collect();
        let tuples = self.tuples().cloned().collect();
        match &self.partitioning {
            Partitioning::Hash(k) => Self::hash_partitioned(&self.name, &schema, k.clone(), tuples, n),
            Partitioning::RoundRobin => Self::round_robin(&self.name, &schema, tuples, n),
        }
    }

    /// The tuples a reader instance `i` of `n` sees.
    pub fn slice_for(&self, i: usize, n: usize) -> impl Iterator<Item = &Tuple> {
        self.partitions.iter().enumerate().filter(move |(p, _)| p % n == i).flat_map(|(_, t)| t.iter())
    }
}

/// Input datasets by name.
pub type Catalog = HashMap<String, PartitionedDataset>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;

    #[test]
    fn save_and_load_round_trip() {
        let rows: Vec<Tuple> = (0..20).map(|i| vec![Value::Int(i), Value::list(vec![Value::Float(i as f64 / 3.0)])]).collect();
        let ds = PartitionedDataset::hash_partitioned("d", &["Id", "X"], vec![0], rows, 3);
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(PartitionedDataset::load(dir.path()).unwrap(), ds);
        let rr = PartitionedDataset::round_robin("r", &["Id"], vec![vec![Value::Int(1)]], 2);
        rr.save(dir.path()).unwrap();
        assert_eq!(PartitionedDataset::load(dir.path()).unwrap(), rr);
        assert_eq!(ds.repartition(5).partitions.len(), 5);
        assert_eq!(ds.repartition(5).len(), 20);
    }
}
