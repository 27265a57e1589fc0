//! Tuple buffers that move to a temporary file past a byte budget.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::value::{decode_tuple, encode_tuple, tuple_encoded_len, Tuple};

/// Environment variable naming the directory for spill files.
pub const SPILL_DIR_ENV: &str = "DLFLOW_SPILL_DIR";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpillPolicy {
    /// Bytes a buffer may hold in memory.
    pub budget: usize,
    pub dir: Option<PathBuf>,
}

impl Default for SpillPolicy {
    fn default() -> Self {
        SpillPolicy { budget: usize::MAX, dir: std::env::var_os(SPILL_DIR_ENV).map(PathBuf::from) }
    }
}

#[derive(Debug)]
pub struct TupleBuffer {
    mem: Vec<Tuple>,
    mem_bytes: usize,
    budget: usize,
    dir: Option<PathBuf>,
    file: Option<BufWriter<File>>,
    spilled: usize,
    bytes: usize,
}

impl TupleBuffer {
    pub fn new(policy: &SpillPolicy) -> Self {
        TupleBuffer {
            mem: Vec::new(),
            mem_bytes: 0,
            budget: policy.budget,
            dir: policy.dir.clone(),
            file: None,
            spilled: 0,
            bytes: 0,
        }
    }

    fn open(dir: Option<&Path>) -> io::Result<File> {
        match dir {
            Some(d) => tempfile::tempfile_in(d),
            None => tempfile::tempfile(),
        }
    }

    pub fn push(&mut self, t: Tuple) -> io::Result<()> {
        let size = tuple_encoded_len(&t);
        self.bytes += size;
        if self.file.is_none() && self.mem_bytes + size > self.budget {
            let mut w = BufWriter::new(Self::open(self.dir.as_deref())?);
            self.spilled = self.mem.len();
            for m in self.mem.drain(..) {
                encode_tuple(&mut w, &m)?;
            }
            self.mem_bytes = 0;
            self.file = Some(w);
        }
        match &mut self.file {
            Some(w) => {
                encode_tuple(w, &t)?;
                self.spilled += 1;
            }
            None => {
                self.mem_bytes += size;
                self.mem.push(t);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self.file {
            Some(_) => self.spilled,
            None => self.mem.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Encoded size of everything pushed.
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn is_spilled(&self) -> bool {
        self.file.is_some()
    }

    pub fn into_vec(self) -> io::Result<Vec<Tuple>> {
        let Some(w) = self.file else { return Ok(self.mem) };
        let mut f = w.into_inner().map_err(|e| e.into_error())?;
        f.flush()?;
        f.seek(SeekFrom::Start(0))?;
        let mut r = BufReader::new(f);
        (0..self.spilled).map(|_| decode_tuple(&mut r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;

    fn rows(n: i64) -> Vec<Tuple> {
        (0..n).map(|i| vec![Value::Int(i), Value::str("payload"), Value::vector(vec![i as f64; 3])]).collect()
    }

    #[test]
    fn small_budget_spills_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let policy = SpillPolicy { budget: 200, dir: Some(dir.path().to_path_buf()) };
        let mut b = TupleBuffer::new(&policy);
        for r in rows(50) {
            b.push(r).unwrap();
        }
        assert!(b.is_spilled());
        assert_eq!(b.len(), 50);
        assert_eq!(b.into_vec().unwrap(), rows(50));
    }

    #[test]
    fn default_budget_stays_in_memory() {
        let mut b = TupleBuffer::new(&SpillPolicy { budget: usize::MAX, dir: None });
        for r in rows(10) {
            b.push(r).unwrap();
        }
        assert!(!b.is_spilled());
        assert_eq!(b.into_vec().unwrap(), rows(10));
    }
}
