//! Text input formats.
//!
//! Graph: one line per vertex, `src dst1 dst2 ...`, whitespace separated.
//! Destinations that never appear as a source become vertices without
//! out-edges.
//!
//! Points: one line per record, `label idx:val idx:val ...` with label `+1`
//! or `-1` and strictly ascending indices.
//!
//! Blank lines and lines starting with `#` are skipped in both.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::dataset::PartitionedDataset;
use crate::value::{Tuple, Value};

use super::bgd::record;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Parse { line, msg: msg.into() }
}

fn read(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Adjacency lists: vertex id and its out-neighbors.
pub type Graph = Vec<(i64, Vec<i64>)>;

/// Adjacency lists in input order, followed by destination-only vertices in
/// ascending order.
pub fn parse_graph(text: &str) -> Result<Vec<(i64, Vec<i64>)>, IngestError> {
    let mut out: Vec<(i64, Vec<i64>)> = Vec::new();
    let mut seen: HashMap<i64, usize> = HashMap::new();
    for (line, l) in content_lines(text) {
        let mut ids = l.split_whitespace().map(|tok| {
            tok.parse::<i64>().map_err(|_| parse_err(line, format!("`{tok}` is not an integer vertex id")))
        });
        let src = ids.next().expect("non-empty line")?;
        let dsts = ids.collect::<Result<Vec<_>, _>>()?;
        if let Some(neg) = std::iter::once(&src).chain(&dsts).find(|&&v| v < 0) {
            return Err(parse_err(line, format!("vertex id {neg} is negative")));
        }
        if let Some(first) = seen.insert(src, line) {
            return Err(parse_err(line, format!("vertex {src} already listed on line {first}")));
        }
        out.push((src, dsts));
    }
    let missing: BTreeSet<i64> = out.iter().flat_map(|(_, d)| d.iter().copied()).filter(|d| !seen.contains_key(d)).collect();
    out.extend(missing.into_iter().map(|v| (v, Vec::new())));
    Ok(out)
}

pub fn graph_dataset(graph: &[(i64, Vec<i64>)], partitions: usize) -> PartitionedDataset {
    let tuples = graph
        .iter()
        .map(|(v, d)| vec![Value::Int(*v), Value::list(d.iter().map(|x| Value::Int(*x)).collect())])
        .collect();
    PartitionedDataset::hash_partitioned("data", &["Id", "Datum"], vec![0], tuples, partitions)
}

pub fn ingest_graph(path: &Path, partitions: usize) -> Result<(Graph, PartitionedDataset), IngestError> {
    let graph = parse_graph(&read(path)?)?;
    let ds = graph_dataset(&graph, partitions);
    Ok((graph, ds))
}

/// Adjacency lists back from a graph dataset, ordered by vertex id.
pub fn graph_from_dataset(ds: &PartitionedDataset) -> Result<Vec<(i64, Vec<i64>)>, IngestError> {
    let bad = |t: &Tuple| parse_err(0, format!("`{}` is not a graph tuple", Value::list(t.clone())));
    let mut g = ds
        .tuples()
        .map(|t| match t.as_slice() {
            [Value::Int(v), d] => {
                let d = d.as_list().ok_or_else(|| bad(t))?;
                Ok((*v, d.iter().map(|x| x.as_int().ok_or_else(|| bad(t))).collect::<Result<Vec<_>, _>>()?))
            }
            _ => Err(bad(t)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    g.sort_by_key(|(v, _)| *v);
    Ok(g)
}

pub type Point = (f64, Vec<(u32, f64)>);

/// Points back from a training dataset, in id order.
pub fn points_from_dataset(ds: &PartitionedDataset) -> Result<Vec<Point>, IngestError> {
    let bad = |t: &Tuple| parse_err(0, format!("`{}` is not a training tuple", Value::list(t.clone())));
    let mut rows = ds
        .tuples()
        .map(|t| match t.as_slice() {
            [Value::Int(id), r] => match r.as_list() {
                Some([Value::Float(y), Value::Sparse(x)]) => Ok((*id, (*y, x.to_vec()))),
                _ => Err(bad(t)),
            },
            _ => Err(bad(t)),
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|(id, _)| *id);
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn parse_points(text: &str) -> Result<Vec<Point>, IngestError> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let mut toks = l.split_whitespace();
        let label = match toks.next().expect("non-empty line") {
            "+1" | "1" => 1.0,
            "-1" => -1.0,
            other => return Err(parse_err(line, format!("label must be +1 or -1, got `{other}`"))),
        };
        let mut features: Vec<(u32, f64)> = Vec::new();
        for tok in toks {
            let (i, v) = tok.split_once(':').ok_or_else(|| parse_err(line, format!("expected idx:val, got `{tok}`")))?;
            let i: u32 = i.parse().map_err(|_| parse_err(line, format!("bad feature index `{i}`")))?;
            let v: f64 = v.parse().map_err(|_| parse_err(line, format!("bad feature value `{v}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("feature value `{v}` is not finite")));
            }
            if features.last().is_some_and(|&(p, _)| p >= i) {
                return Err(parse_err(line, format!("feature indices must be strictly ascending at `{tok}`")));
            }
            features.push((i, v));
        }
        out.push((label, features));
    }
    Ok(out)
}

/// Smallest model dimension covering every feature index.
pub fn dimension(points: &[Point]) -> usize {
    points.iter().filter_map(|(_, x)| x.last().map(|&(i, _)| i as usize + 1)).max().unwrap_or(0)
}

pub fn points_dataset(points: &[Point], partitions: usize) -> PartitionedDataset {
    let tuples = points
        .iter()
        .enumerate()
        .map(|(i, (y, x))| vec![Value::Int(i as i64), record(*y, x.clone())])
        .collect();
    PartitionedDataset::round_robin("training_data", &["Id", "Record"], tuples, partitions)
}

pub fn ingest_points(path: &Path, partitions: usize) -> Result<(Vec<Point>, PartitionedDataset), IngestError> {
    let points = parse_points(&read(path)?)?;
    let ds = points_dataset(&points, partitions);
    Ok((points, ds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_convert_back() {
        let g = parse_graph("3 1\n1 3 4\n").unwrap();
        let back = graph_from_dataset(&graph_dataset(&g, 3)).unwrap();
        assert_eq!(back, vec![(1, vec![3, 4]), (3, vec![1]), (4, vec![])]);
        let pts = parse_points("+1 0:1.5 2:2\n-1\n").unwrap();
        assert_eq!(points_from_dataset(&points_dataset(&pts, 2)).unwrap(), pts);
    }

    #[test]
    fn negative_ids_are_rejected() {
        assert!(matches!(parse_graph("0 -2\n"), Err(IngestError::Parse { line: 1, .. })));
    }

    #[test]
    fn graph_with_dangling_and_destination_only_vertices() {
        let g = parse_graph("0 1 2\n1\n2 0 5\n").unwrap();
        assert_eq!(g, vec![(0, vec![1, 2]), (1, vec![]), (2, vec![0, 5]), (5, vec![])]);
        let ds = graph_dataset(&g, 3);
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.partitions.len(), 3);
    }

    #[test]
    fn graph_errors_carry_line_numbers() {
        match parse_graph("0 1\n1 x\n") {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_graph("0 1\n0 2\n").is_err());
    }

    #[test]
    fn points_parse() {
        let p = parse_points("+1 0:1.5 3:2\n-1\n# c\n1 2:0.5\n").unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p[1], (-1.0, vec![]));
        assert_eq!(dimension(&p), 4);
        assert!(parse_points("+1 3:1 2:1\n").is_err());
        assert!(parse_points("0 1:1\n").is_err());
        assert!(parse_points("+1 a:1\n").is_err());
    }
}
