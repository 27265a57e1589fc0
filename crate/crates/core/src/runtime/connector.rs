//! Routing and merging of tuple streams between operator instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::physical::ConnectorKind;
use crate::value::{partition_of, Tuple};

/// Orders by the key columns, then by the whole tuple.
pub fn cmp_on(a: &[crate::Value], b: &[crate::Value], keys: &[usize]) -> Ordering {
    for &k in keys {
        match a[k].cmp(&b[k]) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.cmp(b)
}

/// Sorts by the key columns with ties broken by the whole tuple, so equal
/// multisets always come out in the same order.
pub fn sort_on(rows: &mut [Tuple], keys: &[usize]) {
    rows.sort_by(|a, b| cmp_on(a, b, keys));
}

pub fn is_sorted_on(rows: &[Tuple], keys: &[usize]) -> bool {
    rows.windows(2).all(|w| cmp_on(&w[0], &w[1], keys) != Ordering::Greater)
}

/// Position of the first pair out of order on `keys` alone.
pub fn first_unsorted(rows: &[Tuple], keys: &[usize]) -> Option<usize> {
    rows.windows(2).position(|w| keys.iter().map(|&k| w[0][k].cmp(&w[1][k])).find(|o| o.is_ne()) == Some(Ordering::Greater))
}

/// Receiver of a tuple leaving sender `sender` of `m` towards `n` receivers.
/// `None` means every receiver.
pub fn receiver(kind: &ConnectorKind, t: &[crate::Value], sender: usize, m: usize, n: usize) -> Option<usize> {
    match kind {
        ConnectorKind::OneToOne => Some(sender),
        ConnectorKind::MToNHash { key } | ConnectorKind::MToNHashMerge { key, .. } => Some(partition_of(t, key, n)),
        ConnectorKind::AggregateToOne => Some(0),
        ConnectorKind::Broadcast => None,
        ConnectorKind::Gather => Some(sender * n / m.max(1)),
    }
}

/// Splits one sender's output into per-receiver streams, keeping order.
pub fn route(kind: &ConnectorKind, rows: Vec<Tuple>, sender: usize, m: usize, n: usize) -> Vec<Vec<Tuple>> {
    let mut out = vec![Vec::new(); n];
    for t in rows {
        match receiver(kind, &t, sender, m, n) {
            Some(r) => out[r].push(t),
            None => {
                for o in out.iter_mut() {
                    o.push(t.clone());
                }
            }
        }
    }
    out
}

struct Head<'k> {
    row: Tuple,
    stream: usize,
    keys: &'k [usize],
}

impl PartialEq for Head<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Head<'_> {}
impl PartialOrd for Head<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Head<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        cmp_on(&other.row, &self.row, self.keys).then(other.stream.cmp(&self.stream))
    }
}

/// k-way merge of streams each sorted with [`cmp_on`].
pub fn merge_sorted(streams: Vec<Vec<Tuple>>, keys: &[usize]) -> Vec<Tuple> {
    let total = streams.iter().map(Vec::len).sum();
    let mut iters: Vec<std::vec::IntoIter<Tuple>> = streams.into_iter().map(Vec::into_iter).collect();
    let mut heap = BinaryHeap::with_capacity(iters.len());
    for (i, it) in iters.iter_mut().enumerate() {
        if let Some(row) = it.next() {
            heap.push(Head { row, stream: i, keys });
        }
    }
    let mut out = Vec::with_capacity(total);
    while let Some(Head { row, stream, .. }) = heap.pop() {
        if let Some(next) = iters[stream].next() {
            heap.push(Head { row: next, stream, keys });
        }
        out.push(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::Value;
    use proptest::prelude::*;

    fn rows(keys: &[i64]) -> Vec<Tuple> {
        keys.iter().enumerate().map(|(i, &k)| vec![Value::Int(k), Value::Int(i as i64)]).collect()
    }

    #[test]
    fn one_to_one_is_identity() {
        for s in 0..4 {
            let out = route(&ConnectorKind::OneToOne, rows(&[1, 2]), s, 4, 4);
            assert_eq!(out[s].len(), 2);
        }
    }

    #[test]
    fn hash_routing_keeps_the_multiset() {
        let input = rows(&(0..1000).collect::<Vec<_>>());
        let kind = ConnectorKind::MToNHash { key: vec![0] };
        let out = route(&kind, input.clone(), 0, 1, 4);
        let mut all: Vec<Tuple> = Vec::new();
        for (r, part) in out.iter().enumerate() {
            assert!(part.iter().all(|t| partition_of(t, &[0], 4) == r));
            all.extend(part.iter().cloned());
        }
        all.sort();
        let mut want = input;
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn gather_maps_blocks() {
        let kind = ConnectorKind::Gather;
        let got: Vec<usize> = (0..8).map(|s| receiver(&kind, &[], s, 8, 3).unwrap()).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn merge_of_three_sorted_senders() {
        let mut a = rows(&[5, 1, 9, 3]);
        let mut b = rows(&[2, 2, 8]);
        let mut c = rows(&[7, 0]);
        for s in [&mut a, &mut b, &mut c] {
            sort_on(s, &[0]);
        }
        let merged = merge_sorted(vec![a.clone(), b.clone(), c.clone()], &[0]);
        let mut want: Vec<Tuple> = a.into_iter().chain(b).chain(c).collect();
        sort_on(&mut want, &[0]);
        assert_eq!(merged, want);
        assert!(is_sorted_on(&merged, &[0]));
    }

    proptest! {
        #[test]
        fn merge_equals_sort(streams in prop::collection::vec(prop::collection::vec((0i64..20, 0i64..5), 0..30), 1..6)) {
            let mut parts: Vec<Vec<Tuple>> = streams
                .iter()
                .map(|s| s.iter().map(|&(k, v)| vec![Value::Int(k), Value::Int(v)]).collect())
                .collect();
            for p in parts.iter_mut() {
                sort_on(p, &[0]);
            }
            let mut want: Vec<Tuple> = parts.iter().flatten().cloned().collect();
            sort_on(&mut want, &[0]);
            prop_assert_eq!(merge_sorted(parts, &[0]), want);
        }
    }
}
