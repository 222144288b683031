//! Path counting over train adjacency.
//!
//! Row `h` of the result holds `|Path(h, B, t)|` for every reachable `t`,
//! computed as a chain of sparse row-vector x adjacency products with a
//! dense accumulator (Gustavson style). Counts are `u64` and saturate.

use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};

/// Reusable dense workspace sized to the entity count.
#[derive(Debug, Clone)]
pub struct Scratch {
    acc: Vec<u64>,
    touched: Vec<u32>,
    frontier: Vec<(u32, u64)>,
}

impl Scratch {
    pub fn new(num_entities: usize) -> Self {
        Scratch {
            acc: vec![0; num_entities],
            touched: Vec::new(),
            frontier: Vec::new(),
        }
    }
}

/// Sparse count rows, one per requested head, columns sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCounts {
    heads: Vec<EntityId>,
    indptr: Vec<usize>,
    cols: Vec<u32>,
    counts: Vec<u64>,
    saturated: bool,
}

impl PathCounts {
    pub fn heads(&self) -> &[EntityId] {
        &self.heads
    }

    /// `(tail, count)` pairs of the `i`-th requested head.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (EntityId, u64)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.counts[span])
            .map(|(&c, &n)| (EntityId(c), n))
    }

    pub fn get(&self, i: usize, tail: EntityId) -> u64 {
        let span = self.indptr[i]..self.indptr[i + 1];
        match self.cols[span.clone()].binary_search(&tail.0) {
            Ok(k) => self.counts[span.start + k],
            Err(_) => 0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// True if any count hit `u64::MAX`.
    pub fn saturated(&self) -> bool {
        self.saturated
    }
}

/// Count matrix restricted to `heads` (rows in the given order).
pub fn path_count_rows(kg: &KnowledgeGraph, body: &[RelationId], heads: &[EntityId]) -> PathCounts {
    let mut scratch = Scratch::new(kg.num_entities());
    let mut row = Vec::new();
    let mut out = PathCounts {
        heads: heads.to_vec(),
        indptr: Vec::with_capacity(heads.len() + 1),
        cols: Vec::new(),
        counts: Vec::new(),
        saturated: false,
    };
    out.indptr.push(0);
    for &h in heads {
        out.saturated |= path_count_row(kg, body, h, &[], &mut scratch, &mut row);
        for &(c, n) in &row {
            out.cols.push(c);
            out.counts.push(n);
        }
        out.indptr.push(out.cols.len());
    }
    out
}

/// Counts paths from a single head, skipping any edge listed in `masked`.
/// Writes sorted `(tail, count)` pairs into `out` and returns whether a
/// count saturated.
pub fn path_count_row(
    kg: &KnowledgeGraph,
    body: &[RelationId],
    head: EntityId,
    masked: &[Triple],
    scratch: &mut Scratch,
    out: &mut Vec<(u32, u64)>,
) -> bool {
    assert!(!body.is_empty(), "rule body must be nonempty");
    let mut saturated = false;
    scratch.frontier.clear();
    scratch.frontier.push((head.0, 1));
    for &rel in body {
        let adj = kg.adj(rel);
        for &(u, c) in &scratch.frontier {
            for &v in adj.row(u as usize) {
                if !masked.is_empty() && masked.iter().any(|m| m.head.0 == u && m.rel == rel && m.tail.0 == v) {
                    continue;
                }
                let slot = &mut scratch.acc[v as usize];
                if *slot == 0 {
                    scratch.touched.push(v);
                }
                let (sum, over) = slot.overflowing_add(c);
                if over {
                    saturated = true;
                    *slot = u64::MAX;
                } else {
                    *slot = sum;
                }
            }
        }
        scratch.frontier.clear();
        scratch.touched.sort_unstable();
        for &v in &scratch.touched {
            scratch.frontier.push((v, scratch.acc[v as usize]));
            scratch.acc[v as usize] = 0;
        }
        scratch.touched.clear();
        if scratch.frontier.is_empty() {
            break;
        }
    }
    out.clear();
    out.extend_from_slice(&scratch.frontier);
    saturated
}
