//! Per-query grounding counts `#(h, l, o)`: for every candidate `o` and
//! every rule `l` whose head matches the query relation, the number of
//! train paths from `h` to `o` realizing the body of `l`.

use rayon::prelude::*;

use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::paths::{path_count_row, Scratch};
use crate::rule::RuleSet;

/// Rule indices grouped by head relation.
#[derive(Debug, Clone)]
pub struct RuleIndex {
    by_head: Vec<Vec<u32>>,
}

impl RuleIndex {
    pub fn new(rules: &RuleSet, num_relations: usize) -> Self {
        let mut by_head = vec![Vec::new(); num_relations];
        for (i, r) in rules.iter().enumerate() {
            by_head[r.head.index()].push(i as u32);
        }
        RuleIndex { by_head }
    }

    pub fn rules_for(&self, rel: RelationId) -> &[u32] {
        self.by_head.get(rel.index()).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Sparse `candidate x rule` count table for one query. Candidates are
/// sorted by entity id; within a candidate, rules are sorted by index.
/// Only nonzero counts are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryFeatures {
    pub head: EntityId,
    pub rel: RelationId,
    candidates: Vec<u32>,
    indptr: Vec<usize>,
    rules: Vec<u32>,
    counts: Vec<u64>,
}

impl QueryFeatures {
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidate(&self, i: usize) -> EntityId {
        EntityId(self.candidates[i])
    }

    /// `(rule index, count)` pairs of the `i`-th candidate.
    pub fn items(&self, i: usize) -> (&[u32], &[u64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.rules[span.clone()], &self.counts[span])
    }

    pub fn count(&self, candidate: EntityId, rule: u32) -> u64 {
        match self.candidates.binary_search(&candidate.0) {
            Ok(i) => {
                let (rules, counts) = self.items(i);
                rules.binary_search(&rule).map(|k| counts[k]).unwrap_or(0)
            }
            Err(_) => 0,
        }
    }

    pub fn total_items(&self) -> usize {
        self.rules.len()
    }

    fn from_triples(head: EntityId, rel: RelationId, mut entries: Vec<(u32, u32, u64)>) -> Self {
        entries.sort_unstable();
        let mut f = QueryFeatures {
            head,
            rel,
            candidates: Vec::new(),
            indptr: vec![0],
            rules: Vec::with_capacity(entries.len()),
            counts: Vec::with_capacity(entries.len()),
        };
        for (o, l, c) in entries {
            if f.candidates.last() != Some(&o) {
                if !f.candidates.is_empty() {
                    f.indptr.push(f.rules.len());
                }
                f.candidates.push(o);
            }
            f.rules.push(l);
            f.counts.push(c);
        }
        if !f.candidates.is_empty() {
            f.indptr.push(f.rules.len());
        }
        f
    }

    /// Re-indexes rules through `map` (old index -> new index), dropping
    /// rules mapped to `None` and candidates left without rules.
    pub fn restrict(&self, map: &[Option<u32>]) -> QueryFeatures {
        let mut entries = Vec::new();
        for i in 0..self.candidates.len() {
            let (rules, counts) = self.items(i);
            for (&l, &c) in rules.iter().zip(counts) {
                if let Some(n) = map[l as usize] {
                    entries.push((self.candidates[i], n, c));
                }
            }
        }
        QueryFeatures::from_triples(self.head, self.rel, entries)
    }
}

/// Counts for the query `(head, rel, ?)`, skipping edges listed in `masked`.
pub fn grounding_counts_with(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    index: &RuleIndex,
    head: EntityId,
    rel: RelationId,
    masked: &[Triple],
    scratch: &mut Scratch,
) -> QueryFeatures {
    let mut entries = Vec::new();
    let mut row = Vec::new();
    for &l in index.rules_for(rel) {
        let rule = &rules.rules()[l as usize];
        path_count_row(kg, &rule.body, head, masked, scratch, &mut row);
        entries.extend(row.iter().map(|&(o, c)| (o, l, c)));
    }
    QueryFeatures::from_triples(head, rel, entries)
}

/// Unmasked counts for `(head, rel, ?)`.
pub fn grounding_counts(kg: &KnowledgeGraph, rules: &RuleSet, head: EntityId, rel: RelationId) -> QueryFeatures {
    let index = RuleIndex::new(rules, kg.num_relations());
    grounding_counts_with(kg, rules, &index, head, rel, &[], &mut Scratch::new(kg.num_entities()))
}

/// The query triple and its mirror, which must not ground the rules that
/// are trained to predict it.
pub fn query_mask(query: Triple) -> [Triple; 2] {
    [query, query.mirrored()]
}

/// Features for a batch of query triples, computed in parallel. With
/// `mask_query_edge`, each query's own edge (and its inverse) is hidden.
pub fn build_features(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    queries: &[Triple],
    mask_query_edge: bool,
) -> Vec<QueryFeatures> {
    let index = RuleIndex::new(rules, kg.num_relations());
    queries
        .par_iter()
        .map_init(
            || Scratch::new(kg.num_entities()),
            |scratch, &q| {
                let mask = query_mask(q);
                let masked: &[Triple] = if mask_query_edge { &mask } else { &[] };
                grounding_counts_with(kg, rules, &index, q.head, q.rel, masked, scratch)
            },
        )
        .collect()
}
