//! Filtered ranking evaluation with tie-averaged ranks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, Triple};

pub const DEFAULT_HITS: [usize; 3] = [1, 3, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub head: EntityId,
    pub rel: RelationId,
    pub answer: EntityId,
    pub source: QuerySource,
}

impl Query {
    pub fn from_triple(t: Triple) -> Self {
        Query {
            head: t.head,
            rel: t.rel,
            answer: t.tail,
            source: if t.rel.is_inverse() {
                QuerySource::Inverse
            } else {
                QuerySource::Forward
            },
        }
    }
}

/// One query per triple of the (inverse-closed) split, so every original
/// triple `(h, r, t)` yields `(h, r, ?) -> t` and `(t, !r, ?) -> h`.
pub fn queries(kg: &KnowledgeGraph, split: Split) -> Vec<Query> {
    kg.split(split).iter().copied().map(Query::from_triple).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub m: usize,
    pub n: usize,
    pub rank: f64,
}

/// Mean position of the answer inside its tie group. `n` counts the answer.
#[inline]
pub fn tie_rank(m: usize, n: usize) -> f64 {
    m as f64 + (n as f64 + 1.0) / 2.0
}

/// `mask[o]` is true iff `o` is the answer or `(head, rel, o)` is unknown in
/// every split.
pub fn filtered_mask(kg: &KnowledgeGraph, q: &Query) -> Vec<bool> {
    let mut mask = vec![true; kg.num_entities()];
    for split in [Split::Train, Split::Valid, Split::Test] {
        for &t in kg.index(split).tails(q.head, q.rel) {
            mask[t.index()] = false;
        }
    }
    mask[q.answer.index()] = true;
    mask
}

pub fn rank_of(scores: &[f64], answer: EntityId, mask: &[bool]) -> Result<RankOutcome> {
    let a = answer.index();
    if !mask.get(a).copied().unwrap_or(false) {
        return Err(Error::Eval(format!("answer {} is not admissible", answer.0)));
    }
    let target = scores[a];
    if !target.is_finite() {
        return Err(Error::Eval(format!("non-finite score {target} for the answer")));
    }
    let (mut m, mut n) = (0, 0);
    for (&s, _) in scores.iter().zip(mask).filter(|(_, &ok)| ok) {
        if s > target {
            m += 1;
        } else if s == target {
            n += 1;
        }
    }
    Ok(RankOutcome {
        m,
        n,
        rank: tie_rank(m, n),
    })
}

/// Anything that scores every entity as a tail for `(head, rel, ?)`.
pub trait Scorer: Sync {
    fn score(&self, head: EntityId, rel: RelationId) -> Result<Vec<f64>>;
}

impl<F> Scorer for F
where
    F: Fn(EntityId, RelationId) -> Result<Vec<f64>> + Sync,
{
    fn score(&self, head: EntityId, rel: RelationId) -> Result<Vec<f64>> {
        self(head, rel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub head: EntityId,
    pub rel: RelationId,
    pub answer: EntityId,
    pub source: QuerySource,
    pub outcome: RankOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mr: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub num_queries: usize,
    #[serde(skip)]
    pub outcomes: Vec<QueryOutcome>,
}

impl MetricsReport {
    pub fn from_outcomes(outcomes: Vec<QueryOutcome>, ks: &[usize]) -> Self {
        let n = outcomes.len();
        let denom = n.max(1) as f64;
        // Sequential sums in query order keep the result bit-stable.
        let mr = outcomes.iter().map(|o| o.outcome.rank).sum::<f64>() / denom;
        let mrr = outcomes.iter().map(|o| 1.0 / o.outcome.rank).sum::<f64>() / denom;
        let hits = ks
            .iter()
            .map(|&k| {
                let c = outcomes.iter().filter(|o| o.outcome.rank <= k as f64).count();
                (k, c as f64 / denom)
            })
            .collect();
        MetricsReport {
            mr,
            mrr,
            hits,
            num_queries: n,
            outcomes,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn per_query_tsv(&self, kg: &KnowledgeGraph) -> String {
        let mut s = String::from("head\trelation\tanswer\tsource\tm\tn\trank\n");
        for o in &self.outcomes {
            let source = match o.source {
                QuerySource::Forward => "forward",
                QuerySource::Inverse => "inverse",
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                kg.entity_name(o.head),
                kg.relation_name(o.rel),
                kg.entity_name(o.answer),
                source,
                o.outcome.m,
                o.outcome.n,
                o.outcome.rank
            );
        }
        s
    }
}

pub fn evaluate_queries(
    scorer: &dyn Scorer,
    kg: &KnowledgeGraph,
    queries: &[Query],
    ks: &[usize],
) -> Result<MetricsReport> {
    let outcomes = queries
        .par_iter()
        .map(|q| {
            let scores = scorer.score(q.head, q.rel)?;
            if scores.len() != kg.num_entities() {
                return Err(Error::Eval(format!(
                    "scorer returned {} scores for {} entities",
                    scores.len(),
                    kg.num_entities()
                )));
            }
            let outcome = rank_of(&scores, q.answer, &filtered_mask(kg, q))?;
            Ok(QueryOutcome {
                head: q.head,
                rel: q.rel,
                answer: q.answer,
                source: q.source,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_outcomes(outcomes, ks))
}

/// Evaluates on the test split (forward and inverse queries).
pub fn evaluate(scorer: &dyn Scorer, kg: &KnowledgeGraph, ks: &[usize]) -> Result<MetricsReport> {
    let qs = queries(kg, Split::Test);
    if qs.is_empty() {
        return Err(Error::Eval("test split is empty".into()));
    }
    evaluate_queries(scorer, kg, &qs, ks)
}
