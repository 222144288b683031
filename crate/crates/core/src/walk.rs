//! Rule candidates from local random walks, kept when their PCA confidence
//! reaches a threshold.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::metrics::{score_rules, FilterConfig};
use crate::rng::stream_seed;
use crate::rule::{dedup, Origin, Rule, RuleSet, DEFAULT_MAX_BODY_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_entity: usize,
    pub lengths: Vec<usize>,
    pub pca_threshold: f64,
    pub rng_seed: u64,
    pub max_body_len: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_entity: 100,
            lengths: vec![2, 3],
            pca_threshold: 0.01,
            rng_seed: 7,
            max_body_len: DEFAULT_MAX_BODY_LEN,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_entity == 0 {
            return Err(Error::Config("walks_per_entity must be at least 1".into()));
        }
        if self.lengths.is_empty() {
            return Err(Error::Config("at least one walk length is required".into()));
        }
        if let Some(&bad) = self.lengths.iter().find(|&&l| l == 0 || l > self.max_body_len) {
            return Err(Error::Config(format!(
                "walk length {bad} outside 1..={}",
                self.max_body_len
            )));
        }
        if !(0.0..=1.0).contains(&self.pca_threshold) {
            return Err(Error::Config(format!(
                "pca_threshold {} outside [0, 1]",
                self.pca_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WalkDiagnostics {
    pub walks: u64,
    /// Walks abandoned at an entity without outgoing train edges.
    pub dead_ends: u64,
}

fn walks_from(kg: &KnowledgeGraph, start: EntityId, cfg: &WalkConfig) -> (Vec<Rule>, WalkDiagnostics) {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.rng_seed, start.0 as u64));
    let mut diag = WalkDiagnostics::default();
    let mut seen: HashSet<(RelationId, Vec<RelationId>)> = HashSet::new();
    let mut out = Vec::new();
    let mut body = Vec::new();
    for &len in &cfg.lengths {
        for _ in 0..cfg.walks_per_entity {
            diag.walks += 1;
            body.clear();
            let mut at = start;
            let mut completed = true;
            for _ in 0..len {
                let edges = kg.outgoing(at);
                if edges.is_empty() {
                    completed = false;
                    break;
                }
                let (rel, next) = edges[rng.random_range(0..edges.len())];
                body.push(rel);
                at = next;
            }
            if !completed {
                diag.dead_ends += 1;
                continue;
            }
            for &head in kg.relations_between(start, at) {
                if seen.insert((head, body.clone())) {
                    out.push(Rule::new(head, body.clone(), Origin::RandomWalk));
                }
            }
        }
    }
    (out, diag)
}

/// Candidates in entity order, deduplicated, plus walk diagnostics.
/// Each entity draws from its own RNG stream, so results do not depend on
/// the thread count.
pub fn random_walk_candidates_with_diagnostics(
    kg: &KnowledgeGraph,
    cfg: &WalkConfig,
) -> Result<(Vec<Rule>, WalkDiagnostics)> {
    cfg.validate()?;
    let per_entity: Vec<(Vec<Rule>, WalkDiagnostics)> = kg
        .entities()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&e| walks_from(kg, e, cfg))
        .collect();
    let mut diag = WalkDiagnostics::default();
    let mut set = RuleSet::new();
    for (rules, d) in per_entity {
        diag.walks += d.walks;
        diag.dead_ends += d.dead_ends;
        set.extend(rules);
    }
    if diag.dead_ends > 0 {
        log::debug!("{} of {} walks hit a dead end", diag.dead_ends, diag.walks);
    }
    Ok((set.into_rules(), diag))
}

pub fn random_walk_candidates(kg: &KnowledgeGraph, cfg: &WalkConfig) -> Result<Vec<Rule>> {
    random_walk_candidates_with_diagnostics(kg, cfg).map(|(r, _)| r)
}

/// Walk candidates whose PCA confidence (default head and positive scopes)
/// is at least `cfg.pca_threshold`.
pub fn mine_rules(kg: &KnowledgeGraph, cfg: &WalkConfig) -> Result<RuleSet> {
    let candidates = random_walk_candidates(kg, cfg)?;
    let filter = FilterConfig {
        pca_threshold: cfg.pca_threshold,
        ..FilterConfig::default()
    };
    let scores = score_rules(kg, &candidates, &filter);
    let kept = candidates
        .into_iter()
        .zip(scores)
        .filter(|(_, s)| s.pca.is_some_and(|p| p >= cfg.pca_threshold))
        .map(|(r, _)| r);
    Ok(dedup(kept))
}
