//! Brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here touches the matrix path engine.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rulekit_core::augment::{abduce, invert};
use rulekit_core::kg::PositivesScope;
use rulekit_core::metrics::{FilterConfig, HeadScope};
use rulekit_core::{EntityId, KnowledgeGraph, RawTriple, RelationId, Rule, Triple};

/// Random graph with up to `max_ent` entities, `max_rel` base relations and
/// `max_edges` train edges, plus a few valid and test triples.
pub fn random_kg(rng: &mut impl Rng, max_ent: usize, max_rel: usize, max_edges: usize) -> KnowledgeGraph {
    let n_ent = rng.random_range(2..=max_ent);
    let n_rel = rng.random_range(1..=max_rel);
    let edge = |rng: &mut dyn rand::RngCore| {
        RawTriple::new(
            format!("e{}", rng.random_range(0..n_ent)),
            format!("r{}", rng.random_range(0..n_rel)),
            format!("e{}", rng.random_range(0..n_ent)),
        )
    };
    let n_edges = rng.random_range(1..=max_edges);
    let train: Vec<RawTriple> = (0..n_edges).map(|_| edge(rng)).collect();
    let valid: Vec<RawTriple> = (0..rng.random_range(0..4)).map(|_| edge(rng)).collect();
    let test: Vec<RawTriple> = (0..rng.random_range(1..6)).map(|_| edge(rng)).collect();
    KnowledgeGraph::build(&train, &valid, &test).expect("random graph builds")
}

pub fn random_rule(rng: &mut impl Rng, num_relations: usize, max_len: usize) -> Rule {
    let len = rng.random_range(1..=max_len);
    let r = |rng: &mut dyn rand::RngCore| RelationId(rng.random_range(0..num_relations as u32));
    let head = r(rng);
    let body = (0..len).map(|_| r(rng)).collect();
    Rule::new(head, body, rulekit_core::Origin::Original)
}

/// Every train-edge path from `h` realizing `body`, as the entity sequence
/// `e0 .. eL`, found by depth-first search over the raw triple list.
pub fn dfs_paths(kg: &KnowledgeGraph, body: &[RelationId], h: EntityId) -> Vec<Vec<EntityId>> {
    fn go(train: &[Triple], body: &[RelationId], path: &mut Vec<EntityId>, out: &mut Vec<Vec<EntityId>>) {
        let depth = path.len() - 1;
        if depth == body.len() {
            out.push(path.clone());
            return;
        }
        let at = *path.last().unwrap();
        for t in train {
            if t.head == at && t.rel == body[depth] {
                path.push(t.tail);
                go(train, body, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(kg.train(), body, &mut vec![h], &mut out);
    out
}

/// `|Path(h, body, t)|` for every reachable `t`.
pub fn dfs_counts(kg: &KnowledgeGraph, body: &[RelationId], h: EntityId) -> BTreeMap<EntityId, u64> {
    let mut m = BTreeMap::new();
    for p in dfs_paths(kg, body, h) {
        *m.entry(*p.last().unwrap()).or_insert(0) += 1;
    }
    m
}

fn positive(kg: &KnowledgeGraph, scope: PositivesScope, h: EntityId, r: RelationId, t: EntityId) -> bool {
    let hit = |split: &[Triple]| split.contains(&Triple::new(h, r, t));
    hit(kg.train()) || (scope == PositivesScope::TrainAndTest && hit(kg.test()))
}

fn heads(kg: &KnowledgeGraph, scope: HeadScope) -> Vec<EntityId> {
    let src = match scope {
        HeadScope::AllTrainHeads => kg.train(),
        HeadScope::TestHeads => kg.test(),
    };
    let set: HashSet<EntityId> = src.iter().map(|t| t.head).collect();
    let mut v: Vec<EntityId> = set.into_iter().collect();
    v.sort();
    v
}

/// (pca, foil) straight from the definitions, over all entity pairs.
pub fn brute_scores(kg: &KnowledgeGraph, rule: &Rule, cfg: &FilterConfig) -> (Option<f64>, Option<f64>) {
    let scope = cfg.positives_scope;
    let (mut num, mut den, mut g_pos, mut g_all) = (0u64, 0u64, 0u64, 0u64);
    for h in heads(kg, cfg.head_scope) {
        let counts = dfs_counts(kg, &rule.body, h);
        let known = kg.entities().any(|t| positive(kg, scope, h, rule.head, t));
        for t in kg.entities() {
            let n = counts.get(&t).copied().unwrap_or(0);
            g_all += n;
            if n == 0 {
                continue;
            }
            let pos = positive(kg, scope, h, rule.head, t);
            if pos {
                g_pos += n;
            }
            if known {
                den += 1;
                if pos {
                    num += 1;
                }
            }
        }
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    (ratio(num, den), ratio(g_pos, g_all))
}

/// Reference ranking: `m` strictly better admissible entities, `n` ties
/// including the answer, filtered against every split.
pub fn brute_rank(kg: &KnowledgeGraph, scores: &[f64], h: EntityId, r: RelationId, answer: EntityId) -> f64 {
    let all: Vec<Triple> = kg.train().iter().chain(kg.valid()).chain(kg.test()).copied().collect();
    let (mut m, mut n) = (0usize, 0usize);
    for o in kg.entities() {
        if o != answer && all.contains(&Triple::new(h, r, o)) {
            continue;
        }
        if scores[o.index()] > scores[answer.index()] {
            m += 1;
        } else if scores[o.index()] == scores[answer.index()] {
            n += 1;
        }
    }
    m as f64 + (n as f64 + 1.0) / 2.0
}

/// Checks that every witness of `rule` yields the predicted witness of its
/// inversion and of each abduced rule. Returns the number of witnesses.
pub fn check_grounding_preservation(kg: &KnowledgeGraph, rule: &Rule) -> usize {
    let inv = invert(rule);
    let abd = abduce(rule);
    let l = rule.body.len();
    let mut witnesses = 0;
    for h in kg.entities() {
        for p in dfs_paths(kg, &rule.body, h) {
            let (e0, el) = (p[0], p[l]);
            if !kg.train().contains(&Triple::new(e0, rule.head, el)) {
                continue;
            }
            witnesses += 1;
            let rev: Vec<EntityId> = p.iter().rev().copied().collect();
            assert!(kg.train().contains(&Triple::new(el, inv.head, e0)));
            assert!(dfs_paths(kg, &inv.body, el).contains(&rev));
            for (i, a) in abd.iter().enumerate() {
                // Atom i links p[i] -> p[i + 1]; the abduced rule walks from
                // p[i + 1] around the cycle back to p[i].
                let mut walk = vec![p[i + 1]];
                walk.extend_from_slice(&p[i + 2..]);
                walk.push(e0);
                walk.extend_from_slice(&p[1..=i]);
                assert!(kg.train().contains(&Triple::new(p[i + 1], a.head, p[i])));
                assert!(dfs_paths(kg, &a.body, p[i + 1]).contains(&walk), "{a:?} {walk:?}");
            }
        }
    }
    witnesses
}
