//! Engine results against independent brute-force computations, plus
//! property tests for the invariants of each module.

mod common;

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulekit_core::augment::{abduce, invert};
use rulekit_core::eval::{evaluate, filtered_mask, queries, rank_of, tie_rank, Query};
use rulekit_core::kg::PositivesScope;
use rulekit_core::metrics::{
    filter_rules, read_scored_rules, score_rule, score_rules, write_scored_rules, FilterConfig, HeadScope,
};
use rulekit_core::paths::path_count_rows;
use rulekit_core::predictor::pna::{self, PnaCache};
use rulekit_core::predictor::{
    grounding_counts, score_candidates, train_predictor, CountTransform, PredictorParams, TrainConfig,
};
use rulekit_core::rotate::{rotate_score, rotate_scores, train_rotate, RotateConfig, RotateParams};
use rulekit_core::rule::{read_rules, write_rules};
use rulekit_core::{EntityId, KnowledgeGraph, Origin, RawTriple, RelationId, Rule, RuleSet, Split};

use common::{brute_rank, brute_scores, check_grounding_preservation, dfs_counts, random_kg, random_rule};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn kg_from(edges: &[(&str, &str, &str)]) -> KnowledgeGraph {
    let raw: Vec<RawTriple> = edges.iter().map(|&(h, r, t)| RawTriple::new(h, r, t)).collect();
    KnowledgeGraph::build(&raw, &[], &[]).unwrap()
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        _ => false,
    }
}

// ---------------------------------------------------------------- paths

#[test]
fn path_counts_equal_dfs() {
    let mut r = rng(1);
    for _ in 0..60 {
        let kg = random_kg(&mut r, 30, 5, 60);
        let heads: Vec<EntityId> = kg.entities().collect();
        for _ in 0..5 {
            let rule = random_rule(&mut r, kg.num_relations(), 3);
            let m = path_count_rows(&kg, &rule.body, &heads);
            for (i, &h) in heads.iter().enumerate() {
                let got: Vec<(EntityId, u64)> = m.row(i).collect();
                let want: Vec<(EntityId, u64)> = dfs_counts(&kg, &rule.body, h).into_iter().collect();
                assert_eq!(got, want);
            }
        }
    }
}

#[test]
fn diamond_counts_two_paths_on_one_pair() {
    let kg = kg_from(&[
        ("a", "r1", "b1"),
        ("a", "r1", "b2"),
        ("b1", "r2", "c"),
        ("b2", "r2", "c"),
        ("a", "r", "c"),
    ]);
    let id = |n| kg.relation_id(n).unwrap();
    let a = kg.entity_id("a").unwrap();
    let c = kg.entity_id("c").unwrap();
    let m = path_count_rows(&kg, &[id("r1"), id("r2")], &[a]);
    assert_eq!(m.get(0, c), 2);
    let rule = Rule::new(id("r"), vec![id("r1"), id("r2")], Origin::Original);
    let s = score_rule(&kg, &rule, &FilterConfig::default());
    assert_eq!(s.foil, Some(1.0));
    assert_eq!(s.pca, Some(1.0));
    assert_eq!(s.stats.grounding_total, 2);
    assert_eq!(s.stats.pair_support, 1);
}

#[test]
fn empty_adjacency_gives_zero_rows() {
    let train = [RawTriple::new("a", "r", "b")];
    let test = [RawTriple::new("a", "z", "b")];
    let kg = KnowledgeGraph::build(&train, &[], &test).unwrap();
    let z = kg.relation_id("z").unwrap();
    let heads: Vec<EntityId> = kg.entities().collect();
    assert_eq!(path_count_rows(&kg, &[z], &heads).nnz(), 0);
}

// -------------------------------------------------------------- metrics

#[test]
fn pca_and_foil_equal_brute_force() {
    let mut r = rng(2);
    let scopes = [
        (HeadScope::AllTrainHeads, PositivesScope::Train),
        (HeadScope::AllTrainHeads, PositivesScope::TrainAndTest),
        (HeadScope::TestHeads, PositivesScope::Train),
        (HeadScope::TestHeads, PositivesScope::TrainAndTest),
    ];
    for _ in 0..50 {
        let kg = random_kg(&mut r, 30, 5, 60);
        for _ in 0..4 {
            let rule = random_rule(&mut r, kg.num_relations(), 3);
            for &(head_scope, positives_scope) in &scopes {
                let cfg = FilterConfig {
                    head_scope,
                    positives_scope,
                    ..FilterConfig::default()
                };
                let got = score_rule(&kg, &rule, &cfg);
                let (pca, foil) = brute_scores(&kg, &rule, &cfg);
                assert!(close(got.pca, pca), "pca {:?} vs {:?}", got.pca, pca);
                assert!(close(got.foil, foil), "foil {:?} vs {:?}", got.foil, foil);
                let s = got.stats;
                assert!(s.positive_pair_support <= s.pca_denominator && s.pca_denominator <= s.pair_support);
                assert!(s.grounding_positive <= s.grounding_total);
            }
        }
    }
}

#[test]
fn pca_six_entity_example() {
    // Two heads with a known `r`, each reaching three tails through `b`,
    // exactly one of them an `r` fact.
    let kg = kg_from(&[
        ("h1", "b", "t1"),
        ("h1", "b", "t2"),
        ("h1", "b", "t3"),
        ("h2", "b", "t2"),
        ("h2", "b", "t3"),
        ("h2", "b", "t4"),
        ("h1", "r", "t1"),
        ("h2", "r", "t4"),
    ]);
    assert_eq!(kg.num_entities(), 6);
    let rule = Rule::new(
        kg.relation_id("r").unwrap(),
        vec![kg.relation_id("b").unwrap()],
        Origin::Original,
    );
    let cfg = FilterConfig::default();
    let s = score_rule(&kg, &rule, &cfg);
    assert_eq!(brute_scores(&kg, &rule, &cfg), (s.pca, s.foil));
    assert!((s.pca.unwrap() - 2.0 / 6.0).abs() < 1e-15);
}

#[test]
fn planted_rule_kept_decoy_dropped() {
    let mut edges = Vec::new();
    for i in 0..20 {
        edges.push((format!("x{i}"), "p", format!("y{i}")));
        if i % 10 != 0 {
            edges.push((format!("x{i}"), "q", format!("y{i}")));
        }
        edges.push((format!("y{i}"), "d", format!("x{}", (i + 1) % 20)));
    }
    let raw: Vec<RawTriple> = edges.iter().map(|(h, r, t)| RawTriple::new(h, *r, t)).collect();
    let kg = KnowledgeGraph::build(&raw, &[], &[]).unwrap();
    let id = |n| kg.relation_id(n).unwrap();
    let planted = Rule::new(id("q"), vec![id("p")], Origin::Original);
    let decoy = Rule::new(id("q"), vec![id("p"), id("d")], Origin::Original);
    let cfg = FilterConfig::default();
    assert_eq!(brute_scores(&kg, &planted, &cfg).0, Some(1.0));
    assert_eq!(brute_scores(&kg, &decoy, &cfg).0, Some(0.0));
    let mut set = RuleSet::new();
    set.extend([planted.clone(), decoy]);
    assert_eq!(filter_rules(&set, &kg, &cfg).rules(), &[planted]);
}

// ----------------------------------------------------------- transforms

#[test]
fn transforms_preserve_groundings_on_planted_witnesses() {
    let mut r = rng(3);
    let mut witnessed = 0;
    for _ in 0..40 {
        let kg = random_kg(&mut r, 12, 3, 40);
        for _ in 0..10 {
            let rule = random_rule(&mut r, kg.num_relations(), 3);
            witnessed += usize::from(
                score_rule(&kg, &rule, &FilterConfig::default())
                    .stats
                    .positive_pair_support
                    > 0,
            );
            check_grounding_preservation(&kg, &rule);
        }
    }
    assert!(witnessed > 10, "too few rules with witnesses: {witnessed}");
}

#[test]
fn augmentation_count_example() {
    let kg = kg_from(&[("a", "r1", "b"), ("b", "r2", "c"), ("c", "r3", "d"), ("a", "rh", "d")]);
    let id = |n| kg.relation_id(n).unwrap();
    let rule = Rule::new(id("rh"), vec![id("r1"), id("r2"), id("r3")], Origin::Original);
    let mut set = RuleSet::new();
    set.insert(rule.clone());
    let abd = abduce(&rule);
    set.extend(abd.iter().cloned());
    let inverted: Vec<Rule> = set.iter().map(invert).collect();
    set.extend(inverted);
    assert_eq!(set.len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn abduce_and_invert_algebra(head in 0u32..10, body in prop::collection::vec(0u32..10, 1..=4)) {
        let rule = Rule::new(RelationId(head), body.into_iter().map(RelationId).collect(), Origin::Original);
        let abd = abduce(&rule);
        prop_assert_eq!(abd.len(), rule.body.len());
        for a in &abd {
            prop_assert_eq!(a.body.len(), rule.body.len());
            prop_assert!(a.relations().all(|r| r.0 < 10));
        }
        let twice = invert(&invert(&rule));
        prop_assert!(twice.same_shape(&rule));
    }

    #[test]
    fn grounding_preservation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let kg = random_kg(&mut r, 30, 4, 60);
        let rule = random_rule(&mut r, kg.num_relations(), 3);
        check_grounding_preservation(&kg, &rule);
    }

    #[test]
    fn filter_is_monotone(seed in any::<u64>(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let mut r = rng(seed);
        let kg = random_kg(&mut r, 20, 4, 50);
        let set = rulekit_core::rule::dedup((0..15).map(|_| random_rule(&mut r, kg.num_relations(), 3)));
        let at = |t| filter_rules(&set, &kg, &FilterConfig { pca_threshold: t, ..FilterConfig::default() });
        let (a, b) = (at(lo), at(hi));
        prop_assert!(b.iter().all(|rule| a.contains(rule)));
        let zero = at(0.0);
        let scores = score_rules(&kg, &set, &FilterConfig::default());
        let fired = scores.iter().filter(|s| s.pca.is_some()).count();
        prop_assert_eq!(zero.len(), fired);
    }
}

// ------------------------------------------------------------ predictor

fn predictor_setup(seed: u64) -> (KnowledgeGraph, RuleSet, PredictorParams) {
    let mut r = rng(seed);
    let kg = random_kg(&mut r, 25, 4, 60);
    let set = rulekit_core::rule::dedup((0..25).map(|_| random_rule(&mut r, kg.num_relations(), 2)));
    let cfg = TrainConfig {
        dim: 4,
        hidden: 8,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let params = PredictorParams::init(&set, &cfg);
    (kg, set, params)
}

/// Params for `rules` that reuse `from`'s MLP and the embedding of every
/// rule shared with `from_rules`.
fn transplant(from: &PredictorParams, from_rules: &RuleSet, rules: &RuleSet, seed: u64) -> PredictorParams {
    let cfg = TrainConfig {
        dim: from.layout.dim,
        hidden: from.layout.hidden,
        rng_seed: seed,
        ..TrainConfig::default()
    };
    let mut p = PredictorParams::init(rules, &cfg);
    let (w_old, w_new) = (from.layout.w1(), p.layout.w1());
    p.values[w_new..].copy_from_slice(&from.values[w_old..]);
    for (i, rule) in rules.iter().enumerate() {
        if let Some(j) = from_rules.position(rule) {
            p.embedding_mut(i).copy_from_slice(from.embedding(j));
        }
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_invariant_under_rule_order(seed in any::<u64>()) {
        let (kg, set, params) = predictor_setup(seed);
        let mut shuffled = set.rules().to_vec();
        shuffled.shuffle(&mut rng(seed ^ 1));
        let shuffled = rulekit_core::rule::dedup(shuffled);
        let p2 = transplant(&params, &set, &shuffled, seed);
        for q in kg.train().iter().take(10) {
            let a = score_candidates(&params, &kg, &set, q.head, q.rel).unwrap();
            let b = score_candidates(&p2, &kg, &shuffled, q.head, q.rel).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{} vs {}", x, y);
            }
            let again = score_candidates(&params, &kg, &set, q.head, q.rel).unwrap();
            prop_assert_eq!(&a, &again);
        }
    }

    #[test]
    fn pna_is_homogeneous_in_counts(seed in any::<u64>(), k in 0.1f64..50.0) {
        let mut r = rng(seed);
        let dim = 5;
        let n = r.random_range(1..6);
        let emb: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let counts: Vec<f64> = (0..n).map(|_| r.random_range(1..20) as f64).collect();
        let items = |scale: f64| -> Vec<f64> {
            (0..n * dim).map(|i| emb[i] * counts[i / dim] * scale).collect()
        };
        let run = |it: Vec<f64>| {
            let mut out = vec![0.0; 4 * dim];
            pna::forward(&it, dim, &mut out, &mut PnaCache::default());
            out
        };
        let base = run(items(1.0));
        let scaled = run(items(k));
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a * k - b).abs() <= 1e-12 * (1.0 + b.abs()), "{} {}", a * k, b);
        }
    }
}

#[test]
fn zero_grounding_rule_leaves_scores_unchanged() {
    let train = [
        RawTriple::new("a", "r", "b"),
        RawTriple::new("a", "s", "b"),
        RawTriple::new("b", "s", "c"),
        RawTriple::new("c", "r", "a"),
    ];
    let test = [RawTriple::new("c", "z", "a")];
    let kg = KnowledgeGraph::build(&train, &[], &test).unwrap();
    let id = |n| kg.relation_id(n).unwrap();
    let mut set = RuleSet::new();
    set.extend([
        Rule::new(id("r"), vec![id("s")], Origin::Original),
        Rule::new(id("r"), vec![id("s"), id("s")], Origin::Original),
    ]);
    let params = PredictorParams::init(&set, &TrainConfig::default());
    let mut bigger = set.clone();
    bigger.insert(Rule::new(id("r"), vec![id("z")], Origin::Original));
    let p2 = transplant(&params, &set, &bigger, 99);
    for h in kg.entities() {
        let a = score_candidates(&params, &kg, &set, h, id("r")).unwrap();
        let b = score_candidates(&p2, &kg, &bigger, h, id("r")).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn single_rule_query_counts() {
    let kg = kg_from(&[("h", "r1", "o"), ("h", "r", "x")]);
    let id = |n| kg.relation_id(n).unwrap();
    let mut set = RuleSet::new();
    set.insert(Rule::new(id("r"), vec![id("r1")], Origin::Original));
    let f = grounding_counts(&kg, &set, kg.entity_id("h").unwrap(), id("r"));
    assert_eq!(f.count(kg.entity_id("o").unwrap(), 0), 1);
    let none = grounding_counts(&kg, &set, kg.entity_id("h").unwrap(), id("r1"));
    assert_eq!(none.num_candidates(), 0);
}

/// `copy` duplicates `base` (a bijection), so `copy <- base` and its
/// inverse answer every query exactly.
fn perfect_rule_kg() -> (KnowledgeGraph, RuleSet) {
    let n = 40;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(5));
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (x, &y) in perm.iter().enumerate() {
        train.push(RawTriple::new(format!("e{x}"), "base", format!("e{y}")));
        let fact = RawTriple::new(format!("e{x}"), "copy", format!("e{y}"));
        match x % 5 {
            0 => test.push(fact),
            1 => valid.push(fact),
            _ => train.push(fact),
        }
    }
    let kg = KnowledgeGraph::build(&train, &valid, &test).unwrap();
    let id = |n| kg.relation_id(n).unwrap();
    let mut set = RuleSet::new();
    set.extend([
        Rule::new(id("copy"), vec![id("base")], Origin::Original),
        Rule::new(id("copy").inverse(), vec![id("base").inverse()], Origin::Original),
        Rule::new(id("base"), vec![id("copy")], Origin::Original),
        Rule::new(id("base").inverse(), vec![id("copy").inverse()], Origin::Original),
    ]);
    (kg, set)
}

#[test]
fn perfect_rule_is_learned() {
    let (kg, set) = perfect_rule_kg();
    // Count-threshold oracle: candidates reached by any rule score 1.
    let oracle = |h: EntityId, r: RelationId| -> rulekit_core::Result<Vec<f64>> {
        let f = grounding_counts(&kg, &set, h, r);
        let mut s = vec![0.0; kg.num_entities()];
        for i in 0..f.num_candidates() {
            s[f.candidate(i).index()] = 1.0;
        }
        Ok(s)
    };
    assert_eq!(evaluate(&oracle, &kg, &[1]).unwrap().mrr, 1.0);

    let cfg = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let params = train_predictor(&kg, &set, &cfg).unwrap();
    let scorer = rulekit_core::predictor::RuleScorer::new(&params, &kg, &set).unwrap();
    let mrr = evaluate(&scorer, &kg, &[1]).unwrap().mrr;
    assert!(mrr >= 0.95, "MRR {mrr}");

    let again = train_predictor(&kg, &set, &cfg).unwrap();
    assert_eq!(params.values.len(), again.values.len());
    assert!(params
        .values
        .iter()
        .zip(&again.values)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(
        params.to_checkpoint().to_json().unwrap(),
        again.to_checkpoint().to_json().unwrap()
    );
}

#[test]
fn raw_counts_are_accepted() {
    let (kg, set) = perfect_rule_kg();
    let cfg = TrainConfig {
        count_transform: CountTransform::Raw,
        epochs: 1,
        ..TrainConfig::default()
    };
    let params = train_predictor(&kg, &set, &cfg).unwrap();
    assert!(params.is_finite());
}

// --------------------------------------------------------------- rotate

fn scalar_rotate(p: &RotateParams, h: EntityId, r: RelationId, t: EntityId) -> f64 {
    let (xh, xt, th) = (p.entity(h), p.entity(t), p.phases(r));
    let mut d = 0.0;
    for i in 0..p.dim {
        let (a, b) = (xh[2 * i], xh[2 * i + 1]);
        let (c, s) = (th[i].cos(), th[i].sin());
        let re = a * c - b * s - xt[2 * i];
        let im = a * s + b * c - xt[2 * i + 1];
        d += (re * re + im * im).sqrt();
    }
    -d
}

#[test]
fn rotate_matches_scalar_oracle_and_is_nonpositive() {
    let cfg = RotateConfig {
        dim: 6,
        ..RotateConfig::default()
    };
    let p = RotateParams::init(7, 4, &cfg);
    for h in 0..7 {
        for r in 0..4 {
            let (h, r) = (EntityId(h), RelationId(r));
            let batch = rotate_scores(&p, h, r);
            for t in 0..7 {
                let t = EntityId(t);
                let s = rotate_score(&p, h, r, t);
                assert!((s - scalar_rotate(&p, h, r, t)).abs() <= 1e-12);
                assert!(s <= 0.0);
                assert_eq!(s, batch[t.index()]);
            }
        }
    }
}

#[test]
fn rotate_global_phase_shift_invariance() {
    let cfg = RotateConfig {
        dim: 5,
        ..RotateConfig::default()
    };
    let p = RotateParams::init(6, 3, &cfg);
    for angle in [0.3, 1.0, PI / 2.0, -2.5] {
        let mut q = p.clone();
        let (s, c) = f64::sin_cos(angle);
        for z in q.entity.chunks_exact_mut(2) {
            let (a, b) = (z[0], z[1]);
            z[0] = a * c - b * s;
            z[1] = a * s + b * c;
        }
        for h in 0..6 {
            for r in 0..3 {
                for t in 0..6 {
                    let (h, r, t) = (EntityId(h), RelationId(r), EntityId(t));
                    assert!((rotate_score(&p, h, r, t) - rotate_score(&q, h, r, t)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn rotate_training_is_deterministic() {
    let (kg, _) = perfect_rule_kg();
    let cfg = RotateConfig {
        dim: 4,
        epochs: 2,
        negatives: 8,
        ..RotateConfig::default()
    };
    let a = train_rotate(&kg, &cfg).unwrap();
    let b = train_rotate(&kg, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.unit_modulus_deviation() <= 1e-12);
}

// ----------------------------------------------------------------- eval

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranks_match_brute_force(seed in any::<u64>()) {
        let mut r = rng(seed);
        let kg = random_kg(&mut r, 20, 3, 40);
        for q in queries(&kg, Split::Test) {
            // Coarse scores force ties.
            let scores: Vec<f64> = kg.entities().map(|_| r.random_range(0..4) as f64).collect();
            let got = rank_of(&scores, q.answer, &filtered_mask(&kg, &q)).unwrap();
            prop_assert_eq!(got.rank, brute_rank(&kg, &scores, q.head, q.rel, q.answer));
            prop_assert_eq!(got.rank, tie_rank(got.m, got.n));
        }
    }

    #[test]
    fn argrank_invariance_and_removal(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..30);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(-3..4) as f64 * 0.5).collect();
        let answer = EntityId(r.random_range(0..n as u32));
        let mask = vec![true; n];
        let base = rank_of(&scores, answer, &mask).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (s * 1.7).exp() + s.powi(3)).collect();
        prop_assert_eq!(rank_of(&transformed, answer, &mask).unwrap(), base);
        let drop = r.random_range(0..n);
        if drop != answer.index() {
            let mut m2 = mask.clone();
            m2[drop] = false;
            let after = rank_of(&scores, answer, &m2).unwrap();
            prop_assert!(after.m <= base.m && after.rank <= base.rank);
        }
    }
}

#[test]
fn report_mrr_equals_outcome_mean() {
    let mut r = rng(8);
    let kg = random_kg(&mut r, 20, 3, 40);
    let scorer = |_h: EntityId, _r: RelationId| -> rulekit_core::Result<Vec<f64>> {
        Ok((0..kg.num_entities()).map(|i| ((i * 7) % 5) as f64).collect())
    };
    let report = evaluate(&scorer, &kg, &[1, 3, 10]).unwrap();
    let mean = report.outcomes.iter().map(|o| 1.0 / o.outcome.rank).sum::<f64>() / report.outcomes.len() as f64;
    assert!((mean - report.mrr).abs() < 1e-12);
    assert_eq!(report.num_queries, kg.test().len());
    let h = |k| report.hits_at(k).unwrap();
    assert!(h(1) <= h(3) && h(3) <= h(10));
    let q: Vec<Query> = queries(&kg, Split::Test);
    assert_eq!(q.len(), kg.test().len());
}

// ----------------------------------------------------------- round trips

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(9);
    let kg = random_kg(&mut r, 20, 4, 50);
    for (split, name) in [
        (Split::Train, "train.txt"),
        (Split::Valid, "valid.txt"),
        (Split::Test, "test.txt"),
    ] {
        kg.write_split(split, dir.path().join(name)).unwrap();
    }
    let reloaded = KnowledgeGraph::load_dir(dir.path()).unwrap();
    assert_eq!(reloaded, kg);

    let mut set = rulekit_core::rule::dedup((0..20).map(|_| random_rule(&mut r, kg.num_relations(), 3)));
    let extra: Vec<Rule> = set.iter().flat_map(abduce).collect();
    set.extend(extra);
    let p = dir.path().join("rules.txt");
    write_rules(&p, &set, &kg).unwrap();
    let back = read_rules(&p, &kg).unwrap();
    assert_eq!(back, set);

    let scores = score_rules(&kg, &set, &FilterConfig::default());
    let p = dir.path().join("scored.tsv");
    write_scored_rules(&p, &set, &scores, &kg).unwrap();
    let rows = read_scored_rules(&p, &kg).unwrap();
    assert_eq!(rows.len(), set.len());
    for ((row, rule), s) in rows.iter().zip(set.iter()).zip(&scores) {
        assert!(row.rule.same_shape(rule));
        assert_eq!(row.pca, s.pca);
        assert_eq!(row.foil, s.foil);
        assert_eq!(row.grounding_total, s.stats.grounding_total);
    }

    let params = PredictorParams::init(&set, &TrainConfig::default());
    let p = dir.path().join("predictor.json");
    params.save(&p).unwrap();
    assert_eq!(PredictorParams::load(&p, &set).unwrap(), params);
    let rot = RotateParams::init(
        kg.num_entities(),
        kg.num_relations(),
        &RotateConfig {
            dim: 3,
            ..RotateConfig::default()
        },
    );
    let p = dir.path().join("rotate.json");
    rot.save(&p).unwrap();
    assert_eq!(RotateParams::load(&p).unwrap(), rot);
}
