//! Training loop and finite-difference gradient check.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::Serialize;

use super::features::{build_features, QueryFeatures};
use super::{
    forward_candidate, query_loss, scores_from_features, Layout, PredictorParams, QueryGrad, TrainConfig, Workspace,
};
use crate::adam::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::eval::{filtered_mask, rank_of, Query};
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::rng::stream_rng;
use crate::rule::RuleSet;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
}

/// Training examples: masked features per closed train triple, plus
/// unmasked features per closed valid triple.
pub fn training_features(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    cfg: &TrainConfig,
) -> (Vec<(QueryFeatures, EntityId)>, Vec<(QueryFeatures, EntityId)>) {
    let label = |triples: &[Triple], mask: bool| {
        build_features(kg, rules, triples, mask)
            .into_iter()
            .zip(triples.iter().map(|t| t.tail))
            .collect::<Vec<_>>()
    };
    (label(kg.train(), cfg.mask_query_edge), label(kg.valid(), false))
}

pub fn train_predictor(kg: &KnowledgeGraph, rules: &RuleSet, cfg: &TrainConfig) -> Result<PredictorParams> {
    train_predictor_with_report(kg, rules, cfg).map(|(p, _)| p)
}

pub fn train_predictor_with_report(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    cfg: &TrainConfig,
) -> Result<(PredictorParams, TrainReport)> {
    cfg.validate()?;
    if kg.train().is_empty() {
        return Err(Error::Config("cannot train on an empty train split".into()));
    }
    if rules.is_empty() {
        return Err(Error::Config("cannot train with an empty rule set".into()));
    }
    let (train, valid) = training_features(kg, rules, cfg);
    train_with_features(kg, rules, &train, &valid, cfg)
}

fn valid_mrr(p: &PredictorParams, kg: &KnowledgeGraph, valid: &[(QueryFeatures, EntityId)]) -> Result<f64> {
    let ranks = valid
        .par_iter()
        .map(|(f, answer)| {
            let q = Query::from_triple(Triple::new(f.head, f.rel, *answer));
            let scores = scores_from_features(p, f, kg.num_entities());
            rank_of(&scores, *answer, &filtered_mask(kg, &q)).map(|o| o.rank)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ranks.iter().map(|r| 1.0 / r).sum::<f64>() / ranks.len() as f64)
}

/// Trains on precomputed features. Returns the parameters of the epoch
/// with the best validation MRR (the last epoch when there is no
/// validation data).
pub fn train_with_features(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    train: &[(QueryFeatures, EntityId)],
    valid: &[(QueryFeatures, EntityId)],
    cfg: &TrainConfig,
) -> Result<(PredictorParams, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training queries".into()));
    }
    let n_ent = kg.num_entities();
    let mut params = PredictorParams::init(rules, cfg);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        params.values.len(),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0.0; params.values.len()];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut stream_rng(cfg.rng_seed, epoch as u64));
        let mut loss_sum = 0.0;
        for (batch_id, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_query: Vec<(f64, QueryGrad)> = batch
                .par_iter()
                .map_init(
                    || Workspace::new(&params.layout),
                    |ws, &i| {
                        let (f, answer) = &train[i];
                        let mut g = QueryGrad::new(&params.layout, f);
                        let loss = query_loss(&params, f, *answer, n_ent, ws, Some(&mut g));
                        (loss, g)
                    },
                )
                .collect();
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for (loss, g) in &per_query {
                batch_loss += loss;
                g.add_to(&params.layout, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: batch_loss,
                    learning_rate: cfg.learning_rate,
                    epoch,
                    batch: batch_id,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params.values, &grad);
            loss_sum += batch_loss;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: f64::NAN,
                learning_rate: cfg.learning_rate,
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
            });
        }
        let mrr = if valid.is_empty() {
            None
        } else {
            Some(valid_mrr(&params, kg, valid)?)
        };
        let mean_loss = loss_sum / train.len() as f64;
        log::info!(
            "epoch {epoch}: loss {mean_loss:.5}{}",
            mrr.map(|m| format!(", valid MRR {m:.4}")).unwrap_or_default()
        );
        epochs.push(EpochStats {
            epoch,
            mean_loss,
            valid_mrr: mrr,
        });
        let key = mrr.unwrap_or(epoch as f64);
        if best.as_ref().is_none_or(|(b, _, _)| key > *b) {
            best = Some((key, epoch, params.values.clone()));
        }
    }
    let (_, best_epoch, values) = best.expect("at least one epoch");
    params.values = values;
    Ok((params, TrainReport { epochs, best_epoch }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a
    /// non-differentiable point (ReLU, min or max switch).
    pub skipped_kinks: usize,
}

/// Activation pattern: ReLU signs and PNA argmin/argmax for every scored
/// candidate. Equal patterns mean the loss is smooth between two points.
fn pattern(p: &PredictorParams, f: &QueryFeatures) -> u64 {
    let mut h = DefaultHasher::new();
    let mut ws = Workspace::new(&p.layout);
    let mut one = |rules: &[u32], counts: &[u64], h: &mut DefaultHasher| {
        forward_candidate(p, rules, counts, &mut ws);
        ws.z.iter().map(|&z| z > 0.0).collect::<Vec<_>>().hash(h);
        ws.pna.argmin.hash(h);
        ws.pna.argmax.hash(h);
        ws.pna.std.iter().map(|&s| s > 0.0).collect::<Vec<_>>().hash(h);
    };
    one(&[], &[], &mut h);
    for i in 0..f.num_candidates() {
        let (r, c) = f.items(i);
        one(r, c, &mut h);
    }
    h.finish()
}

/// `MLP(0)` followed by the score of every fired candidate.
fn candidate_scores(p: &PredictorParams, f: &QueryFeatures, ws: &mut Workspace) -> Vec<f64> {
    let mut out = vec![forward_candidate(p, &[], &[], ws)];
    for i in 0..f.num_candidates() {
        let (r, c) = f.items(i);
        out.push(forward_candidate(p, r, c, ws));
    }
    out
}

/// `loss(plus) - loss(minus)` for the softmax cross-entropy, computed
/// without subtracting two nearly equal log-sum-exps: candidates whose
/// score did not move contribute exactly zero.
fn loss_difference(plus: &[f64], minus: &[f64], answer: Option<usize>, n_zero: usize) -> f64 {
    let weight = |i: usize| if i == 0 { n_zero as f64 } else { 1.0 };
    let max = minus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut dz) = (0.0, 0.0);
    for i in 0..minus.len() {
        let e = weight(i) * (minus[i] - max).exp();
        z += e;
        dz += e * (plus[i] - minus[i]).exp_m1();
    }
    let a = answer.map_or(0, |i| i + 1);
    (dz / z).ln_1p() - (plus[a] - minus[a])
}

pub fn gradient_check(
    params: &PredictorParams,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    query: Triple,
    epsilon: f64,
    num_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    gradient_check_with_tamper(params, kg, rules, query, epsilon, num_coords, seed, |_, _| {})
}

/// Like [`gradient_check`], with `tamper` applied to the analytic gradient
/// before comparison (used to confirm the check detects wrong gradients).
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_with_tamper(
    params: &PredictorParams,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    query: Triple,
    epsilon: f64,
    num_coords: usize,
    seed: u64,
    tamper: impl Fn(&Layout, &mut [f64]),
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    params.check_rules(rules)?;
    kg.check_relation(query.rel)?;
    let f = build_features(kg, rules, &[query], true).pop().expect("one query");
    let n_ent = kg.num_entities();
    let layout = params.layout;
    let mut ws = Workspace::new(&layout);
    let mut sparse = QueryGrad::new(&layout, &f);
    query_loss(params, &f, query.tail, n_ent, &mut ws, Some(&mut sparse));
    let mut analytic = vec![0.0; params.values.len()];
    sparse.add_to(&layout, &mut analytic);
    tamper(&layout, &mut analytic);

    // Prefer coordinates that can carry gradient: the MLP and the
    // embeddings of rules that fire for this query.
    let mut fired: Vec<u32> = (0..f.num_candidates()).flat_map(|i| f.items(i).0.to_vec()).collect();
    fired.sort_unstable();
    fired.dedup();
    let mut active: Vec<usize> = fired
        .iter()
        .flat_map(|&l| (l as usize * layout.dim)..((l as usize + 1) * layout.dim))
        .chain(layout.w1()..layout.len())
        .collect();
    let mut rng = stream_rng(seed, query.head.0 as u64 ^ ((query.rel.0 as u64) << 32));
    let mut coords: Vec<usize> = if active.len() > num_coords {
        active.partial_shuffle(&mut rng, num_coords).0.to_vec()
    } else {
        let all: Vec<usize> = (0..params.values.len()).collect();
        let extra = (num_coords - active.len()).min(all.len() - active.len());
        let mut extra_coords: Vec<usize> = all.choose_multiple(&mut rng, extra + active.len()).copied().collect();
        extra_coords.retain(|c| !active.contains(c));
        extra_coords.truncate(extra);
        active.extend(extra_coords);
        active
    };
    // Bias coordinates are always compared.
    coords.extend(layout.b1()..layout.w2());
    coords.push(layout.b2());
    coords.sort_unstable();
    coords.dedup();

    let answer_idx = (0..f.num_candidates()).find(|&i| f.candidate(i) == query.tail);
    let base = pattern(params, &f);
    let mut probe = params.clone();
    let mut max_err: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for &c in &coords {
        let orig = params.values[c];
        probe.values[c] = orig + epsilon;
        let plus_pattern = pattern(&probe, &f);
        let sp = candidate_scores(&probe, &f, &mut ws);
        probe.values[c] = orig - epsilon;
        let minus_pattern = pattern(&probe, &f);
        let sm = candidate_scores(&probe, &f, &mut ws);
        probe.values[c] = orig;
        if plus_pattern != base || minus_pattern != base {
            skipped += 1;
            continue;
        }
        let numeric = loss_difference(&sp, &sm, answer_idx, n_ent - f.num_candidates()) / (2.0 * epsilon);
        let a = analytic[c];
        let scale = a.abs().max(numeric.abs());
        let diff = (a - numeric).abs();
        let err = if scale < 1e-8 {
            if diff <= 1e-8 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / scale
        };
        max_err = max_err.max(err);
        checked += 1;
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        checked,
        skipped_kinks: skipped,
    })
}
