//! Rule-based link predictor.
//!
//! A candidate `o` for the query `(h, r, ?)` is scored as
//! `MLP(PNA({ w(#(h, l, o)) * v_l : #(h, l, o) > 0 }))`, where `v_l` is a
//! learned embedding per rule, `w` is the count transform and PNA
//! concatenates mean, min, max and std. Candidates with no firing rule get
//! `MLP(0)`.

pub mod features;
pub mod pna;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Model, PredictorCheckpoint};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::paths::Scratch;
use crate::rng::stream_rng;
use crate::rule::RuleSet;

pub use features::{build_features, grounding_counts, grounding_counts_with, QueryFeatures, RuleIndex};
pub use train::{
    gradient_check, gradient_check_with_tamper, train_predictor, train_predictor_with_report, train_with_features,
    training_features, EpochStats, GradCheckReport, TrainReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountTransform {
    Raw,
    #[default]
    Log1p,
}

impl CountTransform {
    #[inline]
    pub fn apply(self, count: u64) -> f64 {
        match self {
            CountTransform::Raw => count as f64,
            CountTransform::Log1p => (count as f64).ln_1p(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub count_transform: CountTransform,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_query_edge: bool,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            hidden: 64,
            count_transform: CountTransform::Log1p,
            epochs: 5,
            batch_size: 32,
            learning_rate: 1e-3,
            mask_query_edge: true,
            rng_seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("dim and hidden must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub num_rules: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn input_width(&self) -> usize {
        4 * self.dim
    }
    pub fn emb(&self) -> usize {
        0
    }
    pub fn w1(&self) -> usize {
        self.num_rules * self.dim
    }
    pub fn b1(&self) -> usize {
        self.w1() + self.hidden * self.input_width()
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.hidden
    }
    pub fn len(&self) -> usize {
        self.b2() + 1
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub layout: Layout,
    pub count_transform: CountTransform,
    pub ruleset_hash: String,
    pub values: Vec<f64>,
}

impl PredictorParams {
    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(rules: &RuleSet, cfg: &TrainConfig) -> Self {
        let layout = Layout {
            num_rules: rules.len(),
            dim: cfg.dim,
            hidden: cfg.hidden,
        };
        let mut rng = stream_rng(cfg.rng_seed, 0x5052_4544);
        let mut values = vec![0.0; layout.len()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(layout.emb()..layout.w1(), layout.dim);
        fill(layout.w1()..layout.b1(), layout.input_width());
        fill(layout.b1()..layout.w2(), layout.input_width());
        fill(layout.w2()..layout.b2(), layout.hidden);
        fill(layout.b2()..layout.len(), layout.hidden);
        PredictorParams {
            layout,
            count_transform: cfg.count_transform,
            ruleset_hash: rules.content_hash(),
            values,
        }
    }

    pub fn embedding(&self, rule: usize) -> &[f64] {
        let d = self.layout.dim;
        &self.values[rule * d..(rule + 1) * d]
    }

    pub fn embedding_mut(&mut self, rule: usize) -> &mut [f64] {
        let d = self.layout.dim;
        &mut self.values[rule * d..(rule + 1) * d]
    }

    pub fn check_rules(&self, rules: &RuleSet) -> Result<()> {
        if self.layout.num_rules != rules.len() {
            return Err(Error::Config(format!(
                "parameters cover {} rules, rule set has {}",
                self.layout.num_rules,
                rules.len()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(Model::Predictor(PredictorCheckpoint {
            ruleset_hash: self.ruleset_hash.clone(),
            num_rules: self.layout.num_rules,
            dim: self.layout.dim,
            hidden: self.layout.hidden,
            count_transform: self.count_transform,
            params: self.values.clone(),
        }))
    }

    /// Rebuilds parameters, refusing a checkpoint trained on other rules.
    pub fn from_checkpoint(ck: &Checkpoint, rules: &RuleSet) -> Result<Self> {
        let Model::Predictor(p) = &ck.model else {
            return Err(Error::Checkpoint("not a predictor checkpoint".into()));
        };
        let hash = rules.content_hash();
        if p.ruleset_hash != hash {
            return Err(Error::Checkpoint(format!(
                "rule set hash mismatch: checkpoint {} vs rules {hash}",
                p.ruleset_hash
            )));
        }
        let layout = Layout {
            num_rules: p.num_rules,
            dim: p.dim,
            hidden: p.hidden,
        };
        if p.params.len() != layout.len() || p.num_rules != rules.len() {
            return Err(Error::Checkpoint("parameter count does not match shape".into()));
        }
        Ok(PredictorParams {
            layout,
            count_transform: p.count_transform,
            ruleset_hash: p.ruleset_hash.clone(),
            values: p.params.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>, rules: &RuleSet) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, rules)
    }
}

/// Reusable buffers for one candidate's forward and backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Workspace {
    items: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    a: Vec<f64>,
    pna: pna::PnaCache,
    ditems: Vec<f64>,
    dx: Vec<f64>,
    dz: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(layout: &Layout) -> Self {
        Workspace {
            x: vec![0.0; layout.input_width()],
            z: vec![0.0; layout.hidden],
            a: vec![0.0; layout.hidden],
            dx: vec![0.0; layout.input_width()],
            dz: vec![0.0; layout.hidden],
            ..Workspace::default()
        }
    }
}

/// PNA input for one candidate. `rules`/`counts` may be empty.
pub(crate) fn aggregate(p: &PredictorParams, rules: &[u32], counts: &[u64], ws: &mut Workspace) {
    let d = p.layout.dim;
    ws.items.clear();
    for (&l, &c) in rules.iter().zip(counts) {
        let w = p.count_transform.apply(c);
        ws.items.extend(p.embedding(l as usize).iter().map(|v| w * v));
    }
    pna::forward(&ws.items, d, &mut ws.x, &mut ws.pna);
}

/// MLP on `ws.x`, returns the scalar score.
pub(crate) fn mlp_forward(p: &PredictorParams, ws: &mut Workspace) -> f64 {
    let l = &p.layout;
    let width = l.input_width();
    let w1 = &p.values[l.w1()..l.b1()];
    let b1 = &p.values[l.b1()..l.w2()];
    let w2 = &p.values[l.w2()..l.b2()];
    let mut s = p.values[l.b2()];
    for k in 0..l.hidden {
        let row = &w1[k * width..(k + 1) * width];
        let z = b1[k] + row.iter().zip(&ws.x).map(|(w, x)| w * x).sum::<f64>();
        ws.z[k] = z;
        ws.a[k] = z.max(0.0);
        s += w2[k] * ws.a[k];
    }
    s
}

pub(crate) fn forward_candidate(p: &PredictorParams, rules: &[u32], counts: &[u64], ws: &mut Workspace) -> f64 {
    aggregate(p, rules, counts, ws);
    mlp_forward(p, ws)
}

/// Gradient of one query's loss: dense over the MLP, sparse over the
/// embeddings of the rules that fire for the query.
#[derive(Debug, Clone, Default)]
pub(crate) struct QueryGrad {
    /// Sorted, distinct rule indices.
    pub rules: Vec<u32>,
    pub emb: Vec<f64>,
    /// Indexed relative to `Layout::w1`.
    pub mlp: Vec<f64>,
}

impl QueryGrad {
    pub(crate) fn new(layout: &Layout, feats: &QueryFeatures) -> Self {
        let mut rules: Vec<u32> = (0..feats.num_candidates())
            .flat_map(|i| feats.items(i).0.iter().copied())
            .collect();
        rules.sort_unstable();
        rules.dedup();
        QueryGrad {
            emb: vec![0.0; rules.len() * layout.dim],
            mlp: vec![0.0; layout.len() - layout.w1()],
            rules,
        }
    }

    pub(crate) fn add_to(&self, layout: &Layout, dense: &mut [f64]) {
        let d = layout.dim;
        for (k, &l) in self.rules.iter().enumerate() {
            let o = l as usize * d;
            for j in 0..d {
                dense[o + j] += self.emb[k * d + j];
            }
        }
        for (a, b) in dense[layout.w1()..].iter_mut().zip(&self.mlp) {
            *a += b;
        }
    }
}

/// Backpropagates `g = d loss / d score` through the candidate most
/// recently run in `ws`, accumulating into `grad`.
fn backward_candidate(
    p: &PredictorParams,
    rules: &[u32],
    counts: &[u64],
    g: f64,
    ws: &mut Workspace,
    grad: &mut QueryGrad,
) {
    let l = &p.layout;
    let width = l.input_width();
    let base = l.w1();
    let (b1_off, w2_off, b2_off) = (l.b1() - base, l.w2() - base, l.b2() - base);
    let mlp = &mut grad.mlp;
    mlp[b2_off] += g;
    for k in 0..l.hidden {
        mlp[w2_off + k] += g * ws.a[k];
        ws.dz[k] = if ws.z[k] > 0.0 {
            g * p.values[base + w2_off + k]
        } else {
            0.0
        };
        mlp[b1_off + k] += ws.dz[k];
    }
    if rules.is_empty() {
        // x == 0: no W1 gradient, nothing below the MLP.
        return;
    }
    ws.dx.fill(0.0);
    for k in 0..l.hidden {
        let dz = ws.dz[k];
        if dz == 0.0 {
            continue;
        }
        let row = k * width;
        let w = &p.values[base + row..base + row + width];
        let gw = &mut mlp[row..row + width];
        for j in 0..width {
            gw[j] += dz * ws.x[j];
            ws.dx[j] += dz * w[j];
        }
    }
    let d = l.dim;
    ws.ditems.clear();
    ws.ditems.resize(ws.items.len(), 0.0);
    pna::backward(&ws.items, d, &ws.pna, &ws.dx, &mut ws.ditems);
    for (k, (&rule, &c)) in rules.iter().zip(counts).enumerate() {
        let w = p.count_transform.apply(c);
        let slot = grad.rules.binary_search(&rule).expect("rule fires for this query");
        let e = &mut grad.emb[slot * d..(slot + 1) * d];
        for j in 0..d {
            e[j] += w * ws.ditems[k * d + j];
        }
    }
}

/// Scores for every entity given precomputed features.
pub fn scores_from_features(p: &PredictorParams, feats: &QueryFeatures, num_entities: usize) -> Vec<f64> {
    let mut ws = Workspace::new(&p.layout);
    let s0 = forward_candidate(p, &[], &[], &mut ws);
    let mut scores = vec![s0; num_entities];
    for i in 0..feats.num_candidates() {
        let (rules, counts) = feats.items(i);
        scores[feats.candidate(i).index()] = forward_candidate(p, rules, counts, &mut ws);
    }
    scores
}

/// Scores every entity as an answer to `(head, rel, ?)` over unmasked train paths.
pub fn score_candidates(
    params: &PredictorParams,
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    head: EntityId,
    rel: RelationId,
) -> Result<Vec<f64>> {
    params.check_rules(rules)?;
    kg.check_relation(rel)?;
    let feats = grounding_counts(kg, rules, head, rel);
    Ok(scores_from_features(params, &feats, kg.num_entities()))
}

/// On-demand scorer over unmasked train paths, usable with the evaluator.
pub struct RuleScorer<'a> {
    params: &'a PredictorParams,
    kg: &'a KnowledgeGraph,
    rules: &'a RuleSet,
    index: RuleIndex,
}

impl<'a> RuleScorer<'a> {
    pub fn new(params: &'a PredictorParams, kg: &'a KnowledgeGraph, rules: &'a RuleSet) -> Result<Self> {
        params.check_rules(rules)?;
        Ok(RuleScorer {
            params,
            kg,
            rules,
            index: RuleIndex::new(rules, kg.num_relations()),
        })
    }

    pub fn features(&self, head: EntityId, rel: RelationId) -> QueryFeatures {
        let mut scratch = Scratch::new(self.kg.num_entities());
        grounding_counts_with(self.kg, self.rules, &self.index, head, rel, &[], &mut scratch)
    }
}

impl Scorer for RuleScorer<'_> {
    fn score(&self, head: EntityId, rel: RelationId) -> Result<Vec<f64>> {
        self.kg.check_relation(rel)?;
        Ok(scores_from_features(
            self.params,
            &self.features(head, rel),
            self.kg.num_entities(),
        ))
    }
}

/// PNA feature vector for one candidate (exposed for inspection and tests).
pub fn pna_features(params: &PredictorParams, feats: &QueryFeatures, candidate: EntityId) -> Vec<f64> {
    let mut ws = Workspace::new(&params.layout);
    let (rules, counts) = match (0..feats.num_candidates()).find(|&i| feats.candidate(i) == candidate) {
        Some(i) => feats.items(i),
        None => (&[][..], &[][..]),
    };
    aggregate(params, rules, counts, &mut ws);
    ws.x
}

/// Softmax cross-entropy over all entities for one query, optionally
/// accumulating the gradient. Entities without firing rules share the
/// score `MLP(0)` and are handled as one group.
pub(crate) fn query_loss(
    p: &PredictorParams,
    feats: &QueryFeatures,
    answer: EntityId,
    num_entities: usize,
    ws: &mut Workspace,
    mut grad: Option<&mut QueryGrad>,
) -> f64 {
    let n = feats.num_candidates();
    let s0 = forward_candidate(p, &[], &[], ws);
    let mut scores = Vec::with_capacity(n);
    let mut answer_idx = None;
    for i in 0..n {
        let (rules, counts) = feats.items(i);
        scores.push(forward_candidate(p, rules, counts, ws));
        if feats.candidate(i) == answer {
            answer_idx = Some(i);
        }
    }
    let n_zero = num_entities - n;
    let mut max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n_zero > 0 {
        max = max.max(s0);
    }
    let mut sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    sum += n_zero as f64 * (s0 - max).exp();
    let lse = max + sum.ln();
    let s_answer = answer_idx.map_or(s0, |i| scores[i]);
    let loss = lse - s_answer;

    if let Some(grad) = grad.as_deref_mut() {
        let g0 = n_zero as f64 * (s0 - lse).exp() - if answer_idx.is_none() { 1.0 } else { 0.0 };
        forward_candidate(p, &[], &[], ws);
        backward_candidate(p, &[], &[], g0, ws, grad);
        for i in 0..n {
            let (rules, counts) = feats.items(i);
            let g = (scores[i] - lse).exp() - if answer_idx == Some(i) { 1.0 } else { 0.0 };
            forward_candidate(p, rules, counts, ws);
            backward_candidate(p, rules, counts, g, ws, grad);
        }
    }
    loss
}
