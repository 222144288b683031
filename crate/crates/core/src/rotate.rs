//! Minimal RotatE model: entities are complex vectors, relations are
//! element-wise rotations stored as phases. Trained with self-adversarial
//! negative sampling and combined with the rule predictor as
//! `score(o) + eta * rotate(h, r, o)`.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{Adam, AdamConfig};
use crate::checkpoint::{Checkpoint, Model, RotateCheckpoint};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotateConfig {
    pub dim: usize,
    pub gamma: f64,
    pub negatives: usize,
    pub adversarial_temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for RotateConfig {
    fn default() -> Self {
        RotateConfig {
            dim: 200,
            gamma: 12.0,
            negatives: 64,
            adversarial_temperature: 1.0,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            rng_seed: 7,
        }
    }
}

impl RotateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.negatives == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "rotate dim, negatives, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !self.gamma.is_finite() || !self.adversarial_temperature.is_finite() {
            return Err(Error::Config("gamma and temperature must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub eta: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { eta: 0.1 }
    }
}

/// Hyperparameters of the four benchmark datasets. Kinship values are not
/// published alongside the others and are unverified defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetPreset {
    Wn18rr,
    Fb15k237,
    Umls,
    Kinship,
}

impl DatasetPreset {
    pub fn rotate_dim(self) -> usize {
        match self {
            DatasetPreset::Wn18rr => 200,
            DatasetPreset::Fb15k237 => 500,
            DatasetPreset::Umls => 1000,
            DatasetPreset::Kinship => 2000,
        }
    }

    pub fn eta(self) -> f64 {
        match self {
            DatasetPreset::Wn18rr => 0.01,
            DatasetPreset::Fb15k237 => 0.05,
            DatasetPreset::Umls => 0.1,
            DatasetPreset::Kinship => 0.5,
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            DatasetPreset::Wn18rr => 8,
            DatasetPreset::Fb15k237 => 4,
            DatasetPreset::Umls | DatasetPreset::Kinship => 32,
        }
    }
}

impl FromStr for DatasetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "wn18rr" => Ok(DatasetPreset::Wn18rr),
            "fb15k237" => Ok(DatasetPreset::Fb15k237),
            "umls" => Ok(DatasetPreset::Umls),
            "kinship" => Ok(DatasetPreset::Kinship),
            other => Err(Error::Config(format!("unknown dataset preset `{other}`"))),
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotateParams {
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
    pub gamma: f64,
    /// `num_entities x dim` complex values, interleaved `(re, im)`.
    pub entity: Vec<f64>,
    /// `num_relations x dim` phases.
    pub phase: Vec<f64>,
}

impl RotateParams {
    pub fn init(num_entities: usize, num_relations: usize, cfg: &RotateConfig) -> Self {
        let mut rng = stream_rng(cfg.rng_seed, 0x524f_5441);
        let range = (cfg.gamma + 2.0) / cfg.dim as f64;
        let entity = (0..num_entities * cfg.dim * 2)
            .map(|_| rng.random_range(-range..range))
            .collect();
        let phase = (0..num_relations * cfg.dim)
            .map(|_| wrap_phase(rng.random_range(-PI..PI)))
            .collect();
        RotateParams {
            num_entities,
            num_relations,
            dim: cfg.dim,
            gamma: cfg.gamma,
            entity,
            phase,
        }
    }

    fn ent_off(&self, e: EntityId) -> usize {
        e.index() * 2 * self.dim
    }

    fn rel_off(&self, r: RelationId) -> usize {
        r.index() * self.dim
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let o = self.ent_off(e);
        &self.entity[o..o + 2 * self.dim]
    }

    pub fn phases(&self, r: RelationId) -> &[f64] {
        let o = self.rel_off(r);
        &self.phase[o..o + self.dim]
    }

    /// Largest `| |x_r[i]| - 1 |` over all relation coordinates, or infinity
    /// if a phase is non-finite or outside `(-pi, pi]`.
    pub fn unit_modulus_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &t in &self.phase {
            if !t.is_finite() || t <= -PI || t > PI {
                return f64::INFINITY;
            }
            let (s, c) = t.sin_cos();
            worst = worst.max(((c * c + s * s).sqrt() - 1.0).abs());
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.entity.iter().chain(&self.phase).all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(Model::Rotate(RotateCheckpoint {
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            dim: self.dim,
            gamma: self.gamma,
            entity: self.entity.clone(),
            phase: self.phase.clone(),
        }))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let Model::Rotate(r) = &ck.model else {
            return Err(Error::Checkpoint("not a rotate checkpoint".into()));
        };
        if r.entity.len() != r.num_entities * r.dim * 2 || r.phase.len() != r.num_relations * r.dim {
            return Err(Error::Checkpoint("parameter count does not match shape".into()));
        }
        Ok(RotateParams {
            num_entities: r.num_entities,
            num_relations: r.num_relations,
            dim: r.dim,
            gamma: r.gamma,
            entity: r.entity.clone(),
            phase: r.phase.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn check_graph(&self, kg: &KnowledgeGraph) -> Result<()> {
        if self.num_entities != kg.num_entities() || self.num_relations != kg.num_relations() {
            return Err(Error::Config(format!(
                "rotate model has {} entities / {} relations, graph has {} / {}",
                self.num_entities,
                self.num_relations,
                kg.num_entities(),
                kg.num_relations()
            )));
        }
        Ok(())
    }
}

/// `-sum_i |d_i|` with `d = x_h * x_r - x_t`: the L1 norm over complex
/// coordinates, each measured by its modulus.
pub fn rotate_score(p: &RotateParams, h: EntityId, r: RelationId, t: EntityId) -> f64 {
    let (xh, xt, th) = (p.entity(h), p.entity(t), p.phases(r));
    let mut d = 0.0;
    for i in 0..p.dim {
        let (s, c) = th[i].sin_cos();
        let (hr, hi) = (xh[2 * i], xh[2 * i + 1]);
        let a = hr * c - hi * s - xt[2 * i];
        let b = hr * s + hi * c - xt[2 * i + 1];
        d += a.hypot(b);
    }
    -d
}

/// Scores of every entity as the tail of `(h, r, ?)`.
pub fn rotate_scores(p: &RotateParams, h: EntityId, r: RelationId) -> Vec<f64> {
    let (xh, th) = (p.entity(h), p.phases(r));
    let rotated: Vec<(f64, f64)> = (0..p.dim)
        .map(|i| {
            let (s, c) = th[i].sin_cos();
            let (hr, hi) = (xh[2 * i], xh[2 * i + 1]);
            (hr * c - hi * s, hr * s + hi * c)
        })
        .collect();
    (0..p.num_entities)
        .map(|t| {
            let xt = p.entity(EntityId(t as u32));
            let d: f64 = rotated
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| (a - xt[2 * i]).hypot(b - xt[2 * i + 1]))
                .sum();
            -d
        })
        .collect()
}

pub fn ensemble_score(predictor: &[f64], rotate: &[f64], cfg: &EnsembleConfig) -> Result<Vec<f64>> {
    if predictor.len() != rotate.len() {
        return Err(Error::Config(format!(
            "score length mismatch: {} vs {}",
            predictor.len(),
            rotate.len()
        )));
    }
    if !(cfg.eta >= 0.0 && cfg.eta.is_finite()) {
        return Err(Error::Config(format!("eta must be finite and >= 0, got {}", cfg.eta)));
    }
    Ok(predictor.iter().zip(rotate).map(|(p, r)| p + cfg.eta * r).collect())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(sigmoid(x))`, stable for large `|x|`.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Gradient blocks touched by one example: entity rows and the relation row.
#[derive(Debug, Default)]
struct SparseGrad {
    entities: Vec<(u32, Vec<f64>)>,
    relation: Vec<f64>,
}

impl SparseGrad {
    fn entity_block(&mut self, e: EntityId, dim: usize) -> &mut Vec<f64> {
        let pos = match self.entities.iter().position(|(id, _)| *id == e.0) {
            Some(p) => p,
            None => {
                self.entities.push((e.0, vec![0.0; 2 * dim]));
                self.entities.len() - 1
            }
        };
        &mut self.entities[pos].1
    }
}

/// Adds `g * d score(h, r, t) / d params` into `grad`.
fn score_grad(p: &RotateParams, h: EntityId, r: RelationId, t: EntityId, g: f64, grad: &mut SparseGrad) {
    let dim = p.dim;
    let (xh, xt, th) = (p.entity(h), p.entity(t), p.phases(r));
    let mut gh = vec![0.0; 2 * dim];
    let mut gt = vec![0.0; 2 * dim];
    for i in 0..dim {
        let (s, c) = th[i].sin_cos();
        let (hr, hi) = (xh[2 * i], xh[2 * i + 1]);
        let a = hr * c - hi * s - xt[2 * i];
        let b = hr * s + hi * c - xt[2 * i + 1];
        // score = -|a + ib|; zero subgradient at the origin.
        let m = a.hypot(b);
        if m == 0.0 {
            continue;
        }
        let (ga, gb) = (-g * a / m, -g * b / m);
        gh[2 * i] += ga * c + gb * s;
        gh[2 * i + 1] += -ga * s + gb * c;
        gt[2 * i] -= ga;
        gt[2 * i + 1] -= gb;
        grad.relation[i] += ga * (-hr * s - hi * c) + gb * (hr * c - hi * s);
    }
    for (v, d) in grad.entity_block(h, dim).iter_mut().zip(&gh) {
        *v += d;
    }
    for (v, d) in grad.entity_block(t, dim).iter_mut().zip(&gt) {
        *v += d;
    }
}

/// Self-adversarial weights over the negatives (held constant for the
/// gradient).
fn adversarial_weights(p: &RotateParams, q: Triple, negs: &[EntityId], temperature: f64) -> Vec<f64> {
    let scores: Vec<f64> = negs
        .iter()
        .map(|&n| temperature * rotate_score(p, q.head, q.rel, n))
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// Per-term losses of one positive with its negatives, given fixed
/// weights: the positive term first, then one weighted term per negative.
fn example_terms(p: &RotateParams, q: Triple, negs: &[EntityId], weights: &[f64]) -> Vec<f64> {
    let gamma = p.gamma;
    let pos = rotate_score(p, q.head, q.rel, q.tail);
    std::iter::once(neg_log_sigmoid(gamma + pos))
        .chain(
            negs.iter()
                .zip(weights)
                .map(|(&n, w)| w * neg_log_sigmoid(-gamma - rotate_score(p, q.head, q.rel, n))),
        )
        .collect()
}

fn example_loss(p: &RotateParams, q: Triple, negs: &[EntityId], weights: &[f64], grad: Option<&mut SparseGrad>) -> f64 {
    let loss = example_terms(p, q, negs, weights).iter().sum();
    if let Some(grad) = grad {
        let gamma = p.gamma;
        let pos = rotate_score(p, q.head, q.rel, q.tail);
        score_grad(p, q.head, q.rel, q.tail, -(1.0 - sigmoid(gamma + pos)), grad);
        for (&n, w) in negs.iter().zip(weights) {
            let s = rotate_score(p, q.head, q.rel, n);
            score_grad(p, q.head, q.rel, n, w * sigmoid(gamma + s), grad);
        }
    }
    loss
}

fn sample_negatives(rng: &mut impl Rng, num_entities: usize, count: usize) -> Vec<EntityId> {
    (0..count)
        .map(|_| EntityId(rng.random_range(0..num_entities as u32)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotateEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub unit_modulus_deviation: f64,
}

pub fn train_rotate(kg: &KnowledgeGraph, cfg: &RotateConfig) -> Result<RotateParams> {
    train_rotate_with_report(kg, cfg).map(|(p, _)| p)
}

/// Trains on all (inverse-closed) train triples, corrupting tails.
pub fn train_rotate_with_report(kg: &KnowledgeGraph, cfg: &RotateConfig) -> Result<(RotateParams, Vec<RotateEpoch>)> {
    cfg.validate()?;
    let train = kg.train();
    if train.is_empty() {
        return Err(Error::Config("cannot train rotate on an empty train split".into()));
    }
    let mut p = RotateParams::init(kg.num_entities(), kg.num_relations(), cfg);
    let n_ent_params = p.entity.len();
    let mut flat: Vec<f64> = p.entity.iter().chain(&p.phase).copied().collect();
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        flat.len(),
    );
    let mut grad = vec![0.0; flat.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(cfg.rng_seed, epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_id, batch) in order.chunks(cfg.batch_size).enumerate() {
            let negs: Vec<Vec<EntityId>> = batch
                .iter()
                .map(|_| sample_negatives(&mut rng, kg.num_entities(), cfg.negatives))
                .collect();
            let per_example: Vec<(f64, SparseGrad)> = batch
                .par_iter()
                .zip(&negs)
                .map(|(&i, negs)| {
                    let q = train[i];
                    let w = adversarial_weights(&p, q, negs, cfg.adversarial_temperature);
                    let mut g = SparseGrad {
                        relation: vec![0.0; p.dim],
                        ..SparseGrad::default()
                    };
                    let loss = example_loss(&p, q, negs, &w, Some(&mut g));
                    (loss, g)
                })
                .collect();
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for (&i, (loss, g)) in batch.iter().zip(&per_example) {
                batch_loss += loss;
                for (e, block) in &g.entities {
                    let o = *e as usize * 2 * p.dim;
                    for (k, v) in block.iter().enumerate() {
                        grad[o + k] += scale * v;
                    }
                }
                let o = n_ent_params + train[i].rel.index() * p.dim;
                for (k, v) in g.relation.iter().enumerate() {
                    grad[o + k] += scale * v;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: batch_loss,
                    learning_rate: cfg.learning_rate,
                    epoch,
                    batch: batch_id,
                });
            }
            loss_sum += batch_loss;
            adam.step(&mut flat, &grad);
            for t in &mut flat[n_ent_params..] {
                *t = wrap_phase(*t);
            }
            p.entity.copy_from_slice(&flat[..n_ent_params]);
            p.phase.copy_from_slice(&flat[n_ent_params..]);
        }
        let dev = p.unit_modulus_deviation();
        assert!(dev <= 1e-12, "unit modulus violated after epoch {epoch}: {dev}");
        let mean_loss = loss_sum / train.len() as f64;
        log::debug!("rotate epoch {epoch}: loss {mean_loss:.5}");
        report.push(RotateEpoch {
            epoch,
            mean_loss,
            unit_modulus_deviation: dev,
        });
    }
    Ok((p, report))
}

fn coord_mut(p: &mut RotateParams, is_phase: bool, idx: usize) -> &mut f64 {
    if is_phase {
        &mut p.phase[idx]
    } else {
        &mut p.entity[idx]
    }
}

/// Central finite-difference check of the training loss gradient for one
/// positive triple with `negatives` seeded negatives. Returns the largest
/// relative error (absolute below 1e-8) and the number of coordinates
/// compared.
pub fn rotate_gradient_check(
    p: &RotateParams,
    q: Triple,
    negatives: usize,
    temperature: f64,
    epsilon: f64,
    num_coords: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let mut rng = stream_rng(seed, q.head.0 as u64);
    let negs = sample_negatives(&mut rng, p.num_entities, negatives);
    let w = adversarial_weights(p, q, &negs, temperature);
    let mut g = SparseGrad {
        relation: vec![0.0; p.dim],
        ..SparseGrad::default()
    };
    example_loss(p, q, &negs, &w, Some(&mut g));

    // (is_phase, flat index, analytic)
    let mut coords: Vec<(bool, usize, f64)> = Vec::new();
    for (e, block) in &g.entities {
        let o = *e as usize * 2 * p.dim;
        coords.extend(block.iter().enumerate().map(|(k, &v)| (false, o + k, v)));
    }
    let ro = q.rel.index() * p.dim;
    coords.extend(g.relation.iter().enumerate().map(|(k, &v)| (true, ro + k, v)));
    if coords.len() > num_coords {
        use rand::seq::SliceRandom;
        coords.shuffle(&mut rng);
        coords.truncate(num_coords);
    }

    let mut probe = p.clone();
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for (is_phase, idx, analytic) in coords {
        let orig = *coord_mut(&mut probe, is_phase, idx);
        *coord_mut(&mut probe, is_phase, idx) = orig + epsilon;
        let lp = example_terms(&probe, q, &negs, &w);
        *coord_mut(&mut probe, is_phase, idx) = orig - epsilon;
        let lm = example_terms(&probe, q, &negs, &w);
        *coord_mut(&mut probe, is_phase, idx) = orig;
        // Differencing term by term avoids cancellation against the
        // terms the coordinate does not touch.
        let numeric = lp.iter().zip(&lm).map(|(a, b)| a - b).sum::<f64>() / (2.0 * epsilon);
        let scale = analytic.abs().max(numeric.abs());
        let diff = (analytic - numeric).abs();
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
    Ok((max_err, checked))
}
