//! Seed-fixed synthetic benchmark with planted rule structure.
//!
//! Relations:
//! - `comp = left . right` (composition; `left` and `right` are functional),
//! - `rev` is the exact reverse of `base`,
//! - `noise_*` are uniform random edges.
//!
//! Held-out facts of every planted relation go to valid and test. The
//! "original" rule set only knows `comp <- left right` and `rev <- !base`
//! plus low-confidence noise rules, so predicting `left`, `right`, `base` and
//! the inverse queries requires abduction, inversion or mining. The
//! "generated" set mimics a rule generator emitting a fixed number of rules
//! per head relation with good rules only for `comp` and `rev`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RawTriple, RelationId, Split};
use crate::metrics::{score_rule, FilterConfig};
use crate::pipeline::{DataConfig, ExperimentConfig};
use crate::predictor::TrainConfig;
use crate::rng::stream_rng;
use crate::rule::{write_rules, Origin, Rule, RuleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_entities: usize,
    pub noise_relations: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Noise rules per head relation in the original set.
    pub original_noise_per_relation: usize,
    /// Rules per head relation in the generated set.
    pub generated_per_relation: usize,
    /// Noise rules must stay below this PCA confidence on train.
    pub noise_max_pca: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_entities: 150,
            noise_relations: 3,
            valid_fraction: 0.1,
            test_fraction: 0.2,
            original_noise_per_relation: 4,
            generated_per_relation: 60,
            noise_max_pca: 0.3,
            seed: 20240607,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub kg: KnowledgeGraph,
    pub original: RuleSet,
    pub generated: RuleSet,
}

fn entity(i: usize) -> String {
    format!("e{i:03}")
}

fn random_function(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

impl SyntheticBenchmark {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self> {
        if cfg.num_entities < 10 {
            return Err(Error::Config("synthetic graph needs at least 10 entities".into()));
        }
        if !(cfg.valid_fraction >= 0.0 && cfg.test_fraction > 0.0 && cfg.valid_fraction + cfg.test_fraction < 1.0) {
            return Err(Error::Config("bad split fractions".into()));
        }
        let n = cfg.num_entities;
        let mut rng = stream_rng(cfg.seed, 0);
        let left = random_function(&mut rng, n);
        let right = random_function(&mut rng, n);
        let base = random_function(&mut rng, n);

        let mut planted: Vec<RawTriple> = Vec::new();
        for x in 0..n {
            planted.push(RawTriple::new(entity(x), "left", entity(left[x])));
            planted.push(RawTriple::new(entity(x), "right", entity(right[x])));
            planted.push(RawTriple::new(entity(x), "comp", entity(right[left[x]])));
            planted.push(RawTriple::new(entity(x), "base", entity(base[x])));
            planted.push(RawTriple::new(entity(base[x]), "rev", entity(x)));
        }
        let mut train = Vec::new();
        for k in 0..cfg.noise_relations {
            let f = random_function(&mut rng, n);
            for (x, &y) in f.iter().enumerate() {
                train.push(RawTriple::new(entity(x), format!("noise_{k}"), entity(y)));
            }
        }
        let (mut valid, mut test) = (Vec::new(), Vec::new());
        planted.shuffle(&mut rng);
        let n_test = (planted.len() as f64 * cfg.test_fraction).round() as usize;
        let n_valid = (planted.len() as f64 * cfg.valid_fraction).round() as usize;
        for (i, t) in planted.into_iter().enumerate() {
            if i < n_test {
                test.push(t);
            } else if i < n_test + n_valid {
                valid.push(t);
            } else {
                train.push(t);
            }
        }
        // Interning order follows the train file, so sort it for stable ids.
        train.sort_by(|a, b| (&a.head, &a.rel, &a.tail).cmp(&(&b.head, &b.rel, &b.tail)));
        let kg = KnowledgeGraph::build(&train, &valid, &test)?;

        let r = |name: &str| kg.relation_id(name).expect("planted relation");
        let planted_original = [
            Rule::new(r("comp"), vec![r("left"), r("right")], Origin::Original),
            Rule::new(r("rev"), vec![r("base").inverse()], Origin::Original),
        ];
        let planted_generated = [
            planted_original[0].clone(),
            Rule::new(
                r("comp").inverse(),
                vec![r("right").inverse(), r("left").inverse()],
                Origin::Original,
            ),
            planted_original[1].clone(),
            Rule::new(r("rev").inverse(), vec![r("base")], Origin::Original),
        ];
        let mut noise_rng = stream_rng(cfg.seed, 1);
        let original = with_noise(
            &kg,
            &planted_original,
            cfg.original_noise_per_relation,
            cfg.noise_max_pca,
            &mut noise_rng,
        );
        let mut noise_rng = stream_rng(cfg.seed, 2);
        let generated = with_noise(
            &kg,
            &planted_generated,
            cfg.generated_per_relation,
            cfg.noise_max_pca,
            &mut noise_rng,
        );
        Ok(SyntheticBenchmark {
            kg,
            original,
            generated,
        })
    }

    /// Predictor settings used for this benchmark. The default learning
    /// rate is too small to fit the few hundred train queries in 5 epochs.
    pub fn train_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 5,
            ..TrainConfig::default()
        }
    }

    /// Full augmentation pipeline over `original_rules.txt` in `dir`.
    pub fn experiment_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            out_dir: dir.join("out"),
            data: DataConfig {
                dir: Some(dir.to_path_buf()),
                rules: Some(dir.join("original_rules.txt")),
                ..DataConfig::default()
            },
            train: Self::train_config(),
            ..ExperimentConfig::default()
        }
    }

    /// Writes `train.txt`, `valid.txt`, `test.txt`, `original_rules.txt`,
    /// `generated_rules.txt` and an `experiment.toml` with relative paths.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (split, file) in [
            (Split::Train, "train.txt"),
            (Split::Valid, "valid.txt"),
            (Split::Test, "test.txt"),
        ] {
            self.kg.write_split(split, dir.join(file))?;
        }
        write_rules(dir.join("original_rules.txt"), &self.original, &self.kg)?;
        write_rules(dir.join("generated_rules.txt"), &self.generated, &self.kg)?;
        let cfg = Self::experiment_config(Path::new("."));
        let p = dir.join("experiment.toml");
        fs::write(&p, cfg.to_toml()?).map_err(|e| Error::io(&p, e))
    }
}

/// `planted` followed by random chain rules (body length 1 to 3) until
/// every head relation has `per_head` rules. Random rules at or above
/// `max_pca` on train are rejected so that only planted rules carry signal.
fn with_noise(kg: &KnowledgeGraph, planted: &[Rule], per_head: usize, max_pca: f64, rng: &mut impl Rng) -> RuleSet {
    let mut set = RuleSet::new();
    set.extend(planted.iter().cloned());
    let n_rel = kg.num_relations() as u32;
    let filter = FilterConfig::default();
    for head in kg.relations() {
        let mut have = set.iter().filter(|r| r.head == head).count();
        let mut attempts = 0;
        while have < per_head && attempts < per_head * 200 {
            attempts += 1;
            let len = rng.random_range(1..=3);
            let body: Vec<RelationId> = (0..len).map(|_| RelationId(rng.random_range(0..n_rel))).collect();
            let rule = Rule::new(head, body, Origin::Original);
            if set.contains(&rule) {
                continue;
            }
            if score_rule(kg, &rule, &filter).pca.is_some_and(|p| p >= max_pca) {
                continue;
            }
            set.insert(rule);
            have += 1;
        }
    }
    set
}
