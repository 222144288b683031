//! Experiment configuration, the staged pipeline and the ablation matrix.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{augment_pipeline, AugmentConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, filtered_mask, queries, rank_of, MetricsReport, QueryOutcome, Scorer, DEFAULT_HITS};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, SplitFiles, Triple};
use crate::metrics::{score_rules, write_scored_rules, FilterConfig, RuleScore};
use crate::predictor::{
    build_features, scores_from_features, train_with_features, training_features, QueryFeatures, RuleScorer,
    TrainConfig,
};
use crate::rotate::{ensemble_score, rotate_scores, train_rotate, EnsembleConfig, RotateConfig, RotateParams};
use crate::rule::{read_rules, write_rules, RuleSet};
use crate::walk::WalkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Mining,
    Scoring,
    Training,
    Evaluation,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Mining => 4,
            Stage::Scoring => 5,
            Stage::Training => 6,
            Stage::Evaluation => 7,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Mining => "mining",
            Stage::Scoring => "scoring",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
        }
    }
}

/// An error tagged with the stage that produced it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub error: Error,
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.error)
    }
}

impl std::error::Error for PipelineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `train.txt`, `valid.txt` and `test.txt`.
    pub dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Input rule file; empty when absent.
    pub rules: Option<PathBuf>,
}

impl DataConfig {
    pub fn split_files(&self) -> Result<SplitFiles> {
        let mut files = match &self.dir {
            Some(d) => SplitFiles::in_dir(d),
            None if self.train.is_some() => SplitFiles {
                train: PathBuf::new(),
                valid: PathBuf::new(),
                test: PathBuf::new(),
            },
            None => return Err(Error::Config("no dataset given (data.dir or data.train)".into())),
        };
        if let Some(p) = &self.train {
            files.train = p.clone();
        }
        if let Some(p) = &self.valid {
            files.valid = p.clone();
        }
        if let Some(p) = &self.test {
            files.test = p.clone();
        }
        Ok(files)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub train: bool,
    pub rotate: bool,
    pub eval: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            train: true,
            rotate: false,
            eval: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Keep at most this many rules per head relation from the input file.
    pub rules_per_relation: Option<usize>,
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub stages: StageConfig,
    pub walk: WalkConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    pub rotate: RotateConfig,
    pub ensemble: EnsembleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            out_dir: PathBuf::from("out"),
            rules_per_relation: None,
            data: DataConfig::default(),
            augment: AugmentConfig::all(),
            stages: StageConfig::default(),
            walk: WalkConfig::default(),
            filter: FilterConfig::default(),
            train: TrainConfig::default(),
            rotate: RotateConfig::default(),
            ensemble: EnsembleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config; relative paths inside it are resolved against
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            &mut self.data.dir,
            &mut self.data.train,
            &mut self.data.valid,
            &mut self.data.test,
            &mut self.data.rules,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Copy with the run seed pushed into every seeded stage.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.walk.rng_seed = self.seed;
        c.train.rng_seed = self.seed;
        c.rotate.rng_seed = self.seed;
        c
    }

    pub fn any_stage(&self) -> bool {
        self.augment.any_enabled() || self.stages.train || self.stages.rotate || self.stages.eval
    }

    pub fn validate(&self) -> Result<()> {
        if !self.any_stage() {
            return Err(Error::Config("no stage enabled".into()));
        }
        self.data.split_files()?;
        self.walk.validate()?;
        self.filter.validate()?;
        if self.stages.train {
            self.train.validate()?;
        }
        if self.stages.rotate {
            self.rotate.validate()?;
        }
        if self.rules_per_relation == Some(0) {
            return Err(Error::Config("rules_per_relation must be at least 1".into()));
        }
        if self.stages.eval && !self.stages.train && !self.stages.rotate {
            return Err(Error::Config(
                "evaluation needs a trained model (train or rotate)".into(),
            ));
        }
        if self.ensemble.eta < 0.0 || !self.ensemble.eta.is_finite() {
            return Err(Error::Config("ensemble.eta must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Keeps at most `cap` rules per head relation, preferring higher PCA
/// (absent scores rank last) and earlier position. Kept rules stay in
/// their original order.
pub fn cap_rules_per_relation(rules: &RuleSet, scores: &[RuleScore], cap: usize) -> RuleSet {
    assert_eq!(rules.len(), scores.len());
    assert!(cap >= 1, "cap must be at least 1");
    let mut by_head: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, r) in rules.iter().enumerate() {
        by_head.entry(r.head).or_default().push(i);
    }
    let mut keep = vec![false; rules.len()];
    for idx in by_head.values_mut() {
        idx.sort_by(|&a, &b| {
            let pa = scores[a].pca.unwrap_or(f64::NEG_INFINITY);
            let pb = scores[b].pca.unwrap_or(f64::NEG_INFINITY);
            pb.total_cmp(&pa).then(a.cmp(&b))
        });
        for &i in idx.iter().take(cap) {
            keep[i] = true;
        }
    }
    rules.filtered(|i, _| keep[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
    /// Artifact file name to sha256 digest.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub rules: RuleSet,
    pub metrics: Option<MetricsReport>,
    pub manifest: Manifest,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_inputs(cfg: &ExperimentConfig) -> PipelineResult<(KnowledgeGraph, RuleSet)> {
    let files = cfg.data.split_files().at(Stage::Config)?;
    if !files.train.exists() {
        return Err(Error::io(&files.train, std::io::ErrorKind::NotFound.into())).at(Stage::Data);
    }
    let kg = KnowledgeGraph::load_files(&files).at(Stage::Data)?;
    let rules = match &cfg.data.rules {
        Some(p) => read_rules(p, &kg).at(Stage::Data)?,
        None => RuleSet::new(),
    };
    log::info!(
        "loaded {} entities, {} relations, {} train triples, {} rules",
        kg.num_entities(),
        kg.num_relations(),
        kg.train().len(),
        rules.len()
    );
    Ok((kg, rules))
}

fn capped(kg: &KnowledgeGraph, rules: RuleSet, cfg: &ExperimentConfig) -> RuleSet {
    match cfg.rules_per_relation {
        Some(cap) => {
            let scores = score_rules(kg, &rules, &cfg.filter);
            let out = cap_rules_per_relation(&rules, &scores, cap);
            log::info!("cap {cap} per relation: {} -> {} rules", rules.len(), out.len());
            out
        }
        None => rules,
    }
}

/// Predictor scores, optionally combined with RotatE.
pub struct ModelScorer<'a> {
    pub predictor: Option<RuleScorer<'a>>,
    pub rotate: Option<(&'a RotateParams, EnsembleConfig)>,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, head: EntityId, rel: RelationId) -> Result<Vec<f64>> {
        match (&self.predictor, &self.rotate) {
            (Some(p), Some((r, ens))) => ensemble_score(&p.score(head, rel)?, &rotate_scores(r, head, rel), ens),
            (Some(p), None) => p.score(head, rel),
            (None, Some((r, _))) => Ok(rotate_scores(r, head, rel)),
            (None, None) => Err(Error::Eval("no model to evaluate".into())),
        }
    }
}

struct Timer {
    timings: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: name.to_owned(),
            millis: start.elapsed().as_millis(),
        });
        out
    }
}

/// Runs the enabled stages and writes artifacts into `cfg.out_dir`:
/// `rules.txt`, `scored_rules.tsv`, `predictor.json`, `rotate.json`,
/// `train_report.json`, `metrics.json`, `per_query.tsv` and `manifest.json`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> PipelineResult<PipelineOutput> {
    cfg.validate().at(Stage::Config)?;
    let cfg = cfg.seeded();
    let out = &cfg.out_dir;
    fs::create_dir_all(out)
        .map_err(|e| Error::io(out, e))
        .at(Stage::Config)?;
    let mut timer = Timer { timings: Vec::new() };
    let mut artifacts: Vec<PathBuf> = Vec::new();

    let (kg, input) = timer.run("load", || load_inputs(&cfg))?;
    let input = timer.run("cap", || capped(&kg, input, &cfg));

    let rules = if cfg.augment.any_enabled() {
        timer
            .run("augment", || {
                augment_pipeline(&input, &kg, &cfg.augment, &cfg.walk, &cfg.filter)
            })
            .at(Stage::Mining)?
    } else {
        input
    };
    let rules_path = out.join("rules.txt");
    write_rules(&rules_path, &rules, &kg).at(Stage::Mining)?;
    artifacts.push(rules_path);

    let scores = timer.run("score", || score_rules(&kg, &rules, &cfg.filter));
    let scored_path = out.join("scored_rules.tsv");
    write_scored_rules(&scored_path, &rules, &scores, &kg).at(Stage::Scoring)?;
    artifacts.push(scored_path);

    let predictor = if cfg.stages.train {
        let (params, report) = timer
            .run("train", || {
                if rules.is_empty() {
                    return Err(Error::Config("rule set is empty, nothing to train".into()));
                }
                if kg.train().is_empty() {
                    return Err(Error::Config("train split is empty".into()));
                }
                let (train, valid) = training_features(&kg, &rules, &cfg.train);
                train_with_features(&kg, &rules, &train, &valid, &cfg.train)
            })
            .at(Stage::Training)?;
        let p = out.join("predictor.json");
        params.save(&p).at(Stage::Training)?;
        artifacts.push(p);
        let p = out.join("train_report.json");
        let json = serde_json::to_string_pretty(&report)
            .map_err(Error::from)
            .at(Stage::Training)?;
        fs::write(&p, json + "\n")
            .map_err(|e| Error::io(&p, e))
            .at(Stage::Training)?;
        artifacts.push(p);
        Some(params)
    } else {
        None
    };

    let rotate = if cfg.stages.rotate {
        let params = timer
            .run("rotate", || train_rotate(&kg, &cfg.rotate))
            .at(Stage::Training)?;
        let p = out.join("rotate.json");
        params.save(&p).at(Stage::Training)?;
        artifacts.push(p);
        Some(params)
    } else {
        None
    };

    let metrics = if cfg.stages.eval {
        let report = timer
            .run("eval", || {
                let scorer = ModelScorer {
                    predictor: predictor
                        .as_ref()
                        .map(|p| RuleScorer::new(p, &kg, &rules))
                        .transpose()?,
                    rotate: rotate.as_ref().map(|r| (r, cfg.ensemble)),
                };
                evaluate(&scorer, &kg, &DEFAULT_HITS)
            })
            .at(Stage::Evaluation)?;
        let p = out.join("metrics.json");
        report.write_json(&p).at(Stage::Evaluation)?;
        artifacts.push(p);
        let p = out.join("per_query.tsv");
        fs::write(&p, report.per_query_tsv(&kg))
            .map_err(|e| Error::io(&p, e))
            .at(Stage::Evaluation)?;
        artifacts.push(p);
        log::info!("test MRR {:.4}, MR {:.2}", report.mrr, report.mr);
        Some(report)
    } else {
        None
    };

    let mut digests = BTreeMap::new();
    for p in &artifacts {
        let name = p.file_name().expect("artifact file").to_string_lossy().into_owned();
        digests.insert(name, file_digest(p).at(Stage::Evaluation)?);
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        timings: timer.timings,
        artifacts: digests,
    };
    let p = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .at(Stage::Evaluation)?;
    fs::write(&p, json + "\n")
        .map_err(|e| Error::io(&p, e))
        .at(Stage::Evaluation)?;
    Ok(PipelineOutput {
        rules,
        metrics,
        manifest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationRow {
    Baseline,
    Aug,
    NoAbduction,
    NoInversion,
    NoFilter,
    NoRandomWalk,
}

impl AblationRow {
    pub const ALL: [AblationRow; 6] = [
        AblationRow::Baseline,
        AblationRow::Aug,
        AblationRow::NoAbduction,
        AblationRow::NoInversion,
        AblationRow::NoFilter,
        AblationRow::NoRandomWalk,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::Baseline => "baseline",
            AblationRow::Aug => "AUG",
            AblationRow::NoAbduction => "AUG-ABD",
            AblationRow::NoInversion => "AUG-INV",
            AblationRow::NoFilter => "AUG-FIL",
            AblationRow::NoRandomWalk => "AUG-RW",
        }
    }

    pub fn augment(self) -> AugmentConfig {
        let mut c = AugmentConfig::all();
        match self {
            AblationRow::Baseline => return AugmentConfig::none(),
            AblationRow::Aug => {}
            AblationRow::NoAbduction => c.enable_abduction = false,
            AblationRow::NoInversion => c.enable_inversion = false,
            AblationRow::NoFilter => c.enable_filter = false,
            AblationRow::NoRandomWalk => c.enable_random_walk = false,
        }
        c
    }
}

impl std::str::FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationRow::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation row `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub row: AblationRow,
    pub num_rules: usize,
    pub report: MetricsReport,
}

pub fn ablation_tsv(rows: &[AblationResult]) -> String {
    let mut s = String::from("setting\trules\tMR\tMRR\tH@1\tH@3\tH@10\n");
    for r in rows {
        let h = |k| r.report.hits_at(k).unwrap_or(f64::NAN);
        let _ = writeln!(
            s,
            "{}\t{}\t{:.3}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.row.label(),
            r.num_rules,
            r.report.mr,
            r.report.mrr,
            h(1),
            h(3),
            h(10)
        );
    }
    s
}

/// Row rule sets computed from the same (capped) input rules.
pub fn ablation_rulesets(
    kg: &KnowledgeGraph,
    input: &RuleSet,
    cfg: &ExperimentConfig,
    rows: &[AblationRow],
) -> PipelineResult<Vec<RuleSet>> {
    rows.iter()
        .map(|row| match row {
            AblationRow::Baseline => Ok(input.clone()),
            _ => augment_pipeline(input, kg, &row.augment(), &cfg.walk, &cfg.filter).at(Stage::Mining),
        })
        .collect()
}

/// Trains and evaluates one predictor per row. Grounding counts are
/// computed once on the union of all row rule sets and re-indexed per row.
pub fn ablation_with_rules(
    kg: &KnowledgeGraph,
    rulesets: &[(AblationRow, RuleSet)],
    train_cfg: &TrainConfig,
) -> PipelineResult<Vec<AblationResult>> {
    let mut union = RuleSet::new();
    for (_, rs) in rulesets {
        union.extend(rs.iter().cloned());
    }
    let (train, valid) = training_features(kg, &union, train_cfg);
    let test_queries = queries(kg, Split::Test);
    if test_queries.is_empty() {
        return Err(Error::Eval("test split is empty".into())).at(Stage::Evaluation);
    }
    let mut keys: Vec<(EntityId, RelationId)> = test_queries.iter().map(|q| (q.head, q.rel)).collect();
    keys.sort_unstable();
    keys.dedup();
    let probe: Vec<Triple> = keys.iter().map(|&(h, r)| Triple::new(h, r, h)).collect();
    let test_feats = build_features(kg, &union, &probe, false);

    let mut out = Vec::with_capacity(rulesets.len());
    for (row, rules) in rulesets {
        if rules.is_empty() {
            return Err(Error::Config(format!("{} has no rules", row.label()))).at(Stage::Training);
        }
        let map: Vec<Option<u32>> = union.iter().map(|r| rules.position(r).map(|i| i as u32)).collect();
        let restrict = |v: &[(QueryFeatures, EntityId)]| -> Vec<(QueryFeatures, EntityId)> {
            v.iter().map(|(f, a)| (f.restrict(&map), *a)).collect()
        };
        let (params, _) =
            train_with_features(kg, rules, &restrict(&train), &restrict(&valid), train_cfg).at(Stage::Training)?;
        let feats: HashMap<(EntityId, RelationId), QueryFeatures> = keys
            .iter()
            .zip(&test_feats)
            .map(|(&k, f)| (k, f.restrict(&map)))
            .collect();
        let outcomes = test_queries
            .iter()
            .map(|q| {
                let scores = scores_from_features(&params, &feats[&(q.head, q.rel)], kg.num_entities());
                let outcome = rank_of(&scores, q.answer, &filtered_mask(kg, q))?;
                Ok(QueryOutcome {
                    head: q.head,
                    rel: q.rel,
                    answer: q.answer,
                    source: q.source,
                    outcome,
                })
            })
            .collect::<Result<Vec<_>>>()
            .at(Stage::Evaluation)?;
        let report = MetricsReport::from_outcomes(outcomes, &DEFAULT_HITS);
        log::info!("{}: {} rules, MRR {:.4}", row.label(), rules.len(), report.mrr);
        out.push(AblationResult {
            row: *row,
            num_rules: rules.len(),
            report,
        });
    }
    Ok(out)
}

/// Runs the requested rows (all six by default) and writes
/// `ablation.tsv` into `cfg.out_dir`.
pub fn ablation_matrix(cfg: &ExperimentConfig, rows: &[AblationRow]) -> PipelineResult<Vec<AblationResult>> {
    let mut check = cfg.clone();
    check.stages.eval = false;
    check.validate().at(Stage::Config)?;
    cfg.train.validate().at(Stage::Config)?;
    let cfg = cfg.seeded();
    let rows: Vec<AblationRow> = if rows.is_empty() {
        AblationRow::ALL.to_vec()
    } else {
        rows.to_vec()
    };
    let (kg, input) = load_inputs(&cfg)?;
    let input = capped(&kg, input, &cfg);
    let sets = ablation_rulesets(&kg, &input, &cfg, &rows)?;
    let results = ablation_with_rules(&kg, &rows.iter().copied().zip(sets).collect::<Vec<_>>(), &cfg.train)?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(&cfg.out_dir, e))
        .at(Stage::Config)?;
    let p = cfg.out_dir.join("ablation.tsv");
    fs::write(&p, ablation_tsv(&results))
        .map_err(|e| Error::io(&p, e))
        .at(Stage::Evaluation)?;
    Ok(results)
}
