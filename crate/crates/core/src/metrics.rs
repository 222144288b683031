//! Rule quality: grounding statistics, PCA confidence, path-level FOIL,
//! threshold filtering and the high-quality-rule histogram.
//!
//! For a rule `B => r` and head scope `H`:
//!
//! ```text
//! PCA  = #{(h,t) : |Path(h,B,t)| > 0, r(h,t) in P} / #{(h,t) : |Path(h,B,t)| > 0, exists t'. r(h,t') in P}
//! FOIL = sum_{r(h,t) in P} |Path(h,B,t)|          / sum_{(h,t)} |Path(h,B,t)|
//! ```
//!
//! with `h` ranging over `H` in both. A zero denominator yields an absent
//! score, distinct from `0.0`, serialized as `NA`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, PositivesScope};
use crate::paths::{path_count_row, Scratch};
use crate::rule::{parse_rule, Rule, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadScope {
    #[default]
    AllTrainHeads,
    TestHeads,
}

impl HeadScope {
    pub fn heads(self, kg: &KnowledgeGraph) -> Vec<EntityId> {
        match self {
            HeadScope::AllTrainHeads => kg.train_heads(),
            HeadScope::TestHeads => kg.test_heads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub pca_threshold: f64,
    pub min_groundings_rescue: Option<u64>,
    pub head_scope: HeadScope,
    pub positives_scope: PositivesScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            pca_threshold: 0.01,
            min_groundings_rescue: None,
            head_scope: HeadScope::AllTrainHeads,
            positives_scope: PositivesScope::Train,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pca_threshold) {
            return Err(Error::Config(format!(
                "pca_threshold {} outside [0, 1]",
                self.pca_threshold
            )));
        }
        Ok(())
    }

    /// Scope used by the quality histogram: test heads, train and test positives.
    pub fn analysis() -> Self {
        FilterConfig {
            head_scope: HeadScope::TestHeads,
            positives_scope: PositivesScope::TrainAndTest,
            ..FilterConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundingStats {
    pub pair_support: u64,
    pub positive_pair_support: u64,
    pub pca_denominator: u64,
    pub grounding_total: u64,
    pub grounding_positive: u64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleScore {
    pub pca: Option<f64>,
    pub foil: Option<f64>,
    pub stats: GroundingStats,
}

impl RuleScore {
    pub fn from_stats(stats: GroundingStats) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        RuleScore {
            pca: ratio(stats.positive_pair_support, stats.pca_denominator),
            foil: ratio(stats.grounding_positive, stats.grounding_total),
            stats,
        }
    }
}

fn stats_over(
    kg: &KnowledgeGraph,
    rule: &Rule,
    heads: &[EntityId],
    positives: PositivesScope,
    scratch: &mut Scratch,
    row: &mut Vec<(u32, u64)>,
) -> GroundingStats {
    let mut s = GroundingStats::default();
    for &h in heads {
        s.saturated |= path_count_row(kg, &rule.body, h, &[], scratch, row);
        if row.is_empty() {
            continue;
        }
        let head_known = kg.has_positive(positives, h, rule.head);
        for &(t, n) in row.iter() {
            s.pair_support += 1;
            s.grounding_total = s.grounding_total.saturating_add(n);
            if head_known {
                s.pca_denominator += 1;
                if kg.is_positive(positives, h, rule.head, EntityId(t)) {
                    s.positive_pair_support += 1;
                    s.grounding_positive = s.grounding_positive.saturating_add(n);
                }
            }
        }
    }
    s
}

pub fn grounding_stats(kg: &KnowledgeGraph, rule: &Rule, cfg: &FilterConfig) -> GroundingStats {
    let heads = cfg.head_scope.heads(kg);
    let mut scratch = Scratch::new(kg.num_entities());
    stats_over(kg, rule, &heads, cfg.positives_scope, &mut scratch, &mut Vec::new())
}

pub fn score_rule(kg: &KnowledgeGraph, rule: &Rule, cfg: &FilterConfig) -> RuleScore {
    RuleScore::from_stats(grounding_stats(kg, rule, cfg))
}

pub fn pca_confidence(kg: &KnowledgeGraph, rule: &Rule, cfg: &FilterConfig) -> Option<f64> {
    score_rule(kg, rule, cfg).pca
}

pub fn foil_score(kg: &KnowledgeGraph, rule: &Rule, cfg: &FilterConfig) -> Option<f64> {
    score_rule(kg, rule, cfg).foil
}

/// Scores every rule in parallel; output is aligned with `rules`.
pub fn score_rules<'a, I>(kg: &KnowledgeGraph, rules: I, cfg: &FilterConfig) -> Vec<RuleScore>
where
    I: IntoIterator<Item = &'a Rule>,
{
    let rules: Vec<&Rule> = rules.into_iter().collect();
    let heads = cfg.head_scope.heads(kg);
    let scores: Vec<RuleScore> = rules
        .par_iter()
        .map_init(
            || (Scratch::new(kg.num_entities()), Vec::new()),
            |(scratch, row), rule| {
                RuleScore::from_stats(stats_over(kg, rule, &heads, cfg.positives_scope, scratch, row))
            },
        )
        .collect();
    let saturated = scores.iter().filter(|s| s.stats.saturated).count();
    if saturated > 0 {
        log::warn!("{saturated} rule(s) saturated 64-bit path counts");
    }
    scores
}

fn keep(score: &RuleScore, cfg: &FilterConfig) -> bool {
    let by_pca = score.pca.is_some_and(|p| p >= cfg.pca_threshold);
    let rescued = cfg
        .min_groundings_rescue
        .is_some_and(|m| score.stats.grounding_total >= m);
    by_pca || rescued
}

pub fn filter_rules(rules: &RuleSet, kg: &KnowledgeGraph, cfg: &FilterConfig) -> RuleSet {
    let scores = score_rules(kg, rules, cfg);
    filter_scored(rules, &scores, cfg)
}

/// Applies the filter to precomputed scores aligned with `rules`.
pub fn filter_scored(rules: &RuleSet, scores: &[RuleScore], cfg: &FilterConfig) -> RuleSet {
    assert_eq!(rules.len(), scores.len());
    rules.filtered(|i, _| keep(&scores[i], cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QualityCounts {
    pub foil: usize,
    pub pca: usize,
}

/// Number of rules with FOIL >= threshold and with PCA >= threshold,
/// restricted to test heads with train and test positives.
pub fn quality_histogram(rules: &RuleSet, kg: &KnowledgeGraph, quality_threshold: f64) -> QualityCounts {
    let scores = score_rules(kg, rules, &FilterConfig::analysis());
    let count = |f: fn(&RuleScore) -> Option<f64>| {
        scores
            .iter()
            .filter(|s| f(s).is_some_and(|v| v >= quality_threshold))
            .count()
    };
    QualityCounts {
        foil: count(|s| s.foil),
        pca: count(|s| s.pca),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "NA" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| format!("bad score `{s}`"))
    }
}

/// One row of the scored-rules TSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRule {
    pub rule: Rule,
    pub pca: Option<f64>,
    pub foil: Option<f64>,
    pub grounding_total: u64,
    pub positive_pair_support: u64,
    pub pca_denominator: u64,
}

pub fn scored_line(rule: &Rule, score: &RuleScore, kg: &KnowledgeGraph) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        rule.text(kg),
        fmt_opt(score.pca),
        fmt_opt(score.foil),
        score.stats.grounding_total,
        score.stats.positive_pair_support,
        score.stats.pca_denominator
    )
}

pub fn write_scored_rules(
    path: impl AsRef<Path>,
    rules: &RuleSet,
    scores: &[RuleScore],
    kg: &KnowledgeGraph,
) -> Result<()> {
    assert_eq!(rules.len(), scores.len());
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (rule, score) in rules.iter().zip(scores) {
        writeln!(w, "{}", scored_line(rule, score, kg)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scored_rules(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<Vec<ScoredRule>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| err(format!("bad count `{s}`")));
        out.push(ScoredRule {
            rule: parse_rule(f[0], kg).map_err(|e| err(e.to_string()))?,
            pca: parse_opt(f[1]).map_err(err)?,
            foil: parse_opt(f[2]).map_err(err)?,
            grounding_total: int(f[3])?,
            positive_pair_support: int(f[4])?,
            pca_denominator: int(f[5])?,
        });
    }
    Ok(out)
}
