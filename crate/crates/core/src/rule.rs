//! Chain rules `HEAD <- B1 B2 ... BL` and deduplicated rule sets.
//!
//! Text form, one rule per line:
//!
//! ```text
//! Nationality <- BornIn PlaceInCountry
//! !PlaceInCountry <- !Nationality BornIn	0.25	abduced
//! ```
//!
//! Optional tab-separated trailing fields carry a numeric weight and an
//! origin tag. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationId};

pub const DEFAULT_MAX_BODY_LEN: usize = 4;

/// Provenance of a rule. Declaration order is merge priority: when two
/// rules collide, the earlier variant wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Original,
    Abduced,
    Inverted,
    RandomWalk,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Abduced => "abduced",
            Origin::Inverted => "inverted",
            Origin::RandomWalk => "random-walk",
        }
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Origin::Original),
            "abduced" => Ok(Origin::Abduced),
            "inverted" => Ok(Origin::Inverted),
            "random-walk" => Ok(Origin::RandomWalk),
            other => Err(Error::Grammar(format!("unknown origin tag `{other}`"))),
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head: RelationId,
    pub body: Vec<RelationId>,
    pub origin: Origin,
    pub weight: Option<f64>,
}

/// Identity of a rule for deduplication.
pub type RuleKey = (RelationId, Vec<RelationId>);

impl Rule {
    pub fn new(head: RelationId, body: Vec<RelationId>, origin: Origin) -> Self {
        assert!(!body.is_empty(), "rule body must be nonempty");
        Rule {
            head,
            body,
            origin,
            weight: None,
        }
    }

    pub fn key(&self) -> RuleKey {
        (self.head, self.body.clone())
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn same_shape(&self, other: &Rule) -> bool {
        self.head == other.head && self.body == other.body
    }

    /// Iterator over every relation the rule mentions.
    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        std::iter::once(self.head).chain(self.body.iter().copied())
    }

    /// Rule text without weight or origin.
    pub fn text(&self, kg: &KnowledgeGraph) -> String {
        let mut s = String::from(kg.relation_name(self.head));
        s.push_str(" <-");
        for b in &self.body {
            s.push(' ');
            s.push_str(kg.relation_name(*b));
        }
        s
    }

    /// Full line form, inverse of [`parse_rule`].
    pub fn to_line(&self, kg: &KnowledgeGraph) -> String {
        let mut s = self.text(kg);
        if let Some(w) = self.weight {
            s.push('\t');
            s.push_str(&w.to_string());
        }
        if self.origin != Origin::Original {
            s.push('\t');
            s.push_str(self.origin.as_str());
        }
        s
    }
}

pub fn parse_rule(line: &str, kg: &KnowledgeGraph) -> Result<Rule> {
    parse_rule_with_limit(line, kg, DEFAULT_MAX_BODY_LEN)
}

pub fn parse_rule_with_limit(line: &str, kg: &KnowledgeGraph, max_body_len: usize) -> Result<Rule> {
    let mut fields = line.split('\t');
    let text = fields.next().unwrap_or("");
    let (head, body) = text
        .split_once("<-")
        .ok_or_else(|| Error::Grammar(format!("missing `<-` in `{text}`")))?;
    let head = head.trim();
    if head.is_empty() || head.contains(char::is_whitespace) {
        return Err(Error::Grammar(format!("expected a single head relation in `{text}`")));
    }
    let resolve = |name: &str| {
        kg.relation_id(name)
            .ok_or_else(|| Error::UnknownRelation(name.to_owned()))
    };
    let head = resolve(head)?;
    let body = body.split_whitespace().map(resolve).collect::<Result<Vec<_>>>()?;
    if body.is_empty() {
        return Err(Error::Grammar(format!("empty body in `{text}`")));
    }
    if body.len() > max_body_len {
        return Err(Error::Grammar(format!(
            "body length {} exceeds maximum {max_body_len}",
            body.len()
        )));
    }
    let mut rule = Rule::new(head, body, Origin::Original);
    for field in fields.map(str::trim).filter(|f| !f.is_empty()) {
        if let Ok(w) = field.parse::<f64>() {
            if rule.weight.is_some() {
                return Err(Error::Grammar(format!("duplicate weight field `{field}`")));
            }
            rule.weight = Some(w);
        } else {
            rule.origin = field.parse()?;
        }
    }
    Ok(rule)
}

/// Ordered, `(head, body)`-unique collection of rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    index: HashMap<RuleKey, usize>,
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a rule; on collision keeps the first position, upgrades the
    /// origin by priority and fills a missing weight. Returns true if new.
    pub fn insert(&mut self, rule: Rule) -> bool {
        if let Some(&i) = self.index.get(&rule.key()) {
            let existing = &mut self.rules[i];
            existing.origin = existing.origin.min(rule.origin);
            if existing.weight.is_none() {
                existing.weight = rule.weight;
            }
            false
        } else {
            self.index.insert(rule.key(), self.rules.len());
            self.rules.push(rule);
            true
        }
    }

    pub fn extend(&mut self, rules: impl IntoIterator<Item = Rule>) {
        for r in rules {
            self.insert(r);
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rule> {
        self.rules.iter()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, i: usize) -> Option<&Rule> {
        self.rules.get(i)
    }

    pub fn contains(&self, rule: &Rule) -> bool {
        self.index.contains_key(&rule.key())
    }

    pub fn position(&self, rule: &Rule) -> Option<usize> {
        self.index.get(&rule.key()).copied()
    }

    pub fn into_rules(self) -> Vec<Rule> {
        self.rules
    }

    /// Keeps rules for which `keep(index, rule)` holds, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(usize, &Rule) -> bool) -> RuleSet {
        dedup(
            self.rules
                .iter()
                .enumerate()
                .filter(|(i, r)| keep(*i, r))
                .map(|(_, r)| r.clone()),
        )
    }

    /// Rule indices grouped by head relation, indexed by relation id.
    pub fn by_head(&self, num_relations: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); num_relations];
        for (i, r) in self.rules.iter().enumerate() {
            out[r.head.index()].push(i);
        }
        out
    }

    /// Content digest over `(head, body)` sequences, used to bind checkpoints
    /// to a rule set.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rules {
            h.update(r.head.0.to_le_bytes());
            h.update((r.body.len() as u32).to_le_bytes());
            for b in &r.body {
                h.update(b.0.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl<'a> IntoIterator for &'a RuleSet {
    type Item = &'a Rule;
    type IntoIter = std::slice::Iter<'a, Rule>;

    fn into_iter(self) -> Self::IntoIter {
        self.rules.iter()
    }
}

impl FromIterator<Rule> for RuleSet {
    fn from_iter<T: IntoIterator<Item = Rule>>(iter: T) -> Self {
        dedup(iter)
    }
}

pub fn dedup(rules: impl IntoIterator<Item = Rule>) -> RuleSet {
    let mut set = RuleSet::new();
    set.extend(rules);
    set
}

pub fn read_rules(path: impl AsRef<Path>, kg: &KnowledgeGraph) -> Result<RuleSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = RuleSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rule = parse_rule(&line, kg).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        set.insert(rule);
    }
    Ok(set)
}

pub fn write_rules(path: impl AsRef<Path>, rules: &RuleSet, kg: &KnowledgeGraph) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rules {
        writeln!(w, "{}", r.to_line(kg)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
