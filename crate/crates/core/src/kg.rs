//! Knowledge-graph store: triple loading, interning, inverse closure and
//! per-relation train adjacency.
//!
//! Every base relation `r` is interned together with its inverse `!r`. The
//! pair occupies ids `2k` and `2k + 1`, so [`RelationId::inverse`] is a bit
//! flip. Adjacency matrices are built from the train split only; valid and
//! test triples are visible through the positive indexes and the filtered
//! ranking mask.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Prefix reserved for inverse relation names.
pub const INVERSE_MARKER: char = '!';

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn inverse(self) -> RelationId {
        RelationId(self.0 ^ 1)
    }

    #[inline]
    pub fn is_inverse(self) -> bool {
        self.0 & 1 == 1
    }

    /// The non-inverted member of this relation's pair.
    #[inline]
    pub fn base(self) -> RelationId {
        RelationId(self.0 & !1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub rel: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, rel: RelationId, tail: EntityId) -> Self {
        Triple { head, rel, tail }
    }

    pub fn mirrored(self) -> Triple {
        Triple::new(self.tail, self.rel.inverse(), self.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A triple as read from a TSV file, before interning.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub rel: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: impl Into<String>, rel: impl Into<String>, tail: impl Into<String>) -> Self {
        RawTriple {
            head: head.into(),
            rel: rel.into(),
            tail: tail.into(),
        }
    }
}

/// Reads `<head>\t<relation>\t<tail>` lines. Blank lines are skipped; any
/// other line without exactly three non-empty fields is a parse error.
pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(BufReader::new(file), path)
}

pub fn parse_triples(reader: impl Read, origin: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let origin = origin.as_ref();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: "empty field".into(),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Bidirectional name <-> dense id table, ids in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// `(head, rel) -> sorted tails` for one split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PositiveIndex {
    tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl PositiveIndex {
    fn build(triples: &[Triple]) -> Self {
        let mut tails: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        for t in triples {
            tails.entry((t.head, t.rel)).or_default().push(t.tail);
        }
        for v in tails.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        PositiveIndex { tails }
    }

    pub fn tails(&self, head: EntityId, rel: RelationId) -> &[EntityId] {
        self.tails.get(&(head, rel)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, head: EntityId, rel: RelationId, tail: EntityId) -> bool {
        self.tails(head, rel).binary_search(&tail).is_ok()
    }

    pub fn has_any(&self, head: EntityId, rel: RelationId) -> bool {
        self.tails.contains_key(&(head, rel))
    }
}

/// Which splits count as positive facts `P` when scoring rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivesScope {
    #[default]
    Train,
    TrainAndTest,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    adjacency: Vec<CsrMatrix>,
    /// Train edges grouped by head entity: `(rel, tail)` sorted.
    outgoing: Vec<Vec<(RelationId, EntityId)>>,
    /// Train relations linking an ordered entity pair.
    pair_relations: HashMap<(EntityId, EntityId), Vec<RelationId>>,
    train_index: PositiveIndex,
    valid_index: PositiveIndex,
    test_index: PositiveIndex,
}

impl KnowledgeGraph {
    /// Interns train, then valid, then test; mirrors every triple with its
    /// inverse in the same split and removes duplicates.
    pub fn build(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let mut intern_split = |raw: &[RawTriple]| -> Result<Vec<Triple>> {
            let mut seen = std::collections::HashSet::new();
            let mut out = Vec::with_capacity(raw.len() * 2);
            for t in raw {
                if t.rel.starts_with(INVERSE_MARKER) {
                    return Err(Error::Format(format!(
                        "relation `{}` uses the reserved inverse marker `{INVERSE_MARKER}`",
                        t.rel
                    )));
                }
                let h = EntityId(entities.intern(&t.head));
                let tl = EntityId(entities.intern(&t.tail));
                let r = match relations.get(&t.rel) {
                    Some(id) => RelationId(id),
                    None => {
                        let id = relations.intern(&t.rel);
                        relations.intern(&format!("{INVERSE_MARKER}{}", t.rel));
                        RelationId(id)
                    }
                };
                let fwd = Triple::new(h, r, tl);
                for triple in [fwd, fwd.mirrored()] {
                    if seen.insert(triple) {
                        out.push(triple);
                    }
                }
            }
            Ok(out)
        };
        let train = intern_split(train)?;
        let valid = intern_split(valid)?;
        let test = intern_split(test)?;

        let n_ent = entities.len();
        let n_rel = relations.len();
        let mut per_rel: Vec<Vec<(u32, u32)>> = vec![Vec::new(); n_rel];
        let mut outgoing = vec![Vec::new(); n_ent];
        let mut pair_relations: HashMap<(EntityId, EntityId), Vec<RelationId>> = HashMap::new();
        for t in &train {
            per_rel[t.rel.index()].push((t.head.0, t.tail.0));
            outgoing[t.head.index()].push((t.rel, t.tail));
            pair_relations.entry((t.head, t.tail)).or_default().push(t.rel);
        }
        for v in outgoing.iter_mut() {
            v.sort_unstable();
        }
        for v in pair_relations.values_mut() {
            v.sort_unstable();
        }
        let adjacency = per_rel
            .into_iter()
            .map(|pairs| CsrMatrix::from_pairs(n_ent, n_ent, pairs))
            .collect();

        Ok(KnowledgeGraph {
            train_index: PositiveIndex::build(&train),
            valid_index: PositiveIndex::build(&valid),
            test_index: PositiveIndex::build(&test),
            entities,
            relations,
            train,
            valid,
            test,
            adjacency,
            outgoing,
            pair_relations,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`. Missing
    /// valid/test files are treated as empty splits.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        Self::load_files(&SplitFiles::in_dir(dir))
    }

    pub fn load_files(files: &SplitFiles) -> Result<Self> {
        let read_opt = |p: &PathBuf| -> Result<Vec<RawTriple>> {
            if p.exists() {
                load_triples(p)
            } else {
                Ok(Vec::new())
            }
        };
        let train = load_triples(&files.train)?;
        let valid = read_opt(&files.valid)?;
        let test = read_opt(&files.test)?;
        Self::build(&train, &valid, &test)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Count including inverse relations.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        self.entities.name(e.0)
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        self.relations.name(r.0)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn index(&self, split: Split) -> &PositiveIndex {
        match split {
            Split::Train => &self.train_index,
            Split::Valid => &self.valid_index,
            Split::Test => &self.test_index,
        }
    }

    pub fn adjacency(&self, rel: RelationId) -> Result<&CsrMatrix> {
        self.adjacency.get(rel.index()).ok_or(Error::RelationOutOfRange(rel.0))
    }

    /// Unchecked variant for hot loops over already-validated rules.
    #[inline]
    pub(crate) fn adj(&self, rel: RelationId) -> &CsrMatrix {
        &self.adjacency[rel.index()]
    }

    pub fn check_relation(&self, rel: RelationId) -> Result<()> {
        if rel.index() < self.relations.len() {
            Ok(())
        } else {
            Err(Error::RelationOutOfRange(rel.0))
        }
    }

    pub fn outgoing(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.outgoing[e.index()]
    }

    /// Train relations `q` with `(head, q, tail)` in train.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.pair_relations.get(&(head, tail)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_positive(&self, scope: PositivesScope, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.train_index.contains(h, r, t)
            || (scope == PositivesScope::TrainAndTest && self.test_index.contains(h, r, t))
    }

    pub fn has_positive(&self, scope: PositivesScope, h: EntityId, r: RelationId) -> bool {
        self.train_index.has_any(h, r) || (scope == PositivesScope::TrainAndTest && self.test_index.has_any(h, r))
    }

    /// Whether `(h, r, t)` appears in any split.
    pub fn is_known(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.train_index.contains(h, r, t) || self.valid_index.contains(h, r, t) || self.test_index.contains(h, r, t)
    }

    /// Entities heading at least one train edge.
    pub fn train_heads(&self) -> Vec<EntityId> {
        self.entities()
            .filter(|e| !self.outgoing[e.index()].is_empty())
            .collect()
    }

    /// Entities heading at least one test triple (inverse triples included).
    pub fn test_heads(&self) -> Vec<EntityId> {
        let mut seen = vec![false; self.num_entities()];
        for t in &self.test {
            seen[t.head.index()] = true;
        }
        self.entities().filter(|e| seen[e.index()]).collect()
    }

    /// Writes the non-inverse triples of a split as TSV. Reloading all three
    /// written splits reproduces this graph with identical ids.
    pub fn write_split(&self, split: Split, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in self.split(split).iter().filter(|t| !t.rel.is_inverse()) {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.rel),
                self.entity_name(t.tail)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Raw (non-inverse) triples of a split, named.
    pub fn raw_split(&self, split: Split) -> Vec<RawTriple> {
        self.split(split)
            .iter()
            .filter(|t| !t.rel.is_inverse())
            .map(|t| {
                RawTriple::new(
                    self.entity_name(t.head),
                    self.relation_name(t.rel),
                    self.entity_name(t.tail),
                )
            })
            .collect()
    }
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.train == other.train
            && self.valid == other.valid
            && self.test == other.test
            && self.adjacency == other.adjacency
    }
}

/// Paths of the three split files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
}

impl SplitFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        SplitFiles {
            train: dir.join("train.txt"),
            valid: dir.join("valid.txt"),
            test: dir.join("test.txt"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(v: &[(&str, &str, &str)]) -> Vec<RawTriple> {
        v.iter().map(|&(h, r, t)| RawTriple::new(h, r, t)).collect()
    }

    #[test]
    fn parses_nationality_fact() {
        let got = parse_triples("Oprah\tBornIn\tMississippi\n".as_bytes(), "mem").unwrap();
        assert_eq!(got, vec![RawTriple::new("Oprah", "BornIn", "Mississippi")]);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_triples("".as_bytes(), "mem").unwrap().is_empty());
    }

    #[test]
    fn two_fields_is_error_with_line() {
        let err = parse_triples("a\tb".as_bytes(), "mem").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_triples("a\tr\tb\nx\ty\n".as_bytes(), "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn duplicate_lines_are_kept_by_loader() {
        let got = parse_triples("a\tr\tb\na\tr\tb\n".as_bytes(), "mem").unwrap();
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn single_triple_closure() {
        let kg = KnowledgeGraph::build(&raw(&[("a", "r", "b")]), &[], &[]).unwrap();
        assert_eq!(kg.num_entities(), 2);
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.train().len(), 2);
        let r = kg.relation_id("r").unwrap();
        let inv = kg.relation_id("!r").unwrap();
        assert_eq!(r.inverse(), inv);
        assert_eq!(inv.inverse(), r);
        assert!(inv.is_inverse() && !r.is_inverse());
    }

    #[test]
    fn duplicates_removed() {
        let kg = KnowledgeGraph::build(&raw(&[("a", "r", "b"), ("a", "r", "b")]), &[], &[]).unwrap();
        assert_eq!(kg.train().len(), 2);
    }

    #[test]
    fn reserved_marker_rejected() {
        let err = KnowledgeGraph::build(&raw(&[("a", "!r", "b")]), &[], &[]).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn adjacency_of_single_edge() {
        let kg = KnowledgeGraph::build(&raw(&[("a", "r", "b")]), &[], &[]).unwrap();
        let r = kg.relation_id("r").unwrap();
        let a = kg.entity_id("a").unwrap();
        let b = kg.entity_id("b").unwrap();
        let m = kg.adjacency(r).unwrap();
        assert_eq!(m.nnz(), 1);
        assert!(m.contains(a.index(), b.0));
        assert_eq!(kg.adjacency(r.inverse()).unwrap(), &m.transpose());
        assert!(kg.adjacency(RelationId(7)).is_err());
    }

    #[test]
    fn chain_square() {
        let kg = KnowledgeGraph::build(&raw(&[("a", "r", "b"), ("b", "r", "c")]), &[], &[]).unwrap();
        let m = kg.adjacency(kg.relation_id("r").unwrap()).unwrap();
        let sq = m.bool_product(m);
        assert_eq!(sq.nnz(), 1);
        assert!(sq.contains(kg.entity_id("a").unwrap().index(), kg.entity_id("c").unwrap().0));
    }

    #[test]
    fn adjacency_is_train_only() {
        let kg = KnowledgeGraph::build(
            &raw(&[("a", "r", "b")]),
            &raw(&[("b", "r", "c")]),
            &raw(&[("c", "r", "a")]),
        )
        .unwrap();
        let r = kg.relation_id("r").unwrap();
        assert_eq!(kg.adjacency(r).unwrap().nnz(), 1);
        assert_eq!(kg.valid().len(), 2);
        assert_eq!(kg.test_heads().len(), 2);
        let (a, c) = (kg.entity_id("a").unwrap(), kg.entity_id("c").unwrap());
        assert!(kg.is_known(c, r, a));
        assert!(!kg.is_positive(PositivesScope::Train, c, r, a));
        assert!(kg.is_positive(PositivesScope::TrainAndTest, c, r, a));
    }
}
