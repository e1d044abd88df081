//! Entity/relation dictionaries, triple splits and relation categories.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{KgError, Result};

/// A `(subject, relation, object)` fact with 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// Which triples a membership query runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// train ∪ valid ∪ test
    All,
    Train,
}

/// Cardinality profile of a relation, from its average out- and in-degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationCategory {
    OneToOne,
    OneToMany,
    ManyToOne,
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    /// Short key used in `key=value` output (`1to1`, `1toN`, ...).
    pub fn key(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1to1",
            RelationCategory::OneToMany => "1toN",
            RelationCategory::ManyToOne => "Nto1",
            RelationCategory::ManyToMany => "NtoN",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RelationCategory::OneToOne => "1:1",
            RelationCategory::OneToMany => "1:N",
            RelationCategory::ManyToOne => "N:1",
            RelationCategory::ManyToMany => "N:N",
        };
        f.write_str(s)
    }
}

/// Average degree at or above which a side counts as "many".
pub const CATEGORY_THRESHOLD: f64 = 1.5;

/// Hash-set membership over a collection of triples.
#[derive(Debug, Clone, Default)]
pub struct TripleIndex {
    set: HashSet<Triple>,
}

impl TripleIndex {
    pub fn contains(&self, subject: usize, relation: usize, object: usize) -> bool {
        self.set.contains(&Triple::new(subject, relation, object))
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.set.contains(t)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

impl FromIterator<Triple> for TripleIndex {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        TripleIndex {
            set: iter.into_iter().collect(),
        }
    }
}

/// Entities, relations and the train/valid/test triple splits.
///
/// Immutable after construction; the membership indices over all splits and
/// over the training split are built once.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known_all: TripleIndex,
    known_train: TripleIndex,
}

impl KnowledgeBase {
    /// Builds a KB from dictionaries and index triples.
    ///
    /// Duplicates within a split are dropped with a warning; a triple that
    /// already occurs in an earlier split (train, then valid, then test) is
    /// dropped from the later one, also with a warning.
    pub fn from_parts(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let n = entity_names.len();
        let k = relation_names.len();
        if n < 2 {
            return Err(KgError::InvalidArgument(format!(
                "a knowledge base needs at least 2 entities, got {n}"
            )));
        }
        if k < 1 {
            return Err(KgError::InvalidArgument(
                "a knowledge base needs at least 1 relation".into(),
            ));
        }

        let mut seen: HashSet<Triple> = HashSet::new();
        let mut splits = [train, valid, test];
        for (split, triples) in [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .zip(splits.iter_mut())
        {
            let mut local = HashSet::new();
            let mut kept = Vec::with_capacity(triples.len());
            let (mut dups, mut leaked) = (0usize, 0usize);
            for t in triples.drain(..) {
                if t.subject >= n || t.object >= n || t.relation >= k {
                    return Err(KgError::InvalidArgument(format!(
                        "triple ({}, {}, {}) out of bounds for N={n}, K={k}",
                        t.subject, t.relation, t.object
                    )));
                }
                if !local.insert(t) {
                    dups += 1;
                } else if seen.contains(&t) {
                    leaked += 1;
                } else {
                    kept.push(t);
                }
            }
            if dups > 0 {
                warn!("{}: dropped {dups} duplicate triple(s)", split.name());
            }
            if leaked > 0 {
                warn!(
                    "{}: dropped {leaked} triple(s) already present in an earlier split",
                    split.name()
                );
            }
            seen.extend(kept.iter().copied());
            *triples = kept;
        }
        let [train, valid, test] = splits;

        let known_train: TripleIndex = train.iter().copied().collect();
        let known_all = TripleIndex { set: seen };
        Ok(KnowledgeBase {
            entity_names,
            relation_names,
            train,
            valid,
            test,
            known_all,
            known_train,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
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

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Membership oracle over all splits or over the training split only.
    pub fn index(&self, scope: Scope) -> &TripleIndex {
        match scope {
            Scope::All => &self.known_all,
            Scope::Train => &self.known_train,
        }
    }

    pub fn contains(&self, subject: usize, relation: usize, object: usize, scope: Scope) -> bool {
        self.index(scope).contains(subject, relation, object)
    }

    /// Categorizes relation `k` by the average number of distinct objects per
    /// subject and subjects per object over its training triples.
    pub fn categorize_relation(&self, k: usize) -> Result<RelationCategory> {
        if k >= self.num_relations() {
            return Err(KgError::InvalidArgument(format!(
                "relation {k} out of range (K={})",
                self.num_relations()
            )));
        }
        let mut objects_of: HashMap<usize, HashSet<usize>> = HashMap::new();
        let mut subjects_of: HashMap<usize, HashSet<usize>> = HashMap::new();
        for t in self.train.iter().filter(|t| t.relation == k) {
            objects_of.entry(t.subject).or_default().insert(t.object);
            subjects_of.entry(t.object).or_default().insert(t.subject);
        }
        if objects_of.is_empty() {
            return Err(KgError::EmptyRelation(k));
        }
        let avg = |m: &HashMap<usize, HashSet<usize>>| {
            m.values().map(HashSet::len).sum::<usize>() as f64 / m.len() as f64
        };
        let ops = avg(&objects_of);
        let spo = avg(&subjects_of);
        Ok(
            match (ops >= CATEGORY_THRESHOLD, spo >= CATEGORY_THRESHOLD) {
                (false, false) => RelationCategory::OneToOne,
                (true, false) => RelationCategory::OneToMany,
                (false, true) => RelationCategory::ManyToOne,
                (true, true) => RelationCategory::ManyToMany,
            },
        )
    }

    /// Categories for every relation; `None` where a relation has no
    /// training triples.
    pub fn categories(&self) -> Vec<Option<RelationCategory>> {
        (0..self.num_relations())
            .map(|k| self.categorize_relation(k).ok())
            .collect()
    }

    /// Writes `entities.dict` and `relations.dict` (`index<TAB>name`) into `dir`.
    pub fn write_dictionaries(&self, dir: &Path) -> Result<()> {
        write_dict(&dir.join("entities.dict"), &self.entity_names)?;
        write_dict(&dir.join("relations.dict"), &self.relation_names)
    }

    /// Writes one split as name-based TSV.
    pub fn write_split(&self, split: Split, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in self.split(split) {
            out.push_str(&self.entity_names[t.subject]);
            out.push('\t');
            out.push_str(&self.relation_names[t.relation]);
            out.push('\t');
            out.push_str(&self.entity_names[t.object]);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| KgError::io(path, e))
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| KgError::io(dir, e))?;
        for split in [Split::Train, Split::Valid, Split::Test] {
            self.write_split(split, &dir.join(format!("{}.txt", split.name())))?;
        }
        Ok(())
    }
}

fn write_dict(path: &Path, names: &[String]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| KgError::io(path, e))?;
    for (i, name) in names.iter().enumerate() {
        writeln!(f, "{i}\t{name}").map_err(|e| KgError::io(path, e))?;
    }
    Ok(())
}

#[derive(Default)]
struct Dictionary {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Dictionary {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }
}

fn read_split(
    path: &Path,
    entities: &mut Dictionary,
    relations: &mut Dictionary,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    let mut triples = Vec::new();
    for (lineno, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let s = entities.intern(fields[0]);
        let r = relations.intern(fields[1]);
        let o = entities.intern(fields[2]);
        triples.push(Triple::new(s, r, o));
    }
    Ok(triples)
}

/// Loads a presplit dataset. Dictionaries are built over the union of the
/// three files in first-appearance order (train, then valid, then test).
pub fn load_kb(train_path: &Path, valid_path: &Path, test_path: &Path) -> Result<KnowledgeBase> {
    let mut entities = Dictionary::default();
    let mut relations = Dictionary::default();
    let train = read_split(train_path, &mut entities, &mut relations)?;
    let valid = read_split(valid_path, &mut entities, &mut relations)?;
    let test = read_split(test_path, &mut entities, &mut relations)?;
    KnowledgeBase::from_parts(entities.names, relations.names, train, valid, test)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from a dataset directory.
pub fn load_dir(dir: &Path) -> Result<KnowledgeBase> {
    load_kb(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn kb_with_train(n: usize, train: Vec<Triple>) -> KnowledgeBase {
        KnowledgeBase::from_parts(names("e", n), names("r", 1), train, vec![], vec![]).unwrap()
    }

    fn tsv(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let tr = tsv(dir.path(), "train.txt", "a\tr\tb\n");
        let va = tsv(dir.path(), "valid.txt", "");
        let te = tsv(dir.path(), "test.txt", "a\tr\tc\n");
        let kb = load_kb(&tr, &va, &te).unwrap();
        assert_eq!(kb.num_entities(), 3);
        assert_eq!(kb.num_relations(), 1);
        assert_eq!(kb.train().len(), 1);
        assert_eq!(kb.test().len(), 1);
        assert!(kb.contains(0, 0, 1, Scope::All));
        assert!(!kb.contains(1, 0, 0, Scope::All));
        assert!(kb.contains(0, 0, 2, Scope::All));
        assert!(!kb.contains(0, 0, 2, Scope::Train));
    }

    #[test]
    fn crlf_tolerated_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let tr = tsv(dir.path(), "train.txt", "a\tr\tb\r\na\tr\tb\r\nb\tr\ta\r\n");
        let va = tsv(dir.path(), "valid.txt", "a\tr\tb\n");
        let te = tsv(dir.path(), "test.txt", "");
        let kb = load_kb(&tr, &va, &te).unwrap();
        assert_eq!(kb.entity_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(kb.train().len(), 2);
        // leaked into valid, dropped to keep splits disjoint
        assert!(kb.valid().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let tr = tsv(dir.path(), "train.txt", "a\tr\tb\na\tr\n");
        let va = tsv(dir.path(), "valid.txt", "");
        let te = tsv(dir.path(), "test.txt", "");
        match load_kb(&tr, &va, &te) {
            Err(KgError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_entities_rejected() {
        let err = KnowledgeBase::from_parts(names("e", 1), names("r", 1), vec![], vec![], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn categories_match_hand_counts() {
        let kb = kb_with_train(4, vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)]);
        assert_eq!(kb.categorize_relation(0).unwrap(), RelationCategory::OneToOne);

        let kb = kb_with_train(
            4,
            vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(0, 0, 3)],
        );
        assert_eq!(kb.categorize_relation(0).unwrap(), RelationCategory::OneToMany);

        let kb = kb_with_train(
            4,
            vec![Triple::new(1, 0, 0), Triple::new(2, 0, 0), Triple::new(3, 0, 0)],
        );
        assert_eq!(kb.categorize_relation(0).unwrap(), RelationCategory::ManyToOne);

        let kb = kb_with_train(
            3,
            vec![
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 1),
                Triple::new(0, 0, 2),
                Triple::new(1, 0, 2),
            ],
        );
        assert_eq!(kb.categorize_relation(0).unwrap(), RelationCategory::ManyToMany);
    }

    #[test]
    fn empty_relation_is_an_error() {
        let kb = KnowledgeBase::from_parts(
            names("e", 2),
            names("r", 2),
            vec![Triple::new(0, 0, 1)],
            vec![],
            vec![],
        )
        .unwrap();
        assert!(matches!(kb.categorize_relation(1), Err(KgError::EmptyRelation(1))));
    }

    #[test]
    fn dictionaries_written_as_index_name() {
        let dir = tempfile::tempdir().unwrap();
        let kb = kb_with_train(2, vec![Triple::new(0, 0, 1)]);
        kb.write_dictionaries(dir.path()).unwrap();
        let ents = fs::read_to_string(dir.path().join("entities.dict")).unwrap();
        assert_eq!(ents, "0\te0\n1\te1\n");
        let rels = fs::read_to_string(dir.path().join("relations.dict")).unwrap();
        assert_eq!(rels, "0\tr0\n");
    }
}
