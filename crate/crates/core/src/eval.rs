//! Filtered entity ranking and triple classification.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::kb::{KnowledgeBase, RelationCategory, Scope, Split, Triple};
use crate::models::Scorer;
use crate::training::perturb;

/// Which end of the triple a query replaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Subject,
    Object,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Subject, Side::Object];

    pub fn name(self) -> &'static str {
        match self {
            Side::Subject => "subject",
            Side::Object => "object",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub triple: Triple,
    pub side: Side,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

/// Raw and filtered rank of `scores[truth]`. Candidates for which `known`
/// holds are skipped in the filtered count.
///
/// A NaN candidate counts as beating the true entity, and a NaN true score
/// gets the worst rank, so a diverged model cannot look good.
pub fn rank_from_scores(scores: &[f64], truth: usize, known: impl Fn(usize) -> bool) -> (usize, usize) {
    let target = scores[truth];
    if target.is_nan() {
        return (scores.len(), scores.len());
    }
    let (mut raw, mut filtered) = (1, 1);
    for (c, &s) in scores.iter().enumerate() {
        if c != truth && (s > target || s.is_nan()) {
            raw += 1;
            if !known(c) {
                filtered += 1;
            }
        }
    }
    (raw, filtered)
}

fn rank_with_buffer<S: Scorer + ?Sized>(
    model: &S,
    kb: &KnowledgeBase,
    triple: Triple,
    side: Side,
    buf: &mut [f64],
) -> RankResult {
    let known = kb.index(Scope::All);
    let Triple { subject, relation, object } = triple;
    let (raw_rank, filtered_rank) = match side {
        Side::Object => {
            model.score_objects(subject, relation, buf);
            rank_from_scores(buf, object, |c| known.contains(subject, relation, c))
        }
        Side::Subject => {
            model.score_subjects(relation, object, buf);
            rank_from_scores(buf, subject, |c| known.contains(c, relation, object))
        }
    };
    RankResult { triple, side, raw_rank, filtered_rank }
}

/// Ranks the true entity among all N replacements of `side`. Ties count in
/// favour of the true entity; the filtered rank ignores competitors that are
/// known triples in any split.
pub fn rank_query<S: Scorer + ?Sized>(model: &S, kb: &KnowledgeBase, triple: Triple, side: Side) -> RankResult {
    let mut buf = vec![0.0; kb.num_entities()];
    rank_with_buffer(model, kb, triple, side, &mut buf)
}

/// HITS@k cut-offs that are always reported.
pub const HITS_AT: [usize; 3] = [1, 3, 10];

/// Aggregated filtered metrics over both query sides. Fractions are in
/// [0, 1]; the renderers print them as percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub queries: usize,
    pub mrr: f64,
    pub hits_at_k: BTreeMap<usize, f64>,
    pub mr: f64,
    /// HITS@10 by (relation category, side)
    pub per_category: BTreeMap<(RelationCategory, Side), f64>,
    /// HITS@10 per relation, both sides pooled; `None` if it had no queries
    pub per_relation: Vec<Option<f64>>,
}

impl MetricsSummary {
    pub fn hits(&self, k: usize) -> f64 {
        self.hits_at_k[&k]
    }

    pub fn hits10(&self) -> f64 {
        self.hits(10)
    }

    /// Summary of already computed ranks. `categories` maps relation index
    /// to its category (relations without one are left out of the table).
    pub fn from_ranks(results: &[RankResult], num_relations: usize, categories: &[Option<RelationCategory>]) -> Self {
        let q = results.len().max(1) as f64;
        let mrr = results.iter().map(|r| 1.0 / r.filtered_rank as f64).sum::<f64>() / q;
        let mr = results.iter().map(|r| r.filtered_rank as f64).sum::<f64>() / q;
        let hits_at_k = HITS_AT
            .iter()
            .map(|&k| {
                let c = results.iter().filter(|r| r.filtered_rank <= k).count();
                (k, c as f64 / q)
            })
            .collect();
        let mut cat: BTreeMap<(RelationCategory, Side), (usize, usize)> = BTreeMap::new();
        let mut rel = vec![(0usize, 0usize); num_relations];
        for r in results {
            let hit = usize::from(r.filtered_rank <= 10);
            let k = r.triple.relation;
            rel[k].0 += hit;
            rel[k].1 += 1;
            if let Some(c) = categories.get(k).copied().flatten() {
                let e = cat.entry((c, r.side)).or_default();
                e.0 += hit;
                e.1 += 1;
            }
        }
        MetricsSummary {
            queries: results.len(),
            mrr,
            hits_at_k,
            mr,
            per_category: cat
                .into_iter()
                .map(|(key, (h, n))| (key, h as f64 / n as f64))
                .collect(),
            per_relation: rel
                .into_iter()
                .map(|(h, n)| (n > 0).then(|| h as f64 / n as f64))
                .collect(),
        }
    }

    /// Overall and per-category tables, percentages at one decimal.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("{:<10}{:>10}{:>10}{:>10}{:>10}\n", "", "HITS@10", "MRR", "MR", "queries"));
        s.push_str(&format!(
            "{:<10}{:>10.1}{:>10.1}{:>10.1}{:>10}\n",
            "filtered",
            100.0 * self.hits10(),
            100.0 * self.mrr,
            self.mr,
            self.queries
        ));
        if !self.per_category.is_empty() {
            s.push('\n');
            s.push_str(&format!("{:<16}", "HITS@10"));
            for c in RelationCategory::ALL {
                s.push_str(&format!("{:>8}", c.to_string()));
            }
            s.push('\n');
            for side in Side::BOTH {
                s.push_str(&format!("{:<16}", format!("predict {side}")));
                for c in RelationCategory::ALL {
                    match self.per_category.get(&(c, side)) {
                        Some(v) => s.push_str(&format!("{:>8.1}", 100.0 * v)),
                        None => s.push_str(&format!("{:>8}", "-")),
                    }
                }
                s.push('\n');
            }
        }
        s
    }

    /// `key=value` lines: `mrr=`, `hits1=`, `hits3=`, `hits10=`, `mr=`,
    /// `cat.<side>.<category>.hits10=`, `rel.<k>.hits10=`.
    pub fn render_kv(&self) -> String {
        let mut s = format!("queries={}\nmrr={:.4}\n", self.queries, 100.0 * self.mrr);
        for (k, v) in &self.hits_at_k {
            s.push_str(&format!("hits{k}={:.4}\n", 100.0 * v));
        }
        s.push_str(&format!("mr={:.4}\n", self.mr));
        for ((c, side), v) in &self.per_category {
            s.push_str(&format!("cat.{side}.{}.hits10={:.4}\n", c.key(), 100.0 * v));
        }
        for (k, v) in self.per_relation.iter().enumerate() {
            if let Some(v) = v {
                s.push_str(&format!("rel.{k}.hits10={:.4}\n", 100.0 * v));
            }
        }
        s
    }
}

/// Ranks both sides of every triple in `split`.
pub fn rank_split<S: Scorer + ?Sized>(model: &S, kb: &KnowledgeBase, split: Split) -> Vec<RankResult> {
    kb.split(split)
        .par_iter()
        .map_init(
            || vec![0.0; kb.num_entities()],
            |buf, &t| {
                [
                    rank_with_buffer(model, kb, t, Side::Subject, buf),
                    rank_with_buffer(model, kb, t, Side::Object, buf),
                ]
            },
        )
        .flatten_iter()
        .collect()
}

/// Filtered MRR, HITS@{1,3,10}, MR and the per-category HITS@10 table over
/// `2 · |split|` queries. The result does not depend on the thread count.
pub fn evaluate_ranking<S: Scorer + ?Sized>(model: &S, kb: &KnowledgeBase, split: Split) -> Result<MetricsSummary> {
    check_model(model, kb)?;
    if kb.split(split).is_empty() {
        return Err(KgError::InvalidArgument(format!("{} split is empty", split.name())));
    }
    let results = rank_split(model, kb, split);
    Ok(MetricsSummary::from_ranks(&results, kb.num_relations(), &kb.categories()))
}

/// Fails if the model was built for a different number of entities or
/// relations.
pub fn check_model<S: Scorer + ?Sized>(model: &S, kb: &KnowledgeBase) -> Result<()> {
    if model.num_entities() != kb.num_entities() || model.num_relations() != kb.num_relations() {
        return Err(KgError::Mismatch(format!(
            "model has N={}, K={} but dataset has N={}, K={}",
            model.num_entities(),
            model.num_relations(),
            kb.num_entities(),
            kb.num_relations()
        )));
    }
    Ok(())
}

// ---- triple classification ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub label: bool,
}

/// Each triple of `split` plus one seeded perturbation of it that is not a
/// known triple in any split. Positives whose perturbations all collide are
/// skipped with a warning.
pub fn build_classification_set(kb: &KnowledgeBase, split: Split, seed: u64) -> Vec<LabeledTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * kb.split(split).len());
    let mut skipped = 0;
    for &t in kb.split(split) {
        match perturb(kb.index(Scope::All), kb.num_entities(), t, &mut rng) {
            Ok(neg) => {
                out.push(LabeledTriple { triple: t, label: true });
                out.push(LabeledTriple { triple: neg, label: false });
            }
            Err(_) => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("{}: skipped {skipped} triple(s) without a negative", split.name());
    }
    out
}

const CLASSIFICATION_HEADER: &str = "subject\trelation\tobject\tlabel";

/// TSV with entity/relation indices and a 1/0 `label` column.
pub fn write_classification_set(path: &Path, set: &[LabeledTriple]) -> Result<()> {
    let mut s = String::from(CLASSIFICATION_HEADER);
    s.push('\n');
    for e in set {
        let t = e.triple;
        s.push_str(&format!("{}\t{}\t{}\t{}\n", t.subject, t.relation, t.object, u8::from(e.label)));
    }
    crate::models::io::write_atomic(path, s.as_bytes())
}

pub fn read_classification_set(path: &Path) -> Result<Vec<LabeledTriple>> {
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    let parse_err = |line: usize, message: String| KgError::Parse { path: path.to_owned(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == CLASSIFICATION_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{CLASSIFICATION_HEADER}'"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 4 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(i + 1, e.to_string()));
        let label = match f[3] {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(i + 1, format!("label must be 0 or 1, got '{other}'"))),
        };
        out.push(LabeledTriple { triple: Triple::new(num(f[0])?, num(f[1])?, num(f[2])?), label });
    }
    Ok(out)
}

/// Per-relation thresholds with a pooled fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: Vec<Option<f64>>,
    pub global: f64,
}

impl ThresholdTable {
    pub fn threshold(&self, relation: usize) -> f64 {
        self.per_relation.get(relation).copied().flatten().unwrap_or(self.global)
    }
}

/// Classification rule: positive iff `score > sigma`.
pub fn classify(score: f64, sigma: f64) -> bool {
    score > sigma
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    let m = if m.is_finite() { m } else { a / 2.0 + b / 2.0 };
    // for adjacent floats the midpoint can round up to b, which would put b
    // on the wrong side
    if m >= b {
        a
    } else {
        m
    }
}

/// Threshold maximizing accuracy on `(score, label)` pairs and the number of
/// correct decisions. Candidates are `-inf`, the midpoints between adjacent
/// distinct scores and `+inf`; ties go to the smallest candidate.
pub fn best_threshold(scored: &[(f64, bool)]) -> (f64, usize) {
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = sorted.iter().filter(|e| e.1).count();
    // at sigma = -inf everything is classified positive
    let mut correct = positives;
    let (mut best_sigma, mut best) = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            // this score moves below the threshold
            if sorted[i].1 {
                correct -= 1;
            } else {
                correct += 1;
            }
            i += 1;
        }
        let sigma = if i < sorted.len() { midpoint(s, sorted[i].0) } else { f64::INFINITY };
        if correct > best {
            best = correct;
            best_sigma = sigma;
        }
    }
    (best_sigma, best)
}

/// Chooses one threshold per relation maximizing accuracy on `set`, plus a
/// global threshold over all examples pooled for relations without data.
pub fn select_thresholds<S: Scorer + ?Sized>(model: &S, set: &[LabeledTriple]) -> ThresholdTable {
    let scored: Vec<(usize, f64, bool)> = set
        .par_iter()
        .map(|e| {
            let t = e.triple;
            (t.relation, model.score(t.subject, t.relation, t.object), e.label)
        })
        .collect();
    let mut by_rel: Vec<Vec<(f64, bool)>> = vec![Vec::new(); model.num_relations()];
    for &(k, s, l) in &scored {
        by_rel[k].push((s, l));
    }
    let pooled: Vec<(f64, bool)> = scored.iter().map(|&(_, s, l)| (s, l)).collect();
    ThresholdTable {
        per_relation: by_rel
            .iter()
            .map(|v| (!v.is_empty()).then(|| best_threshold(v).0))
            .collect(),
        global: best_threshold(&pooled).0,
    }
}

/// Fraction of `set` classified correctly by `score > sigma_k`.
pub fn classify_triples<S: Scorer + ?Sized>(model: &S, thresholds: &ThresholdTable, set: &[LabeledTriple]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let correct: usize = set
        .par_iter()
        .map(|e| {
            let t = e.triple;
            let s = model.score(t.subject, t.relation, t.object);
            usize::from(classify(s, thresholds.threshold(t.relation)) == e.label)
        })
        .sum();
    correct as f64 / set.len() as f64
}
