//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use kgb::kb::{KnowledgeBase, Triple};
use kgb::models::{Embedding, Model, ModelKind, Scorer};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn kb(n: usize, k: usize, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> KnowledgeBase {
    KnowledgeBase::from_parts(names("e", n), names("r", k), train, valid, test).unwrap()
}

/// Model with every parameter drawn uniformly from [-1, 1).
pub fn random_model(kind: ModelKind, n: usize, k: usize, r: usize, rng: &mut ChaCha8Rng) -> Model {
    let mut m = Model::zeros(kind, n, k, r);
    for b in m.blocks_mut() {
        for v in b.data.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    m
}

/// Model with every parameter on the grid {-1, -7/8, …, 1}, so that all
/// scores of the small models used here are exact in f64.
pub fn dyadic_model(kind: ModelKind, n: usize, k: usize, r: usize, rng: &mut ChaCha8Rng) -> Model {
    let mut m = Model::zeros(kind, n, k, r);
    for b in m.blocks_mut() {
        for v in b.data.iter_mut() {
            *v = f64::from(rng.random_range(-8i32..=8)) / 8.0;
        }
    }
    m
}

/// Brute-force dense rank: `1 + #{distinct values strictly greater}`.
pub fn dense_rank_oracle(s: ArrayView2<'_, f64>) -> Array2<u32> {
    let mut distinct: Vec<f64> = s.iter().copied().collect();
    distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
    distinct.dedup();
    s.map(|&x| 1 + distinct.iter().filter(|&&d| d > x).count() as u32)
}

/// Relative error with a floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences of the score at `(i, k, j)` against the
/// analytic gradient, over every coordinate of every parameter row (so
/// untouched rows must have a zero difference quotient). Returns the
/// largest relative error.
pub fn max_grad_error(model: &Model, i: usize, k: usize, j: usize, h: f64) -> f64 {
    let analytic = model.grad(i, k, j);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let shapes: Vec<(usize, usize)> = model.blocks().iter().map(|b| (b.row_len, b.data.len())).collect();
    for (bi, &(row_len, len)) in shapes.iter().enumerate() {
        for idx in 0..len {
            let orig = model.blocks()[bi].data[idx];
            probe.blocks_mut()[bi].data[idx] = orig + h;
            let plus = probe.score(i, k, j);
            probe.blocks_mut()[bi].data[idx] = orig - h;
            let minus = probe.score(i, k, j);
            probe.blocks_mut()[bi].data[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let an = analytic
                .row(bi, idx / row_len)
                .map(|r| r[idx % row_len])
                .unwrap_or(0.0);
            let e = if an == 0.0 && fd.abs() < 1e-9 { 0.0 } else { rel_err(fd, an) };
            worst = worst.max(e);
        }
    }
    worst
}

/// Scorer backed by an explicit table; missing triples score 0.
pub struct TableScorer {
    pub n: usize,
    pub k: usize,
    pub scores: HashMap<(usize, usize, usize), f64>,
}

impl Scorer for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }
    fn num_relations(&self) -> usize {
        self.k
    }
    fn score(&self, s: usize, r: usize, o: usize) -> f64 {
        self.scores.get(&(s, r, o)).copied().unwrap_or(0.0)
    }
}

/// Applies a strictly increasing map to another scorer.
pub struct Mapped<'a, S: Scorer, F: Fn(f64) -> f64 + Sync> {
    pub inner: &'a S,
    pub f: F,
}

impl<S: Scorer, F: Fn(f64) -> f64 + Sync> Scorer for Mapped<'_, S, F> {
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }
    fn score(&self, s: usize, r: usize, o: usize) -> f64 {
        (self.f)(self.inner.score(s, r, o))
    }
}

/// 50 entities, one symmetric relation: random pairs within blocks of 5.
pub fn symmetric_kb(seed: u64) -> KnowledgeBase {
    let mut rng = rng(seed);
    let mut train = Vec::new();
    for b in 0..10 {
        for a in 0..5 {
            for c in a + 1..5 {
                if rng.random_bool(0.6) {
                    train.push(Triple::new(5 * b + a, 0, 5 * b + c));
                    train.push(Triple::new(5 * b + c, 0, 5 * b + a));
                }
            }
        }
    }
    kb(50, 1, train, vec![], vec![])
}
