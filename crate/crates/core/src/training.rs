//! Margin-based ranking training with Adagrad, and grid search.
//!
//! Each epoch visits every training triple once in a seeded random order.
//! For every positive one negative is drawn by perturbing subject or object
//! (local closed world, rejected against the training split), the hinge loss
//! `[f(neg) + γ - f(pos)]_+` is differentiated, L2 terms are added on the
//! rows the step touches, and a sparse Adagrad update is applied.

use std::fmt;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::eval::evaluate_ranking;
use crate::kb::{KnowledgeBase, Scope, Split, Triple, TripleIndex};
use crate::models::{init_params, Embedding, Model, ModelKind, Role, SparseGrad};

/// Rejection-sampling attempts before a negative draw gives up.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 100;

/// Adagrad denominator offset.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    /// margin γ
    pub gamma: f64,
    /// learning rate η
    pub eta: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub epochs: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Rescal,
            dim: 100,
            gamma: 1.0,
            eta: 0.1,
            lambda_e: 0.0,
            lambda_r: 0.0,
            epochs: 2000,
            seed: 0,
            negatives_per_positive: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KgError::InvalidArgument(m));
        if self.dim == 0 {
            return bad("dim must be ≥ 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("margin must be finite and ≥ 0, got {}", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("learning rate must be finite and > 0, got {}", self.eta));
        }
        for (name, v) in [("lambda_e", self.lambda_e), ("lambda_r", self.lambda_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and ≥ 0, got {v}"));
            }
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives per positive must be ≥ 1".into());
        }
        Ok(())
    }

    /// `key = value` pairs as written to config files and model sidecars.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("model", self.kind.to_string()),
            ("dim", self.dim.to_string()),
            ("margin", self.gamma.to_string()),
            ("lr", self.eta.to_string()),
            ("lambda_e", self.lambda_e.to_string()),
            ("lambda_r", self.lambda_r.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("negatives", self.negatives_per_positive.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Overrides fields from `key = value` pairs. Unknown keys are errors.
    pub fn apply_kv(&mut self, entries: &[(String, String)]) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| KgError::InvalidArgument(format!("bad value '{v}' for '{key}'")))
        }
        for (key, v) in entries {
            match key.as_str() {
                "model" => self.kind = v.parse()?,
                "dim" => self.dim = num(key, v)?,
                "margin" => self.gamma = num(key, v)?,
                "lr" => self.eta = num(key, v)?,
                "lambda_e" => self.lambda_e = num(key, v)?,
                "lambda_r" => self.lambda_r = num(key, v)?,
                "epochs" => self.epochs = num(key, v)?,
                "seed" => self.seed = num(key, v)?,
                "negatives" => self.negatives_per_positive = num(key, v)?,
                other => {
                    return Err(KgError::InvalidArgument(format!("unknown config key '{other}'")))
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} r={} margin={} lr={} lambda_e={} lambda_r={} epochs={}",
            self.kind, self.dim, self.gamma, self.eta, self.lambda_e, self.lambda_r, self.epochs
        )
    }
}

/// Replaces subject or object (probability 1/2 each) of `positive` by a
/// uniform entity until the result is not in `known`.
pub fn perturb(known: &TripleIndex, num_entities: usize, positive: Triple, rng: &mut impl Rng) -> Result<Triple> {
    for _ in 0..MAX_NEGATIVE_ATTEMPTS {
        let e = rng.random_range(0..num_entities);
        let candidate = if rng.random_bool(0.5) {
            Triple { subject: e, ..positive }
        } else {
            Triple { object: e, ..positive }
        };
        if !known.contains_triple(&candidate) {
            return Ok(candidate);
        }
    }
    Err(KgError::NegativeSampling {
        subject: positive.subject,
        relation: positive.relation,
        object: positive.object,
        attempts: MAX_NEGATIVE_ATTEMPTS,
    })
}

/// A negative for training: a perturbation of `positive` not in the train
/// split.
pub fn sample_negative(kb: &KnowledgeBase, positive: Triple, rng: &mut impl Rng) -> Result<Triple> {
    perturb(kb.index(Scope::Train), kb.num_entities(), positive, rng)
}

/// `max(0, f_neg + γ - f_pos)`.
pub fn margin_loss(f_pos: f64, f_neg: f64, gamma: f64) -> f64 {
    (f_neg + gamma - f_pos).max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The quantity the hinge compares: the logistic of the score for HolE,
/// the score itself for the other models.
pub fn model_f<E: Embedding + ?Sized>(model: &E, subject: usize, relation: usize, object: usize) -> f64 {
    f_and_slope(model, Triple::new(subject, relation, object)).0
}

/// `f` and `df/ds` at a triple.
fn f_and_slope<E: Embedding + ?Sized>(model: &E, t: Triple) -> (f64, f64) {
    let s = model.score(t.subject, t.relation, t.object);
    match model.kind() {
        ModelKind::Hole => {
            let f = sigmoid(s);
            (f, f * (1.0 - f))
        }
        _ => (s, 1.0),
    }
}

/// Squared-gradient accumulators, one per parameter, laid out like the
/// model blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    accumulators: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new<E: Embedding + ?Sized>(model: &E) -> Self {
        AdagradState {
            accumulators: model.blocks().iter().map(|b| vec![0.0; b.data.len()]).collect(),
            epsilon: ADAGRAD_EPS,
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }
}

/// For every coordinate in `grad`: `acc += g²; θ -= η g / (√acc + ε)`.
/// Coordinates outside `grad` are left alone.
pub fn adagrad_step<E: Embedding + ?Sized>(model: &mut E, grad: &SparseGrad, state: &mut AdagradState, eta: f64) {
    let eps = state.epsilon;
    let mut blocks = model.blocks_mut();
    for g in grad.rows() {
        let block = &mut blocks[g.block];
        let len = block.row_len;
        let acc = &mut state.accumulators[g.block][g.row * len..(g.row + 1) * len];
        let theta = block.row_mut(g.row);
        for ((t, a), &gv) in theta.iter_mut().zip(acc.iter_mut()).zip(&g.values) {
            *a += gv * gv;
            *t -= eta * gv / (a.sqrt() + eps);
        }
    }
}

/// Adds `λ θ` (the gradient of `λ/2 ‖θ‖²`) to every row listed in `grad`,
/// with `λ_e` for entity blocks and `λ_r` for relation blocks.
fn add_l2<E: Embedding + ?Sized>(model: &E, grad: &mut SparseGrad, lambda_e: f64, lambda_r: f64) {
    if lambda_e == 0.0 && lambda_r == 0.0 {
        return;
    }
    let blocks = model.blocks();
    let touched: Vec<(usize, usize)> = grad.rows().iter().map(|g| (g.block, g.row)).collect();
    for (b, r) in touched {
        let lambda = match blocks[b].role {
            Role::Entity => lambda_e,
            Role::Relation => lambda_r,
        };
        if lambda != 0.0 {
            grad.add(b, r, blocks[b].row(r), lambda);
        }
    }
}

/// Gradient of hinge plus L2 for one (positive, negative) pair and the
/// hinge value.
pub fn pair_gradient<E: Embedding + ?Sized>(model: &E, pos: Triple, neg: Triple, cfg: &TrainConfig) -> (SparseGrad, f64) {
    let (fp, dp) = f_and_slope(model, pos);
    let (fn_, dn) = f_and_slope(model, neg);
    let loss = margin_loss(fp, fn_, cfg.gamma);
    // rows of both triples count as touched even when the hinge is inactive
    let active = if loss > 0.0 { 1.0 } else { 0.0 };
    let mut g = SparseGrad::new();
    g.add_scaled(&model.grad(neg.subject, neg.relation, neg.object), active * dn);
    g.add_scaled(&model.grad(pos.subject, pos.relation, pos.object), -active * dp);
    add_l2(model, &mut g, cfg.lambda_e, cfg.lambda_r);
    (g, loss)
}

/// Trained parameters and the mean hinge loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Model,
    pub loss_trace: Vec<f64>,
}

/// Initializes from `config.seed` and trains. Deterministic for a fixed
/// config.
pub fn train(kb: &KnowledgeBase, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let model = init_params(config.kind, kb.num_entities(), kb.num_relations(), config.dim, config.seed)?;
    train_from(kb, config, model)
}

/// Trains starting from the given parameters.
pub fn train_from(kb: &KnowledgeBase, config: &TrainConfig, mut model: Model) -> Result<TrainOutput> {
    config.validate()?;
    crate::eval::check_model(&model, kb)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // keep the sampling stream apart from the initialization stream
    rng.set_stream(1);
    let mut state = AdagradState::new(&model);
    let mut order: Vec<usize> = (0..kb.train().len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &idx in &order {
            let pos = kb.train()[idx];
            for _ in 0..config.negatives_per_positive {
                let neg = sample_negative(kb, pos, &mut rng)?;
                let (g, loss) = pair_gradient(&model, pos, neg, config);
                total += loss;
                adagrad_step(&mut model, &g, &mut state, config.eta);
            }
        }
        let visits = (order.len() * config.negatives_per_positive).max(1);
        let mean = total / visits as f64;
        debug!("epoch {}: mean loss {mean:.6}", epoch + 1);
        trace.push(mean);
    }
    Ok(TrainOutput { model, loss_trace: trace })
}

/// Model-selection criterion, measured filtered on the validation split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMetric {
    Hits(usize),
    Mrr,
}

impl Default for SelectionMetric {
    fn default() -> Self {
        SelectionMetric::Hits(10)
    }
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_index: usize,
    /// validation metric of each grid entry, in grid order
    pub scores: Vec<f64>,
}

/// Trains every config for `budget_epochs` and returns the one with the
/// best validation metric; ties go to the earlier entry. Configs run in
/// parallel, each on its own parameters, so the outcome is independent of
/// the thread count. A run whose parameters stop being finite scores -inf.
pub fn grid_search(
    kb: &KnowledgeBase,
    grid: &[TrainConfig],
    budget_epochs: usize,
    metric: SelectionMetric,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(KgError::InvalidArgument("empty hyperparameter grid".into()));
    }
    if kb.valid().is_empty() {
        return Err(KgError::InvalidArgument("grid search needs a validation split".into()));
    }
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|cfg| -> Result<f64> {
            let cfg = TrainConfig { epochs: budget_epochs, ..cfg.clone() };
            let out = train(kb, &cfg)?;
            if !out.model.is_finite() {
                return Ok(f64::NEG_INFINITY);
            }
            let m = evaluate_ranking(&out.model, kb, Split::Valid)?;
            let v = match metric {
                SelectionMetric::Hits(k) => m.hits_at_k.get(&k).copied().unwrap_or_else(|| {
                    // cut-off outside the standard set; recompute
                    let ranks = crate::eval::rank_split(&out.model, kb, Split::Valid);
                    ranks.iter().filter(|r| r.filtered_rank <= k).count() as f64 / ranks.len() as f64
                }),
                SelectionMetric::Mrr => m.mrr,
            };
            debug!("grid {cfg}: {v:.4}");
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(GridResult { best: grid[best_index].clone(), best_index, scores })
}

/// Margins searched for each model family. DISTMULT and ComplEx have no
/// published list and reuse the RESCAL one (unbounded bilinear scores).
pub fn default_margins(kind: ModelKind) -> &'static [f64] {
    match kind {
        ModelKind::Rescal | ModelKind::Distmult | ModelKind::Complex => &[1.0, 2.0, 4.0, 8.0],
        ModelKind::Hole => &[0.2, 0.5, 0.7],
        ModelKind::Transe => &[0.2, 0.5, 0.7, 1.0, 1.5],
    }
}

/// Full grid: r ∈ {100, 200}, η ∈ {0.01, 0.1, 1}, λ_e, λ_r ∈ {0, 0.1, 0.01}
/// and the family's margins.
pub fn default_grid(kind: ModelKind, seed: u64) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for &dim in &[100, 200] {
        for &eta in &[0.01, 0.1, 1.0] {
            for &lambda_e in &[0.0, 0.1, 0.01] {
                for &lambda_r in &[0.0, 0.1, 0.01] {
                    for &gamma in default_margins(kind) {
                        grid.push(TrainConfig {
                            kind,
                            dim,
                            gamma,
                            eta,
                            lambda_e,
                            lambda_r,
                            epochs: 50,
                            seed,
                            negatives_per_positive: 1,
                        });
                    }
                }
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Scorer;

    fn names(p: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{p}{i}")).collect()
    }

    fn kb(n: usize, train: Vec<Triple>) -> KnowledgeBase {
        KnowledgeBase::from_parts(names("e", n), names("r", 1), train, vec![], vec![]).unwrap()
    }

    #[test]
    fn hinge_values() {
        assert_eq!(margin_loss(2.0, 0.0, 1.0), 0.0);
        assert_eq!(margin_loss(0.0, 0.0, 1.0), 1.0);
        assert_eq!(margin_loss(1.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn negatives_enumerated_for_two_entities() {
        let kb = kb(2, vec![Triple::new(0, 0, 1)]);
        let allowed = [Triple::new(0, 0, 0), Triple::new(1, 0, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let neg = sample_negative(&kb, Triple::new(0, 0, 1), &mut rng).unwrap();
            assert!(allowed.contains(&neg), "{neg:?}");
        }
    }

    #[test]
    fn saturated_relation_fails_after_cap() {
        let mut all = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                all.push(Triple::new(i, 0, j));
            }
        }
        let kb = kb(3, all);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_negative(&kb, Triple::new(0, 0, 0), &mut rng).unwrap_err();
        assert!(matches!(err, KgError::NegativeSampling { attempts: 100, .. }));
    }

    #[test]
    fn single_missing_triple_is_eventually_found() {
        let mut all = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                if (i, j) != (0, 1) {
                    all.push(Triple::new(i, 0, j));
                }
            }
        }
        let kb = kb(2, all);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = sample_negative(&kb, Triple::new(0, 0, 0), &mut rng).unwrap();
        assert_eq!(neg, Triple::new(0, 0, 1));
    }

    #[test]
    fn adagrad_first_step_and_shrinkage() {
        let mut m = Model::zeros(ModelKind::Distmult, 2, 1, 1);
        let mut st = AdagradState::new(&m);
        let mut g = SparseGrad::new();
        g.add(0, 0, &[1.0], 1.0);
        adagrad_step(&mut m, &g, &mut st, 0.1);
        let first = m.blocks()[0].data[0];
        assert_eq!(first, -0.1 / (1.0 + 1e-8));
        adagrad_step(&mut m, &g, &mut st, 0.1);
        let second = m.blocks()[0].data[0] - first;
        assert!(second.abs() < first.abs());
        assert_eq!(st.accumulators()[0], vec![2.0, 0.0]);
        // untouched row and relation block unchanged
        assert_eq!(m.blocks()[0].data[1], 0.0);
        assert_eq!(m.blocks()[1].data[0], 0.0);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut m = init_params(ModelKind::Rescal, 3, 1, 2, 1).unwrap();
        let before = m.clone();
        let mut st = AdagradState::new(&m);
        let mut g = SparseGrad::new();
        g.add(0, 1, &[0.0, 0.0], 1.0);
        adagrad_step(&mut m, &g, &mut st, 0.5);
        assert_eq!(m, before);
        assert!(st.accumulators().iter().flatten().all(|&a| a == 0.0));
    }

    #[test]
    fn hole_f_is_sigmoid() {
        let m = Model::zeros(ModelKind::Hole, 2, 1, 3);
        assert_eq!(model_f(&m, 0, 0, 1), 0.5);
        let r = init_params(ModelKind::Rescal, 2, 1, 3, 4).unwrap();
        assert_eq!(model_f(&r, 0, 0, 1), r.score(0, 0, 1));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let kb = kb(4, vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)]);
        let cfg = TrainConfig { kind: ModelKind::Transe, dim: 3, epochs: 0, gamma: 0.0, ..TrainConfig::default() };
        let out = train(&kb, &cfg).unwrap();
        assert_eq!(out.model, init_params(ModelKind::Transe, 4, 1, 3, 0).unwrap());
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn config_validation_and_kv() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.apply_kv(&[("model".into(), "hole".into()), ("margin".into(), "0.2".into()), ("lr".into(), "0.1".into())])
            .unwrap();
        assert_eq!((c.kind, c.gamma), (ModelKind::Hole, 0.2));
        let mut d = TrainConfig::default();
        d.apply_kv(&c.to_kv()).unwrap();
        assert_eq!(c, d);
        assert!(d.apply_kv(&[("bogus".into(), "1".into())]).is_err());
        assert!(TrainConfig { eta: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gamma: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lambda_r: -0.1, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn wn18_rescal_setting_is_representable() {
        let c = TrainConfig {
            kind: ModelKind::Rescal,
            dim: 200,
            gamma: 1.0,
            eta: 0.10,
            lambda_e: 0.10,
            lambda_r: 0.01,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_ok());
    }

    #[test]
    fn default_grid_shape() {
        assert_eq!(default_grid(ModelKind::Rescal, 0).len(), 2 * 3 * 3 * 3 * 4);
        assert_eq!(default_grid(ModelKind::Hole, 0).len(), 2 * 3 * 3 * 3 * 3);
        assert_eq!(default_grid(ModelKind::Transe, 0).len(), 2 * 3 * 3 * 3 * 5);
    }
}
