//! Relation-level stacking: per relation, a logistic regression over the
//! linearly rescaled scores of several base models.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KgError, Result};
use crate::eval::{check_model, evaluate_ranking};
use crate::kb::{KnowledgeBase, Split, Triple};
use crate::models::{Embedding, Model, Scorer};
use crate::training::sample_negative;

/// Default L2 weight of the meta learner, in units of the summed NLL.
pub const DEFAULT_REG: f64 = 1.0;
pub const LOGREG_TOL: f64 = 1e-6;
pub const LOGREG_MAX_ITER: usize = 10_000;

/// Observed range of one feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleBounds {
    pub min: f64,
    pub max: f64,
}

impl RescaleBounds {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(
            RescaleBounds { min: f64::INFINITY, max: f64::NEG_INFINITY },
            |b, v| RescaleBounds { min: b.min.min(v), max: b.max.max(v) },
        )
    }

    /// Maps `[min, max]` linearly onto `[0, 1]` and clamps. A constant
    /// feature (`min == max`) maps to 0.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max > self.min {
            ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaExample {
    pub triple: Triple,
    pub label: bool,
    /// rescaled base-model scores in [0, 1]
    pub features: Vec<f64>,
}

/// Fitted meta learner for one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationModel {
    pub bounds: Vec<RescaleBounds>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RelationModel {
    pub fn features(&self, raw: &[f64]) -> Vec<f64> {
        self.bounds.iter().zip(raw).map(|(b, &x)| b.apply(x)).collect()
    }

    /// `w · φ(raw) + b`.
    pub fn combine(&self, raw: &[f64]) -> f64 {
        self.bounds
            .iter()
            .zip(&self.weights)
            .zip(raw)
            .map(|((b, w), &x)| w * b.apply(x))
            .sum::<f64>()
            + self.bias
    }
}

/// Per-relation meta learners over a fixed list of base models. Relations
/// without a fitted learner use the scores of base model `fallback`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEnsemble {
    /// one label per base model, e.g. `["R", "H", "T"]`
    pub models: Vec<String>,
    pub relations: Vec<Option<RelationModel>>,
    pub fallback: usize,
}

impl RelationEnsemble {
    /// `R+H+T`
    pub fn label(&self) -> String {
        self.models.join("+")
    }
}

fn relation_rng(seed: u64, relation: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(relation as u64 + 1);
    rng
}

/// Training positives of relation `k` plus one perturbed negative each,
/// with per-model rescaling bounds computed over this set. Returns `None`
/// (with a warning) if a positive has no sampleable negative.
pub fn build_meta_dataset<S: Scorer>(
    kb: &KnowledgeBase,
    base_models: &[S],
    k: usize,
    seed: u64,
) -> Result<Option<(Vec<MetaExample>, Vec<RescaleBounds>)>> {
    let positives: Vec<Triple> = kb.train().iter().copied().filter(|t| t.relation == k).collect();
    if positives.is_empty() {
        return Err(KgError::EmptyRelation(k));
    }
    let mut rng = relation_rng(seed, k);
    let mut triples = Vec::with_capacity(2 * positives.len());
    for &p in &positives {
        match sample_negative(kb, p, &mut rng) {
            Ok(n) => {
                triples.push((p, true));
                triples.push((n, false));
            }
            Err(e) => {
                warn!("relation {k}: skipped by the ensemble ({e})");
                return Ok(None);
            }
        }
    }
    let raw: Vec<Vec<f64>> = triples
        .iter()
        .map(|(t, _)| base_models.iter().map(|m| m.score(t.subject, t.relation, t.object)).collect())
        .collect();
    let bounds: Vec<RescaleBounds> = (0..base_models.len())
        .map(|m| RescaleBounds::from_values(raw.iter().map(|r| r[m])))
        .collect();
    let examples = triples
        .into_iter()
        .zip(raw)
        .map(|((triple, label), r)| MetaExample {
            triple,
            label,
            features: bounds.iter().zip(&r).map(|(b, &x)| b.apply(x)).collect(),
        })
        .collect();
    Ok(Some((examples, bounds)))
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Σ NLL + reg/2 ‖w‖²; parameters are `[w..., b]`, the bias is not
/// regularized.
fn objective(x: &[MetaExample], theta: &[f64], reg: f64) -> f64 {
    let d = theta.len() - 1;
    let nll: f64 = x
        .iter()
        .map(|e| {
            let z = dot_bias(&e.features, theta);
            if e.label {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    nll + 0.5 * reg * theta[..d].iter().map(|w| w * w).sum::<f64>()
}

fn dot_bias(f: &[f64], theta: &[f64]) -> f64 {
    let d = theta.len() - 1;
    f.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d]
}

fn gradient(x: &[MetaExample], theta: &[f64], reg: f64) -> Vec<f64> {
    let d = theta.len() - 1;
    let mut g = vec![0.0; d + 1];
    for e in x {
        let r = sigmoid(dot_bias(&e.features, theta)) - f64::from(u8::from(e.label));
        for (gi, fi) in g.iter_mut().zip(&e.features) {
            *gi += r * fi;
        }
        g[d] += r;
    }
    for (gi, w) in g.iter_mut().zip(&theta[..d]) {
        *gi += reg * w;
    }
    g
}

#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    /// objective after every accepted step, starting at w = 0, b = 0
    pub objective_trace: Vec<f64>,
}

/// Full-batch gradient descent with Armijo backtracking on the regularized
/// NLL, from `w = 0, b = 0`, until the gradient ∞-norm is at most 1e-6 or
/// after 10⁴ iterations.
pub fn fit_logreg_trace(examples: &[MetaExample], reg: f64) -> Result<LogRegFit> {
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(KgError::InvalidArgument(format!("regularization must be ≥ 0, got {reg}")));
    }
    let positives = examples.iter().filter(|e| e.label).count();
    if positives == 0 {
        return Err(KgError::SingleClass(0));
    }
    if positives == examples.len() {
        return Err(KgError::SingleClass(1));
    }
    let d = examples[0].features.len();
    if examples.iter().any(|e| e.features.len() != d) {
        return Err(KgError::Shape("meta examples have different feature counts".into()));
    }
    let mut theta = vec![0.0; d + 1];
    let mut f = objective(examples, &theta, reg);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut g = gradient(examples, &theta, reg);
    let inf_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while inf_norm(&g) > LOGREG_TOL && iterations < LOGREG_MAX_ITER {
        iterations += 1;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        // let the step grow again after a run of accepted steps
        step *= 2.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let fc = objective(examples, &cand, reg);
            if fc <= f - 0.5 * step * g2 {
                theta = cand;
                f = fc;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further decrease representable
                return Ok(finish(theta, iterations, inf_norm(&g), trace));
            }
        }
        trace.push(f);
        g = gradient(examples, &theta, reg);
    }
    Ok(finish(theta, iterations, inf_norm(&g), trace))
}

fn finish(mut theta: Vec<f64>, iterations: usize, grad_norm: f64, objective_trace: Vec<f64>) -> LogRegFit {
    let bias = theta.pop().unwrap();
    LogRegFit { weights: theta, bias, iterations, grad_norm, objective_trace }
}

pub fn fit_logreg(examples: &[MetaExample], reg: f64) -> Result<(Vec<f64>, f64)> {
    let fit = fit_logreg_trace(examples, reg)?;
    Ok((fit.weights, fit.bias))
}

/// Ensemble score of `(i, k, j)`: the relation's meta learner applied to
/// the clamped rescaled base scores, or the fallback model's raw score.
pub fn ensemble_score<S: Scorer>(ens: &RelationEnsemble, base_models: &[S], i: usize, k: usize, j: usize) -> f64 {
    match &ens.relations[k] {
        Some(rm) => {
            let raw: Vec<f64> = base_models.iter().map(|m| m.score(i, k, j)).collect();
            rm.combine(&raw)
        }
        None => base_models[ens.fallback].score(i, k, j),
    }
}

/// Fits one meta learner per relation (in parallel). Relations with no
/// training triples, no sampleable negatives or a failed fit fall back to
/// the base model with the best filtered validation HITS@10.
pub fn train_ensemble(kb: &KnowledgeBase, base_models: &[Model], seed: u64, reg: f64) -> Result<RelationEnsemble> {
    if base_models.len() < 2 {
        return Err(KgError::InvalidArgument(format!(
            "an ensemble needs at least 2 base models, got {}",
            base_models.len()
        )));
    }
    for m in base_models {
        check_model(m, kb)?;
    }
    let relations: Vec<Option<RelationModel>> = (0..kb.num_relations())
        .into_par_iter()
        .map(|k| -> Result<Option<RelationModel>> {
            let (examples, bounds) = match build_meta_dataset(kb, base_models, k, seed) {
                Ok(Some(d)) => d,
                Ok(None) | Err(KgError::EmptyRelation(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            match fit_logreg(&examples, reg) {
                Ok((weights, bias)) => Ok(Some(RelationModel { bounds, weights, bias })),
                Err(e) => {
                    warn!("relation {k}: meta learner not fitted ({e})");
                    Ok(None)
                }
            }
        })
        .collect::<Result<_>>()?;
    let fallback = if relations.iter().any(Option::is_none) {
        best_single(kb, base_models)?
    } else {
        0
    };
    Ok(RelationEnsemble {
        models: base_models.iter().map(|m| m.kind().letter().to_string()).collect(),
        relations,
        fallback,
    })
}

fn best_single(kb: &KnowledgeBase, models: &[Model]) -> Result<usize> {
    if kb.valid().is_empty() {
        return Ok(0);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, m) in models.iter().enumerate() {
        let h = evaluate_ranking(m, kb, Split::Valid)?.hits10();
        if h > best.1 {
            best = (i, h);
        }
    }
    Ok(best.0)
}

/// A fitted ensemble bound to its base models.
pub struct EnsembleScorer<'a, S: Scorer> {
    pub table: &'a RelationEnsemble,
    pub models: &'a [S],
}

impl<'a, S: Scorer> EnsembleScorer<'a, S> {
    pub fn new(table: &'a RelationEnsemble, models: &'a [S]) -> Result<Self> {
        if table.models.len() != models.len() {
            return Err(KgError::Mismatch(format!(
                "ensemble expects {} base models, got {}",
                table.models.len(),
                models.len()
            )));
        }
        if models.iter().any(|m| m.num_relations() != table.relations.len()) {
            return Err(KgError::Mismatch("base model relation count differs from the ensemble".into()));
        }
        Ok(EnsembleScorer { table, models })
    }

    fn combine_batch(&self, relation: usize, out: &mut [f64], fill: impl Fn(&S, &mut [f64])) {
        match &self.table.relations[relation] {
            None => fill(&self.models[self.table.fallback], out),
            Some(rm) => {
                out.iter_mut().for_each(|v| *v = rm.bias);
                let mut buf = vec![0.0; out.len()];
                for ((m, b), w) in self.models.iter().zip(&rm.bounds).zip(&rm.weights) {
                    fill(m, &mut buf);
                    for (o, &x) in out.iter_mut().zip(&buf) {
                        *o += w * b.apply(x);
                    }
                }
            }
        }
    }
}

impl<S: Scorer> Scorer for EnsembleScorer<'_, S> {
    fn num_entities(&self) -> usize {
        self.models[0].num_entities()
    }

    fn num_relations(&self) -> usize {
        self.table.relations.len()
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        ensemble_score(self.table, self.models, subject, relation, object)
    }

    fn score_objects(&self, subject: usize, relation: usize, out: &mut [f64]) {
        self.combine_batch(relation, out, |m, buf| m.score_objects(subject, relation, buf));
    }

    fn score_subjects(&self, relation: usize, object: usize, out: &mut [f64]) {
        self.combine_batch(relation, out, |m, buf| m.score_subjects(relation, object, buf));
    }
}

// ---- persistence ----

const HEADER: &str = "kgb-ensemble 1";

/// Text form: a versioned header, the base-model labels, the fallback
/// index, then per relation either `fallback` or its bounds, weights and
/// bias. Floats are written in shortest round-trip form.
pub fn render(ens: &RelationEnsemble) -> String {
    let mut s = String::new();
    let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(s, "{HEADER}").unwrap();
    writeln!(s, "models {}", ens.models.join(" ")).unwrap();
    writeln!(s, "fallback {}", ens.fallback).unwrap();
    writeln!(s, "relations {}", ens.relations.len()).unwrap();
    for (k, r) in ens.relations.iter().enumerate() {
        match r {
            None => writeln!(s, "relation {k} fallback").unwrap(),
            Some(rm) => {
                writeln!(s, "relation {k} fitted").unwrap();
                writeln!(s, "min {}", join(&mut rm.bounds.iter().map(|b| b.min))).unwrap();
                writeln!(s, "max {}", join(&mut rm.bounds.iter().map(|b| b.max))).unwrap();
                writeln!(s, "weights {}", join(&mut rm.weights.iter().copied())).unwrap();
                writeln!(s, "bias {}", rm.bias).unwrap();
            }
        }
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<RelationEnsemble> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, message: String| KgError::Parse { path: path.to_owned(), line: line + 1, message };
    let mut next = |want: &str| -> Result<(usize, Vec<String>)> {
        let (i, l) = lines.next().ok_or_else(|| err(0, format!("unexpected end of file, expected '{want}'")))?;
        let fields: Vec<String> = l.split_whitespace().map(String::from).collect();
        if fields.first().map(String::as_str) != Some(want) {
            return Err(err(i, format!("expected '{want}'")));
        }
        Ok((i, fields[1..].to_vec()))
    };
    let (i, v) = next("kgb-ensemble")?;
    if v != ["1"] {
        return Err(err(i, format!("unsupported ensemble version {}", v.join(" "))));
    }
    let (_, models) = next("models")?;
    let num = |i: usize, s: &str| s.parse::<f64>().map_err(|e| err(i, format!("'{s}': {e}")));
    let idx = |i: usize, v: &[String]| -> Result<usize> {
        v.first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(i, "expected an integer".into()))
    };
    let (i, v) = next("fallback")?;
    let fallback = idx(i, &v)?;
    if fallback >= models.len() {
        return Err(err(i, format!("fallback {fallback} out of range")));
    }
    let (i, v) = next("relations")?;
    let count = idx(i, &v)?;
    let mut relations = Vec::with_capacity(count);
    for k in 0..count {
        let (i, v) = next("relation")?;
        if idx(i, &v)? != k || v.len() != 2 {
            return Err(err(i, format!("expected 'relation {k} fitted|fallback'")));
        }
        if v[1] == "fallback" {
            relations.push(None);
            continue;
        }
        let mut vec_line = |want: &str| -> Result<Vec<f64>> {
            let (i, v) = next(want)?;
            let xs = v.iter().map(|s| num(i, s)).collect::<Result<Vec<_>>>()?;
            if xs.len() != models.len() && want != "bias" {
                return Err(err(i, format!("expected {} values", models.len())));
            }
            Ok(xs)
        };
        let min = vec_line("min")?;
        let max = vec_line("max")?;
        let weights = vec_line("weights")?;
        let bias = vec_line("bias")?;
        if bias.len() != 1 {
            return Err(err(i, "expected one bias value".into()));
        }
        relations.push(Some(RelationModel {
            bounds: min.into_iter().zip(max).map(|(min, max)| RescaleBounds { min, max }).collect(),
            weights,
            bias: bias[0],
        }));
    }
    Ok(RelationEnsemble { models, relations, fallback })
}

pub fn write_ensemble(path: &Path, ens: &RelationEnsemble) -> Result<()> {
    crate::models::io::write_atomic(path, render(ens).as_bytes())
}

pub fn read_ensemble(path: &Path) -> Result<RelationEnsemble> {
    let text = fs::read_to_string(path).map_err(|e| KgError::io(path, e))?;
    parse(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelKind};

    fn ex(features: Vec<f64>, label: bool) -> MetaExample {
        MetaExample { triple: Triple::new(0, 0, 0), label, features }
    }

    #[test]
    fn rescale_bounds() {
        let b = RescaleBounds::from_values([2.0, 4.0, 3.0]);
        assert_eq!((b.min, b.max), (2.0, 4.0));
        assert_eq!(b.apply(3.0), 0.5);
        assert_eq!(b.apply(10.0), 1.0);
        assert_eq!(b.apply(-10.0), 0.0);
        assert_eq!(RescaleBounds { min: 1.0, max: 1.0 }.apply(1.0), 0.0);
    }

    #[test]
    fn logreg_separable_sign() {
        let data: Vec<MetaExample> = (0..20).map(|i| ex(vec![i as f64 / 19.0], i >= 10)).collect();
        let fit = fit_logreg_trace(&data, 0.01).unwrap();
        assert!(fit.weights[0] > 0.0);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let flipped: Vec<MetaExample> = data.iter().map(|e| ex(e.features.clone(), !e.label)).collect();
        assert!(fit_logreg(&flipped, 0.01).unwrap().0[0] < 0.0);
    }

    #[test]
    fn logreg_converges_with_reg() {
        let data: Vec<MetaExample> = (0..40)
            .map(|i| ex(vec![(i % 7) as f64 / 6.0, (i % 5) as f64 / 4.0], i % 3 == 0))
            .collect();
        let fit = fit_logreg_trace(&data, 1.0).unwrap();
        assert!(fit.grad_norm <= 1e-6);
        assert!(fit.iterations < LOGREG_MAX_ITER);
    }

    #[test]
    fn logreg_single_class() {
        let data = vec![ex(vec![0.0], true), ex(vec![1.0], true)];
        assert!(matches!(fit_logreg(&data, 1.0), Err(KgError::SingleClass(1))));
    }

    #[test]
    fn combine_is_manual_dot_product() {
        let rm = RelationModel {
            bounds: vec![RescaleBounds { min: 0.0, max: 2.0 }, RescaleBounds { min: -1.0, max: 1.0 }],
            weights: vec![2.0, -1.0],
            bias: 0.25,
        };
        assert_eq!(rm.combine(&[1.0, 3.0]), 2.0 * 0.5 - 1.0 + 0.25);
    }

    #[test]
    fn text_roundtrip() {
        let ens = RelationEnsemble {
            models: vec!["R".into(), "H".into()],
            relations: vec![
                Some(RelationModel {
                    bounds: vec![RescaleBounds { min: -0.1, max: 3.0 }, RescaleBounds { min: 0.0, max: 0.0 }],
                    weights: vec![1.0 / 3.0, -2.5e-7],
                    bias: 0.1 + 0.2,
                }),
                None,
            ],
            fallback: 1,
        };
        let text = render(&ens);
        assert!(text.starts_with("kgb-ensemble 1\n"));
        assert_eq!(parse(&text, Path::new("x")).unwrap(), ens);
        assert!(parse("kgb-ensemble 2\n", Path::new("x")).is_err());
    }

    #[test]
    fn batched_scores_match_pointwise() {
        let models = vec![
            init_params(ModelKind::Rescal, 5, 2, 3, 1).unwrap(),
            init_params(ModelKind::Hole, 5, 2, 3, 2).unwrap(),
        ];
        let ens = RelationEnsemble {
            models: vec!["R".into(), "H".into()],
            relations: vec![
                Some(RelationModel {
                    bounds: vec![RescaleBounds { min: -0.5, max: 0.5 }, RescaleBounds { min: -0.2, max: 0.1 }],
                    weights: vec![0.7, -1.3],
                    bias: 0.1,
                }),
                None,
            ],
            fallback: 1,
        };
        let s = EnsembleScorer::new(&ens, &models).unwrap();
        let mut out = vec![0.0; 5];
        for k in 0..2 {
            s.score_objects(3, k, &mut out);
            for (j, v) in out.iter().enumerate() {
                assert!((v - s.score(3, k, j)).abs() < 1e-12);
            }
            s.score_subjects(k, 1, &mut out);
            for (i, v) in out.iter().enumerate() {
                assert!((v - s.score(i, k, 1)).abs() < 1e-12);
            }
        }
    }
}
