mod common;

use std::sync::OnceLock;

use kgb::ensemble::{
    build_meta_dataset, ensemble_score, fit_logreg, fit_logreg_trace, parse, render, train_ensemble,
    EnsembleScorer, MetaExample, RelationEnsemble, RelationModel, RescaleBounds, DEFAULT_REG,
};
use kgb::eval::evaluate_ranking;
use kgb::kb::{Split, Triple};
use kgb::models::{Model, ModelKind, Scorer};
use kgb::ranking::dense_rank;
use kgb::synthetic::{generate, SyntheticConfig};
use kgb::training::{train, TrainConfig};
use kgb::{KgError, KnowledgeBase};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use common::{kb, random_model, rng};

fn score_matrix<S: Scorer>(s: &S, k: usize) -> Array2<f64> {
    let n = s.num_entities();
    Array2::from_shape_fn((n, n), |(i, j)| s.score(i, k, j))
}

#[test]
fn meta_dataset_is_balanced_and_bounded() {
    let train_set: Vec<Triple> = (0..10).map(|i| Triple::new(i, 0, (i + 1) % 10)).collect();
    let kb = kb(10, 2, train_set, vec![], vec![]);
    let models = [
        random_model(ModelKind::Rescal, 10, 2, 3, &mut rng(1)),
        random_model(ModelKind::Hole, 10, 2, 3, &mut rng(2)),
    ];
    let (ex, bounds) = build_meta_dataset(&kb, &models, 0, 5).unwrap().unwrap();
    assert_eq!(ex.len(), 20);
    assert_eq!(ex.iter().filter(|e| e.label).count(), 10);
    for e in &ex {
        assert!(e.features.iter().all(|f| (0.0..=1.0).contains(f)));
        assert_eq!(e.triple.relation, 0);
    }
    assert!(bounds.iter().all(|b| b.min <= b.max));
    // seeded
    assert_eq!(build_meta_dataset(&kb, &models, 0, 5).unwrap().unwrap().0, ex);
    // relation 1 has no training triples
    assert!(matches!(build_meta_dataset(&kb, &models, 1, 5), Err(KgError::EmptyRelation(1))));
}

#[test]
fn constant_base_scores_give_zero_features() {
    let train_set: Vec<Triple> = (0..6).map(|i| Triple::new(i, 0, (i + 2) % 6)).collect();
    let kb = kb(6, 1, train_set, vec![], vec![]);
    let models = [Model::zeros(ModelKind::Distmult, 6, 1, 2), Model::zeros(ModelKind::Rescal, 6, 1, 2)];
    let (ex, _) = build_meta_dataset(&kb, &models, 0, 0).unwrap().unwrap();
    assert!(ex.iter().all(|e| e.features.iter().all(|&f| f == 0.0)));
}

#[test]
fn logreg_separable_and_single_class() {
    let ex: Vec<MetaExample> = (0..20)
        .map(|i| {
            let x = f64::from(i) / 19.0;
            MetaExample { triple: Triple::new(0, 0, 0), label: x > 0.5, features: vec![x] }
        })
        .collect();
    let fit = fit_logreg_trace(&ex, 0.01).unwrap();
    assert!(fit.weights[0] > 0.0);
    assert!(fit.grad_norm <= 1e-6, "{}", fit.grad_norm);
    let flipped: Vec<MetaExample> = ex.iter().map(|e| MetaExample { label: !e.label, ..e.clone() }).collect();
    assert!(fit_logreg(&flipped, 0.01).unwrap().0[0] < 0.0);
    let one: Vec<MetaExample> = ex.iter().map(|e| MetaExample { label: true, ..e.clone() }).collect();
    assert!(matches!(fit_logreg(&one, 1.0), Err(KgError::SingleClass(1))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logreg_converges_with_monotone_objective(seed in any::<u64>(), d in 1usize..4, n in 4usize..40, reg in 0.1f64..3.0) {
        let mut g = rng(seed);
        let mut ex: Vec<MetaExample> = (0..n)
            .map(|_| MetaExample {
                triple: Triple::new(0, 0, 0),
                label: g.random_bool(0.5),
                features: (0..d).map(|_| g.random_range(0.0..1.0)).collect(),
            })
            .collect();
        ex[0].label = true;
        ex[1].label = false;
        let fit = fit_logreg_trace(&ex, reg).unwrap();
        prop_assert!(fit.grad_norm <= 1e-6);
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        // independent check of stationarity: Σ (σ(z) − y) x + reg w = 0
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        for t in 0..=d {
            let mut grad = if t < d { reg * fit.weights[t] } else { 0.0 };
            for e in &ex {
                let z: f64 = e.features.iter().zip(&fit.weights).map(|(a, b)| a * b).sum::<f64>() + fit.bias;
                let x = if t < d { e.features[t] } else { 1.0 };
                grad += (sig(z) - f64::from(u8::from(e.label))) * x;
            }
            prop_assert!(grad.abs() <= 1e-5);
        }
    }

    #[test]
    fn ensemble_score_is_clamped_dot_product(seed in any::<u64>()) {
        let mut g = rng(seed);
        let models: Vec<Model> = [ModelKind::Rescal, ModelKind::Hole, ModelKind::Transe]
            .iter()
            .map(|&k| random_model(k, 5, 2, 3, &mut g))
            .collect();
        let rel = |g: &mut rand_chacha::ChaCha8Rng| {
            let bounds = (0..3)
                .map(|_| {
                    let a: f64 = g.random_range(-2.0..2.0);
                    RescaleBounds { min: a, max: a + g.random_range(0.0..2.0) }
                })
                .collect();
            RelationModel { bounds, weights: (0..3).map(|_| g.random_range(-2.0..2.0)).collect(), bias: g.random_range(-1.0..1.0) }
        };
        let ens = RelationEnsemble { models: vec!["R".into(), "H".into(), "T".into()], relations: vec![Some(rel(&mut g)), Some(rel(&mut g))], fallback: 0 };
        let scorer = EnsembleScorer::new(&ens, &models).unwrap();
        let mut row = vec![0.0; 5];
        for k in 0..2 {
            let rm = ens.relations[k].as_ref().unwrap();
            for i in 0..5 {
                scorer.score_objects(i, k, &mut row);
                for j in 0..5 {
                    let mut want = rm.bias;
                    for (m, (b, w)) in models.iter().zip(rm.bounds.iter().zip(&rm.weights)) {
                        let x = m.score(i, k, j);
                        let f = if b.max > b.min { ((x - b.min) / (b.max - b.min)).clamp(0.0, 1.0) } else { 0.0 };
                        want += w * f;
                    }
                    let got = ensemble_score(&ens, &models, i, k, j);
                    prop_assert!((got - want).abs() <= 1e-12);
                    prop_assert!((row[j] - want).abs() <= 1e-12);
                }
            }
        }
        // text form round-trips exactly
        prop_assert_eq!(parse(&render(&ens), std::path::Path::new("-")).unwrap(), ens);
    }
}

#[test]
fn unit_weight_reproduces_first_model_and_zero_weight_is_constant() {
    let models: Vec<Model> = [ModelKind::Distmult, ModelKind::Transe, ModelKind::Hole]
        .iter()
        .enumerate()
        .map(|(s, &k)| common::dyadic_model(k, 6, 1, 3, &mut rng(s as u64)))
        .collect();
    let s0 = score_matrix(&models[0], 0);
    let wide = |m: &Model| {
        let v = score_matrix(m, 0);
        RescaleBounds {
            min: v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0,
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0,
        }
    };
    let bounds: Vec<RescaleBounds> = models.iter().map(wide).collect();
    let mk = |w: Vec<f64>| RelationEnsemble {
        models: vec!["D".into(), "T".into(), "H".into()],
        relations: vec![Some(RelationModel { bounds: bounds.clone(), weights: w, bias: 0.0 })],
        fallback: 0,
    };
    let e1 = mk(vec![1.0, 0.0, 0.0]);
    let sc = EnsembleScorer::new(&e1, &models).unwrap();
    assert_eq!(dense_rank(score_matrix(&sc, 0).view()).unwrap(), dense_rank(s0.view()).unwrap());
    let e0 = mk(vec![0.0; 3]);
    let sc = EnsembleScorer::new(&e0, &models).unwrap();
    assert!(dense_rank(score_matrix(&sc, 0).view()).unwrap().as_array().iter().all(|&r| r == 1));
}

#[test]
fn single_relation_table_and_one_model_rejected() {
    let train_set: Vec<Triple> = (0..8).map(|i| Triple::new(i, 0, (i + 3) % 8)).collect();
    let kb = kb(8, 1, train_set, vec![], vec![]);
    let models = vec![
        random_model(ModelKind::Rescal, 8, 1, 3, &mut rng(3)),
        random_model(ModelKind::Transe, 8, 1, 3, &mut rng(4)),
    ];
    let ens = train_ensemble(&kb, &models, 0, DEFAULT_REG).unwrap();
    assert_eq!(ens.relations.len(), 1);
    assert!(ens.relations[0].is_some());
    assert_eq!(ens.label(), "R+T");
    assert_eq!(train_ensemble(&kb, &models, 0, DEFAULT_REG).unwrap(), ens);
    assert!(matches!(train_ensemble(&kb, &models[..1], 0, DEFAULT_REG), Err(KgError::InvalidArgument(_))));
}

/// Synthetic KB with a symmetric and an antisymmetric relation, and two
/// quickly trained base models that are each good on one of them.
fn fixture() -> &'static (KnowledgeBase, Vec<Model>) {
    static F: OnceLock<(KnowledgeBase, Vec<Model>)> = OnceLock::new();
    F.get_or_init(|| {
        let kb = generate(&SyntheticConfig::default(), 4).unwrap();
        let cfg = |kind, gamma| TrainConfig { kind, dim: 16, gamma, eta: 0.1, epochs: 100, seed: 1, ..TrainConfig::default() };
        let models = vec![
            train(&kb, &cfg(ModelKind::Distmult, 1.0)).unwrap().model,
            train(&kb, &cfg(ModelKind::Transe, 0.5)).unwrap().model,
        ];
        (kb, models)
    })
}

#[test]
fn ensemble_keeps_up_with_best_single_model() {
    let (kb, models) = fixture();
    let singles: Vec<f64> = models.iter().map(|m| evaluate_ranking(m, kb, Split::Test).unwrap().hits10()).collect();
    let ens = train_ensemble(kb, models, 0, DEFAULT_REG).unwrap();
    let sc = EnsembleScorer::new(&ens, models).unwrap();
    let e = evaluate_ranking(&sc, kb, Split::Test).unwrap().hits10();
    let best = singles.iter().copied().fold(0.0, f64::max);
    assert!(e >= best - 0.02, "ensemble {e} vs singles {singles:?}");
}

#[test]
fn two_copies_match_the_single_model() {
    let (kb, models) = fixture();
    let copies = vec![models[1].clone(), models[1].clone()];
    let single = evaluate_ranking(&models[1], kb, Split::Test).unwrap().hits10();
    let ens = train_ensemble(kb, &copies, 0, DEFAULT_REG).unwrap();
    let sc = EnsembleScorer::new(&ens, &copies).unwrap();
    let e = evaluate_ranking(&sc, kb, Split::Test).unwrap().hits10();
    // percentages: within half a point
    assert!((100.0 * (e - single)).abs() <= 0.5, "{e} vs {single}");
}
