mod common;

use std::collections::HashMap;

use kgb::eval::{
    best_threshold, classify_triples, evaluate_ranking, rank_from_scores, rank_query, select_thresholds,
    LabeledTriple, MetricsSummary, RankResult, Side, ThresholdTable,
};
use kgb::kb::{Split, Triple};
use kgb::models::ModelKind;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{kb, random_model, rng, Mapped, TableScorer};

#[test]
fn filter_example() {
    // true object 2 scores 0.7; object 0 is a known test triple at 0.9
    let kb = kb(3, 1, vec![Triple::new(1, 0, 2)], vec![], vec![Triple::new(1, 0, 0)]);
    let scores = HashMap::from([((1, 0, 0), 0.9), ((1, 0, 1), 0.5), ((1, 0, 2), 0.7)]);
    let m = TableScorer { n: 3, k: 1, scores };
    let r = rank_query(&m, &kb, Triple::new(1, 0, 2), Side::Object);
    assert_eq!((r.raw_rank, r.filtered_rank), (2, 1));
    let r = rank_query(&m, &kb, Triple::new(1, 0, 0), Side::Object);
    assert_eq!((r.raw_rank, r.filtered_rank), (1, 1));
}

#[test]
fn summary_arithmetic() {
    let t = Triple::new(0, 0, 1);
    let mk = |rank| RankResult { triple: t, side: Side::Object, raw_rank: rank, filtered_rank: rank };
    let s = MetricsSummary::from_ranks(&[mk(1), mk(4)], 1, &[None]);
    assert_eq!(s.mrr, 0.625);
    assert_eq!(s.hits10(), 1.0);
    assert_eq!(s.hits(1), 0.5);
    assert_eq!(s.mr, 2.5);
    let s = MetricsSummary::from_ranks(&[mk(1), mk(1)], 1, &[None]);
    assert_eq!((s.mrr, s.hits10(), s.mr), (1.0, 1.0, 1.0));
}

#[test]
fn filtered_never_exceeds_raw() {
    let mut g = rng(7);
    for _ in 0..1000 {
        let n = g.random_range(1..30);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(g.random_range(0..6))).collect();
        let known: Vec<bool> = (0..n).map(|_| g.random_bool(0.3)).collect();
        let truth = g.random_range(0..n);
        let (raw, filtered) = rank_from_scores(&scores, truth, |c| known[c]);
        assert!(filtered <= raw);
        // independent count
        let beat = (0..n).filter(|&c| c != truth && scores[c] > scores[truth]);
        assert_eq!(raw, 1 + beat.clone().count());
        assert_eq!(filtered, 1 + beat.filter(|&c| !known[c]).count());
    }
}

fn random_kb(seed: u64) -> kgb::KnowledgeBase {
    let mut g = rng(seed);
    let n = 12;
    let mut all: Vec<Triple> = (0..n)
        .flat_map(|i| (0..2).flat_map(move |k| (0..n).map(move |j| Triple::new(i, k, j))))
        .collect();
    all.shuffle(&mut g);
    all.truncate(60);
    let test = all.split_off(45);
    let valid = all.split_off(35);
    kb(n, 2, all, valid, test)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_invariant_under_increasing_map(seed in any::<u64>(), e in -3i32..4, b in -4i32..4) {
        let kb = random_kb(seed);
        let m = common::dyadic_model(ModelKind::Distmult, 12, 2, 3, &mut rng(seed ^ 1));
        let base = evaluate_ranking(&m, &kb, Split::Test).unwrap();
        let a = 2f64.powi(e);
        let affine = Mapped { inner: &m, f: move |x: f64| a * x + f64::from(b) };
        prop_assert_eq!(&evaluate_ranking(&affine, &kb, Split::Test).unwrap(), &base);
        let cubed = Mapped { inner: &m, f: |x: f64| x * x * x + x };
        let c = evaluate_ranking(&cubed, &kb, Split::Test).unwrap();
        prop_assert_eq!(c.mrr, base.mrr);
        prop_assert_eq!(&c.hits_at_k, &base.hits_at_k);
    }

    #[test]
    fn metric_chain_and_query_count(seed in any::<u64>()) {
        let kb = random_kb(seed);
        let m = random_model(ModelKind::Transe, 12, 2, 4, &mut rng(seed));
        let s = evaluate_ranking(&m, &kb, Split::Test).unwrap();
        prop_assert_eq!(s.queries, 2 * kb.test().len());
        prop_assert!(s.hits(1) <= s.mrr);
        prop_assert!(s.hits(1) <= s.hits(3) && s.hits(3) <= s.hits(10));
        prop_assert!(s.mr >= 1.0);
    }

    #[test]
    fn evaluation_ignores_split_order(seed in any::<u64>()) {
        let kb1 = random_kb(seed);
        let mut test = kb1.test().to_vec();
        test.shuffle(&mut rng(seed ^ 2));
        let kb2 = kb(12, 2, kb1.train().to_vec(), kb1.valid().to_vec(), test);
        let m = random_model(ModelKind::Rescal, 12, 2, 3, &mut rng(seed));
        let a = evaluate_ranking(&m, &kb1, Split::Test).unwrap();
        let b = evaluate_ranking(&m, &kb2, Split::Test).unwrap();
        // sums are order dependent in the last bit
        prop_assert_eq!(a.hits_at_k, b.hits_at_k);
        prop_assert!((a.mrr - b.mrr).abs() <= 1e-12);
        prop_assert!((a.mr - b.mr).abs() <= 1e-9);
    }

    #[test]
    fn best_threshold_beats_dense_sweep(scores in prop::collection::vec((0u32..40, any::<bool>()), 1..30)) {
        let scored: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (f64::from(s) / 4.0, l)).collect();
        let (sigma, correct) = best_threshold(&scored);
        let acc = |sig: f64| scored.iter().filter(|&&(s, l)| (s > sig) == l).count();
        prop_assert_eq!(acc(sigma), correct);
        // scores lie on a 0.25 grid in [0, 10): a 0.01 sweep hits every gap
        let mut best_sweep = acc(f64::NEG_INFINITY).max(acc(f64::INFINITY));
        for t in 0..=1100 {
            best_sweep = best_sweep.max(acc(-0.5 + f64::from(t) * 0.01));
        }
        prop_assert_eq!(correct, best_sweep);
        // no smaller candidate reaches the same count
        let mut cands = vec![f64::NEG_INFINITY];
        let mut distinct: Vec<f64> = scored.iter().map(|e| e.0).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        cands.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        for c in cands.into_iter().filter(|&c| c < sigma) {
            prop_assert!(acc(c) < correct);
        }
    }
}

#[test]
fn threshold_examples() {
    let set = [(2.0, true), (3.0, true), (1.0, false), (2.5, false)];
    let (sigma, correct) = best_threshold(&set);
    assert_eq!(correct, 3);
    assert_eq!(sigma, 1.5);
    let separable = [(0.1, false), (0.2, false), (0.8, true)];
    assert_eq!(best_threshold(&separable).1, 3);
}

#[test]
fn infinite_threshold_gives_negative_fraction() {
    let mut g = rng(3);
    let n = 10;
    let mut scores = HashMap::new();
    let mut set = Vec::new();
    for i in 0..n {
        for j in 0..n {
            scores.insert((i, 0, j), g.random_range(-1.0..1.0));
            set.push(LabeledTriple { triple: Triple::new(i, 0, j), label: g.random_bool(0.3) });
        }
    }
    let m = TableScorer { n, k: 1, scores };
    let table = ThresholdTable { per_relation: vec![Some(f64::INFINITY)], global: 0.0 };
    let negatives = set.iter().filter(|e| !e.label).count() as f64 / set.len() as f64;
    assert_eq!(classify_triples(&m, &table, &set), negatives);
    // tuned thresholds are at least as good as either extreme
    let tuned = select_thresholds(&m, &set);
    assert!(classify_triples(&m, &tuned, &set) >= negatives.max(1.0 - negatives));
}

#[test]
fn relation_without_data_uses_global_threshold() {
    let scores = HashMap::from([((0, 0, 1), 2.0), ((1, 0, 0), 0.0)]);
    let m = TableScorer { n: 2, k: 2, scores };
    let set = [
        LabeledTriple { triple: Triple::new(0, 0, 1), label: true },
        LabeledTriple { triple: Triple::new(1, 0, 0), label: false },
    ];
    let t = select_thresholds(&m, &set);
    assert_eq!(t.per_relation[1], None);
    assert_eq!(t.threshold(1), t.global);
    assert_eq!(t.global, 1.0);
}
