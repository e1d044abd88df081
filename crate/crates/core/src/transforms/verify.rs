//! Seeded verification trials for the constructions in [`super`].
//!
//! Lifting trials draw parameters on the dyadic grid `{-1, -7/8, …, 1}` so
//! every score is computed exactly in f64 and ranking tensors can be compared
//! with exact tie semantics. A second, continuous instance per trial checks
//! the score residual.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::*;
use crate::models::{ComplexParams, DistmultParams, HoleParams, TranseParams};
use crate::ranking::{dense_rank_tensor, RankingTensor};

/// Which construction to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Theorem {
    TranseToRescal,
    HoleToRescal,
    DistmultToRescal,
    ComplexToRescal,
    Universal,
    Consistent,
    ComplexConsistent,
    Obstructions,
}

impl Theorem {
    pub const ALL: [Theorem; 8] = [
        Theorem::TranseToRescal,
        Theorem::HoleToRescal,
        Theorem::DistmultToRescal,
        Theorem::ComplexToRescal,
        Theorem::Universal,
        Theorem::Consistent,
        Theorem::ComplexConsistent,
        Theorem::Obstructions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Theorem::TranseToRescal => "transe-to-rescal",
            Theorem::HoleToRescal => "hole-to-rescal",
            Theorem::DistmultToRescal => "distmult-to-rescal",
            Theorem::ComplexToRescal => "complex-to-rescal",
            Theorem::Universal => "universal",
            Theorem::Consistent => "consistent",
            Theorem::ComplexConsistent => "complex-consistent",
            Theorem::Obstructions => "obstructions",
        }
    }

    /// Residual tolerance checked by the trials.
    pub fn tolerance(self) -> f64 {
        match self {
            Theorem::TranseToRescal | Theorem::HoleToRescal => 1e-9,
            Theorem::DistmultToRescal | Theorem::ComplexToRescal => 1e-12,
            Theorem::ComplexConsistent => 1e-6,
            Theorem::Universal | Theorem::Consistent | Theorem::Obstructions => 0.0,
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Theorem {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| KgError::InvalidArgument(format!("unknown theorem '{s}'")))
    }
}

/// Trial count, size caps and base seed. Trial t uses seed `seed + t`.
#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub trials: usize,
    pub max_entities: usize,
    pub max_dim: usize,
    pub max_relations: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trials: 100,
            max_entities: 8,
            max_dim: 4,
            max_relations: 3,
            seed: 0,
        }
    }
}

/// A failing trial.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub seed: u64,
    pub reason: String,
    pub instance: String,
}

/// Outcome of a verification run.
#[derive(Debug, Clone)]
pub struct TransformReport {
    pub theorem: Theorem,
    pub source: &'static str,
    pub source_size: usize,
    pub target: &'static str,
    pub target_size: usize,
    /// how the target size follows from the source
    pub size_rule: &'static str,
    pub trials: usize,
    pub max_rank_mismatch: u64,
    pub max_score_residual: f64,
    pub tolerance: f64,
    pub note: Option<String>,
    /// text dump of an emitted certificate (obstructions)
    pub certificate: Option<String>,
    pub failure: Option<Counterexample>,
}

impl TransformReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn render_text(&self) -> String {
        let mut s = format!(
            "{}: {} ({}) -> {} ({}) [{}]\n  trials: {}\n  max rank mismatch: {}\n  max score residual: {:.3e} (tolerance {:.0e})\n",
            self.theorem,
            self.source,
            self.source_size,
            self.target,
            self.target_size,
            self.size_rule,
            self.trials,
            self.max_rank_mismatch,
            self.max_score_residual,
            self.tolerance,
        );
        if let Some(note) = &self.note {
            s.push_str(&format!("  note: {note}\n"));
        }
        if let Some(cert) = &self.certificate {
            s.push_str("  certificate:\n");
            for line in cert.lines() {
                s.push_str(&format!("    {line}\n"));
            }
        }
        match &self.failure {
            None => s.push_str("  result: PASS\n"),
            Some(c) => {
                s.push_str(&format!("  result: FAIL (seed {}): {}\n  counterexample:\n", c.seed, c.reason));
                for line in c.instance.lines() {
                    s.push_str(&format!("    {line}\n"));
                }
            }
        }
        s
    }

    pub fn render_kv(&self) -> String {
        let mut s = format!(
            "theorem={}\nsource={}\nsource_size={}\ntarget={}\ntarget_size={}\ntrials={}\nmax_rank_mismatch={}\nmax_score_residual={:e}\npassed={}\n",
            self.theorem,
            self.source,
            self.source_size,
            self.target,
            self.target_size,
            self.trials,
            self.max_rank_mismatch,
            self.max_score_residual,
            self.passed()
        );
        if let Some(c) = &self.failure {
            s.push_str(&format!("failing_seed={}\n", c.seed));
        }
        s
    }
}

struct TrialOutcome {
    seed: u64,
    source_size: usize,
    target_size: usize,
    rank_mismatch: u64,
    residual: f64,
    failure: Option<(String, String)>,
}

fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    f64::from(rng.random_range(-8i32..=8)) / 8.0
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, exact: bool) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        if exact {
            dyadic(rng)
        } else {
            rng.random_range(-1.0..1.0)
        }
    })
}

fn rank_mismatch(a: &RankingTensor, b: &RankingTensor) -> u64 {
    a.slices()
        .iter()
        .zip(b.slices())
        .flat_map(|(x, y)| {
            x.as_array()
                .iter()
                .zip(y.as_array().iter())
                .map(|(&p, &q)| u64::from(p.abs_diff(q)))
        })
        .max()
        .unwrap_or(0)
}

struct Sizes {
    n: usize,
    k: usize,
    r: usize,
}

fn sizes(rng: &mut ChaCha8Rng, cfg: &VerifyConfig) -> Sizes {
    Sizes {
        n: rng.random_range(2..=cfg.max_entities.max(2)),
        k: rng.random_range(1..=cfg.max_relations.max(1)),
        r: rng.random_range(1..=cfg.max_dim.max(1)),
    }
}

/// Compares a source model with its RESCAL lifting: ranking tensors of the
/// exact instance must agree, and `lifted - source - offset_k` must vanish on
/// both instances.
fn lifting_trial<S, F, O>(
    seed: u64,
    tol: f64,
    exact: &S,
    continuous: &S,
    lift: F,
    offset: O,
) -> TrialOutcome
where
    S: Embedding + fmt::Debug,
    F: Fn(&S) -> RescalParams,
    O: Fn(&S, usize) -> f64,
{
    let lifted = lift(exact);
    let src = score_tensor(exact);
    let dst = score_tensor(&lifted);
    let mismatch = rank_mismatch(
        &dense_rank_tensor(&src).expect("finite"),
        &dense_rank_tensor(&dst).expect("finite"),
    );
    let mut residual: f64 = 0.0;
    for model in [exact, continuous] {
        let lifted = lift(model);
        let src = score_tensor(model);
        let dst = score_tensor(&lifted);
        for ((k, i, j), &v) in dst.indexed_iter() {
            residual = residual.max((v - src[[k, i, j]] - offset(model, k)).abs());
        }
    }
    let failure = if mismatch != 0 || residual > tol {
        Some((
            format!("rank mismatch {mismatch}, residual {residual:e}"),
            format!("{exact:#?}"),
        ))
    } else {
        None
    };
    TrialOutcome {
        seed,
        source_size: exact.dim(),
        target_size: lifted.dim(),
        rank_mismatch: mismatch,
        residual,
        failure,
    }
}

fn random_boolean(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Array3<u8> {
    let density: f64 = rng.random_range(0.05..0.95);
    Array3::from_shape_fn((k, n, n), |_| u8::from(rng.random_bool(density)))
}

fn run_trial(theorem: Theorem, cfg: &VerifyConfig, seed: u64) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Sizes { n, k, r } = sizes(&mut rng, cfg);
    let tol = theorem.tolerance();
    match theorem {
        Theorem::TranseToRescal => {
            let mut make = |exact| {
                TranseParams::new(matrix(&mut rng, n, r, exact), matrix(&mut rng, k, r, exact)).unwrap()
            };
            let (e, c) = (make(true), make(false));
            lifting_trial(seed, tol, &e, &c, transe_to_rescal, |p, kk| {
                let rk = p.relations().row(kk);
                rk.dot(&rk)
            })
        }
        Theorem::HoleToRescal => {
            let mut make = |exact| {
                HoleParams::new(matrix(&mut rng, n, r, exact), matrix(&mut rng, k, r, exact)).unwrap()
            };
            let (e, c) = (make(true), make(false));
            lifting_trial(seed, tol, &e, &c, hole_to_rescal, |_, _| 0.0)
        }
        Theorem::DistmultToRescal => {
            let mut make = |exact| {
                DistmultParams::new(matrix(&mut rng, n, r, exact), matrix(&mut rng, k, r, exact)).unwrap()
            };
            let (e, c) = (make(true), make(false));
            lifting_trial(seed, tol, &e, &c, distmult_to_rescal, |_, _| 0.0)
        }
        Theorem::ComplexToRescal => {
            let mut make = |exact| {
                ComplexParams::new(
                    matrix(&mut rng, n, r, exact),
                    matrix(&mut rng, n, r, exact),
                    matrix(&mut rng, k, r, exact),
                    matrix(&mut rng, k, r, exact),
                )
                .unwrap()
            };
            let (e, c) = (make(true), make(false));
            lifting_trial(seed, tol, &e, &c, complex_to_rescal, |_, _| 0.0)
        }
        Theorem::Universal => {
            // integer scores produce many ties, continuous ones almost none
            let integer = rng.random_bool(0.5);
            let scores = Array3::from_shape_fn((k, n, n), |_| {
                if integer {
                    f64::from(rng.random_range(-3i32..=3))
                } else {
                    rng.random_range(-1.0..1.0)
                }
            });
            let p = dense_rank_tensor(&scores).expect("finite");
            let model = rescal_universal(&p);
            let recovered = dense_rank_tensor(&score_tensor(&model)).expect("finite");
            let mismatch = rank_mismatch(&p, &recovered);
            TrialOutcome {
                seed,
                source_size: n,
                target_size: model.dim(),
                rank_mismatch: mismatch,
                residual: 0.0,
                failure: (mismatch != 0)
                    .then(|| ("ranking tensor not recovered".into(), format!("{p:?}"))),
            }
        }
        Theorem::Consistent => {
            let b = random_boolean(&mut rng, k, n);
            let model = rescal_consistent(&b, None).expect("trivial factorization is valid");
            let st = score_tensor(&model);
            let rounded_ok = st
                .axis_iter(Axis(0))
                .zip(b.axis_iter(Axis(0)))
                .all(|(s, bk)| round_matrix(s, DEFAULT_TAU) == bk);
            let consistent = consistent_per_slice(&st, &b).expect("shapes match");
            let mismatch = st
                .iter()
                .zip(b.iter())
                .filter(|(s, &bit)| round_tau_bit(**s) != bit)
                .count() as u64;
            TrialOutcome {
                seed,
                source_size: n,
                target_size: model.dim(),
                rank_mismatch: mismatch,
                residual: 0.0,
                failure: (!rounded_ok || !consistent)
                    .then(|| ("round(A R_k Aᵀ) differs from B_k".into(), format!("{b:?}"))),
            }
        }
        Theorem::ComplexConsistent => {
            let b = random_boolean(&mut rng, k, n);
            let side = 6;
            let real = Array3::from_shape_fn((1, side, side), |_| rng.random_range(-1.0..1.0));
            let mut failure = None;
            let mut residual: f64 = 0.0;
            let mut target_size = 0;
            match (complex_consistent(&b), complex_from_scores(&real)) {
                (Ok(dec_b), Ok(dec_s)) => {
                    target_size = dec_b.params.dim();
                    residual = dec_b.reconstruction_residual.max(dec_s.reconstruction_residual);
                    let normality = dec_b.normality_residual.max(dec_s.normality_residual);
                    let consistent =
                        consistent_per_slice(&hermitian_score_tensor(&dec_b.params), &b).expect("shapes");
                    if residual > tol || normality > 1e-9 || !consistent {
                        failure = Some((
                            format!(
                                "reconstruction {residual:e}, normality {normality:e}, consistent {consistent}"
                            ),
                            format!("{b:?}\n{real:?}"),
                        ));
                    }
                }
                (Err(e), _) | (_, Err(e)) => {
                    failure = Some((e.to_string(), format!("{b:?}\n{real:?}")));
                }
            }
            TrialOutcome {
                seed,
                source_size: n,
                target_size,
                rank_mismatch: 0,
                residual,
                failure,
            }
        }
        Theorem::Obstructions => {
            let transe =
                TranseParams::new(matrix(&mut rng, n, r, false), matrix(&mut rng, k, r, false)).unwrap();
            let distmult =
                DistmultParams::new(matrix(&mut rng, n, r, false), matrix(&mut rng, k, r, false)).unwrap();
            let b = random_boolean(&mut rng, 1, n);
            let b0 = b.index_axis(Axis(0), 0);
            let mut reasons = Vec::new();
            if !check_transe_obstruction(&transe) {
                reasons.push("TransE diagonal ranks not constant");
            }
            let st = score_tensor(&distmult);
            if st.axis_iter(Axis(0)).any(|s| s != s.t()) {
                reasons.push("DISTMULT score matrix not symmetric");
            }
            if check_distmult_obstruction(b0) != (b0 != b0.t()) {
                reasons.push("asymmetry check disagrees with transpose scan");
            }
            TrialOutcome {
                seed,
                source_size: r,
                target_size: r,
                rank_mismatch: 0,
                residual: 0.0,
                failure: (!reasons.is_empty())
                    .then(|| (reasons.join("; "), format!("{transe:#?}\n{distmult:#?}"))),
            }
        }
    }
}

fn round_tau_bit(x: f64) -> u8 {
    crate::ranking::round_tau(x, DEFAULT_TAU)
}

fn descriptor(theorem: Theorem) -> (&'static str, &'static str, &'static str) {
    match theorem {
        Theorem::TranseToRescal => ("transe", "rescal", "r -> 2r+1"),
        Theorem::HoleToRescal => ("hole", "rescal", "r -> r"),
        Theorem::DistmultToRescal => ("distmult", "rescal", "r -> r"),
        Theorem::ComplexToRescal => ("complex", "rescal", "r -> 2r"),
        Theorem::Universal => ("ranking-tensor", "rescal", "N -> N"),
        Theorem::Consistent => ("boolean-tensor", "rescal", "N -> sum_k 2*w_k"),
        Theorem::ComplexConsistent => ("boolean-tensor", "complex", "N -> K*N"),
        Theorem::Obstructions => ("transe/distmult", "-", "r -> r"),
    }
}

/// Emitted with the obstruction report: the RESCAL model whose diagonal
/// ranks differ, which no TransE model can reproduce.
pub fn obstruction_certificate() -> String {
    let w = transe_obstruction_witness(2, 1, 2).expect("valid sizes");
    let p = dense_rank_tensor(&score_tensor(&w)).expect("finite");
    let pi = p.slices()[0].as_array();
    format!(
        "RESCAL witness (N=2, K=1, r=2)\na_1 = {:?}\na_2 = {:?}\nR_1 = {:?}\ns_1(1,1) = {}\ns_1(2,2) = {}\npi_11 = {}\npi_22 = {}\npi_11 != pi_22: {}",
        w.entities().row(0).to_vec(),
        w.entities().row(1).to_vec(),
        w.relations().index_axis(Axis(0), 0).rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        w.score(0, 0, 0),
        w.score(1, 0, 1),
        pi[[0, 0]],
        pi[[1, 1]],
        pi[[0, 0]] != pi[[1, 1]],
    )
}

/// Runs `cfg.trials` seeded trials of `theorem` (in parallel on the current
/// rayon pool; the result does not depend on the schedule).
pub fn run(theorem: Theorem, cfg: &VerifyConfig) -> TransformReport {
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(theorem, cfg, cfg.seed.wrapping_add(t)))
        .collect();
    let (source, target, size_rule) = descriptor(theorem);
    let mut report = TransformReport {
        theorem,
        source,
        source_size: 0,
        target,
        target_size: 0,
        size_rule,
        trials: outcomes.len(),
        max_rank_mismatch: 0,
        max_score_residual: 0.0,
        tolerance: theorem.tolerance(),
        note: None,
        certificate: None,
        failure: None,
    };
    for o in &outcomes {
        report.source_size = report.source_size.max(o.source_size);
        report.target_size = report.target_size.max(o.target_size);
        report.max_rank_mismatch = report.max_rank_mismatch.max(o.rank_mismatch);
        report.max_score_residual = report.max_score_residual.max(o.residual);
        if report.failure.is_none() {
            if let Some((reason, instance)) = &o.failure {
                report.failure = Some(Counterexample {
                    seed: o.seed,
                    reason: reason.clone(),
                    instance: instance.clone(),
                });
            }
        }
    }
    if theorem == Theorem::ComplexToRescal {
        report.note = Some("direct real block form of size 2r; the HolE route gives 2r+1".into());
    }
    if theorem == Theorem::Obstructions {
        let cert = obstruction_certificate();
        if !cert.ends_with("true") && report.failure.is_none() {
            report.failure = Some(Counterexample {
                seed: cfg.seed,
                reason: "witness diagonal ranks coincide".into(),
                instance: cert.clone(),
            });
        }
        report.certificate = Some(cert);
    }
    if cfg.trials == 0 {
        report.note = Some("no trials run; vacuous pass".into());
    }
    report
}
