//! Constructive model-to-model transformations.
//!
//! * liftings of TransE, HolE, DISTMULT and ComplEx models into RESCAL that
//!   preserve the ranking tensor (HolE, DISTMULT and ComplEx preserve scores
//!   exactly; TransE up to a per-relation constant),
//! * the identity construction making RESCAL of size N universal,
//! * consistency constructions from rounding factorizations (RESCAL) and from
//!   unitary diagonalization of normal matrices (ComplEx),
//! * obstruction checks for TransE (constant diagonal) and DISTMULT
//!   (symmetry).
//!
//! [`verify`] runs seeded trials of each construction against the dense-rank
//! oracle.

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;

use crate::error::{KgError, Result};
use crate::models::{
    ComplexParams, DistmultParams, Embedding, HoleParams, RescalParams, Scorer, TranseParams,
};
use crate::ranking::{dense_rank, is_consistent, round_matrix, RankingTensor, ScoreTensor, DEFAULT_TAU};

pub mod verify;

/// Full K×N×N score tensor of a model.
pub fn score_tensor<S: Scorer + ?Sized>(model: &S) -> ScoreTensor {
    let (n, k) = (model.num_entities(), model.num_relations());
    Array3::from_shape_fn((k, n, n), |(r, i, j)| model.score(i, r, j))
}

/// Lifts a TransE model of size r into RESCAL of size 2r+1.
///
/// Entity rows become `(1_r, a_i, a_iᵀa_i)` and relation matrices
/// `R_k' = -[[0, -2 diag(r_k), e_1], [2 diag(r_k), -2 I, 0], [e_1ᵀ, 0, 0]]`.
/// The lifted score equals the TransE score plus `r_kᵀ r_k`.
pub fn transe_to_rescal(p: &TranseParams) -> RescalParams {
    let (n, r, k) = (p.num_entities(), p.dim(), p.num_relations());
    let size = 2 * r + 1;
    let a = p.entities();
    let mut entities = Array2::<f64>::zeros((n, size));
    for i in 0..n {
        let ai = a.row(i);
        entities.slice_mut(s![i, ..r]).fill(1.0);
        entities.slice_mut(s![i, r..2 * r]).assign(&ai);
        entities[[i, 2 * r]] = ai.dot(&ai);
    }
    let mut relations = Array3::<f64>::zeros((k, size, size));
    for kk in 0..k {
        let rk = p.relations().row(kk);
        let mut m = relations.index_axis_mut(Axis(0), kk);
        for u in 0..r {
            m[[u, r + u]] = 2.0 * rk[u];
            m[[r + u, u]] = -2.0 * rk[u];
            m[[r + u, r + u]] = 2.0;
        }
        if r > 0 {
            m[[0, 2 * r]] = -1.0;
            m[[2 * r, 0]] = -1.0;
        }
    }
    RescalParams::new(entities, relations).expect("shapes are consistent by construction")
}

/// Circulant relation matrix of a HolE relation vector: row t is the first
/// row `(r_1, …, r_r)` cyclically shifted right by t.
pub fn circulant(rk: &[f64]) -> Array2<f64> {
    let r = rk.len();
    Array2::from_shape_fn((r, r), |(u, t)| rk[(t + r - u) % r])
}

/// Rewrites HolE as RESCAL of the same size with circulant relation matrices.
pub fn hole_to_rescal(p: &HoleParams) -> RescalParams {
    let (k, r) = (p.num_relations(), p.dim());
    let mut relations = Array3::zeros((k, r, r));
    for kk in 0..k {
        let rk = p.relations().row(kk).to_vec();
        relations.index_axis_mut(Axis(0), kk).assign(&circulant(&rk));
    }
    RescalParams::new(p.entities().clone(), relations).expect("consistent shapes")
}

/// DISTMULT as RESCAL with `R_k = diag(r_k)`.
pub fn distmult_to_rescal(p: &DistmultParams) -> RescalParams {
    let (k, r) = (p.num_relations(), p.dim());
    let mut relations = Array3::zeros((k, r, r));
    for kk in 0..k {
        for t in 0..r {
            relations[[kk, t, t]] = p.relations()[[kk, t]];
        }
    }
    RescalParams::new(p.entities().clone(), relations).expect("consistent shapes")
}

/// ComplEx of size r as RESCAL of size 2r: entity rows `(x_i, y_i)` and
/// `R_k = [[diag(p_k), -diag(q_k)], [-diag(q_k), -diag(p_k)]]`.
pub fn complex_to_rescal(p: &ComplexParams) -> RescalParams {
    let (n, k, r) = (p.num_entities(), p.num_relations(), p.dim());
    let mut entities = Array2::zeros((n, 2 * r));
    entities.slice_mut(s![.., ..r]).assign(p.entities_re());
    entities.slice_mut(s![.., r..]).assign(p.entities_im());
    let mut relations = Array3::zeros((k, 2 * r, 2 * r));
    for kk in 0..k {
        for t in 0..r {
            let (re, im) = (p.relations_re()[[kk, t]], p.relations_im()[[kk, t]]);
            relations[[kk, t, t]] = re;
            relations[[kk, t, r + t]] = -im;
            relations[[kk, r + t, t]] = -im;
            relations[[kk, r + t, r + t]] = -re;
        }
    }
    RescalParams::new(entities, relations).expect("consistent shapes")
}

/// RESCAL of size N reproducing any ranking tensor: `A = I_N`, `R_k = -P_k`.
pub fn rescal_universal(p: &RankingTensor) -> RescalParams {
    let n = p.num_entities();
    let k = p.num_slices();
    let mut relations = Array3::zeros((k, n, n));
    for (kk, slice) in p.slices().iter().enumerate() {
        relations
            .index_axis_mut(Axis(0), kk)
            .assign(&slice.as_array().mapv(|v| -(v as f64)));
    }
    RescalParams::new(Array2::eye(n), relations).expect("consistent shapes")
}

/// A pair `(L, Q)` of N×w matrices with `round(L Qᵀ) = B`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundingFactorization {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
}

impl RoundingFactorization {
    /// `L = I_N`, `Q = Bᵀ`, so that `L Qᵀ = B`. Width N.
    pub fn trivial(b: ArrayView2<'_, u8>) -> Self {
        let n = b.nrows();
        RoundingFactorization {
            left: Array2::eye(n),
            right: b.t().mapv(f64::from),
        }
    }

    pub fn width(&self) -> usize {
        self.left.ncols()
    }
}

fn check_boolean(b: &Array3<u8>) -> Result<()> {
    let (_, n, m) = b.dim();
    if n != m {
        return Err(KgError::Shape(format!("slices must be square, got {n}×{m}")));
    }
    if b.iter().any(|&v| v > 1) {
        return Err(KgError::InvalidArgument("boolean tensor entries must be 0 or 1".into()));
    }
    Ok(())
}

/// RESCAL model whose every slice rounds (τ = 1/2) to the boolean tensor `b`
/// (K×N×N), hence is consistent with it.
///
/// Uses the given per-slice rounding factorizations, or the trivial one when
/// `factorizations` is `None`. Entity rows concatenate `([L_k]_i, [Q_k]_i)`
/// over k; `R_k` is block diagonal with `[[0, I], [0, 0]]` in block k.
pub fn rescal_consistent(
    b: &Array3<u8>,
    factorizations: Option<&[RoundingFactorization]>,
) -> Result<RescalParams> {
    check_boolean(b)?;
    let (k, n, _) = b.dim();
    let owned: Vec<RoundingFactorization>;
    let facs = match factorizations {
        Some(f) => {
            if f.len() != k {
                return Err(KgError::InvalidArgument(format!(
                    "{} factorizations for {k} slices",
                    f.len()
                )));
            }
            f
        }
        None => {
            owned = b
                .axis_iter(Axis(0))
                .map(RoundingFactorization::trivial)
                .collect();
            &owned
        }
    };
    for (kk, f) in facs.iter().enumerate() {
        let fail = |message: String| KgError::InvalidFactorization { slice: kk, message };
        if f.left.nrows() != n || f.right.nrows() != n || f.left.ncols() != f.right.ncols() {
            return Err(fail(format!(
                "expected two N×w matrices with N={n}, got {:?} and {:?}",
                f.left.dim(),
                f.right.dim()
            )));
        }
        let product = f.left.dot(&f.right.t());
        if round_matrix(product.view(), DEFAULT_TAU) != b.index_axis(Axis(0), kk) {
            return Err(fail("round(L Qᵀ) differs from the boolean slice".into()));
        }
    }
    let size: usize = facs.iter().map(|f| 2 * f.width()).sum();
    let mut entities = Array2::zeros((n, size));
    let mut relations = Array3::zeros((k, size, size));
    let mut offset = 0;
    for (kk, f) in facs.iter().enumerate() {
        let w = f.width();
        entities.slice_mut(s![.., offset..offset + w]).assign(&f.left);
        entities
            .slice_mut(s![.., offset + w..offset + 2 * w])
            .assign(&f.right);
        for t in 0..w {
            relations[[kk, offset + t, offset + w + t]] = 1.0;
        }
        offset += 2 * w;
    }
    RescalParams::new(entities, relations)
}

/// A complex model with `Re(A R_k A*) ≈ S_k`, plus its numerical residuals.
#[derive(Debug, Clone)]
pub struct ComplexDecomposition {
    pub params: ComplexParams,
    /// max over slices of ‖Z Z* − Z* Z‖_∞ for `Z = S + i Sᵀ`
    pub normality_residual: f64,
    /// max over slices of ‖Re(A R_k A*) − S_k‖_∞
    pub reconstruction_residual: f64,
    /// max over slices of ‖Q* Q − I‖_∞ after re-orthonormalization
    pub unitarity_residual: f64,
}

fn max_abs(m: &DMatrix<Complex64>) -> f64 {
    m.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Modified Gram–Schmidt on the columns of `q`.
fn orthonormalize(q: &mut DMatrix<Complex64>) {
    let cols = q.ncols();
    for j in 0..cols {
        for i in 0..j {
            let proj: Complex64 = q.column(i).dotc(&q.column(j));
            let qi = q.column(i).clone_owned();
            let mut cj = q.column_mut(j);
            cj -= qi * proj;
        }
        let norm = q.column(j).norm();
        if norm > 0.0 {
            q.column_mut(j).unscale_mut(norm);
        }
    }
}

/// Unitary diagonalization of the normal matrix `Z = S + i Sᵀ`: returns
/// `(Q, d)` with `Z ≈ Q diag(d) Q*` and therefore `Re(Q diag(d) Q*) ≈ S`.
fn diagonalize_real(s_k: ArrayView2<'_, f64>, slice: usize) -> Result<(DMatrix<Complex64>, Vec<Complex64>, f64)> {
    let n = s_k.nrows();
    let z = DMatrix::from_fn(n, n, |i, j| Complex64::new(s_k[[i, j]], s_k[[j, i]]));
    let zh = z.adjoint();
    let normality = max_abs(&(&z * &zh - &zh * &z));
    let schur = nalgebra::linalg::Schur::try_new(z, 1e-14, 10_000).ok_or(KgError::Eigen(slice))?;
    let (mut q, t) = schur.unpack();
    orthonormalize(&mut q);
    let d: Vec<Complex64> = t.diagonal().iter().copied().collect();
    Ok((q, d, normality))
}

/// ComplEx model of size K·N with `Re(A R_k A*) = S_k` for every slice of a
/// real K×N×N tensor. `A = (A_1 … A_K)` stacks the unitary bases and `r_k`
/// carries the eigenvalues of slice k in block k and zeros elsewhere.
pub fn complex_from_scores(scores: &ScoreTensor) -> Result<ComplexDecomposition> {
    let (k, n, m) = scores.dim();
    if n != m {
        return Err(KgError::Shape(format!("slices must be square, got {n}×{m}")));
    }
    let size = k * n;
    let mut a_re = Array2::zeros((n, size));
    let mut a_im = Array2::zeros((n, size));
    let mut r_re = Array2::zeros((k, size));
    let mut r_im = Array2::zeros((k, size));
    let mut normality_residual: f64 = 0.0;
    let mut unitarity_residual: f64 = 0.0;
    for kk in 0..k {
        let (q, d, normality) = diagonalize_real(scores.index_axis(Axis(0), kk), kk)?;
        normality_residual = normality_residual.max(normality);
        let gram = q.adjoint() * &q - DMatrix::<Complex64>::identity(n, n);
        unitarity_residual = unitarity_residual.max(max_abs(&gram));
        for i in 0..n {
            for t in 0..n {
                a_re[[i, kk * n + t]] = q[(i, t)].re;
                a_im[[i, kk * n + t]] = q[(i, t)].im;
            }
        }
        for (t, dt) in d.iter().enumerate() {
            r_re[[kk, kk * n + t]] = dt.re;
            r_im[[kk, kk * n + t]] = dt.im;
        }
    }
    let params = ComplexParams::new(a_re, a_im, r_re, r_im)?;
    let mut reconstruction_residual: f64 = 0.0;
    for kk in 0..k {
        for i in 0..n {
            for j in 0..n {
                let err = (params.score_hermitian(i, kk, j) - scores[[kk, i, j]]).abs();
                reconstruction_residual = reconstruction_residual.max(err);
            }
        }
    }
    Ok(ComplexDecomposition {
        params,
        normality_residual,
        reconstruction_residual,
        unitarity_residual,
    })
}

/// ComplEx model consistent with the boolean tensor `b`, built from
/// `S_k = B_k` through [`complex_from_scores`]. The model is evaluated in the
/// Hermitian form [`ComplexParams::score_hermitian`].
pub fn complex_consistent(b: &Array3<u8>) -> Result<ComplexDecomposition> {
    check_boolean(b)?;
    complex_from_scores(&b.mapv(f64::from))
}

/// Hermitian-form score tensor of a ComplEx model.
pub fn hermitian_score_tensor(p: &ComplexParams) -> ScoreTensor {
    let (n, k) = (p.num_entities(), p.num_relations());
    Array3::from_shape_fn((k, n, n), |(r, i, j)| p.score_hermitian(i, r, j))
}

/// Whether every slice of `scores` is consistent with the matching slice of `b`.
pub fn consistent_per_slice(scores: &ScoreTensor, b: &Array3<u8>) -> Result<bool> {
    for (s, bk) in scores.axis_iter(Axis(0)).zip(b.axis_iter(Axis(0))) {
        if !is_consistent(s, bk)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// True iff every relation's ranking matrix has a constant diagonal. Holds
/// for every TransE model since `s_k(i, i) = -‖r_k‖²`.
pub fn check_transe_obstruction(p: &TranseParams) -> bool {
    diagonal_ranks_constant(p)
}

/// Whether each slice of the model's ranking tensor has a constant diagonal.
pub fn diagonal_ranks_constant<S: Scorer + ?Sized>(model: &S) -> bool {
    let scores = score_tensor(model);
    scores.axis_iter(Axis(0)).all(|slice| {
        let p = dense_rank(slice).expect("finite scores");
        let first = p.get(0, 0);
        (0..slice.nrows()).all(|i| p.get(i, i) == first)
    })
}

/// RESCAL model no TransE model can match: `a_1 = e_1`, `a_2 = e_2`, other
/// entities zero, `R_1 = [[1, 1], [1, 0]]` padded with zeros, other relations
/// zero. Then `s_1(1, 1) = 1 ≠ 0 = s_1(2, 2)`.
pub fn transe_obstruction_witness(n: usize, k: usize, r: usize) -> Result<RescalParams> {
    if n < 2 || k < 1 || r < 2 {
        return Err(KgError::InvalidArgument(format!(
            "witness needs N ≥ 2, K ≥ 1, r ≥ 2 (got N={n}, K={k}, r={r})"
        )));
    }
    let mut entities = Array2::zeros((n, r));
    entities[[0, 0]] = 1.0;
    entities[[1, 1]] = 1.0;
    let mut relations = Array3::zeros((k, r, r));
    relations[[0, 0, 0]] = 1.0;
    relations[[0, 0, 1]] = 1.0;
    relations[[0, 1, 0]] = 1.0;
    RescalParams::new(entities, relations)
}

/// True iff `b` is asymmetric, in which case no DISTMULT model (whose score
/// matrices are symmetric) is consistent with it.
pub fn check_distmult_obstruction(b: ArrayView2<'_, u8>) -> bool {
    let n = b.nrows();
    (0..n).any(|i| (0..i).any(|j| b[[i, j]] != b[[j, i]]))
}
