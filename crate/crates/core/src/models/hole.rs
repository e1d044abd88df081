use std::cell::RefCell;

use ndarray::Array2;
use num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_shape, dot, ops, Block, BlockMut, Embedding, ModelKind, Role, Scorer, SparseGrad};
use crate::error::{KgError, Result};

/// Dimension from which correlations go through the FFT.
pub const FFT_MIN_DIM: usize = 32;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// `(a ⋆ b)_k = Σ_t a_t b_{(k+t) mod r}` by the double sum.
pub fn correlation_naive(a: &[f64], b: &[f64]) -> Vec<f64> {
    let r = a.len();
    ops::add(r * r);
    (0..r)
        .map(|k| (0..r).map(|t| a[t] * b[(k + t) % r]).sum())
        .collect()
}

fn fft_pair(a: &[f64], b: &[f64], conj_a: bool) -> Vec<f64> {
    let r = a.len();
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(r), p.plan_fft_inverse(r))
    });
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = if conj_a { x.conj() * y } else { *x * y };
    }
    inv.process(&mut fa);
    // three transforms of length r
    ops::add(3 * r * (usize::BITS - r.leading_zeros()) as usize);
    let scale = 1.0 / r as f64;
    fa.iter().map(|c| c.re * scale).collect()
}

/// Circular correlation through the FFT: `ifft(conj(fft(a)) · fft(b))`.
pub fn correlation_fft(a: &[f64], b: &[f64]) -> Vec<f64> {
    fft_pair(a, b, true)
}

/// Circular correlation, checking lengths. Uses the FFT from
/// [`FFT_MIN_DIM`] on, the double sum below.
pub fn circular_correlation(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(KgError::Shape(format!(
            "correlation of vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(correlate(a, b))
}

fn correlate(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.len() >= FFT_MIN_DIM {
        correlation_fft(a, b)
    } else {
        correlation_naive(a, b)
    }
}

/// `(a ∗ b)_u = Σ_k a_k b_{(u-k) mod r}`.
pub fn circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let r = a.len();
    if r >= FFT_MIN_DIM {
        return fft_pair(a, b, false);
    }
    ops::add(r * r);
    (0..r)
        .map(|u| (0..r).map(|k| a[k] * b[(u + r - k) % r]).sum())
        .collect()
}

/// Holographic embeddings: `s_k(i, j) = r_kᵀ (a_i ⋆ a_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleParams {
    entities: Array2<f64>,
    relations: Array2<f64>,
}

impl HoleParams {
    /// `entities` is N×r, `relations` is K×r.
    pub fn new(entities: Array2<f64>, relations: Array2<f64>) -> Result<Self> {
        check_shape(
            "relations",
            relations.dim(),
            (relations.nrows(), entities.ncols()),
        )?;
        Ok(HoleParams {
            entities: entities.as_standard_layout().into_owned(),
            relations: relations.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, k: usize, r: usize) -> Self {
        HoleParams {
            entities: Array2::zeros((n, r)),
            relations: Array2::zeros((k, r)),
        }
    }

    pub fn entities(&self) -> &Array2<f64> {
        &self.entities
    }

    pub fn relations(&self) -> &Array2<f64> {
        &self.relations
    }

    fn entity(&self, i: usize) -> &[f64] {
        let r = self.dim();
        &self.entities.as_slice().unwrap()[i * r..(i + 1) * r]
    }

    fn relation(&self, k: usize) -> &[f64] {
        let r = self.dim();
        &self.relations.as_slice().unwrap()[k * r..(k + 1) * r]
    }
}

impl Scorer for HoleParams {
    fn num_entities(&self) -> usize {
        self.entities.nrows()
    }

    fn num_relations(&self) -> usize {
        self.relations.nrows()
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        let corr = correlate(self.entity(subject), self.entity(object));
        dot(self.relation(relation), &corr)
    }

    fn score_objects(&self, subject: usize, relation: usize, out: &mut [f64]) {
        // s = Σ_t a_it (r ⋆ a_j)_t, and r ⋆ a_j is linear in a_j:
        // s = Σ_u a_ju (a_i ∗ r)_u
        let w = circular_convolution(self.entity(subject), self.relation(relation));
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = dot(&w, self.entity(o));
        }
    }

    fn score_subjects(&self, relation: usize, object: usize, out: &mut [f64]) {
        let w = correlate(self.relation(relation), self.entity(object));
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.entity(s), &w);
        }
    }
}

impl Embedding for HoleParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Hole
    }

    fn dim(&self) -> usize {
        self.entities.ncols()
    }

    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        let (ai, aj, rk) = (self.entity(subject), self.entity(object), self.relation(relation));
        let mut g = SparseGrad::new();
        // ∂/∂a_i[t] = Σ_k r_k a_j[(k+t) mod r] = (r ⋆ a_j)_t
        g.add(0, subject, &correlate(rk, aj), 1.0);
        // ∂/∂a_j[u] = Σ_k r_k a_i[(u-k) mod r] = (r ∗ a_i)_u
        g.add(0, object, &circular_convolution(rk, ai), 1.0);
        g.add(1, relation, &correlate(ai, aj), 1.0);
        g
    }

    fn blocks(&self) -> Vec<Block<'_>> {
        let r = self.dim();
        vec![
            Block { role: Role::Entity, row_len: r, data: self.entities.as_slice().unwrap() },
            Block { role: Role::Relation, row_len: r, data: self.relations.as_slice().unwrap() },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let r = self.dim();
        vec![
            BlockMut { role: Role::Entity, row_len: r, data: self.entities.as_slice_mut().unwrap() },
            BlockMut { role: Role::Relation, row_len: r, data: self.relations.as_slice_mut().unwrap() },
        ]
    }
}
