//! Parameter containers, score functions and analytic gradients for the five
//! model families.
//!
//! Every model exposes its parameters as an ordered list of row-major
//! [`Block`]s (entity blocks and relation blocks). Adagrad state, L2
//! regularization, finite-difference checks and serialization all work on
//! that uniform layout.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KgError, Result};

mod complex;
mod distmult;
mod hole;
pub mod io;
mod rescal;
mod transe;

pub use complex::ComplexParams;
pub use distmult::DistmultParams;
pub use hole::{
    circular_convolution, circular_correlation, correlation_fft, correlation_naive, HoleParams,
    FFT_MIN_DIM,
};
pub use rescal::RescalParams;
pub use transe::TranseParams;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Rescal,
    Distmult,
    Hole,
    Complex,
    Transe,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Rescal,
        ModelKind::Distmult,
        ModelKind::Hole,
        ModelKind::Complex,
        ModelKind::Transe,
    ];

    /// Byte used in the model file header.
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Rescal => 0,
            ModelKind::Distmult => 1,
            ModelKind::Hole => 2,
            ModelKind::Complex => 3,
            ModelKind::Transe => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|k| k.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rescal => "rescal",
            ModelKind::Distmult => "distmult",
            ModelKind::Hole => "hole",
            ModelKind::Complex => "complex",
            ModelKind::Transe => "transe",
        }
    }

    /// One-letter label used for ensembles (`R+H+T`).
    pub fn letter(self) -> &'static str {
        match self {
            ModelKind::Rescal => "R",
            ModelKind::Distmult => "D",
            ModelKind::Hole => "H",
            ModelKind::Complex => "C",
            ModelKind::Transe => "T",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rescal" => Ok(ModelKind::Rescal),
            "distmult" => Ok(ModelKind::Distmult),
            "hole" => Ok(ModelKind::Hole),
            "complex" => Ok(ModelKind::Complex),
            "transe" => Ok(ModelKind::Transe),
            other => Err(KgError::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Entity,
    Relation,
}

/// A row-major parameter array; row `i` is `data[i*row_len..(i+1)*row_len]`.
#[derive(Debug)]
pub struct Block<'a> {
    pub role: Role,
    pub row_len: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct BlockMut<'a> {
    pub role: Role,
    pub row_len: usize,
    pub data: &'a mut [f64],
}

impl Block<'_> {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.row_len..(i + 1) * self.row_len]
    }
}

impl BlockMut<'_> {
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.row_len..(i + 1) * self.row_len]
    }
}

/// One gradient row: `values` has the row length of block `block`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub block: usize,
    pub row: usize,
    pub values: Vec<f64>,
}

/// Gradient restricted to the parameter rows a triple touches. Rows not
/// listed are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad {
    rows: Vec<GradRow>,
}

impl SparseGrad {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `scale * values` into row `(block, row)`, creating it if needed.
    pub fn add(&mut self, block: usize, row: usize, values: &[f64], scale: f64) {
        if let Some(existing) = self
            .rows
            .iter_mut()
            .find(|g| g.block == block && g.row == row)
        {
            for (e, v) in existing.values.iter_mut().zip(values) {
                *e += scale * v;
            }
        } else {
            self.rows.push(GradRow {
                block,
                row,
                values: values.iter().map(|v| scale * v).collect(),
            });
        }
    }

    /// Adds `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &SparseGrad, scale: f64) {
        for g in &other.rows {
            self.add(g.block, g.row, &g.values, scale);
        }
    }

    pub fn rows(&self) -> &[GradRow] {
        &self.rows
    }

    pub fn row(&self, block: usize, row: usize) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|g| g.block == block && g.row == row)
            .map(|g| g.values.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Anything that assigns a real score to `(subject, relation, object)`.
pub trait Scorer: Sync {
    fn num_entities(&self) -> usize;
    fn num_relations(&self) -> usize;
    fn score(&self, subject: usize, relation: usize, object: usize) -> f64;

    /// Scores of `(subject, relation, o)` for every entity `o`.
    fn score_objects(&self, subject: usize, relation: usize, out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = self.score(subject, relation, o);
        }
    }

    /// Scores of `(s, relation, object)` for every entity `s`.
    fn score_subjects(&self, relation: usize, object: usize, out: &mut [f64]) {
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = self.score(s, relation, object);
        }
    }
}

/// Shared interface of the five parameter containers.
pub trait Embedding: Scorer {
    fn kind(&self) -> ModelKind;
    fn dim(&self) -> usize;
    /// Gradient of the score w.r.t. every parameter touched by the triple.
    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad;
    fn blocks(&self) -> Vec<Block<'_>>;
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>>;
}

/// A model of any of the five families.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Rescal(RescalParams),
    Distmult(DistmultParams),
    Hole(HoleParams),
    Complex(ComplexParams),
    Transe(TranseParams),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            Model::Rescal($p) => $body,
            Model::Distmult($p) => $body,
            Model::Hole($p) => $body,
            Model::Complex($p) => $body,
            Model::Transe($p) => $body,
        }
    };
}

impl Scorer for Model {
    fn num_entities(&self) -> usize {
        dispatch!(self, p => p.num_entities())
    }
    fn num_relations(&self) -> usize {
        dispatch!(self, p => p.num_relations())
    }
    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        dispatch!(self, p => p.score(subject, relation, object))
    }
    fn score_objects(&self, subject: usize, relation: usize, out: &mut [f64]) {
        dispatch!(self, p => p.score_objects(subject, relation, out))
    }
    fn score_subjects(&self, relation: usize, object: usize, out: &mut [f64]) {
        dispatch!(self, p => p.score_subjects(relation, object, out))
    }
}

impl Embedding for Model {
    fn kind(&self) -> ModelKind {
        dispatch!(self, p => p.kind())
    }
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        dispatch!(self, p => p.grad(subject, relation, object))
    }
    fn blocks(&self) -> Vec<Block<'_>> {
        dispatch!(self, p => p.blocks())
    }
    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        dispatch!(self, p => p.blocks_mut())
    }
}

impl Model {
    /// All-zero parameters of the given shape.
    pub fn zeros(kind: ModelKind, n: usize, k: usize, r: usize) -> Model {
        match kind {
            ModelKind::Rescal => Model::Rescal(RescalParams::zeros(n, k, r)),
            ModelKind::Distmult => Model::Distmult(DistmultParams::zeros(n, k, r)),
            ModelKind::Hole => Model::Hole(HoleParams::zeros(n, k, r)),
            ModelKind::Complex => Model::Complex(ComplexParams::zeros(n, k, r)),
            ModelKind::Transe => Model::Transe(TranseParams::zeros(n, k, r)),
        }
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }

    /// Whether all parameters are finite.
    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.data.iter().all(|v| v.is_finite()))
    }
}

/// Seeded initialization: every entry i.i.d. uniform on `[-1/√r, 1/√r]`.
pub fn init_params(kind: ModelKind, n: usize, k: usize, r: usize, seed: u64) -> Result<Model> {
    if r == 0 {
        return Err(KgError::InvalidArgument("embedding dimension must be ≥ 1".into()));
    }
    let bound = 1.0 / (r as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::zeros(kind, n, k, r);
    for block in model.blocks_mut() {
        for v in block.data.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(model)
}

/// Multiply-add counter for the scoring kernels, per thread.
pub mod ops {
    use std::cell::Cell;

    thread_local! {
        static COUNT: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        COUNT.with(|c| c.set(0));
    }

    pub fn count() -> u64 {
        COUNT.with(Cell::get)
    }

    pub(crate) fn add(n: usize) {
        COUNT.with(|c| c.set(c.get() + n as u64));
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    ops::add(a.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(KgError::Shape(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_codes_roundtrip() {
        for kind in ModelKind::ALL {
            assert_eq!(ModelKind::from_code(kind.code()), Some(kind));
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert_eq!(ModelKind::from_code(9), None);
        assert!("analogy".parse::<ModelKind>().is_err());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        for kind in ModelKind::ALL {
            let a = init_params(kind, 7, 3, 5, 42).unwrap();
            let b = init_params(kind, 7, 3, 5, 42).unwrap();
            assert_eq!(a, b);
            let c = init_params(kind, 7, 3, 5, 43).unwrap();
            assert_ne!(a, c);
            let bound = 1.0 / 5f64.sqrt();
            for block in a.blocks() {
                assert!(block.data.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn init_rejects_zero_dim() {
        assert!(init_params(ModelKind::Rescal, 3, 1, 0, 1).is_err());
    }

    #[test]
    fn init_mean_within_three_sigma() {
        // 25_000 entity rows × 4 coordinates = 10^5 draws
        let m = init_params(ModelKind::Distmult, 25_000, 1, 4, 7).unwrap();
        let draws = m.blocks()[0].data.to_vec();
        assert_eq!(draws.len(), 100_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let b = 0.5;
        let sigma_mean = (b / 3f64.sqrt()) / (draws.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn sparse_grad_accumulates_repeated_rows() {
        let mut g = SparseGrad::new();
        g.add(0, 2, &[1.0, 2.0], 1.0);
        g.add(0, 2, &[1.0, 1.0], 2.0);
        g.add(1, 0, &[5.0, 5.0], -1.0);
        assert_eq!(g.rows().len(), 2);
        assert_eq!(g.row(0, 2).unwrap(), &[3.0, 4.0]);
        assert_eq!(g.row(1, 0).unwrap(), &[-5.0, -5.0]);
    }
}
