use ndarray::Array2;

use super::{check_shape, ops, Block, BlockMut, Embedding, ModelKind, Role, Scorer, SparseGrad};
use crate::error::Result;

/// Diagonal bilinear model: `s_k(i, j) = Σ_t r_kt a_it a_jt`.
///
/// The product is evaluated as `r_kt * (a_it * a_jt)` so score matrices are
/// exactly symmetric in floating point.
#[derive(Debug, Clone, PartialEq)]
pub struct DistmultParams {
    entities: Array2<f64>,
    relations: Array2<f64>,
}

impl DistmultParams {
    /// `entities` is N×r, `relations` is K×r.
    pub fn new(entities: Array2<f64>, relations: Array2<f64>) -> Result<Self> {
        check_shape(
            "relations",
            relations.dim(),
            (relations.nrows(), entities.ncols()),
        )?;
        Ok(DistmultParams {
            entities: entities.as_standard_layout().into_owned(),
            relations: relations.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, k: usize, r: usize) -> Self {
        DistmultParams {
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

impl Scorer for DistmultParams {
    fn num_entities(&self) -> usize {
        self.entities.nrows()
    }

    fn num_relations(&self) -> usize {
        self.relations.nrows()
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        let (ai, aj, rk) = (self.entity(subject), self.entity(object), self.relation(relation));
        ops::add(rk.len());
        rk.iter()
            .zip(ai.iter().zip(aj))
            .map(|(r, (x, y))| r * (x * y))
            .sum()
    }
}

impl Embedding for DistmultParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Distmult
    }

    fn dim(&self) -> usize {
        self.entities.ncols()
    }

    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        let (ai, aj, rk) = (self.entity(subject), self.entity(object), self.relation(relation));
        let hadamard = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a * b).collect() };
        let mut g = SparseGrad::new();
        g.add(0, subject, &hadamard(rk, aj), 1.0);
        g.add(0, object, &hadamard(rk, ai), 1.0);
        g.add(1, relation, &hadamard(ai, aj), 1.0);
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
