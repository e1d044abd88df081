use ndarray::Array2;

use super::{check_shape, ops, Block, BlockMut, Embedding, ModelKind, Role, Scorer, SparseGrad};
use crate::error::Result;

/// Translation model with negated squared distance:
/// `s_k(i, j) = -‖a_i + r_k - a_j‖²`.
///
/// The residual is evaluated as `(a_i - a_j) + r_k`, so `s_k(i, i)` is
/// exactly `-‖r_k‖²` for every `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TranseParams {
    entities: Array2<f64>,
    relations: Array2<f64>,
}

impl TranseParams {
    /// `entities` is N×r, `relations` is K×r.
    pub fn new(entities: Array2<f64>, relations: Array2<f64>) -> Result<Self> {
        check_shape(
            "relations",
            relations.dim(),
            (relations.nrows(), entities.ncols()),
        )?;
        Ok(TranseParams {
            entities: entities.as_standard_layout().into_owned(),
            relations: relations.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, k: usize, r: usize) -> Self {
        TranseParams {
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

    fn residual(&self, subject: usize, relation: usize, object: usize) -> Vec<f64> {
        let (ai, aj, rk) = (self.entity(subject), self.entity(object), self.relation(relation));
        ops::add(rk.len());
        ai.iter()
            .zip(aj)
            .zip(rk)
            .map(|((x, y), r)| (x - y) + r)
            .collect()
    }
}

impl Scorer for TranseParams {
    fn num_entities(&self) -> usize {
        self.entities.nrows()
    }

    fn num_relations(&self) -> usize {
        self.relations.nrows()
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        -self
            .residual(subject, relation, object)
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
    }
}

impl Embedding for TranseParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Transe
    }

    fn dim(&self) -> usize {
        self.entities.ncols()
    }

    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        let d = self.residual(subject, relation, object);
        let mut g = SparseGrad::new();
        g.add(0, subject, &d, -2.0);
        g.add(0, object, &d, 2.0);
        g.add(1, relation, &d, -2.0);
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
