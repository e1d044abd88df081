use ndarray::{Array2, Array3};

use super::{dot, ops, Block, BlockMut, Embedding, ModelKind, Role, Scorer, SparseGrad};
use crate::error::{KgError, Result};

/// Unconstrained bilinear model: `s_k(i, j) = a_iᵀ R_k a_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescalParams {
    entities: Array2<f64>,
    relations: Array3<f64>,
}

impl RescalParams {
    /// `entities` is N×r, `relations` is K×r×r.
    pub fn new(entities: Array2<f64>, relations: Array3<f64>) -> Result<Self> {
        let r = entities.ncols();
        let (_, r1, r2) = relations.dim();
        if r1 != r || r2 != r {
            return Err(KgError::Shape(format!(
                "relation matrices must be {r}×{r}, got {r1}×{r2}"
            )));
        }
        Ok(RescalParams {
            entities: entities.as_standard_layout().into_owned(),
            relations: relations.as_standard_layout().into_owned(),
        })
    }

    pub fn zeros(n: usize, k: usize, r: usize) -> Self {
        RescalParams {
            entities: Array2::zeros((n, r)),
            relations: Array3::zeros((k, r, r)),
        }
    }

    pub fn entities(&self) -> &Array2<f64> {
        &self.entities
    }

    pub fn relations(&self) -> &Array3<f64> {
        &self.relations
    }

    fn entity(&self, i: usize) -> &[f64] {
        let r = self.dim();
        &self.entities.as_slice().unwrap()[i * r..(i + 1) * r]
    }

    fn relation(&self, k: usize) -> &[f64] {
        let rr = self.dim() * self.dim();
        &self.relations.as_slice().unwrap()[k * rr..(k + 1) * rr]
    }

    /// `R_k a_j`
    fn right(&self, k: usize, j: usize) -> Vec<f64> {
        let r = self.dim();
        let rel = self.relation(k);
        let aj = self.entity(j);
        (0..r).map(|u| dot(&rel[u * r..(u + 1) * r], aj)).collect()
    }

    /// `a_iᵀ R_k`
    fn left(&self, i: usize, k: usize) -> Vec<f64> {
        let r = self.dim();
        let rel = self.relation(k);
        let ai = self.entity(i);
        let mut out = vec![0.0; r];
        for (u, &a) in ai.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(&rel[u * r..(u + 1) * r]) {
                *o += a * m;
            }
        }
        ops::add(r * r);
        out
    }
}

impl Scorer for RescalParams {
    fn num_entities(&self) -> usize {
        self.entities.nrows()
    }

    fn num_relations(&self) -> usize {
        self.relations.dim().0
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        dot(self.entity(subject), &self.right(relation, object))
    }

    fn score_objects(&self, subject: usize, relation: usize, out: &mut [f64]) {
        let v = self.left(subject, relation);
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = dot(&v, self.entity(o));
        }
    }

    fn score_subjects(&self, relation: usize, object: usize, out: &mut [f64]) {
        let v = self.right(relation, object);
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.entity(s), &v);
        }
    }
}

impl Embedding for RescalParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Rescal
    }

    fn dim(&self) -> usize {
        self.entities.ncols()
    }

    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        let ai = self.entity(subject);
        let aj = self.entity(object);
        let mut g = SparseGrad::new();
        g.add(0, subject, &self.right(relation, object), 1.0);
        g.add(0, object, &self.left(subject, relation), 1.0);
        let outer: Vec<f64> = ai
            .iter()
            .flat_map(|&x| aj.iter().map(move |&y| x * y))
            .collect();
        g.add(1, relation, &outer, 1.0);
        g
    }

    fn blocks(&self) -> Vec<Block<'_>> {
        let r = self.dim();
        vec![
            Block {
                role: Role::Entity,
                row_len: r,
                data: self.entities.as_slice().unwrap(),
            },
            Block {
                role: Role::Relation,
                row_len: r * r,
                data: self.relations.as_slice().unwrap(),
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let r = self.dim();
        vec![
            BlockMut {
                role: Role::Entity,
                row_len: r,
                data: self.entities.as_slice_mut().unwrap(),
            },
            BlockMut {
                role: Role::Relation,
                row_len: r * r,
                data: self.relations.as_slice_mut().unwrap(),
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn picks_off_diagonal_entry() {
        let p = RescalParams::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            array![[[0.0, 1.0], [0.0, 0.0]]],
        )
        .unwrap();
        assert_eq!(p.score(0, 0, 1), 1.0);
        assert_eq!(p.score(1, 0, 0), 0.0);
        let g = p.grad(0, 0, 1);
        assert_eq!(g.row(1, 0).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(RescalParams::new(Array2::zeros((3, 2)), Array3::zeros((1, 3, 3))).is_err());
    }

    #[test]
    fn batched_scores_match_pointwise() {
        let p = RescalParams::new(
            array![[0.5, -1.0], [2.0, 0.25], [1.0, 1.0]],
            array![[[1.0, 2.0], [-3.0, 0.5]]],
        )
        .unwrap();
        let mut out = vec![0.0; 3];
        p.score_objects(1, 0, &mut out);
        for (o, v) in out.iter().enumerate() {
            assert!((v - p.score(1, 0, o)).abs() < 1e-12);
        }
        p.score_subjects(0, 2, &mut out);
        for (s, v) in out.iter().enumerate() {
            assert!((v - p.score(s, 0, 2)).abs() < 1e-12);
        }
    }
}
