use ndarray::Array2;

use super::{check_shape, ops, Block, BlockMut, Embedding, ModelKind, Role, Scorer, SparseGrad};
use crate::error::Result;

/// Complex diagonal model: `s_k(i, j) = Re(Σ_t a_it r_kt a_jt)`, with no
/// conjugation on `a_j`.
///
/// Real and imaginary parts are stored as separate N×r / K×r arrays. Writing
/// `a_i = x + iy`, `a_j = u + iv`, `r_k = p + iq`, each coordinate contributes
/// `p(xu - yv) - q(xv + yu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexParams {
    entities_re: Array2<f64>,
    entities_im: Array2<f64>,
    relations_re: Array2<f64>,
    relations_im: Array2<f64>,
}

impl ComplexParams {
    pub fn new(
        entities_re: Array2<f64>,
        entities_im: Array2<f64>,
        relations_re: Array2<f64>,
        relations_im: Array2<f64>,
    ) -> Result<Self> {
        let r = entities_re.ncols();
        check_shape("entities_im", entities_im.dim(), entities_re.dim())?;
        check_shape("relations_re", relations_re.dim(), (relations_re.nrows(), r))?;
        check_shape("relations_im", relations_im.dim(), relations_re.dim())?;
        let std = |a: Array2<f64>| a.as_standard_layout().into_owned();
        Ok(ComplexParams {
            entities_re: std(entities_re),
            entities_im: std(entities_im),
            relations_re: std(relations_re),
            relations_im: std(relations_im),
        })
    }

    pub fn zeros(n: usize, k: usize, r: usize) -> Self {
        ComplexParams {
            entities_re: Array2::zeros((n, r)),
            entities_im: Array2::zeros((n, r)),
            relations_re: Array2::zeros((k, r)),
            relations_im: Array2::zeros((k, r)),
        }
    }

    pub fn entities_re(&self) -> &Array2<f64> {
        &self.entities_re
    }

    pub fn entities_im(&self) -> &Array2<f64> {
        &self.entities_im
    }

    pub fn relations_re(&self) -> &Array2<f64> {
        &self.relations_re
    }

    pub fn relations_im(&self) -> &Array2<f64> {
        &self.relations_im
    }

    fn row(a: &Array2<f64>, i: usize) -> &[f64] {
        let r = a.ncols();
        &a.as_slice().unwrap()[i * r..(i + 1) * r]
    }

    /// `Re(Σ_t a_it r_kt conj(a_jt))`, the Hermitian form `Re(A diag(r_k) A*)`
    /// used by the unitary-diagonalization constructions.
    pub fn score_hermitian(&self, subject: usize, relation: usize, object: usize) -> f64 {
        let x = Self::row(&self.entities_re, subject);
        let y = Self::row(&self.entities_im, subject);
        let u = Self::row(&self.entities_re, object);
        let v = Self::row(&self.entities_im, object);
        let p = Self::row(&self.relations_re, relation);
        let q = Self::row(&self.relations_im, relation);
        ops::add(p.len());
        (0..p.len())
            .map(|t| p[t] * (x[t] * u[t] + y[t] * v[t]) - q[t] * (y[t] * u[t] - x[t] * v[t]))
            .sum()
    }
}

impl Scorer for ComplexParams {
    fn num_entities(&self) -> usize {
        self.entities_re.nrows()
    }

    fn num_relations(&self) -> usize {
        self.relations_re.nrows()
    }

    fn score(&self, subject: usize, relation: usize, object: usize) -> f64 {
        let x = Self::row(&self.entities_re, subject);
        let y = Self::row(&self.entities_im, subject);
        let u = Self::row(&self.entities_re, object);
        let v = Self::row(&self.entities_im, object);
        let p = Self::row(&self.relations_re, relation);
        let q = Self::row(&self.relations_im, relation);
        ops::add(p.len());
        // written so that swapping (x, y) with (u, v) gives bitwise equal terms
        (0..p.len())
            .map(|t| p[t] * (x[t] * u[t] - y[t] * v[t]) - q[t] * (x[t] * v[t] + y[t] * u[t]))
            .sum()
    }
}

impl Embedding for ComplexParams {
    fn kind(&self) -> ModelKind {
        ModelKind::Complex
    }

    fn dim(&self) -> usize {
        self.entities_re.ncols()
    }

    fn grad(&self, subject: usize, relation: usize, object: usize) -> SparseGrad {
        let x = Self::row(&self.entities_re, subject);
        let y = Self::row(&self.entities_im, subject);
        let u = Self::row(&self.entities_re, object);
        let v = Self::row(&self.entities_im, object);
        let p = Self::row(&self.relations_re, relation);
        let q = Self::row(&self.relations_im, relation);
        let r = p.len();
        let build = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..r).map(f).collect() };
        let mut g = SparseGrad::new();
        g.add(0, subject, &build(&|t| p[t] * u[t] - q[t] * v[t]), 1.0);
        g.add(1, subject, &build(&|t| -p[t] * v[t] - q[t] * u[t]), 1.0);
        g.add(0, object, &build(&|t| p[t] * x[t] - q[t] * y[t]), 1.0);
        g.add(1, object, &build(&|t| -p[t] * y[t] - q[t] * x[t]), 1.0);
        g.add(2, relation, &build(&|t| x[t] * u[t] - y[t] * v[t]), 1.0);
        g.add(3, relation, &build(&|t| -(x[t] * v[t] + y[t] * u[t])), 1.0);
        g
    }

    fn blocks(&self) -> Vec<Block<'_>> {
        let r = self.dim();
        vec![
            Block { role: Role::Entity, row_len: r, data: self.entities_re.as_slice().unwrap() },
            Block { role: Role::Entity, row_len: r, data: self.entities_im.as_slice().unwrap() },
            Block { role: Role::Relation, row_len: r, data: self.relations_re.as_slice().unwrap() },
            Block { role: Role::Relation, row_len: r, data: self.relations_im.as_slice().unwrap() },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<BlockMut<'_>> {
        let r = self.dim();
        vec![
            BlockMut { role: Role::Entity, row_len: r, data: self.entities_re.as_slice_mut().unwrap() },
            BlockMut { role: Role::Entity, row_len: r, data: self.entities_im.as_slice_mut().unwrap() },
            BlockMut { role: Role::Relation, row_len: r, data: self.relations_re.as_slice_mut().unwrap() },
            BlockMut { role: Role::Relation, row_len: r, data: self.relations_im.as_slice_mut().unwrap() },
        ]
    }
}
