//! Dense ranks of scoring matrices, the rounding function and the
//! consistency predicate.
//!
//! Rank 1 is the highest score. Equal scores share a rank and ranks have no
//! gaps. Score ties are exact floating-point equality.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{KgError, Result};

/// N×N real scores of one relation slice.
pub type ScoreMatrix = Array2<f64>;
/// K×N×N real scores, one frontal slice per relation (slice index first).
pub type ScoreTensor = Array3<f64>;

/// Default rounding threshold.
pub const DEFAULT_TAU: f64 = 0.5;

/// Dense-rank image of a scoring matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingMatrix(Array2<u32>);

impl RankingMatrix {
    /// Validates range (1..=rows·cols) and density (every value above 1 has
    /// its predecessor present).
    pub fn new(entries: Array2<u32>) -> Result<Self> {
        let cells = entries.len() as u64;
        if cells == 0 {
            return Err(KgError::InvalidRanking("empty matrix".into()));
        }
        let max = *entries.iter().max().unwrap();
        if entries.iter().any(|&v| v == 0 || v as u64 > cells) {
            return Err(KgError::InvalidRanking(format!(
                "entries must lie in 1..={cells}"
            )));
        }
        let mut present = vec![false; max as usize + 1];
        for &v in entries.iter() {
            present[v as usize] = true;
        }
        if let Some(gap) = (1..=max as usize).find(|&v| !present[v]) {
            return Err(KgError::InvalidRanking(format!(
                "rank {gap} missing below maximum rank {max}"
            )));
        }
        Ok(RankingMatrix(entries))
    }

    pub fn as_array(&self) -> &Array2<u32> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<u32> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.0[[i, j]]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }
}

/// Ranking matrices for each relation slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankingTensor(Vec<RankingMatrix>);

impl RankingTensor {
    pub fn new(slices: Vec<RankingMatrix>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(KgError::InvalidRanking("tensor has no slices".into()));
        };
        let (n, m) = first.dim();
        if n != m || slices.iter().any(|s| s.dim() != (n, m)) {
            return Err(KgError::InvalidRanking(
                "slices must be square and of equal size".into(),
            ));
        }
        Ok(RankingTensor(slices))
    }

    /// Validates every slice of a raw K×N×N array.
    pub fn from_array(entries: &Array3<u32>) -> Result<Self> {
        let slices = entries
            .axis_iter(Axis(0))
            .map(|s| RankingMatrix::new(s.to_owned()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(slices)
    }

    pub fn slices(&self) -> &[RankingMatrix] {
        &self.0
    }

    pub fn num_slices(&self) -> usize {
        self.0.len()
    }

    pub fn num_entities(&self) -> usize {
        self.0[0].dim().0
    }
}

/// π(S): dense rank with rank 1 at the largest score.
pub fn dense_rank(scores: ArrayView2<'_, f64>) -> Result<RankingMatrix> {
    let (rows, cols) = scores.dim();
    let mut cells: Vec<(f64, usize)> = Vec::with_capacity(rows * cols);
    for ((i, j), &v) in scores.indexed_iter() {
        if v.is_nan() {
            return Err(KgError::NaN { row: i, col: j });
        }
        cells.push((v, i * cols + j));
    }
    // descending; total_cmp separates -0.0 from 0.0, so compare with == below
    cells.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut ranks = Array2::<u32>::zeros((rows, cols));
    let mut rank = 0u32;
    let mut prev: Option<f64> = None;
    for (v, flat) in cells {
        if prev != Some(v) {
            rank += 1;
            prev = Some(v);
        }
        ranks[[flat / cols, flat % cols]] = rank;
    }
    Ok(RankingMatrix(ranks))
}

/// Slice-wise dense rank of a K×N×N tensor.
pub fn dense_rank_tensor(scores: &ScoreTensor) -> Result<RankingTensor> {
    let slices = scores
        .axis_iter(Axis(0))
        .map(dense_rank)
        .collect::<Result<Vec<_>>>()?;
    RankingTensor::new(slices)
}

/// 1 iff `x >= tau`.
pub fn round_tau(x: f64, tau: f64) -> u8 {
    u8::from(x >= tau)
}

/// Element-wise [`round_tau`].
pub fn round_matrix(scores: ArrayView2<'_, f64>, tau: f64) -> Array2<u8> {
    scores.mapv(|x| round_tau(x, tau))
}

/// Whether every 1-cell of `b` outscores every 0-cell under `scores`.
///
/// Evaluated as min over 1-cells > max over 0-cells, which is equivalent to
/// strict rank separation under π.
pub fn is_consistent(scores: ArrayView2<'_, f64>, b: ArrayView2<'_, u8>) -> Result<bool> {
    if scores.dim() != b.dim() {
        return Err(KgError::Shape(format!(
            "scores {:?} vs boolean matrix {:?}",
            scores.dim(),
            b.dim()
        )));
    }
    let mut min_one = f64::INFINITY;
    let mut max_zero = f64::NEG_INFINITY;
    let (mut ones, mut zeros) = (0usize, 0usize);
    for (&s, &bit) in scores.iter().zip(b.iter()) {
        if bit != 0 {
            ones += 1;
            min_one = min_one.min(s);
        } else {
            zeros += 1;
            max_zero = max_zero.max(s);
        }
    }
    Ok(ones == 0 || zeros == 0 || min_one > max_zero)
}
