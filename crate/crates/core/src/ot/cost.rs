use crate::error::{Error, Result};

use super::matrix::{CostMatrix, EmbeddingMatrix, Matrix};

/// Rows with a norm at or below this are rejected.
pub const MIN_ROW_NORM: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `c_ij = 1 - cos(v_i, t_j)`, clamped to `[0, 2]`.
pub fn cosine_cost_matrix(sources: &EmbeddingMatrix, targets: &EmbeddingMatrix) -> Result<CostMatrix> {
    if sources.dim() != targets.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch: sources have dim {}, targets have dim {}",
            sources.dim(),
            targets.dim()
        )));
    }
    let src_norms = row_norms(sources, "source")?;
    let tgt_norms = row_norms(targets, "target")?;

    let mut cost = Matrix::zeros(sources.count(), targets.count());
    for (i, ni) in src_norms.iter().enumerate() {
        for (j, nj) in tgt_norms.iter().enumerate() {
            let cos = dot(sources.row(i), targets.row(j)) / (ni * nj);
            cost.set(i, j, (1.0 - cos).clamp(0.0, 2.0));
        }
    }
    CostMatrix::new(cost)
}

fn row_norms(m: &EmbeddingMatrix, side: &str) -> Result<Vec<f64>> {
    (0..m.count())
        .map(|i| {
            let n = norm(m.row(i));
            if n > MIN_ROW_NORM {
                Ok(n)
            } else {
                Err(Error::DegenerateInput(format!(
                    "{side} row {i} has zero norm"
                )))
            }
        })
        .collect()
}
