//! Small dense helpers shared by the geometric and projection code.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_RTOL: f64 = 1e-10;

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Numerical rank: singular values above `RANK_RTOL * sigma_max` (and above zero).
pub fn numeric_rank(m: &Matrix) -> usize {
    rank_of(&singular_values(m))
}

pub(crate) fn rank_of(sv: &[f64]) -> usize {
    let Some(&max) = sv.first() else { return 0 };
    if max <= 0.0 || !max.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_RTOL * max).count()
}

/// Stack row vectors into a matrix with `cols` columns.
pub fn rows_to_matrix(rows: &[Vector], cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), cols);
    for (i, r) in rows.iter().enumerate() {
        m.set_row(i, &r.transpose());
    }
    m
}

pub fn vec_from(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

/// Matrix from a row-major nested list; every row must have the same length.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Option<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Lexicographic comparison, used for deterministic vertex ordering.
pub fn lex_cmp(a: &Vector, b: &Vector) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_parallel_rows_is_one() {
        let m = matrix_from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(numeric_rank(&m), 1);
    }

    #[test]
    fn rank_of_zero_and_empty() {
        assert_eq!(numeric_rank(&Matrix::zeros(2, 3)), 0);
        assert_eq!(numeric_rank(&Matrix::zeros(0, 3)), 0);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matrix_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_none());
    }
}
