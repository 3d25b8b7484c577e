//! Rank-revealing solves for the normal equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance on |R_ii| / |R_00| below which a column counts as
/// linearly dependent.
pub const RANK_TOL: f64 = 1e-12;

/// Solves `a x = b` for a symmetric matrix via column-pivoted QR,
/// failing with the names of dependent columns when `a` is rank deficient.
pub fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, names: &[String], what: &str) -> Result<DVector<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite entries in {what}")));
    }
    let qr = a.clone().col_piv_qr();
    check_rank(a, &qr, names, what)?;
    qr.solve(b).ok_or_else(|| singular(what, n, n, Vec::new()))
}

/// Inverse of a symmetric positive definite matrix, with the same rank check.
pub fn invert_checked(a: &DMatrix<f64>, names: &[String], what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite entries in {what}")));
    }
    let qr = a.clone().col_piv_qr();
    check_rank(a, &qr, names, what)?;
    let inv = qr
        .try_inverse()
        .ok_or_else(|| singular(what, n, n, Vec::new()))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

fn numerical_rank(r: &DMatrix<f64>) -> usize {
    let n = r.ncols().min(r.nrows());
    if n == 0 {
        return 0;
    }
    let d0 = r[(0, 0)].abs();
    (0..n).take_while(|&i| d0 > 0.0 && r[(i, i)].abs() > RANK_TOL * d0).count()
}

/// Columns that add nothing to the span of the columns before them.
fn dependent_columns(a: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..a.ncols() {
        let mut idx = kept.clone();
        idx.push(j);
        let sub = a.select_rows(&idx).select_columns(&idx);
        if numerical_rank(&sub.col_piv_qr().r()) == idx.len() {
            kept.push(j);
        } else {
            dependent.push(j);
        }
    }
    dependent
}

fn check_rank(
    a: &DMatrix<f64>,
    qr: &nalgebra::linalg::ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    names: &[String],
    what: &str,
) -> Result<()> {
    let n = a.ncols();
    let rank = numerical_rank(&qr.r());
    if rank == n {
        return Ok(());
    }
    let dependent = dependent_columns(a)
        .into_iter()
        .map(|j| names.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1)))
        .collect();
    Err(singular(what, rank, n, dependent))
}

fn singular(what: &str, rank: usize, dim: usize, dependent: Vec<String>) -> Error {
    Error::Singular {
        what: what.to_string(),
        rank,
        dim,
        dependent,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_checked(&a, &b, &[], "test").unwrap();
        assert!((&a * &x - &b).norm() < 1e-14);
    }

    #[test]
    fn reports_dependent_column() {
        // third column is the sum of the first two
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let xtx = x.transpose() * &x;
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        match invert_checked(&xtx, &names, "X'WX") {
            Err(Error::Singular { rank, dim, dependent, .. }) => {
                assert_eq!((rank, dim), (2, 3));
                assert_eq!(dependent.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }
}
