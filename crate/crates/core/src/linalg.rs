//! Small dense linear-algebra helpers shared by the EDMD and manifold code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative threshold on `|R_ii| / max |R_jj|` below which a column counts
/// as numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Thin QR factorisation `A = Q R` of an `m x n` matrix with `m >= n`.
///
/// The diagonal of `R` is made non-negative so the factors are unique for
/// full column rank inputs.
#[derive(Debug, Clone)]
pub struct ThinQr {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub fn thin_qr(a: &DMatrix<f64>) -> Result<ThinQr> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Dimension(format!(
            "thin QR needs rows >= cols, got {m}x{n}"
        )));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok(ThinQr { q, r })
}

/// Number of diagonal entries of an upper-triangular `r` above
/// `RANK_TOLERANCE * max |r_ii|`.
pub fn numerical_rank(r: &DMatrix<f64>) -> usize {
    let k = r.nrows().min(r.ncols());
    let max = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    (0..k)
        .filter(|&i| r[(i, i)].abs() > RANK_TOLERANCE * max)
        .count()
}

/// Max-abs entry of `a - I`.
pub fn identity_residual(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((a[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `blkdiag(I_s, u)`.
pub fn block_diag_identity(s: usize, u: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, r) = u.shape();
    let mut out = DMatrix::zeros(s + d, s + r);
    for i in 0..s {
        out[(i, i)] = 1.0;
    }
    out.view_mut((s, s), (d, r)).copy_from(u);
    out
}

/// Solves `L x = b` for lower-triangular `L`, column by column.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    l.solve_lower_triangular(b).ok_or(Error::Singular)
}

/// Solves `U x = b` for upper-triangular `U`.
pub fn solve_upper(u: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    u.solve_upper_triangular(b).ok_or(Error::Singular)
}

/// Median of a slice under IEEE total order; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_diagonal_is_nonnegative_and_reconstructs() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, -2.0, 3.0, 0.5, -1.0, 4.0, 2.0, 2.0]);
        let qr = thin_qr(&a).unwrap();
        assert!((0..2).all(|i| qr.r[(i, i)] >= 0.0));
        assert!(max_abs(&(&qr.q * &qr.r - &a)) < 1e-13);
        assert!(identity_residual(&(qr.q.transpose() * &qr.q)) < 1e-14);
    }

    #[test]
    fn rank_detects_dependent_column() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let qr = thin_qr(&a).unwrap();
        assert_eq!(numerical_rank(&qr.r), 1);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
