//! Small dense helpers shared by the other modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `max |Φᵀ Φ − I|` over entries.
pub fn gram_residual(phi: &DMatrix<f64>) -> f64 {
    let k = phi.ncols();
    max_abs(&(phi.transpose() * phi - DMatrix::identity(k, k)))
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // trace(AB) without forming AB
    assert_eq!(a.ncols(), b.nrows());
    assert_eq!(a.nrows(), b.ncols());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Thin orthonormal factor of a tall matrix, with the sign convention
/// `diag(R) ≥ 0` so that an almost-orthonormal input maps to a nearby output.
pub fn thin_orthonormal(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = m.shape();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("cannot orthonormalize a {n}x{k} matrix")));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let scale = max_abs(m).max(f64::MIN_POSITIVE);
    for j in 0..k {
        let rjj = r[(j, j)];
        if rjj.abs() <= 1e-12 * scale {
            return Err(Error::RankDeficient(format!(
                "column {j} is linearly dependent on the previous ones"
            )));
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Orthogonal projector `Φ Φᵀ`.
pub fn projector(phi: &DMatrix<f64>) -> DMatrix<f64> {
    phi * phi.transpose()
}

pub fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thin_orthonormal_keeps_orthonormal_input() {
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let out = thin_orthonormal(&q).unwrap();
        assert!(max_abs(&(out - q)) < 1e-15);
    }

    #[test]
    fn thin_orthonormal_rejects_dependent_columns() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(thin_orthonormal(&m), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn trace_of_product_matches_dense() {
        let a = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 1.0);
        let b = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        assert!((trace_of_product(&a, &b) - (&a * &b).trace()).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
