//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{MvopError, Result};

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MvopError::numerical(format!("{what} has non-finite entries")));
    }
    m.clone().cholesky().ok_or_else(|| {
        MvopError::numerical(format!(
            "{what} is not positive definite (condition number {:.3e})",
            condition_number(m)
        ))
    })
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Columns of a Gram matrix that are (numerically) linear combinations of
/// earlier columns, found by an incremental Cholesky pass.
pub fn dependent_columns(gram: &DMatrix<f64>) -> Vec<usize> {
    let p = gram.nrows();
    let mut l = DMatrix::<f64>::zeros(p, p);
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for c in 0..p {
        let mut row = vec![0.0; kept.len()];
        for (a, &ka) in kept.iter().enumerate() {
            let mut s = gram[(c, ka)];
            for b in 0..a {
                s -= row[b] * l[(a, b)];
            }
            row[a] = s / l[(a, a)];
        }
        let d = gram[(c, c)] - row.iter().map(|v| v * v).sum::<f64>();
        if d <= 1e-10 * gram[(c, c)].abs().max(1e-300) {
            dependent.push(c);
            continue;
        }
        let idx = kept.len();
        for (b, v) in row.iter().enumerate() {
            l[(idx, b)] = *v;
        }
        l[(idx, idx)] = d.sqrt();
        kept.push(c);
    }
    dependent
}
