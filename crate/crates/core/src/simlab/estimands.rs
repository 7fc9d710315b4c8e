use crate::error::{MvopError, Result};
use crate::model::{Level, ResponseMatrix};
use crate::stats;

/// Mean over units of the total score across all items of `y`.
pub fn estimand_q1(y: &ResponseMatrix) -> f64 {
    let all: Vec<usize> = (0..y.n_items()).collect();
    stats::mean(&y.totals(&all))
}

/// Q1 with its complete-data variance `s^2 / n`.
pub fn q1_with_variance(y: &ResponseMatrix) -> (f64, f64) {
    let all: Vec<usize> = (0..y.n_items()).collect();
    let t = y.totals(&all);
    let n = t.len() as f64;
    (stats::mean(&t), stats::sample_variance(&t) / n)
}

/// Cross-tabulation of two ordinal columns.
fn crosstab(a: &[Level], b: &[Level]) -> (Vec<Vec<f64>>, usize, usize) {
    let r = a.iter().copied().max().unwrap_or(1) as usize;
    let c = b.iter().copied().max().unwrap_or(1) as usize;
    let mut t = vec![vec![0.0; c]; r];
    for (&x, &y) in a.iter().zip(b) {
        t[x as usize - 1][y as usize - 1] += 1.0;
    }
    (t, r, c)
}

/// Goodman-Kruskal gamma with its asymptotic standard error (ASE1). Returns
/// `None` when there are no untied pairs.
pub fn gamma_with_ase(a: &[Level], b: &[Level]) -> Option<(f64, f64)> {
    let (t, r, c) = crosstab(a, b);
    // Prefix sums make the per-cell concordant/discordant counts O(rc).
    let mut cum = vec![vec![0.0; c + 1]; r + 1];
    for i in 0..r {
        for j in 0..c {
            cum[i + 1][j + 1] = t[i][j] + cum[i][j + 1] + cum[i + 1][j] - cum[i][j];
        }
    }
    let rect = |i0: usize, i1: usize, j0: usize, j1: usize| -> f64 {
        if i0 >= i1 || j0 >= j1 {
            0.0
        } else {
            cum[i1][j1] - cum[i0][j1] - cum[i1][j0] + cum[i0][j0]
        }
    };
    let mut conc = vec![vec![0.0; c]; r];
    let mut disc = vec![vec![0.0; c]; r];
    let (mut p, mut q) = (0.0, 0.0);
    for i in 0..r {
        for j in 0..c {
            conc[i][j] = rect(0, i, 0, j) + rect(i + 1, r, j + 1, c);
            disc[i][j] = rect(i + 1, r, 0, j) + rect(0, i, j + 1, c);
            p += t[i][j] * conc[i][j];
            q += t[i][j] * disc[i][j];
        }
    }
    if p + q == 0.0 {
        return None;
    }
    let g = (p - q) / (p + q);
    let mut s = 0.0;
    for i in 0..r {
        for j in 0..c {
            s += t[i][j] * (q * conc[i][j] - p * disc[i][j]).powi(2);
        }
    }
    let ase = 2.0 / (p + q).powi(2) * s.sqrt();
    Some((g, ase))
}

pub fn goodman_kruskal_gamma(a: &[Level], b: &[Level]) -> Option<f64> {
    gamma_with_ase(a, b).map(|(g, _)| g)
}

/// J x J matrix of pairwise gamma coefficients; `NaN` marks pairs without
/// untied pairs.
pub fn estimand_q2(y: &ResponseMatrix) -> Vec<Vec<f64>> {
    let cols: Vec<Vec<Level>> = (0..y.n_items()).map(|j| y.column(j)).collect();
    let j = cols.len();
    let mut g = vec![vec![f64::NAN; j]; j];
    for a in 0..j {
        for b in a..j {
            let v = goodman_kruskal_gamma(&cols[a], &cols[b]).unwrap_or(f64::NAN);
            g[a][b] = v;
            g[b][a] = v;
        }
    }
    g
}

/// Upper-triangle gamma estimates with ASE1^2 variances, pair order
/// (0,1), (0,2), ..., (J-2,J-1).
pub fn q2_pairs_with_variance(y: &ResponseMatrix) -> Vec<(usize, usize, f64, f64)> {
    let cols: Vec<Vec<Level>> = (0..y.n_items()).map(|j| y.column(j)).collect();
    let mut out = Vec::new();
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            let (g, ase) = gamma_with_ase(&cols[a], &cols[b]).unwrap_or((f64::NAN, f64::NAN));
            out.push((a, b, g, ase * ase));
        }
    }
    out
}

/// `(hi - lo) + (2 / alpha) * dist(Q, [lo, hi])`.
pub fn interval_score(lo: f64, hi: f64, q: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || lo > hi {
        return Err(MvopError::domain("interval score needs lo <= hi and alpha in (0, 1)"));
    }
    let miss = if q < lo {
        lo - q
    } else if q > hi {
        q - hi
    } else {
        0.0
    };
    Ok((hi - lo) + 2.0 / alpha * miss)
}
