use std::collections::HashMap;

use nalgebra::DMatrix;

use super::dataset::OrdinalDataset;
use super::params::{LatentMatrix, MvopParams};
use crate::error::{MvopError, Result};
use crate::linalg;
use crate::rng::rng_from_seed;
use crate::stats::{normal_interval_prob, open_unit, truncnorm_std_icdf};

/// Complete-data log-likelihood of `(params)` given latent `z`:
/// `-(N/2) log|Sigma| - 1/2 tr(Sigma^-1 sum_i r_i r_i^T)`, plus
/// `-(N J / 2) log(2 pi)` when `include_constant` is set.
/// Returns `-inf` when an observed cell's latent value is outside its cell.
pub fn complete_data_loglik(
    data: &OrdinalDataset,
    z: &LatentMatrix,
    params: &MvopParams,
    include_constant: bool,
) -> Result<f64> {
    let n = data.n_units();
    let j = data.n_items();
    if z.n_units() != n || z.n_items() != j || params.n_items() != j {
        return Err(MvopError::validation("latent matrix does not match dataset"));
    }
    if !z.is_consistent(data, params) {
        return Ok(f64::NEG_INFINITY);
    }
    let chol = linalg::cholesky(params.sigma(), "sigma")?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mean = params.linear_predictor(data);
    let mut scatter = DMatrix::<f64>::zeros(j, j);
    for i in 0..n {
        for a in 0..j {
            let ra = z.get(i, a) - mean[i * j + a];
            for b in 0..j {
                scatter[(a, b)] += ra * (z.get(i, b) - mean[i * j + b]);
            }
        }
    }
    let solved = chol.solve(&scatter);
    let trace: f64 = (0..j).map(|a| solved[(a, a)]).sum();
    let mut ll = -0.5 * n as f64 * log_det - 0.5 * trace;
    if include_constant {
        ll -= 0.5 * (n * j) as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(ll)
}

/// Monte Carlo estimate of the observed-data log-likelihood with its
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McLoglik {
    pub value: f64,
    pub std_error: f64,
}

/// GHK estimate of the observed-data log-likelihood (cell probabilities
/// integrate out missing items exactly, so only observed coordinates enter).
/// Uses `draws / 2` antithetic pairs per unit; deterministic given `seed`.
pub fn observed_data_loglik_mc(
    data: &OrdinalDataset,
    params: &MvopParams,
    draws: usize,
    seed: u64,
) -> Result<McLoglik> {
    if draws < 100 {
        return Err(MvopError::domain(format!("GHK needs at least 100 draws, got {draws}")));
    }
    let n = data.n_units();
    let j = data.n_items();
    if params.n_items() != j {
        return Err(MvopError::validation("parameters do not match dataset"));
    }
    linalg::cholesky(params.sigma(), "sigma")?;
    let pairs = draws.div_ceil(2);
    let mean = params.linear_predictor(data);
    let mut rng = rng_from_seed(seed);
    let mut factors: HashMap<Vec<usize>, DMatrix<f64>> = HashMap::new();
    let mut total = 0.0;
    let mut var_total = 0.0;
    let mut u = vec![0.0; j];
    let mut e = vec![0.0; j];
    let mut lo = vec![0.0; j];
    let mut hi = vec![0.0; j];
    for i in 0..n {
        let obs: Vec<usize> = (0..j).filter(|&a| !data.is_missing(i, a)).collect();
        if obs.is_empty() {
            continue;
        }
        let m = obs.len();
        if !factors.contains_key(&obs) {
            let sub = params.sigma().select_rows(obs.iter()).select_columns(obs.iter());
            let l = linalg::cholesky(&sub, "observed sub-covariance")?.l();
            factors.insert(obs.clone(), l);
        }
        let l = &factors[&obs];
        for (k, &a) in obs.iter().enumerate() {
            let (c_lo, c_hi) = params.cell_unchecked(a, data.response(i, a).unwrap());
            lo[k] = c_lo - mean[i * j + a];
            hi[k] = c_hi - mean[i * j + a];
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..pairs {
            for uk in u.iter_mut().take(m) {
                *uk = open_unit(&mut rng);
            }
            let w1 = ghk_weight(l, &lo[..m], &hi[..m], &u[..m], &mut e, false);
            let w2 = ghk_weight(l, &lo[..m], &hi[..m], &u[..m], &mut e, true);
            let w = 0.5 * (w1 + w2);
            sum += w;
            sum_sq += w * w;
        }
        let p_hat = sum / pairs as f64;
        if p_hat <= 0.0 {
            return Ok(McLoglik {
                value: f64::NEG_INFINITY,
                std_error: f64::INFINITY,
            });
        }
        let var_w = (sum_sq / pairs as f64 - p_hat * p_hat).max(0.0) * pairs as f64 / (pairs as f64 - 1.0).max(1.0);
        total += p_hat.ln();
        var_total += var_w / pairs as f64 / (p_hat * p_hat);
    }
    Ok(McLoglik {
        value: total,
        std_error: var_total.sqrt(),
    })
}

fn ghk_weight(l: &DMatrix<f64>, lo: &[f64], hi: &[f64], u: &[f64], e: &mut [f64], antithetic: bool) -> f64 {
    let m = lo.len();
    let mut w = 1.0;
    for k in 0..m {
        let mut shift = 0.0;
        for q in 0..k {
            shift += l[(k, q)] * e[q];
        }
        let d = l[(k, k)];
        let a = (lo[k] - shift) / d;
        let b = (hi[k] - shift) / d;
        let p = normal_interval_prob(a, b);
        if p <= 0.0 {
            return 0.0;
        }
        w *= p;
        if k + 1 < m {
            let uk = if antithetic { 1.0 - u[k] } else { u[k] };
            e[k] = truncnorm_std_icdf(a, b, uk);
        }
    }
    w
}
