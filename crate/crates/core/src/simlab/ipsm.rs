use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{MvopError, Result};
use crate::model::{Level, OrdinalDataset, ResponseMatrix};
use crate::rng::{derive_seed, rng_from_seed};

use super::logistic::{fit_logistic, missingness_predictors};
use super::mechanism::logistic;

/// Position in `pool` of the donor nearest to `score`; ties go to the donor
/// with the lowest `rank`.
pub fn nearest_donor(score: f64, pool_scores: &[f64], pool_ranks: &[usize]) -> Option<usize> {
    let mut best: Option<(f64, usize, usize)> = None;
    for (pos, (&s, &r)) in pool_scores.iter().zip(pool_ranks).enumerate() {
        let d = (s - score).abs();
        let better = match best {
            None => true,
            Some((bd, br, _)) => d < bd || (d == bd && r < br),
        };
        if better {
            best = Some((d, r, pos));
        }
    }
    best.map(|(_, _, pos)| pos)
}

/// Propensity-score matching hot deck. Rows with every target item missing
/// are recipients and rows with every target item observed are donors.
/// Each imputation draws an approximate Bayesian bootstrap of the donors,
/// refits the logistic propensity model on recipients plus that pool, and
/// copies the target vector of each recipient's nearest pooled donor.
pub fn ipsm_impute(
    data: &OrdinalDataset,
    anchor_items: &[usize],
    target_items: &[usize],
    covariates: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<OrdinalDataset>> {
    if k == 0 {
        return Err(MvopError::domain("at least one imputation is required"));
    }
    let n = data.n_units();
    let mut donors = Vec::new();
    let mut recipients = Vec::new();
    for i in 0..n {
        let miss = target_items.iter().filter(|&&j| data.is_missing(i, j)).count();
        if anchor_items.iter().any(|&j| data.is_missing(i, j)) {
            return Err(MvopError::domain(format!("unit {i} has a missing anchor item")));
        }
        if miss == 0 {
            donors.push(i);
        } else if miss == target_items.len() {
            recipients.push(i);
        } else {
            return Err(MvopError::domain(format!(
                "unit {i} has partially observed target items"
            )));
        }
    }
    if donors.is_empty() {
        return Err(MvopError::domain("no complete donors for propensity matching"));
    }
    let (w, names) = missingness_predictors(data, anchor_items, covariates);
    let j_all = data.n_items();
    (0..k)
        .map(|m| {
            let mut rng = rng_from_seed(derive_seed(seed, &[m as u64]));
            let pool: Vec<usize> = (0..donors.len())
                .map(|_| donors[rng.random_range(0..donors.len())])
                .collect();
            let mut ranks: Vec<usize> = (0..pool.len()).collect();
            ranks.shuffle(&mut rng);
            let mut rows = Vec::with_capacity(pool.len() + recipients.len());
            let mut y = Vec::with_capacity(rows.capacity());
            for &i in &pool {
                rows.push(w[i].clone());
                y.push(false);
            }
            for &i in &recipients {
                rows.push(w[i].clone());
                y.push(true);
            }
            let mut completed = data.responses().to_vec();
            if !recipients.is_empty() {
                let fit = fit_logistic(&rows, &y, &names)?;
                let score = |i: usize| {
                    logistic(fit.intercept() + w[i].iter().zip(fit.slopes()).map(|(a, b)| a * b).sum::<f64>())
                };
                let pool_scores: Vec<f64> = pool.iter().map(|&i| score(i)).collect();
                for &r in &recipients {
                    let pos = nearest_donor(score(r), &pool_scores, &ranks).expect("pool is non-empty");
                    let donor = pool[pos];
                    for &j in target_items {
                        completed[r * j_all + j] = data.response(donor, j);
                    }
                }
            }
            let codes: Vec<Level> = completed.iter().map(|c| c.expect("all cells filled")).collect();
            data.with_completed(&ResponseMatrix::new(n, j_all, codes))
        })
        .collect()
}
