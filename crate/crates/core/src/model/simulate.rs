use nalgebra::DMatrix;

use super::dataset::{Level, OrdinalDataset};
use super::params::{LatentMatrix, MvopParams};
use crate::error::{MvopError, Result};
use crate::linalg;
use crate::rng::Rng;
use crate::stats::std_normal;

/// Latent draws `z_i = beta x_i + L e_i` with `L L^T = Sigma`.
pub fn simulate_latent(params: &MvopParams, covariates: &DMatrix<f64>, rng: &mut Rng) -> Result<LatentMatrix> {
    if covariates.ncols() != params.n_covariates() {
        return Err(MvopError::domain("covariates do not match beta"));
    }
    let j = params.n_items();
    let n = covariates.nrows();
    let l = linalg::cholesky(params.sigma(), "sigma")?.l();
    let beta = params.beta();
    let mut z = Vec::with_capacity(n * j);
    let mut e = vec![0.0; j];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = std_normal(rng);
        }
        for a in 0..j {
            let mut s = 0.0;
            for c in 0..covariates.ncols() {
                s += beta[(a, c)] * covariates[(i, c)];
            }
            for b in 0..=a {
                s += l[(a, b)] * e[b];
            }
            z.push(s);
        }
    }
    LatentMatrix::new(n, j, z)
}

/// A complete dataset drawn from the model.
pub fn simulate_dataset(
    params: &MvopParams,
    item_names: Vec<String>,
    covariate_names: Vec<String>,
    covariates: DMatrix<f64>,
    rng: &mut Rng,
) -> Result<OrdinalDataset> {
    let z = simulate_latent(params, &covariates, rng)?;
    let j = params.n_items();
    let responses = (0..z.n_units() * j)
        .map(|k| Some(params.encode_unchecked(z.values()[k], k % j)))
        .collect();
    let levels: Vec<Level> = (0..j).map(|a| params.levels(a)).collect();
    OrdinalDataset::new(item_names, levels, responses, covariate_names, covariates)
}
