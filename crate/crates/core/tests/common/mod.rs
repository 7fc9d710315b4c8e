#![allow(dead_code)]

use mvop_core::model::{simulate_dataset, IdentificationMode, MvopParams, OrdinalDataset};
use mvop_core::rng::rng_from_seed;
use mvop_core::stats::std_normal;
use nalgebra::DMatrix;

pub fn design(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { 0.0 }).map_with_location(|_, c, v| {
        if c == 0 {
            v
        } else {
            std_normal(&mut rng)
        }
    })
}

pub fn three_item_truth() -> MvopParams {
    let d = [0.4, 0.5, 0.45];
    let r = [[1.0, 0.5, 0.3], [0.5, 1.0, 0.4], [0.3, 0.4, 1.0]];
    let sigma = DMatrix::from_fn(3, 3, |a, b| d[a] * d[b] * r[a][b]);
    let beta = DMatrix::from_row_slice(3, 2, &[0.5, 0.3, 0.4, -0.2, 0.6, 0.1]);
    MvopParams::new(
        IdentificationMode::Threshold,
        vec![vec![0.0, 0.45, 1.0], vec![0.0, 0.3, 0.7, 1.0], vec![0.0, 0.55, 1.0]],
        beta,
        sigma,
    )
    .unwrap()
}

pub fn simulate(params: &MvopParams, x: DMatrix<f64>, seed: u64) -> OrdinalDataset {
    let j = params.n_items();
    let names = (0..j).map(|a| format!("y{}", a + 1)).collect();
    let cov_names = (0..x.ncols())
        .map(|c| {
            if c == 0 {
                "(intercept)".to_string()
            } else {
                format!("x{c}")
            }
        })
        .collect();
    simulate_dataset(params, names, cov_names, x, &mut rng_from_seed(seed)).unwrap()
}

pub fn correlation(sigma: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    sigma[(a, b)] / (sigma[(a, a)] * sigma[(b, b)]).sqrt()
}
