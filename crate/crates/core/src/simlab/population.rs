use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{simulate_dataset, IdentificationMode, MvopParams, OrdinalDataset};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::std_normal;

pub const AGE_MEAN: f64 = 76.81;
pub const AGE_SD: f64 = 9.83;
pub const FEMALE_RATE: f64 = 0.531;
pub const WHITE_RATE: f64 = 0.792;
pub const MARRIED_RATE: f64 = 0.459;

pub const N_ANCHOR: usize = 5;
pub const N_TARGET: usize = 5;
pub const ANCHOR_LEVELS: u16 = 7;
pub const TARGET_LEVELS: u16 = 5;

/// Covariate columns: intercept, standardised age, female, white, married.
pub const COVARIATE_NAMES: [&str; 5] = ["intercept", "age_std", "female", "white", "married"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub size: usize,
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            size: 50_000,
            seed: 20_100,
        }
    }
}

/// Ground-truth threshold-mode MVOP over 5 anchor items (7 levels) and 5
/// target items (5 levels). A single latent functional-status factor loads
/// positively on the anchors and negatively on the targets (higher target
/// codes mean more dependence), every item has latent residual SD 1.12, and
/// older patients score lower on the anchors. Total latent SD is near 1.4
/// against the unit threshold span, so the `(J+2) I` inverse-Wishart scale
/// stays small next to the latent scatter.
pub fn population_truth() -> MvopParams {
    let j = N_ANCHOR + N_TARGET;
    let loadings = [0.93, 0.86, 0.80, 0.90, 0.83, -0.86, -0.93, -0.83, -0.90, -0.80];
    let resid_var = 1.12f64 * 1.12;
    let sigma = DMatrix::from_fn(j, j, |a, b| {
        loadings[a] * loadings[b] + if a == b { resid_var } else { 0.0 }
    });
    let anchor_beta = [0.50, -0.12, -0.04, 0.04, 0.06];
    let target_beta = [0.45, 0.12, 0.04, -0.04, -0.06];
    let beta = DMatrix::from_fn(j, COVARIATE_NAMES.len(), |a, c| {
        if a < N_ANCHOR {
            anchor_beta[c]
        } else {
            target_beta[c]
        }
    });
    let mut gamma = vec![vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]; N_ANCHOR];
    gamma.extend(std::iter::repeat_n(vec![0.0, 0.3, 0.65, 1.0], N_TARGET));
    MvopParams::new(IdentificationMode::Threshold, gamma, beta, sigma).expect("documented truth is valid")
}

/// Logistic coefficients generating the population's destination indicator
/// (1 = home health, target items unrecorded) from the five anchor scores,
/// standardised age and female; intercept first.
pub const POPULATION_MISSINGNESS: [f64; 8] = [-9.5, 0.45, 0.45, 0.45, 0.45, 0.45, -0.35, 0.15];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopulation {
    pub data: OrdinalDataset,
    pub age: Vec<f64>,
    pub truth: MvopParams,
    pub anchor_items: Vec<usize>,
    pub target_items: Vec<usize>,
    /// Covariate columns entering the missingness model (age, female).
    pub missingness_covariates: Vec<usize>,
    /// Population destination indicator from [`POPULATION_MISSINGNESS`].
    pub destination: Vec<bool>,
}

/// Draw a complete synthetic population from [`population_truth`].
pub fn synth_population(spec: &PopulationSpec) -> Result<SyntheticPopulation> {
    let n = spec.size;
    let mut rng = rng_from_seed(derive_seed(spec.seed, &[0]));
    let mut age = Vec::with_capacity(n);
    let mut x = DMatrix::<f64>::zeros(n, COVARIATE_NAMES.len());
    for i in 0..n {
        let a = AGE_MEAN + AGE_SD * std_normal(&mut rng);
        age.push(a);
        x[(i, 0)] = 1.0;
        x[(i, 1)] = (a - AGE_MEAN) / AGE_SD;
        x[(i, 2)] = f64::from(u8::from(rng.random::<f64>() < FEMALE_RATE));
        x[(i, 3)] = f64::from(u8::from(rng.random::<f64>() < WHITE_RATE));
        x[(i, 4)] = f64::from(u8::from(rng.random::<f64>() < MARRIED_RATE));
    }
    let truth = population_truth();
    let names: Vec<String> = (1..=N_ANCHOR)
        .map(|k| format!("fim{k}"))
        .chain((1..=N_TARGET).map(|k| format!("mds{k}")))
        .collect();
    let cov_names = COVARIATE_NAMES.iter().map(|s| s.to_string()).collect();
    let mut item_rng = rng_from_seed(derive_seed(spec.seed, &[1]));
    let data = simulate_dataset(&truth, names, cov_names, x, &mut item_rng)?;
    let anchor_items: Vec<usize> = (0..N_ANCHOR).collect();
    let target_items: Vec<usize> = (N_ANCHOR..N_ANCHOR + N_TARGET).collect();
    let mut m_rng = rng_from_seed(derive_seed(spec.seed, &[2]));
    let destination = (0..n)
        .map(|i| {
            let c = &POPULATION_MISSINGNESS;
            let mut eta = c[0] + c[6] * data.covariates()[(i, 1)] + c[7] * data.covariates()[(i, 2)];
            for (k, &j) in anchor_items.iter().enumerate() {
                eta += c[1 + k] * f64::from(data.response(i, j).expect("complete"));
            }
            m_rng.random::<f64>() < super::mechanism::logistic(eta)
        })
        .collect();
    Ok(SyntheticPopulation {
        data,
        age,
        truth,
        anchor_items,
        target_items,
        missingness_covariates: vec![1, 2],
        destination,
    })
}
