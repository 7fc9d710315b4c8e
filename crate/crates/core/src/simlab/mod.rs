//! Simulation laboratory: a synthetic stand-in population, missingness
//! mechanisms, estimands and scoring, the propensity-matching comparator
//! and the replication driver.

mod estimands;
mod ipsm;
mod logistic;
mod mechanism;
mod population;
mod replication;

pub use estimands::{
    estimand_q1, estimand_q2, gamma_with_ase, goodman_kruskal_gamma, interval_score, q1_with_variance,
    q2_pairs_with_variance,
};
pub use ipsm::{ipsm_impute, nearest_donor};
pub use logistic::{fit_logistic, fit_missingness_model, missingness_predictors, LogisticFit};
pub use mechanism::{
    boxcox_cdf, calibrate_intercept, cauchy_cdf, generate_missingness, logistic, LinkFamily, MissingnessMechanism,
};
pub use population::{
    population_truth, synth_population, PopulationSpec, SyntheticPopulation, AGE_MEAN, AGE_SD, ANCHOR_LEVELS,
    COVARIATE_NAMES, FEMALE_RATE, MARRIED_RATE, N_ANCHOR, N_TARGET, POPULATION_MISSINGNESS, TARGET_LEVELS, WHITE_RATE,
};
pub use replication::{
    coverage_flag_threshold, run_replications, Configuration, FailureRecord, FamilyName, Method, ReplicationReport,
    ReportRow, SimGrid, StudyPopulation,
};
