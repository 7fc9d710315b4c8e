//! Posterior predictive checks and train/test holdout validation.

use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::da::{run_da, DaConfig, PosteriorDraws};
use crate::error::{MvopError, Result};
use crate::mcem::impute_from_params;
use crate::model::{simulate_dataset, Level, OrdinalDataset, ResponseMatrix};
use crate::rng::{derive_seed, rng_from_seed};
use crate::simlab::{estimand_q1, goodman_kruskal_gamma};
use crate::stats;
use crate::tmvn::TmvnMethod;

pub const MIN_PPC_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// Mean total score over all items.
    T1,
    /// Proportion of each response level of each item.
    T2,
    /// Pairwise Goodman-Kruskal gamma.
    T3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub statistic: Statistic,
    /// Component label, e.g. `T2[y1=3]` or `T3[y1,y2]`.
    pub id: String,
    /// `(T_D, T_R)` per retained draw, in draw order.
    pub pairs: Vec<(f64, f64)>,
    pub ppp: f64,
}

/// Two-sided `ppp = (2/S) min(#{T_D > T_R}, #{T_D < T_R})`. Undefined pairs
/// (`NaN`) still count towards `S`.
pub fn two_sided_ppp(pairs: &[(f64, f64)]) -> f64 {
    let s = pairs.len() as f64;
    let above = pairs.iter().filter(|(d, r)| d > r).count();
    let below = pairs.iter().filter(|(d, r)| d < r).count();
    2.0 * above.min(below) as f64 / s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcSummary {
    pub statistic: Statistic,
    pub count: usize,
    pub min: f64,
    pub q05: f64,
    pub median: f64,
    pub below_005: usize,
    /// Counts over ten equal-width bins on `[0, 1]`.
    pub histogram: [usize; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub draws: usize,
    pub results: Vec<PpcResult>,
}

impl PpcReport {
    pub fn of(&self, statistic: Statistic) -> impl Iterator<Item = &PpcResult> {
        self.results.iter().filter(move |r| r.statistic == statistic)
    }

    pub fn summary(&self, statistic: Statistic) -> Option<PpcSummary> {
        let mut v: Vec<f64> = self.of(statistic).map(|r| r.ppp).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        let mut histogram = [0usize; 10];
        for &x in &v {
            histogram[((x * 10.0) as usize).min(9)] += 1;
        }
        Some(PpcSummary {
            statistic,
            count: v.len(),
            min: v[0],
            q05: q(0.05),
            median: q(0.5),
            below_005: v.iter().filter(|&&x| x < 0.05).count(),
            histogram,
        })
    }

    /// `statistic,id,ppp` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["statistic", "id", "ppp"])?;
        for r in &self.results {
            w.write_record([format!("{:?}", r.statistic), r.id.clone(), r.ppp.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long format `id,draw,t_d,t_r`.
    pub fn write_pairs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "draw", "t_d", "t_r"])?;
        for r in &self.results {
            for (s, (d, rep)) in r.pairs.iter().enumerate() {
                w.write_record([r.id.clone(), s.to_string(), d.to_string(), rep.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn statistic_values(y: &ResponseMatrix, levels: &[Level], which: Statistic) -> Vec<f64> {
    let n = y.n_units() as f64;
    match which {
        Statistic::T1 => vec![estimand_q1(y)],
        Statistic::T2 => {
            let mut out = Vec::new();
            for (j, &c) in levels.iter().enumerate() {
                let mut counts = vec![0usize; c as usize];
                for i in 0..y.n_units() {
                    counts[y.get(i, j) as usize - 1] += 1;
                }
                out.extend(counts.iter().map(|&k| k as f64 / n));
            }
            out
        }
        Statistic::T3 => {
            let cols: Vec<Vec<Level>> = (0..y.n_items()).map(|j| y.column(j)).collect();
            let mut out = Vec::new();
            for a in 0..cols.len() {
                for b in a + 1..cols.len() {
                    out.push(goodman_kruskal_gamma(&cols[a], &cols[b]).unwrap_or(f64::NAN));
                }
            }
            out
        }
    }
}

fn statistic_ids(data: &OrdinalDataset, which: Statistic) -> Vec<String> {
    let names = data.item_names();
    match which {
        Statistic::T1 => vec!["T1".into()],
        Statistic::T2 => names
            .iter()
            .zip(data.levels())
            .flat_map(|(n, &c)| (1..=c).map(move |l| format!("T2[{n}={l}]")))
            .collect(),
        Statistic::T3 => {
            let mut out = Vec::new();
            for a in 0..names.len() {
                for b in a + 1..names.len() {
                    out.push(format!("T3[{},{}]", names[a], names[b]));
                }
            }
            out
        }
    }
}

/// Compare completed datasets `D_s` (the draws' imputations) with replicated
/// datasets `R_s` in which every cell is regenerated from the draw's
/// parameters.
pub fn ppc(data: &OrdinalDataset, draws: &PosteriorDraws, statistics: &[Statistic], seed: u64) -> Result<PpcReport> {
    let s = draws.imputations.len();
    if s < MIN_PPC_DRAWS {
        return Err(MvopError::domain(format!(
            "posterior predictive checks need at least {MIN_PPC_DRAWS} draws, got {s}"
        )));
    }
    if draws.imputation_params.len() != s {
        return Err(MvopError::domain("draws lack the parameters of their imputations"));
    }
    let replicated: Vec<ResponseMatrix> = (0..s)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, &[k as u64]));
            simulate_dataset(
                &draws.imputation_params[k],
                data.item_names().to_vec(),
                data.covariate_names().to_vec(),
                data.covariates().clone(),
                &mut rng,
            )?
            .to_complete()
        })
        .collect::<Result<_>>()?;
    let mut results = Vec::new();
    for &which in statistics {
        let ids = statistic_ids(data, which);
        let per_draw: Vec<(Vec<f64>, Vec<f64>)> = (0..s)
            .into_par_iter()
            .map(|k| {
                (
                    statistic_values(&draws.imputations[k], data.levels(), which),
                    statistic_values(&replicated[k], data.levels(), which),
                )
            })
            .collect();
        for (c, id) in ids.into_iter().enumerate() {
            let pairs: Vec<(f64, f64)> = per_draw.iter().map(|(d, r)| (d[c], r[c])).collect();
            let ppp = two_sided_ppp(&pairs);
            results.push(PpcResult {
                statistic: which,
                id,
                pairs,
                ppp,
            });
        }
    }
    Ok(PpcReport { draws: s, results })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoldoutConfig {
    pub train_fraction: f64,
    pub replicates: usize,
    /// Items masked and predicted in the test sample.
    pub target_items: Vec<usize>,
    /// Fitting settings; `imputations` predictions are made per replicate.
    pub da: DaConfig,
    pub impute_sweeps: usize,
    pub sampler: TmvnMethod,
    pub seed: u64,
}

impl Default for HoldoutConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            replicates: 10,
            target_items: Vec::new(),
            da: DaConfig {
                imputations: 10,
                ..DaConfig::default()
            },
            impute_sweeps: 50,
            sampler: TmvnMethod::Slice,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaComparison {
    pub pair: (usize, usize),
    pub observed: f64,
    pub predicted: f64,
    pub predicted_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReplicate {
    pub replicate: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub observed_q1: f64,
    /// Mean over predictions of the test-sample mean total score.
    pub predicted_q1: f64,
    /// Predictive SD of that mean, `sqrt((1 + 1/K) var_k)`.
    pub predicted_q1_se: f64,
    pub delta: f64,
    pub gamma: Vec<GammaComparison>,
}

/// Random train/test split of the rows; the test rows are the first
/// `n - n_train` of a seeded permutation.
pub fn holdout_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MvopError::domain("train fraction must lie strictly between 0 and 1"));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(MvopError::domain("split leaves an empty train or test sample"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let (test, train) = idx.split_at(n - n_train);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

fn subset(y: &ResponseMatrix, items: &[usize]) -> ResponseMatrix {
    let codes = (0..y.n_units())
        .flat_map(|i| items.iter().map(move |&j| y.get(i, j)))
        .collect();
    ResponseMatrix::new(y.n_units(), items.len(), codes)
}

/// Fit the model on a training split, predict the target items of the test
/// split from its other items, and compare test-sample statistics.
pub fn holdout_check(data: &OrdinalDataset, config: &HoldoutConfig) -> Result<Vec<HoldoutReplicate>> {
    if data.has_missing() {
        return Err(MvopError::domain("holdout validation needs fully observed data"));
    }
    if config.target_items.is_empty() || config.target_items.iter().any(|&j| j >= data.n_items()) {
        return Err(MvopError::domain(
            "target items must be a non-empty set of valid item indices",
        ));
    }
    if config.da.imputations < 2 {
        return Err(MvopError::domain(
            "holdout validation needs at least two predictions per replicate",
        ));
    }
    holdout_split(data.n_units(), config.train_fraction, config.seed)?;
    let targets = &config.target_items;
    (0..config.replicates)
        .map(|r| {
            let (train, test) = holdout_split(
                data.n_units(),
                config.train_fraction,
                derive_seed(config.seed, &[0, r as u64]),
            )?;
            let train_data = data.select_rows(&train);
            let test_data = data.select_rows(&test);
            let observed = subset(&test_data.to_complete()?, targets);
            for (t, &j) in targets.iter().enumerate() {
                let present: std::collections::BTreeSet<Level> = observed.column(t).into_iter().collect();
                if present.len() < data.levels()[j] as usize {
                    warn!(
                        "holdout replicate {r}: test sample lacks some levels of {}",
                        data.item_names()[j]
                    );
                }
            }
            let da = DaConfig {
                chains: 1,
                seed: derive_seed(config.seed, &[1, r as u64]),
                ..config.da
            };
            let fit = run_da(&train_data, &da)?.swap_remove(0);
            let masked = test_data.with_rows_masked(targets, &vec![true; test.len()]);
            let predictions: Vec<ResponseMatrix> = fit
                .imputation_params
                .par_iter()
                .enumerate()
                .map(|(k, params)| {
                    let seed = derive_seed(config.seed, &[2, r as u64, k as u64]);
                    impute_from_params(&masked, params, config.impute_sweeps, config.sampler, seed)
                        .map(|y| subset(&y, targets))
                })
                .collect::<Result<_>>()?;
            let kf = predictions.len() as f64;
            let pq: Vec<f64> = predictions.iter().map(estimand_q1).collect();
            let observed_q1 = estimand_q1(&observed);
            let predicted_q1 = stats::mean(&pq);
            let se = ((1.0 + 1.0 / kf) * stats::sample_variance(&pq)).sqrt();
            let mut gamma = Vec::new();
            for a in 0..targets.len() {
                for b in a + 1..targets.len() {
                    let g = |y: &ResponseMatrix| goodman_kruskal_gamma(&y.column(a), &y.column(b)).unwrap_or(f64::NAN);
                    let pg: Vec<f64> = predictions.iter().map(g).collect();
                    gamma.push(GammaComparison {
                        pair: (targets[a], targets[b]),
                        observed: g(&observed),
                        predicted: stats::mean(&pg),
                        predicted_sd: stats::sample_variance(&pg).sqrt(),
                    });
                }
            }
            Ok(HoldoutReplicate {
                replicate: r,
                n_train: train.len(),
                n_test: test.len(),
                observed_q1,
                predicted_q1,
                predicted_q1_se: se,
                delta: observed_q1 - predicted_q1,
                gamma,
            })
        })
        .collect()
}
