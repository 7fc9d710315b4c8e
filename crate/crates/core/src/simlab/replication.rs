use std::io::Write;

use log::{debug, info};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::da::{run_da, DaConfig};
use crate::error::{MvopError, Result};
use crate::mcem::{bootstrap_mi, McemConfig};
use crate::model::{IdentificationMode, Level, OrdinalDataset, ResponseMatrix};
use crate::nested::pool_single;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::norm_quantile;
use crate::tmvn::TmvnMethod;

use super::estimands::{interval_score, q1_with_variance, q2_pairs_with_variance};
use super::ipsm::ipsm_impute;
use super::logistic::{fit_missingness_model, missingness_predictors, LogisticFit};
use super::mechanism::{calibrate_intercept, generate_missingness, LinkFamily, MissingnessMechanism};
use super::population::{synth_population, PopulationSpec, SyntheticPopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    MvoptDa,
    MvopcDa,
    MvoptEm,
    MvopcEm,
    Ipsm,
    /// The sample before deletion, with its own complete-data interval.
    Complete,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::MvoptDa => "MVOPT-DA",
            Method::MvopcDa => "MVOPC-DA",
            Method::MvoptEm => "MVOPT-EM",
            Method::MvopcEm => "MVOPC-EM",
            Method::Ipsm => "IPSM",
            Method::Complete => "COMPLETE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Logistic,
    Cauchy,
    Boxcox,
}

/// Simulation grid. The MCMC and EM settings are templates: mode, seed and
/// imputation count are set per method and replicate by the driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimGrid {
    pub families: Vec<FamilyName>,
    /// Box-Cox shape values; each is crossed with the `boxcox` family.
    pub lambdas: Vec<f64>,
    pub p_mis: Vec<f64>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub sample_size: usize,
    pub imputations: usize,
    pub alpha: f64,
    pub da: DaConfig,
    pub mcem: McemConfig,
    pub population: PopulationSpec,
}

impl Default for SimGrid {
    fn default() -> Self {
        Self::desk()
    }
}

impl SimGrid {
    /// Desk scale: every mechanism and method, `R = 200`.
    pub fn desk() -> Self {
        Self {
            families: vec![FamilyName::Logistic, FamilyName::Cauchy, FamilyName::Boxcox],
            lambdas: vec![-0.3, 0.3],
            p_mis: vec![0.2, 0.4, 0.6],
            methods: vec![
                Method::MvoptDa,
                Method::MvopcDa,
                Method::MvoptEm,
                Method::MvopcEm,
                Method::Ipsm,
                Method::Complete,
            ],
            replicates: 200,
            seed: 1,
            sample_size: 1000,
            imputations: 10,
            alpha: 0.05,
            da: DaConfig {
                iterations: 3000,
                burn_in: Some(1000),
                thin: 10,
                sampler: TmvnMethod::Slice,
                ..DaConfig::default()
            },
            mcem: McemConfig {
                mc_draws: 50,
                max_iters: 150,
                loglik_tol: 1e-5,
                ghk_draws: 100,
                ..McemConfig::default()
            },
            population: PopulationSpec::default(),
        }
    }

    /// The full protocol with `R = 1000`.
    pub fn full() -> Self {
        Self {
            replicates: 1000,
            ..Self::desk()
        }
    }

    pub fn configurations(&self) -> Vec<Configuration> {
        let mut fams = Vec::new();
        for f in &self.families {
            match f {
                FamilyName::Logistic => fams.push(LinkFamily::Logistic),
                FamilyName::Cauchy => fams.push(LinkFamily::Cauchy),
                FamilyName::Boxcox => fams.extend(self.lambdas.iter().map(|&lambda| LinkFamily::Boxcox { lambda })),
            }
        }
        let mut out = Vec::new();
        for family in fams {
            for &p_mis in &self.p_mis {
                out.push(Configuration { family, p_mis });
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(MvopError::validation("replicates must be at least 1"));
        }
        if self.imputations < 2 {
            return Err(MvopError::validation(
                "at least two imputations are required for pooling",
            ));
        }
        if self.sample_size < 10 || self.sample_size > self.population.size {
            return Err(MvopError::validation(
                "sample_size must lie between 10 and the population size",
            ));
        }
        if let Some(p) = self.p_mis.iter().find(|p| !(**p >= 0.0 && **p < 1.0)) {
            return Err(MvopError::validation(format!("p_mis {p} outside [0, 1)")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MvopError::validation("alpha must lie in (0, 1)"));
        }
        if self.methods.is_empty() || self.configurations().is_empty() {
            return Err(MvopError::validation("grid has no methods or no configurations"));
        }
        for &l in &self.lambdas {
            if l.abs() > 1.0 {
                log::warn!("Box-Cox lambda {l} is outside the studied range [-1, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub family: LinkFamily,
    pub p_mis: f64,
}

impl Configuration {
    pub fn label(&self) -> String {
        format!("{}/p_mis={}", self.family.label(), self.p_mis)
    }
}

/// Coverage below this is flagged: `0.937` at `R = 1000`, widened by
/// the binomial standard error for smaller `R`.
pub fn coverage_flag_threshold(replicates: usize) -> f64 {
    0.95 - 0.013 * (1000.0 / replicates as f64).sqrt()
}

/// Aggregated metrics for one estimand under one method and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub configuration: String,
    pub method: String,
    pub estimand: String,
    pub truth: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub bias: f64,
    /// Mean pooled variance `T`.
    pub variance: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
    pub interval_score: f64,
    /// Mean difference from the same sample's complete-data estimate.
    pub bias_vs_complete: f64,
    /// Fraction of intervals covering the complete-data estimate.
    pub coverage_of_complete: f64,
    pub coverage_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub configuration: String,
    pub method: String,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub replicates: usize,
    /// Q1 rows, one per configuration and method.
    pub rows: Vec<ReportRow>,
    /// Q2 rows, one per configuration, method and item pair.
    pub q2_rows: Vec<ReportRow>,
    pub failures: Vec<FailureRecord>,
}

impl ReplicationReport {
    pub fn row(&self, configuration: &str, method: Method) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.configuration == configuration && r.method == method.label())
    }

    pub fn write_q1_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }

    pub fn write_q2_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(&self.q2_rows, out)
    }
}

fn write_rows<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Population quantities shared by every replicate.
#[derive(Debug, Clone)]
pub struct StudyPopulation {
    pub population: SyntheticPopulation,
    /// Missingness model fitted to the population destination indicator.
    pub missingness_fit: LogisticFit,
    /// `alpha_1 . w_i` for every population unit.
    pub eta: Vec<f64>,
    pub q1: f64,
    /// Upper-triangle target gamma coefficients.
    pub q2: Vec<(usize, usize, f64)>,
}

impl StudyPopulation {
    pub fn new(spec: &PopulationSpec) -> Result<Self> {
        let population = synth_population(spec)?;
        let p = &population;
        let fit = fit_missingness_model(&p.data, &p.anchor_items, &p.missingness_covariates, &p.destination)?;
        let (w, _) = missingness_predictors(&p.data, &p.anchor_items, &p.missingness_covariates);
        let eta = w
            .iter()
            .map(|r| r.iter().zip(fit.slopes()).map(|(a, b)| a * b).sum())
            .collect();
        let targets = target_matrix(&p.data.to_complete()?, &p.target_items);
        let q1 = q1_with_variance(&targets).0;
        let q2 = q2_pairs_with_variance(&targets)
            .into_iter()
            .map(|(a, b, g, _)| (a, b, g))
            .collect();
        Ok(Self {
            population,
            missingness_fit: fit,
            eta,
            q1,
            q2,
        })
    }

    pub fn mechanism(&self, config: &Configuration) -> Result<MissingnessMechanism> {
        let intercept = if config.p_mis == 0.0 {
            f64::NEG_INFINITY
        } else {
            calibrate_intercept(config.family, &self.eta, config.p_mis)?
        };
        Ok(MissingnessMechanism {
            family: config.family,
            coefficients: self.missingness_fit.slopes().to_vec(),
            intercept,
        })
    }
}

fn target_matrix(y: &ResponseMatrix, items: &[usize]) -> ResponseMatrix {
    let codes: Vec<Level> = (0..y.n_units())
        .flat_map(|i| items.iter().map(move |&j| y.get(i, j)))
        .collect();
    ResponseMatrix::new(y.n_units(), items.len(), codes)
}

#[derive(Debug, Clone, Copy)]
struct Interval {
    qbar: f64,
    var: f64,
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone)]
struct Estimates {
    q1: Interval,
    q2: Vec<Option<Interval>>,
    complete_q1: f64,
    complete_q2: Vec<f64>,
}

fn pooled(q: &[f64], u: &[f64], alpha: f64) -> Option<Interval> {
    if q.iter().chain(u).any(|v| !v.is_finite()) {
        return None;
    }
    pool_single(q, u, alpha).ok().map(|p| Interval {
        qbar: p.qbar,
        var: p.total_var,
        lo: p.ci.0,
        hi: p.ci.1,
    })
}

/// Replicate setup: the sample, its deletion pattern and the masked data.
struct Replicate {
    sample: OrdinalDataset,
    masked: OrdinalDataset,
    complete_targets: ResponseMatrix,
    n_missing: usize,
}

fn draw_replicate(study: &StudyPopulation, mech: &MissingnessMechanism, n: usize, seed: u64) -> Result<Replicate> {
    let p = &study.population;
    let mut rng = rng_from_seed(derive_seed(seed, &[0]));
    let mut rows = index::sample(&mut rng, p.data.n_units(), n).into_vec();
    rows.sort_unstable();
    let sample = p.data.select_rows(&rows);
    let (w, _) = missingness_predictors(&sample, &p.anchor_items, &p.missingness_covariates);
    let missing = generate_missingness(mech, &w, derive_seed(seed, &[1]))?;
    let masked = sample.with_rows_masked(&p.target_items, &missing);
    let complete_targets = target_matrix(&sample.to_complete()?, &p.target_items);
    Ok(Replicate {
        sample,
        masked,
        complete_targets,
        n_missing: missing.iter().filter(|&&m| m).count(),
    })
}

fn impute_targets(
    method: Method,
    grid: &SimGrid,
    study: &StudyPopulation,
    rep: &Replicate,
    seed: u64,
) -> Result<Vec<ResponseMatrix>> {
    let p = &study.population;
    let k = grid.imputations;
    if rep.n_missing == 0 || method == Method::Complete {
        return Ok(vec![rep.complete_targets.clone(); k]);
    }
    let full: Vec<ResponseMatrix> = match method {
        Method::MvoptDa | Method::MvopcDa => {
            let mode = if method == Method::MvoptDa {
                IdentificationMode::Threshold
            } else {
                IdentificationMode::Correlation
            };
            let cfg = DaConfig {
                mode,
                seed,
                imputations: k,
                chains: 1,
                ..grid.da
            };
            run_da(&rep.masked, &cfg)?.swap_remove(0).imputations
        }
        Method::MvoptEm | Method::MvopcEm => {
            let mode = if method == Method::MvoptEm {
                IdentificationMode::Threshold
            } else {
                IdentificationMode::Correlation
            };
            let cfg = McemConfig {
                mode,
                seed,
                ..grid.mcem
            };
            bootstrap_mi(&rep.masked, &cfg, k)?.imputations
        }
        Method::Ipsm => {
            let covs: Vec<usize> = (1..rep.masked.n_covariates()).collect();
            ipsm_impute(&rep.masked, &p.anchor_items, &p.target_items, &covs, k, seed)?
                .iter()
                .map(|d| d.to_complete())
                .collect::<Result<_>>()?
        }
        Method::Complete => unreachable!(),
    };
    Ok(full.iter().map(|y| target_matrix(y, &p.target_items)).collect())
}

fn estimate(method: Method, grid: &SimGrid, study: &StudyPopulation, rep: &Replicate, seed: u64) -> Result<Estimates> {
    let (cq1, cu1) = q1_with_variance(&rep.complete_targets);
    let cq2 = q2_pairs_with_variance(&rep.complete_targets);
    let complete_q2: Vec<f64> = cq2.iter().map(|t| t.2).collect();
    if method == Method::Complete {
        let z = norm_quantile(1.0 - grid.alpha / 2.0);
        let iv = |q: f64, u: f64| Interval {
            qbar: q,
            var: u,
            lo: q - z * u.sqrt(),
            hi: q + z * u.sqrt(),
        };
        return Ok(Estimates {
            q1: iv(cq1, cu1),
            q2: cq2
                .iter()
                .map(|&(_, _, g, u)| g.is_finite().then(|| iv(g, u)))
                .collect(),
            complete_q1: cq1,
            complete_q2,
        });
    }
    let imps = impute_targets(method, grid, study, rep, seed)?;
    let q1s: Vec<(f64, f64)> = imps.iter().map(q1_with_variance).collect();
    let q2s: Vec<Vec<(usize, usize, f64, f64)>> = imps.iter().map(q2_pairs_with_variance).collect();
    let (q, u): (Vec<f64>, Vec<f64>) = q1s.into_iter().unzip();
    let q1 = pooled(&q, &u, grid.alpha).ok_or_else(|| MvopError::estimation("Q1 pooling failed"))?;
    let q2 = (0..complete_q2.len())
        .map(|pair| {
            let q: Vec<f64> = q2s.iter().map(|v| v[pair].2).collect();
            let u: Vec<f64> = q2s.iter().map(|v| v[pair].3).collect();
            pooled(&q, &u, grid.alpha)
        })
        .collect();
    Ok(Estimates {
        q1,
        q2,
        complete_q1: cq1,
        complete_q2,
    })
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    err: f64,
    sq: f64,
    var: f64,
    cover: usize,
    width: f64,
    score: f64,
    err_complete: f64,
    cover_complete: usize,
}

impl Accumulator {
    fn add(&mut self, iv: &Interval, truth: f64, complete: f64, alpha: f64) {
        self.n += 1;
        self.err += iv.qbar - truth;
        self.sq += (iv.qbar - truth).powi(2);
        self.var += iv.var;
        self.cover += usize::from(iv.lo <= truth && truth <= iv.hi);
        self.width += iv.hi - iv.lo;
        self.score += interval_score(iv.lo, iv.hi, truth, alpha).unwrap_or(f64::NAN);
        self.err_complete += iv.qbar - complete;
        self.cover_complete += usize::from(iv.lo <= complete && complete <= iv.hi);
    }

    fn row(
        &self,
        configuration: String,
        method: Method,
        estimand: String,
        truth: f64,
        n_failed: usize,
        threshold: f64,
    ) -> ReportRow {
        let n = self.n as f64;
        let coverage = self.cover as f64 / n;
        ReportRow {
            configuration,
            method: method.label().into(),
            estimand,
            truth,
            n_ok: self.n,
            n_failed,
            bias: self.err / n,
            variance: self.var / n,
            rmse: (self.sq / n).sqrt(),
            coverage,
            width: self.width / n,
            interval_score: self.score / n,
            bias_vs_complete: self.err_complete / n,
            coverage_of_complete: self.cover_complete as f64 / n,
            coverage_flag: coverage < threshold,
        }
    }
}

/// Run every configuration of `grid` for `grid.replicates` replicates.
/// Method failures are quarantined in the report; setup failures abort.
pub fn run_replications(grid: &SimGrid, study: &StudyPopulation) -> Result<ReplicationReport> {
    grid.validate()?;
    let threshold = coverage_flag_threshold(grid.replicates);
    let target_names: Vec<String> = study
        .population
        .target_items
        .iter()
        .map(|&j| study.population.data.item_names()[j].clone())
        .collect();
    let mut report = ReplicationReport {
        replicates: grid.replicates,
        rows: Vec::new(),
        q2_rows: Vec::new(),
        failures: Vec::new(),
    };
    for (ci, config) in grid.configurations().iter().enumerate() {
        let label = config.label();
        info!("configuration {label}: {} replicates", grid.replicates);
        let mech = study.mechanism(config)?;
        let outcomes: Vec<Vec<Result<Estimates>>> = (0..grid.replicates)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(grid.seed, &[ci as u64, r as u64]);
                let rep = match draw_replicate(study, &mech, grid.sample_size, seed) {
                    Ok(rep) => rep,
                    Err(e) => {
                        return grid
                            .methods
                            .iter()
                            .map(|_| Err(MvopError::validation(e.to_string())))
                            .collect()
                    }
                };
                let out = grid
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &m)| estimate(m, grid, study, &rep, derive_seed(seed, &[2, mi as u64])))
                    .collect();
                debug!(
                    "{label} replicate {r} done ({} missing, {} units)",
                    rep.n_missing,
                    rep.sample.n_units()
                );
                out
            })
            .collect();
        for (mi, &method) in grid.methods.iter().enumerate() {
            let mut q1 = Accumulator::default();
            let mut q2: Vec<Accumulator> = study.q2.iter().map(|_| Accumulator::default()).collect();
            let mut q2_failed = vec![0usize; study.q2.len()];
            let mut failed = 0;
            for (r, outcome) in outcomes.iter().enumerate() {
                match &outcome[mi] {
                    Ok(est) => {
                        q1.add(&est.q1, study.q1, est.complete_q1, grid.alpha);
                        for (pair, acc) in q2.iter_mut().enumerate() {
                            match &est.q2[pair] {
                                Some(iv) => acc.add(iv, study.q2[pair].2, est.complete_q2[pair], grid.alpha),
                                None => q2_failed[pair] += 1,
                            }
                        }
                    }
                    Err(e) => {
                        failed += 1;
                        report.failures.push(FailureRecord {
                            configuration: label.clone(),
                            method: method.label().into(),
                            replicate: r,
                            error: e.to_string(),
                        });
                    }
                }
            }
            report
                .rows
                .push(q1.row(label.clone(), method, "Q1".into(), study.q1, failed, threshold));
            for (pair, acc) in q2.iter().enumerate() {
                let (a, b, truth) = study.q2[pair];
                let name = format!("gamma({},{})", target_names[a], target_names[b]);
                report
                    .q2_rows
                    .push(acc.row(label.clone(), method, name, truth, failed + q2_failed[pair], threshold));
            }
        }
    }
    Ok(report)
}
