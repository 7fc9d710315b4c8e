//! Monte Carlo EM for the MVOP model.
//!
//! Each iteration draws `G` latent matrices from `Z | Y_obs` with the
//! truncated-normal sampler (warm-started from the previous iteration's
//! chain state), updates `(beta, Sigma)` by conditional maximization, and
//! re-estimates the thresholds from the empirical marginal distribution of
//! observed plus imputed responses. In correlation mode every iteration runs
//! in the expanded space and is mapped back with the inverse expansion.
//! Convergence is monitored with a GHK estimate of the observed-data
//! log-likelihood evaluated under common random numbers.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MvopError, Result};
use crate::latent::{encode_missing, LatentModel};
use crate::linalg;
use crate::model::{
    observed_data_loglik_mc, px_inverse_params, IdentificationMode, LatentMatrix, MvopParams, OrdinalDataset,
    ResponseMatrix,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::stats::norm_quantile;
use crate::tmvn::TmvnMethod;

const CONVERGENCE_WINDOW: usize = 3;
const DIVERGENCE_RUN: usize = 5;
const MAX_REDRAWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McemConfig {
    pub mode: IdentificationMode,
    /// Latent draws per E-step (`G`).
    pub mc_draws: usize,
    pub max_iters: usize,
    /// Relative log-likelihood improvement treated as converged.
    pub loglik_tol: f64,
    pub seed: u64,
    /// Parameter-expanded updates; required in correlation mode.
    pub px: bool,
    /// Sweeps discarded at the start of each E-step.
    pub burn_in: usize,
    /// GHK draws per unit for the monitoring log-likelihood.
    pub ghk_draws: usize,
    pub sampler: TmvnMethod,
}

impl Default for McemConfig {
    fn default() -> Self {
        Self {
            mode: IdentificationMode::Threshold,
            mc_draws: 100,
            max_iters: 200,
            loglik_tol: 1e-4,
            seed: 0,
            px: true,
            burn_in: 10,
            ghk_draws: 400,
            sampler: TmvnMethod::Slice,
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws == 0 {
            return Err(MvopError::validation("mc_draws must be at least 1"));
        }
        if !(self.loglik_tol > 0.0) {
            return Err(MvopError::validation("loglik_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(MvopError::validation("max_iters must be at least 1"));
        }
        if self.ghk_draws < 100 {
            return Err(MvopError::validation("ghk_draws must be at least 100"));
        }
        check_fit_mode(self.mode, self.px)
    }
}

pub(crate) fn check_fit_mode(mode: IdentificationMode, px: bool) -> Result<()> {
    match mode {
        IdentificationMode::Threshold => Ok(()),
        IdentificationMode::Correlation if px => Ok(()),
        IdentificationMode::Correlation => Err(MvopError::validation(
            "correlation mode is only supported with parameter expansion (px = true)",
        )),
        IdentificationMode::Unconstrained => Err(MvopError::validation(
            "the unconstrained working form cannot be fitted directly",
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McemFit {
    pub params: MvopParams,
    pub loglik_trace: Vec<f64>,
    /// GHK standard error of each trace entry.
    pub loglik_se: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Rejects designs with collinear columns and items with an unobserved level.
pub(crate) fn check_estimable(data: &OrdinalDataset) -> Result<()> {
    let x = data.covariates();
    let dep = linalg::dependent_columns(&(x.transpose() * x));
    if !dep.is_empty() {
        let names: Vec<&str> = dep.iter().map(|&c| data.covariate_names()[c].as_str()).collect();
        return Err(MvopError::numerical(format!(
            "rank-deficient design; dependent columns: {}",
            names.join(", ")
        )));
    }
    for j in 0..data.n_items() {
        for (l, &c) in data.level_counts(j).iter().enumerate() {
            if c == 0 {
                return Err(MvopError::estimation(format!(
                    "item {} has no observed responses at level {}; collapse adjacent levels",
                    data.item_names()[j],
                    l + 1
                )));
            }
        }
    }
    Ok(())
}

fn rescale_unit(raw: &[f64]) -> Vec<f64> {
    if raw.len() < 2 {
        return vec![0.0; raw.len()];
    }
    let lo = raw[0];
    let span = raw[raw.len() - 1] - lo;
    let mut g: Vec<f64> = raw.iter().map(|v| (v - lo) / span).collect();
    let last = g.len() - 1;
    g[0] = 0.0;
    g[last] = 1.0;
    g
}

/// Starting values: thresholds from observed marginal frequencies, intercept
/// placing the latent mean at the marginal location, slopes zero, diagonal
/// covariance on the scale implied by the pinned thresholds.
pub fn initial_params(data: &OrdinalDataset, mode: IdentificationMode) -> Result<MvopParams> {
    check_estimable(data)?;
    let j = data.n_items();
    let p = data.n_covariates();
    let icpt = data.intercept_column();
    let mut beta = DMatrix::<f64>::zeros(j, p);
    let mut sigma = DMatrix::<f64>::identity(j, j);
    let mut gamma = Vec::with_capacity(j);
    for a in 0..j {
        let counts = data.level_counts(a);
        let total: usize = counts.iter().sum();
        let mut cum = 0usize;
        let raw: Vec<f64> = counts[..counts.len() - 1]
            .iter()
            .map(|&c| {
                cum += c;
                norm_quantile(cum as f64 / total as f64)
            })
            .collect();
        let shift = raw[0];
        let scale = match mode {
            IdentificationMode::Threshold if raw.len() >= 2 => raw[raw.len() - 1] - raw[0],
            _ => 1.0,
        };
        let g = match mode {
            IdentificationMode::Threshold => rescale_unit(&raw),
            _ => raw.iter().map(|v| v - shift).collect(),
        };
        if let Some(c) = icpt {
            beta[(a, c)] = -shift / scale;
        }
        sigma[(a, a)] = 1.0 / (scale * scale);
        gamma.push(g);
    }
    MvopParams::new(mode, gamma, beta, sigma)
}

/// Running sums over E-step draws.
struct EStats {
    g: usize,
    zsum: Vec<f64>,
    szz: DMatrix<f64>,
    raw_gamma: Vec<Vec<f64>>,
}

impl EStats {
    fn new(n: usize, levels: &[u16]) -> Self {
        let j = levels.len();
        Self {
            g: 0,
            zsum: vec![0.0; n * j],
            szz: DMatrix::zeros(j, j),
            raw_gamma: levels.iter().map(|&c| vec![0.0; c as usize - 1]).collect(),
        }
    }

    fn add_latent(&mut self, z: &LatentMatrix) {
        let j = z.n_items();
        for i in 0..z.n_units() {
            let row = z.row(i);
            for a in 0..j {
                self.zsum[i * j + a] += row[a];
                for b in 0..=a {
                    self.szz[(a, b)] += row[a] * row[b];
                }
            }
        }
    }

    fn add_levels(&mut self, y: &ResponseMatrix, levels: &[u16]) -> Result<()> {
        let n = y.n_units();
        for (a, &c) in levels.iter().enumerate() {
            let mut counts = vec![0usize; c as usize];
            for i in 0..n {
                counts[y.get(i, a) as usize - 1] += 1;
            }
            let mut cum = 0usize;
            for l in 0..c as usize - 1 {
                cum += counts[l];
                if counts[l] == 0 || cum == n {
                    return Err(MvopError::estimation(format!(
                        "item {a} has an empty level {} in the completed responses; collapse adjacent levels",
                        if counts[l] == 0 { l + 1 } else { l + 2 }
                    )));
                }
                self.raw_gamma[a][l] += norm_quantile(cum as f64 / n as f64);
            }
        }
        Ok(())
    }

    fn finish(mut self) -> (Vec<f64>, DMatrix<f64>, Vec<Vec<f64>>) {
        let g = self.g as f64;
        for v in &mut self.zsum {
            *v /= g;
        }
        let j = self.szz.nrows();
        for a in 0..j {
            for b in 0..a {
                self.szz[(b, a)] = self.szz[(a, b)];
            }
        }
        self.szz /= g;
        for r in &mut self.raw_gamma {
            for v in r.iter_mut() {
                *v /= g;
            }
        }
        (self.zsum, self.szz, self.raw_gamma)
    }
}

fn run_e_step(
    data: &OrdinalDataset,
    params: &MvopParams,
    z: &mut LatentMatrix,
    config: &McemConfig,
    rng: &mut Rng,
    mut sink: impl FnMut(&LatentMatrix) -> Result<()>,
) -> Result<()> {
    let model = LatentModel::new(data, params)?;
    model.repair(z, false);
    for _ in 0..config.burn_in {
        model.sweep(config.sampler, z, rng);
    }
    for _ in 0..config.mc_draws {
        model.sweep(config.sampler, z, rng);
        sink(z)?;
    }
    Ok(())
}

/// `G` draws of `Z | Y_obs` under `params`: a chain started inside every
/// row's box, run `burn_in` sweeps, then one retained state per sweep.
/// Missing cells are unconstrained.
pub fn e_step(data: &OrdinalDataset, params: &MvopParams, config: &McemConfig) -> Result<Vec<LatentMatrix>> {
    let model = LatentModel::new(data, params)?;
    let mut z = model.interior();
    let mut rng = rng_from_seed(config.seed);
    let mut out = Vec::with_capacity(config.mc_draws);
    run_e_step(data, params, &mut z, config, &mut rng, |d| {
        out.push(d.clone());
        Ok(())
    })?;
    Ok(out)
}

fn clamp_psd(sigma: &mut DMatrix<f64>) {
    linalg::symmetrize(sigma);
    let eig = SymmetricEigen::new(sigma.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        warn!("M-step covariance has eigenvalue {min:e}; clamping to zero");
        let lam = eig.eigenvalues.map(|v| v.max(0.0));
        *sigma = &eig.eigenvectors * DMatrix::from_diagonal(&lam) * eig.eigenvectors.transpose();
        linalg::symmetrize(sigma);
    }
}

fn xtx_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let xtx = x.transpose() * x;
    let dep = linalg::dependent_columns(&xtx);
    if !dep.is_empty() {
        return Err(MvopError::numerical(format!(
            "rank-deficient design; dependent columns (0-based): {dep:?}"
        )));
    }
    linalg::spd_inverse(&xtx, "X^T X")
}

fn m_step_from_moments(
    x: &DMatrix<f64>,
    xtx_inv: &DMatrix<f64>,
    zbar: &[f64],
    szz: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let j = szz.nrows();
    let mut zx = DMatrix::<f64>::zeros(j, p);
    for i in 0..n {
        for a in 0..j {
            let v = zbar[i * j + a];
            for c in 0..p {
                zx[(a, c)] += v * x[(i, c)];
            }
        }
    }
    let beta = &zx * xtx_inv;
    // beta (X^T X) beta^T = zx beta^T.
    let mut sigma = (szz - &zx * beta.transpose()) / n as f64;
    clamp_psd(&mut sigma);
    (beta, sigma)
}

/// Conditional maximization given latent draws:
/// `beta = [sum_i zbar_i x_i^T][X^T X]^-1` and
/// `Sigma = (1/N)[sum_i mean_g z_i z_i^T - beta X^T X beta^T]`.
pub fn m_step(x: &DMatrix<f64>, zdraws: &[LatentMatrix]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = zdraws
        .first()
        .ok_or_else(|| MvopError::domain("m_step needs at least one latent draw"))?;
    let n = first.n_units();
    let j = first.n_items();
    if x.nrows() != n || zdraws.iter().any(|z| z.n_units() != n || z.n_items() != j) {
        return Err(MvopError::domain("latent draws and covariates disagree in shape"));
    }
    let xtx_inv = xtx_inverse(x)?;
    let mut stats = EStats::new(n, &vec![2; j]);
    for z in zdraws {
        stats.add_latent(z);
        stats.g += 1;
    }
    let (zbar, szz, _) = stats.finish();
    Ok(m_step_from_moments(x, &xtx_inv, &zbar, &szz))
}

/// Thresholds on the probit scale, `mean_g Phi^-1(F_g(l))` for the cumulative
/// fraction `F_g(l)` of completed responses at or below level `l`.
pub fn marginal_thresholds(data: &OrdinalDataset, imputed_levels: &[ResponseMatrix]) -> Result<Vec<Vec<f64>>> {
    if imputed_levels.is_empty() {
        return Err(MvopError::domain(
            "threshold estimation needs at least one completed response matrix",
        ));
    }
    let mut stats = EStats::new(0, data.levels());
    for y in imputed_levels {
        if y.n_units() != data.n_units() || y.n_items() != data.n_items() {
            return Err(MvopError::domain("completed responses do not match the dataset"));
        }
        stats.add_levels(y, data.levels())?;
        stats.g += 1;
    }
    Ok(stats.finish().2)
}

/// Marginal thresholds affinely rescaled so that each item's first and last
/// interior thresholds are exactly 0 and 1.
pub fn estimate_thresholds(data: &OrdinalDataset, imputed_levels: &[ResponseMatrix]) -> Result<Vec<Vec<f64>>> {
    Ok(marginal_thresholds(data, imputed_levels)?
        .iter()
        .map(|r| rescale_unit(r))
        .collect())
}

fn variance_of_predictor(data: &OrdinalDataset, beta: &DMatrix<f64>, item: usize) -> f64 {
    let x = data.covariates();
    let n = x.nrows();
    let preds: Vec<f64> = (0..n)
        .map(|i| (0..x.ncols()).map(|c| beta[(item, c)] * x[(i, c)]).sum())
        .collect();
    let m = preds.iter().sum::<f64>() / n as f64;
    preds.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
}

fn assemble(
    data: &OrdinalDataset,
    mode: IdentificationMode,
    raw: Vec<Vec<f64>>,
    beta: DMatrix<f64>,
    sigma: DMatrix<f64>,
) -> Result<MvopParams> {
    match mode {
        IdentificationMode::Threshold => {
            let gamma = raw.iter().map(|r| rescale_unit(r)).collect();
            MvopParams::new(mode, gamma, beta, sigma)
                .map_err(|e| MvopError::numerical(format!("M-step produced invalid parameters: {e}")))
        }
        _ => {
            // Working thresholds on the working marginal scale, anchored at 0.
            let gamma: Vec<Vec<f64>> = raw
                .iter()
                .enumerate()
                .map(|(a, r)| {
                    let sd = (sigma[(a, a)] + variance_of_predictor(data, &beta, a)).sqrt();
                    r.iter().map(|v| sd * (v - r[0])).collect()
                })
                .collect();
            let working = MvopParams::new(IdentificationMode::Unconstrained, gamma, beta, sigma)
                .map_err(|e| MvopError::numerical(format!("M-step produced invalid parameters: {e}")))?;
            Ok(px_inverse_params(&working)?.0)
        }
    }
}

/// Fit by Monte Carlo EM from [`initial_params`].
pub fn fit_mcem(data: &OrdinalDataset, config: &McemConfig) -> Result<McemFit> {
    config.validate()?;
    let start = initial_params(data, config.mode)?;
    fit_mcem_from(data, start, config)
}

/// Fit by Monte Carlo EM from given starting values.
pub fn fit_mcem_from(data: &OrdinalDataset, start: MvopParams, config: &McemConfig) -> Result<McemFit> {
    config.validate()?;
    check_estimable(data)?;
    if start.mode() != config.mode || !data_matches(data, &start) {
        return Err(MvopError::validation(
            "starting values do not match the dataset or mode",
        ));
    }
    let x = data.covariates();
    let xtx_inv = xtx_inverse(x)?;
    let ghk_seed = derive_seed(config.seed, &[0x6768_6b]);
    let mut rng = rng_from_seed(derive_seed(config.seed, &[1]));
    let mut params = start;
    let mut z = LatentModel::new(data, &params)?.interior();
    let mut trace = Vec::new();
    let mut ses = Vec::new();
    let mut flat_run = 0usize;
    let mut down_run = 0usize;
    let mut converged = false;
    for _ in 0..config.max_iters {
        let mut stats = EStats::new(data.n_units(), data.levels());
        let current = &params;
        run_e_step(data, current, &mut z, config, &mut rng, |d| {
            stats.add_latent(d);
            stats.add_levels(&encode_missing(data, current, d), data.levels())?;
            stats.g += 1;
            Ok(())
        })?;
        let (zbar, szz, raw) = stats.finish();
        let (beta, sigma) = m_step_from_moments(x, &xtx_inv, &zbar, &szz);
        params = assemble(data, config.mode, raw, beta, sigma)?;
        let ll = observed_data_loglik_mc(data, &params, config.ghk_draws, ghk_seed)?;
        if let (Some(&prev), Some(&prev_se)) = (trace.last(), ses.last()) {
            let delta: f64 = ll.value - prev;
            let noise = 3.0 * f64::max(ll.std_error, prev_se);
            if (delta / f64::abs(prev)).abs() < config.loglik_tol {
                flat_run += 1;
            } else {
                flat_run = 0;
            }
            if delta < -noise {
                down_run += 1;
            } else {
                down_run = 0;
            }
        }
        trace.push(ll.value);
        ses.push(ll.std_error);
        if down_run > DIVERGENCE_RUN {
            return Err(MvopError::Convergence {
                message: format!("MCEM log-likelihood decreased for {down_run} consecutive iterations"),
                trace,
            });
        }
        if flat_run >= CONVERGENCE_WINDOW {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(
            "MCEM stopped at max_iters = {} without meeting the tolerance",
            config.max_iters
        );
    }
    let iterations = trace.len();
    Ok(McemFit {
        params,
        loglik_trace: trace,
        loglik_se: ses,
        converged,
        iterations,
    })
}

fn data_matches(data: &OrdinalDataset, params: &MvopParams) -> bool {
    params.n_items() == data.n_items()
        && params.n_covariates() == data.n_covariates()
        && (0..data.n_items()).all(|a| params.levels(a) == data.levels()[a])
}

/// One completed response matrix: a fresh chain of `sweeps` sweeps under
/// `params`, with missing cells encoded from the final state.
pub fn impute_from_params(
    data: &OrdinalDataset,
    params: &MvopParams,
    sweeps: usize,
    method: TmvnMethod,
    seed: u64,
) -> Result<ResponseMatrix> {
    let model = LatentModel::new(data, params)?;
    let mut z = model.interior();
    if data.has_missing() {
        let mut rng = rng_from_seed(seed);
        for _ in 0..sweeps.max(1) {
            model.sweep(method, &mut z, &mut rng);
        }
    }
    Ok(encode_missing(data, params, &z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapMi {
    pub params: Vec<MvopParams>,
    pub imputations: Vec<ResponseMatrix>,
    /// Rejected bootstrap replicates before each accepted one.
    pub redraws: Vec<usize>,
}

impl BootstrapMi {
    pub fn total_redraws(&self) -> usize {
        self.redraws.iter().sum()
    }
}

fn resample(data: &OrdinalDataset, rng: &mut Rng) -> OrdinalDataset {
    use rand::Rng as _;
    let n = data.n_units();
    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    data.select_rows(&rows)
}

fn bootstrap_one(data: &OrdinalDataset, config: &McemConfig, k: usize) -> Result<(MvopParams, ResponseMatrix, usize)> {
    let mut last_err = None;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = rng_from_seed(derive_seed(config.seed, &[1, k as u64, attempt as u64]));
        let boot = resample(data, &mut rng);
        let fit_cfg = McemConfig {
            seed: derive_seed(config.seed, &[2, k as u64, attempt as u64]),
            ..*config
        };
        match fit_mcem(&boot, &fit_cfg) {
            Ok(fit) => {
                let sweeps = config.burn_in.max(50);
                let seed = derive_seed(config.seed, &[3, k as u64]);
                let imp = impute_from_params(data, &fit.params, sweeps, config.sampler, seed)?;
                return Ok((fit.params, imp, attempt));
            }
            Err(e @ (MvopError::Estimation(_) | MvopError::Numerical(_) | MvopError::Convergence { .. })) => {
                warn!("bootstrap replicate {k} attempt {attempt} rejected: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(MvopError::estimation(format!(
        "bootstrap replicate {k} failed {MAX_REDRAWS} times; last error: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Bootstrap multiple imputation: for each of `k` replicates, fit MCEM to a
/// case resample and impute the original data's missing cells from the fit.
/// Replicates whose resample cannot be fitted (for example a level vanishes)
/// are redrawn up to 20 times.
pub fn bootstrap_mi(data: &OrdinalDataset, config: &McemConfig, k: usize) -> Result<BootstrapMi> {
    config.validate()?;
    if k < 2 {
        return Err(MvopError::domain("bootstrap multiple imputation needs K >= 2"));
    }
    check_estimable(data)?;
    let results: Vec<_> = (0..k).into_par_iter().map(|r| bootstrap_one(data, config, r)).collect();
    let mut out = BootstrapMi {
        params: Vec::new(),
        imputations: Vec::new(),
        redraws: Vec::new(),
    };
    for r in results {
        let (p, y, redraws) = r?;
        out.params.push(p);
        out.imputations.push(y);
        out.redraws.push(redraws);
    }
    Ok(out)
}
