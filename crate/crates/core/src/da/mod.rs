//! Bayesian posterior sampling for the MVOP model by data augmentation.
//!
//! One cycle is: draw `Z | Y_obs, psi` (I-step), then `beta | Z, Sigma`,
//! `Sigma | Z, beta` and `gamma | Z, Y_obs` (P-steps), then encode the
//! missing responses from `Z`. In correlation mode the P-steps run in the
//! expanded space: an expansion scale `D` is drawn given `R`, the state is
//! mapped to `(DZ, D beta, DRD, D gamma)`, the unconstrained conditionals are
//! sampled there, and the cycle ends with the inverse expansion.
//!
//! Priors are `vec(beta) ~ N(0, v I)` and `Sigma ~ IW(m, m I)` with
//! `m = J + 2` by default; thresholds are uniform subject to monotonicity.

mod trace;

pub use trace::{read_trace, write_trace, TraceFile, TraceRecord};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MvopError, Result};
use crate::latent::{encode_missing, LatentModel};
use crate::linalg;
use crate::mcem::{check_estimable, check_fit_mode, initial_params};
use crate::model::{
    px_inverse, px_transform, ExpansionScale, IdentificationMode, LatentMatrix, Level, MvopParams, OrdinalDataset,
    ResponseMatrix,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::stats::{inverse_gamma, sample_inverse_wishart, std_normal};
use crate::tmvn::TmvnMethod;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaConfig {
    pub mode: IdentificationMode,
    pub iterations: usize,
    /// Defaults to `iterations / 2`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Parameter-expanded cycles; required in correlation mode.
    pub px: bool,
    pub prior_beta_var: f64,
    /// Inverse-Wishart degrees of freedom and scale multiplier; defaults to `J + 2`.
    pub prior_sigma_df: Option<f64>,
    /// Completed datasets taken at equally spaced post-burn-in cycles.
    pub imputations: usize,
    pub sampler: TmvnMethod,
}

impl Default for DaConfig {
    fn default() -> Self {
        Self {
            mode: IdentificationMode::Threshold,
            iterations: 50_000,
            burn_in: None,
            thin: 10,
            chains: 1,
            seed: 0,
            px: true,
            prior_beta_var: 1e4,
            prior_sigma_df: None,
            imputations: 0,
            sampler: TmvnMethod::Slice,
        }
    }
}

impl DaConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 2)
    }

    pub fn sigma_df(&self, j: usize) -> f64 {
        self.prior_sigma_df.unwrap_or(j as f64 + 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in() {
            return Err(MvopError::validation("iterations must exceed burn_in"));
        }
        if self.thin == 0 {
            return Err(MvopError::validation("thin must be at least 1"));
        }
        if self.chains == 0 {
            return Err(MvopError::validation("chains must be at least 1"));
        }
        if !(self.prior_beta_var > 0.0) {
            return Err(MvopError::validation("prior_beta_var must be positive"));
        }
        if self.imputations > self.iterations - self.burn_in() {
            return Err(MvopError::validation(
                "more imputations requested than post-burn-in cycles",
            ));
        }
        check_fit_mode(self.mode, self.px)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub chain: usize,
    /// 1-based cycle number of each retained draw.
    pub iterations: Vec<usize>,
    pub params: Vec<MvopParams>,
    pub imputations: Vec<ResponseMatrix>,
    pub imputation_iterations: Vec<usize>,
    /// Parameters at the cycles the imputations were taken.
    pub imputation_params: Vec<MvopParams>,
    /// Threshold updates skipped because of an empty support interval.
    pub gamma_skips: usize,
}

/// Advance the latent chain by one sweep under `params`.
pub fn i_step(
    data: &OrdinalDataset,
    params: &MvopParams,
    z: &mut LatentMatrix,
    method: TmvnMethod,
    rng: &mut Rng,
) -> Result<()> {
    if z.n_units() != data.n_units() || z.n_items() != data.n_items() {
        return Err(MvopError::domain("latent state does not match the dataset"));
    }
    let model = LatentModel::new(data, params)?;
    model.repair(z, false);
    model.sweep(method, z, rng);
    Ok(())
}

/// Stacked coefficient draw. `vec(beta)` is ordered by rows (`a * P + p`),
/// so the likelihood precision is `Sigma^-1 (x) X^T X`.
pub fn p_step_beta(
    z: &LatentMatrix,
    x: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut Rng,
    prior_beta_var: f64,
) -> Result<DMatrix<f64>> {
    let j = sigma.nrows();
    let p = x.ncols();
    let n = x.nrows();
    if z.n_units() != n || z.n_items() != j {
        return Err(MvopError::domain("latent state does not match the design"));
    }
    let sinv = linalg::spd_inverse(sigma, "sigma")?;
    let xtx = x.transpose() * x;
    let mut zx = DMatrix::<f64>::zeros(j, p);
    for i in 0..n {
        let row = z.row(i);
        for a in 0..j {
            for c in 0..p {
                zx[(a, c)] += row[a] * x[(i, c)];
            }
        }
    }
    let h_mat = &sinv * zx;
    let dim = j * p;
    let mut prec = DMatrix::<f64>::zeros(dim, dim);
    let mut h = DVector::<f64>::zeros(dim);
    for a in 0..j {
        for c in 0..p {
            h[a * p + c] = h_mat[(a, c)];
            for b in 0..j {
                for d in 0..p {
                    prec[(a * p + c, b * p + d)] = sinv[(a, b)] * xtx[(c, d)];
                }
            }
        }
    }
    for k in 0..dim {
        prec[(k, k)] += 1.0 / prior_beta_var;
    }
    let chol = linalg::cholesky(&prec, "beta posterior precision")?;
    let mean = chol.solve(&h);
    let eps = DVector::from_fn(dim, |_, _| std_normal(rng));
    // L^T u = eps gives u ~ N(0, prec^-1).
    let u = chol
        .l()
        .transpose()
        .solve_upper_triangular(&eps)
        .ok_or_else(|| MvopError::numerical("singular beta precision factor"))?;
    let draw = mean + u;
    Ok(DMatrix::from_fn(j, p, |a, c| draw[a * p + c]))
}

fn residual_scatter(z: &LatentMatrix, x: &DMatrix<f64>, beta: &DMatrix<f64>) -> DMatrix<f64> {
    let j = beta.nrows();
    let mut s = DMatrix::<f64>::zeros(j, j);
    let mut r = vec![0.0; j];
    for i in 0..x.nrows() {
        let row = z.row(i);
        for a in 0..j {
            let mut m = 0.0;
            for c in 0..x.ncols() {
                m += beta[(a, c)] * x[(i, c)];
            }
            r[a] = row[a] - m;
        }
        for a in 0..j {
            for b in 0..=a {
                s[(a, b)] += r[a] * r[b];
            }
        }
    }
    for a in 0..j {
        for b in 0..a {
            s[(b, a)] = s[(a, b)];
        }
    }
    s
}

/// `Sigma ~ IW(N + m, sum_i r_i r_i^T + m I)` with `r_i = z_i - beta x_i`.
pub fn p_step_sigma(
    z: &LatentMatrix,
    x: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    rng: &mut Rng,
    df_offset: f64,
) -> Result<DMatrix<f64>> {
    let j = beta.nrows();
    if z.n_units() != x.nrows() || z.n_items() != j {
        return Err(MvopError::domain("latent state does not match the design"));
    }
    let mut scale = residual_scatter(z, x, beta);
    if scale.iter().any(|v| !v.is_finite()) {
        return Err(MvopError::numerical("residual scatter matrix is not finite"));
    }
    for a in 0..j {
        scale[(a, a)] += df_offset;
    }
    sample_inverse_wishart(x.nrows() as f64 + df_offset, &scale, rng)
}

/// Uniform full-conditional draws of one item's free thresholds. Returns the
/// updated thresholds and the number of skipped (degenerate) updates.
///
/// In threshold mode the free thresholds are `l = 2..=c-2`; otherwise only
/// the first is pinned and `l = 2..=c-1` are free.
pub fn p_step_gamma(
    z: &[f64],
    y: &[Option<Level>],
    gamma: &[f64],
    mode: IdentificationMode,
    rng: &mut Rng,
) -> (Vec<f64>, usize) {
    use rand::Rng as _;
    let c = gamma.len() + 1;
    let last_free = match mode {
        IdentificationMode::Threshold => c.saturating_sub(2),
        _ => c - 1,
    };
    let mut g = gamma.to_vec();
    if last_free < 2 {
        return (g, 0);
    }
    let mut max_at = vec![f64::NEG_INFINITY; c + 1];
    let mut min_at = vec![f64::INFINITY; c + 1];
    for (v, lvl) in z.iter().zip(y) {
        if let Some(l) = lvl {
            let l = *l as usize;
            max_at[l] = max_at[l].max(*v);
            min_at[l] = min_at[l].min(*v);
        }
    }
    let mut skipped = 0;
    for l in 2..=last_free {
        let below = g[l - 2];
        let above = if l == c - 1 { f64::INFINITY } else { g[l] };
        let lo = max_at[l].max(below);
        let hi = min_at[l + 1].min(above);
        if !(lo < hi) || !hi.is_finite() {
            if !hi.is_finite() {
                // Open-ended support leaves an improper conditional; keep the value.
                skipped += 1;
                continue;
            }
            warn!("threshold {l} has empty support ({lo}, {hi}); update skipped");
            skipped += 1;
            continue;
        }
        let u: f64 = rng.random();
        let v = lo + (hi - lo) * u;
        if v > lo && v < hi {
            g[l - 1] = v;
        }
    }
    (g, skipped)
}

/// Completed responses: observed cells passed through, missing cells encoded
/// from the latent state.
pub fn impute_cycle(data: &OrdinalDataset, params: &MvopParams, z: &LatentMatrix) -> ResponseMatrix {
    encode_missing(data, params, z)
}

/// `K` indices equally spaced over `len` retained positions (the last of
/// each of `K` equal blocks).
pub fn select_equally_spaced(len: usize, k: usize) -> Vec<usize> {
    if k == 0 || len == 0 {
        return Vec::new();
    }
    (1..=k)
        .map(|m| (m * len).div_ceil(k).saturating_sub(1).min(len - 1))
        .collect()
}

fn column(z: &LatentMatrix, a: usize) -> Vec<f64> {
    z.column(a)
}

struct Cycle<'a> {
    data: &'a OrdinalDataset,
    config: &'a DaConfig,
    y_cols: Vec<Vec<Option<Level>>>,
    df: f64,
    gamma_skips: usize,
}

impl Cycle<'_> {
    fn step_gamma(&mut self, params: &mut MvopParams, z: &LatentMatrix, rng: &mut Rng) {
        let mode = params.mode();
        for a in 0..params.n_items() {
            let (g, skipped) = p_step_gamma(&column(z, a), &self.y_cols[a], &params.gamma()[a], mode, rng);
            self.gamma_skips += skipped;
            params.gamma_mut()[a] = g;
        }
    }

    fn run(&mut self, params: MvopParams, z: &mut LatentMatrix, rng: &mut Rng) -> Result<MvopParams> {
        let x = self.data.covariates();
        i_step(self.data, &params, z, self.config.sampler, rng)?;
        match params.mode() {
            IdentificationMode::Threshold => {
                let mut p = params;
                *p.beta_mut() = p_step_beta(z, x, p.sigma(), rng, self.config.prior_beta_var)?;
                *p.sigma_mut() = p_step_sigma(z, x, p.beta(), rng, self.df)?;
                self.step_gamma(&mut p, z, rng);
                Ok(p)
            }
            _ => {
                let j = params.n_items();
                let rinv = linalg::spd_inverse(params.sigma(), "correlation matrix")?;
                let d: Vec<f64> = (0..j)
                    .map(|a| inverse_gamma(self.df / 2.0, self.df * rinv[(a, a)] / 2.0, rng).sqrt())
                    .collect();
                let (mut w, mut zw) = px_transform(&params, z, &ExpansionScale::new(d)?)?;
                *w.beta_mut() = p_step_beta(&zw, x, w.sigma(), rng, self.config.prior_beta_var)?;
                *w.sigma_mut() = p_step_sigma(&zw, x, w.beta(), rng, self.df)?;
                self.step_gamma(&mut w, &zw, rng);
                let back = px_inverse(&w, &zw)?;
                zw = back.latent;
                *z = zw;
                Ok(back.params)
            }
        }
    }
}

fn run_chain(data: &OrdinalDataset, config: &DaConfig, start: &MvopParams, chain: usize) -> Result<PosteriorDraws> {
    let mut rng = rng_from_seed(derive_seed(config.seed, &[chain as u64]));
    let mut cycle = Cycle {
        data,
        config,
        y_cols: (0..data.n_items()).map(|a| data.column(a)).collect(),
        df: config.sigma_df(data.n_items()),
        gamma_skips: 0,
    };
    let burn = config.burn_in();
    let post = config.iterations - burn;
    let imp_at: Vec<usize> = select_equally_spaced(post, config.imputations)
        .into_iter()
        .map(|k| burn + k + 1)
        .collect();
    let mut out = PosteriorDraws {
        chain,
        iterations: Vec::new(),
        params: Vec::new(),
        imputations: Vec::new(),
        imputation_iterations: Vec::new(),
        imputation_params: Vec::new(),
        gamma_skips: 0,
    };
    let mut params = start.clone();
    let mut z = LatentModel::new(data, &params)?.interior();
    let mut next_imp = 0;
    for it in 1..=config.iterations {
        params = cycle.run(params, &mut z, &mut rng)?;
        if it > burn && (it - burn).is_multiple_of(config.thin) {
            out.iterations.push(it);
            out.params.push(params.clone());
        }
        if next_imp < imp_at.len() && imp_at[next_imp] == it {
            out.imputations.push(impute_cycle(data, &params, &z));
            out.imputation_iterations.push(it);
            out.imputation_params.push(params.clone());
            next_imp += 1;
        }
    }
    out.gamma_skips = cycle.gamma_skips;
    if out.gamma_skips > 0 {
        warn!("chain {chain}: {} threshold updates skipped", out.gamma_skips);
    }
    Ok(out)
}

/// Run `config.chains` independent chains from the marginal starting values.
pub fn run_da(data: &OrdinalDataset, config: &DaConfig) -> Result<Vec<PosteriorDraws>> {
    config.validate()?;
    let start = initial_params(data, config.mode)?;
    run_da_from(data, &start, config)
}

/// Run `config.chains` independent chains from `start`.
pub fn run_da_from(data: &OrdinalDataset, start: &MvopParams, config: &DaConfig) -> Result<Vec<PosteriorDraws>> {
    config.validate()?;
    check_estimable(data)?;
    if start.mode() != config.mode || start.n_items() != data.n_items() || start.n_covariates() != data.n_covariates() {
        return Err(MvopError::validation(
            "starting values do not match the dataset or mode",
        ));
    }
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, config, start, c))
        .collect()
}

/// Potential scale reduction factor `sqrt(((n-1)/n W + B/n) / W)`.
/// Zero within-chain variance yields `+inf`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(MvopError::domain("Gelman-Rubin needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 10 || chains.iter().any(|c| c.len() != n) {
        return Err(MvopError::domain(
            "Gelman-Rubin needs equal-length chains of at least 10 draws",
        ));
    }
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let w = chains.iter().map(|c| crate::stats::sample_variance(c)).sum::<f64>() / m as f64;
    let b = n as f64 * crate::stats::sample_variance(&means);
    if !(w > 0.0) {
        warn!("zero within-chain variance; potential scale reduction undefined");
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// Names and per-draw values of every free scalar parameter.
pub fn scalar_summaries(data: &OrdinalDataset, draws: &PosteriorDraws) -> Vec<(String, Vec<f64>)> {
    let Some(first) = draws.params.first() else {
        return Vec::new();
    };
    let items = data.item_names();
    let covs = data.covariate_names();
    let mut out: Vec<(String, Box<dyn Fn(&MvopParams) -> f64>)> = Vec::new();
    for a in 0..first.n_items() {
        for c in 0..first.n_covariates() {
            out.push((
                format!("beta[{},{}]", items[a], covs[c]),
                Box::new(move |p: &MvopParams| p.beta()[(a, c)]),
            ));
        }
    }
    for a in 0..first.n_items() {
        for b in 0..=a {
            if first.mode() != IdentificationMode::Threshold && a == b {
                continue;
            }
            out.push((
                format!("sigma[{},{}]", items[a], items[b]),
                Box::new(move |p: &MvopParams| p.sigma()[(a, b)]),
            ));
        }
    }
    for a in 0..first.n_items() {
        for l in 0..first.gamma()[a].len() {
            out.push((
                format!("gamma[{},{}]", items[a], l + 1),
                Box::new(move |p: &MvopParams| p.gamma()[a][l]),
            ));
        }
    }
    out.into_iter()
        .map(|(name, f)| (name, draws.params.iter().map(&f).collect()))
        .collect()
}

/// R-hat for every free scalar across chains. Pinned scalars report `NaN`.
pub fn gelman_rubin_params(data: &OrdinalDataset, chains: &[PosteriorDraws]) -> Result<Vec<(String, f64)>> {
    let per_chain: Vec<_> = chains.iter().map(|c| scalar_summaries(data, c)).collect();
    let Some(first) = per_chain.first() else {
        return Err(MvopError::domain("no chains supplied"));
    };
    let mut out = Vec::new();
    for (k, (name, _)) in first.iter().enumerate() {
        let traces: Vec<Vec<f64>> = per_chain.iter().map(|c| c[k].1.clone()).collect();
        let constant = traces.iter().all(|t| t.iter().all(|&v| v == traces[0][0]));
        let r = if constant { f64::NAN } else { gelman_rubin(&traces)? };
        out.push((name.clone(), r));
    }
    Ok(out)
}
