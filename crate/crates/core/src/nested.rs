//! Two-stage (nested) multiple imputation.
//!
//! Stage 1 (equating) imputes a target instrument that is missing for some
//! units from a jointly modelled, fully observed anchor instrument. Stage 2
//! (translating) uses each Stage-1 completed dataset to learn the relation
//! between the target and a third instrument and imputes the target at a
//! later date `L` times, giving `K x L` completed datasets. Estimates are
//! combined with the two-level nested rules.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::da::{run_da, select_equally_spaced, DaConfig};
use crate::error::{MvopError, Result};
use crate::mcem::{bootstrap_mi, impute_from_params, McemConfig};
use crate::model::OrdinalDataset;
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{chi_square, norm_quantile, std_normal, student_t_quantile};
use crate::tmvn::TmvnMethod;

/// Anchor items (fully observed) and target items (missing row-wise where
/// `missing[i]`), sharing units and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct EquatingProblem {
    anchor: OrdinalDataset,
    target: OrdinalDataset,
    missing: Vec<bool>,
}

impl EquatingProblem {
    pub fn new(anchor: OrdinalDataset, target: OrdinalDataset) -> Result<Self> {
        if anchor.has_missing() {
            return Err(MvopError::validation("anchor items must be fully observed"));
        }
        if anchor.n_units() != target.n_units()
            || anchor.covariate_names() != target.covariate_names()
            || anchor.covariates() != target.covariates()
        {
            return Err(MvopError::validation(
                "anchor and target disagree on units or covariates",
            ));
        }
        let mut missing = Vec::with_capacity(target.n_units());
        for i in 0..target.n_units() {
            let row = target.row(i);
            let n_mis = row.iter().filter(|v| v.is_none()).count();
            if n_mis != 0 && n_mis != row.len() {
                return Err(MvopError::validation(format!(
                    "unit {i}: target items must be all observed or all missing"
                )));
            }
            missing.push(n_mis != 0);
        }
        Ok(Self {
            anchor,
            target,
            missing,
        })
    }

    /// Split a joint dataset into anchor and target item blocks.
    pub fn from_joint(data: &OrdinalDataset, anchor_items: &[usize], target_items: &[usize]) -> Result<Self> {
        Self::new(data.select_items(anchor_items), data.select_items(target_items))
    }

    pub fn anchor(&self) -> &OrdinalDataset {
        &self.anchor
    }

    pub fn target(&self) -> &OrdinalDataset {
        &self.target
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn joint(&self) -> Result<OrdinalDataset> {
        self.anchor.hstack(&self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "lowercase")]
pub enum Engine {
    Da(DaConfig),
    Mcem(McemConfig),
}

/// `K` completed copies of the target block.
pub fn equate(problem: &EquatingProblem, engine: &Engine, k: usize) -> Result<Vec<OrdinalDataset>> {
    if k == 0 {
        return Err(MvopError::domain("K must be at least 1"));
    }
    let target = problem.target();
    if !target.has_missing() {
        return Ok(vec![target.clone(); k]);
    }
    let joint = problem.joint()?;
    let imputations = match engine {
        Engine::Da(cfg) => {
            let cfg = DaConfig {
                imputations: k,
                chains: 1,
                ..*cfg
            };
            run_da(&joint, &cfg)?.remove(0).imputations
        }
        Engine::Mcem(cfg) => bootstrap_mi(&joint, cfg, k.max(2))?
            .imputations
            .into_iter()
            .take(k)
            .collect(),
    };
    let n_anchor = problem.anchor().n_items();
    let target_cols: Vec<usize> = (n_anchor..joint.n_items()).collect();
    imputations
        .iter()
        .map(|y| Ok(joint.with_completed(y)?.select_items(&target_cols)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry<T> {
    pub k: usize,
    pub l: usize,
    pub seed: u64,
    pub data: T,
}

/// `K x L` completed datasets ordered by `(k, l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedStack<T> {
    pub k: usize,
    pub l: usize,
    pub entries: Vec<StackEntry<T>>,
}

impl<T> NestedStack<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, k: usize, l: usize) -> Option<&StackEntry<T>> {
        self.entries.get(k * self.l + l).filter(|e| e.k == k && e.l == l)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> NestedStack<U> {
        NestedStack {
            k: self.k,
            l: self.l,
            entries: self
                .entries
                .iter()
                .map(|e| StackEntry {
                    k: e.k,
                    l: e.l,
                    seed: e.seed,
                    data: f(&e.data),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslateConfig {
    pub da: DaConfig,
    /// Sweeps of the later-date latent chain before encoding.
    pub impute_sweeps: usize,
    pub sampler: TmvnMethod,
    pub seed: u64,
}

impl Default for TranslateConfig {
    fn default() -> Self {
        Self {
            da: DaConfig::default(),
            impute_sweeps: 100,
            sampler: TmvnMethod::Slice,
            seed: 0,
        }
    }
}

/// For each Stage-1 dataset, draw `l` parameter values from the MVOP
/// posterior given that dataset alone and impute the missing cells of
/// `later` under each of them.
pub fn translate_mvop(
    stage1: &[OrdinalDataset],
    later: &OrdinalDataset,
    l: usize,
    config: &TranslateConfig,
) -> Result<NestedStack<OrdinalDataset>> {
    if stage1.is_empty() || l == 0 {
        return Err(MvopError::domain(
            "translation needs at least one Stage-1 dataset and L >= 1",
        ));
    }
    for (k, s) in stage1.iter().enumerate() {
        if !s.same_schema(later) {
            return Err(MvopError::domain(format!(
                "Stage-1 dataset {k} and the later dataset have different schemas"
            )));
        }
        if s.has_missing() {
            return Err(MvopError::domain(format!("Stage-1 dataset {k} is not complete")));
        }
    }
    let nests: Vec<Result<Vec<StackEntry<OrdinalDataset>>>> = stage1
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let da = DaConfig {
                seed: derive_seed(config.seed, &[k as u64]),
                chains: 1,
                imputations: 0,
                ..config.da
            };
            let draws = run_da(s, &da)?.remove(0);
            let picks = select_equally_spaced(draws.params.len(), l);
            picks
                .iter()
                .enumerate()
                .map(|(li, &idx)| {
                    let seed = derive_seed(config.seed, &[k as u64, li as u64]);
                    let y = impute_from_params(later, &draws.params[idx], config.impute_sweeps, config.sampler, seed)?;
                    Ok(StackEntry {
                        k,
                        l: li,
                        seed,
                        data: later.with_completed(&y)?,
                    })
                })
                .collect()
        })
        .collect();
    let mut entries = Vec::with_capacity(stage1.len() * l);
    for n in nests {
        entries.extend(n?);
    }
    Ok(NestedStack {
        k: stage1.len(),
        l,
        entries,
    })
}

/// Total-score translation by `s1 = xi0 + xi1 s2 + e` under the
/// noninformative posterior: `sigma^2 = SSE / chi2_{n-2}`,
/// `xi ~ N(xi_hat, sigma^2 (X^T X)^-1)`.
pub fn translate_regression(
    stage1_s1: &[Vec<f64>],
    s2_admission: &[f64],
    s2_later: &[f64],
    l: usize,
    seed: u64,
) -> Result<NestedStack<Vec<f64>>> {
    let n = s2_admission.len();
    if n < 3 {
        return Err(MvopError::domain("regression translation needs at least 3 units"));
    }
    if stage1_s1.is_empty() || l == 0 || stage1_s1.iter().any(|s| s.len() != n) {
        return Err(MvopError::domain("Stage-1 totals must match the admission totals"));
    }
    let mx = s2_admission.iter().sum::<f64>() / n as f64;
    let sxx: f64 = s2_admission.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(MvopError::estimation("admission predictor totals have zero variance"));
    }
    let xtx = DMatrix::from_row_slice(
        2,
        2,
        &[
            n as f64,
            s2_admission.iter().sum(),
            s2_admission.iter().sum(),
            s2_admission.iter().map(|v| v * v).sum(),
        ],
    );
    let xtx_chol = crate::linalg::cholesky(&crate::linalg::spd_inverse(&xtx, "X^T X")?, "(X^T X)^-1")?.l();
    let mut entries = Vec::with_capacity(stage1_s1.len() * l);
    for (k, s1) in stage1_s1.iter().enumerate() {
        let my = s1.iter().sum::<f64>() / n as f64;
        let sxy: f64 = s2_admission.iter().zip(s1).map(|(x, y)| (x - mx) * (y - my)).sum();
        let b1 = sxy / sxx;
        let b0 = my - b1 * mx;
        let sse: f64 = s2_admission
            .iter()
            .zip(s1)
            .map(|(x, y)| (y - b0 - b1 * x).powi(2))
            .sum();
        for li in 0..l {
            let s = derive_seed(seed, &[k as u64, li as u64]);
            let mut rng = rng_from_seed(s);
            let sigma2 = sse / chi_square((n - 2) as f64, &mut rng);
            let (e0, e1) = (std_normal(&mut rng), std_normal(&mut rng));
            let sd = sigma2.sqrt();
            let xi0 = b0 + sd * xtx_chol[(0, 0)] * e0;
            let xi1 = b1 + sd * (xtx_chol[(1, 0)] * e0 + xtx_chol[(1, 1)] * e1);
            let data = s2_later
                .iter()
                .map(|x| xi0 + xi1 * x + sd * std_normal(&mut rng))
                .collect();
            entries.push(StackEntry {
                k,
                l: li,
                seed: s,
                data,
            });
        }
    }
    Ok(NestedStack {
        k: stage1_s1.len(),
        l,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub qbar: f64,
    pub ubar: f64,
    /// Between-nest mean square.
    pub mb: f64,
    /// Within-nest mean square; zero when `L = 1`.
    pub mw: f64,
    pub total_var: f64,
    /// Reference degrees of freedom; infinite when all imputations agree.
    pub df: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub k: usize,
    pub l: usize,
}

impl PooledEstimate {
    pub fn se(&self) -> f64 {
        self.total_var.sqrt()
    }

    /// `L = 1`: the ordinary single-level combining rules.
    pub fn is_single_level(&self) -> bool {
        self.l == 1
    }
}

/// Nested combining rules on `q[k][l]` estimates with variances `u[k][l]`.
pub fn pool_values(q: &[Vec<f64>], u: &[Vec<f64>], alpha: f64) -> Result<PooledEstimate> {
    if q.first().is_some_and(|r| r.len() == 1) {
        warn!("L = 1: nested pooling reduces to single-level combining rules");
    }
    combine(q, u, alpha)
}

/// Single-level combining rules over `K` imputations.
pub fn pool_single(q: &[f64], u: &[f64], alpha: f64) -> Result<PooledEstimate> {
    let wrap = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
    combine(&wrap(q), &wrap(u), alpha)
}

fn combine(q: &[Vec<f64>], u: &[Vec<f64>], alpha: f64) -> Result<PooledEstimate> {
    let k = q.len();
    if k < 2 {
        return Err(MvopError::domain("pooling needs K >= 2"));
    }
    let l = q[0].len();
    if l == 0 || q.iter().any(|r| r.len() != l) || u.len() != k || u.iter().any(|r| r.len() != l) {
        return Err(MvopError::domain("estimates must form a complete K x L array"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MvopError::domain("alpha must lie in (0, 1)"));
    }
    if q.iter().chain(u).flatten().any(|v| !v.is_finite()) || u.iter().flatten().any(|&v| v < 0.0) {
        return Err(MvopError::domain("estimates must be finite and variances nonnegative"));
    }
    let (kf, lf) = (k as f64, l as f64);
    let nest_means: Vec<f64> = q.iter().map(|r| r.iter().sum::<f64>() / lf).collect();
    let qbar = nest_means.iter().sum::<f64>() / kf;
    let ubar = u.iter().flatten().sum::<f64>() / (kf * lf);
    let mb = nest_means.iter().map(|m| (m - qbar).powi(2)).sum::<f64>() / (kf - 1.0);
    let mw = if l > 1 {
        q.iter()
            .zip(&nest_means)
            .map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (kf * (lf - 1.0))
    } else {
        0.0
    };
    let between = (1.0 + 1.0 / kf) * mb;
    let within = (1.0 - 1.0 / lf) * mw;
    let total_var = ubar + between + within;
    if !(total_var > 0.0) {
        return Err(MvopError::estimation(
            "degenerate pooled variance: all estimates agree and within-imputation variance is zero",
        ));
    }
    let df = if between == 0.0 && within == 0.0 {
        f64::INFINITY
    } else if l == 1 {
        // Rubin's form of the same Satterthwaite expression.
        (kf - 1.0) * (1.0 + ubar / between).powi(2)
    } else {
        let inv_df = (between / total_var).powi(2) / (kf - 1.0) + (within / total_var).powi(2) / (kf * (lf - 1.0));
        1.0 / inv_df
    };
    let crit = if df.is_finite() {
        student_t_quantile(1.0 - alpha / 2.0, df)
    } else {
        norm_quantile(1.0 - alpha / 2.0)
    };
    let half = crit * total_var.sqrt();
    Ok(PooledEstimate {
        qbar,
        ubar,
        mb,
        mw,
        total_var,
        df,
        ci: (qbar - half, qbar + half),
        alpha,
        k,
        l,
    })
}

/// Apply `estimator` to every completed dataset of `stack` and pool.
pub fn pool<T>(
    stack: &NestedStack<T>,
    estimator: impl Fn(&T) -> Result<(f64, f64)>,
    alpha: f64,
) -> Result<PooledEstimate> {
    let mut q = vec![vec![0.0; stack.l]; stack.k];
    let mut u = vec![vec![0.0; stack.l]; stack.k];
    let mut seen = BTreeMap::new();
    for e in &stack.entries {
        if e.k >= stack.k || e.l >= stack.l || seen.insert((e.k, e.l), ()).is_some() {
            return Err(MvopError::domain(format!(
                "stack entry ({}, {}) is out of range or repeated",
                e.k, e.l
            )));
        }
        let (qh, uh) = estimator(&e.data)?;
        q[e.k][e.l] = qh;
        u[e.k][e.l] = uh;
    }
    if seen.len() != stack.k * stack.l {
        return Err(MvopError::domain("stack is incomplete"));
    }
    pool_values(&q, &u, alpha)
}

/// Group-difference change statistics for one completed dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeStatistics {
    /// `d_a - d_b`, the difference in mean change `S2 - S1`.
    pub d: f64,
    pub d_var: f64,
    /// `p_a - p_b`, the difference in the share with `S2 < S1`.
    pub p: f64,
    pub p_var: f64,
}

/// `group[i]` marks membership of the first group (`a`).
pub fn change_statistics(s1: &[f64], s2: &[f64], group: &[bool]) -> Result<ChangeStatistics> {
    if s1.len() != s2.len() || s1.len() != group.len() {
        return Err(MvopError::domain("score vectors and group labels differ in length"));
    }
    let summarize = |flag: bool| -> Result<(f64, f64, f64, f64)> {
        let deltas: Vec<f64> = s1
            .iter()
            .zip(s2)
            .zip(group)
            .filter(|(_, &g)| g == flag)
            .map(|((a, b), _)| b - a)
            .collect();
        let n = deltas.len();
        if n == 0 {
            return Err(MvopError::domain("a comparison group has no members"));
        }
        let nf = n as f64;
        let mean = deltas.iter().sum::<f64>() / nf;
        let var = if n > 1 {
            deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        let p = deltas.iter().filter(|&&d| d < 0.0).count() as f64 / nf;
        Ok((mean, var / nf, p, p * (1.0 - p) / nf))
    };
    let (da, va, pa, wa) = summarize(true)?;
    let (db, vb, pb, wb) = summarize(false)?;
    Ok(ChangeStatistics {
        d: da - db,
        d_var: va + vb,
        p: pa - pb,
        p_var: wa + wb,
    })
}

/// Pooled `d_a - d_b` and `p_a - p_b`. `admission[k]` holds the totals of
/// Stage-1 dataset `k`; `later` holds the translated later-date totals.
pub fn functional_change_estimates(
    admission: &[Vec<f64>],
    later: &NestedStack<Vec<f64>>,
    group: &[bool],
    alpha: f64,
) -> Result<(PooledEstimate, PooledEstimate)> {
    if admission.len() != later.k {
        return Err(MvopError::domain("admission totals must have one entry per nest"));
    }
    let stats = NestedStack {
        k: later.k,
        l: later.l,
        entries: later
            .entries
            .iter()
            .map(|e| {
                let s1 = admission
                    .get(e.k)
                    .ok_or_else(|| MvopError::domain("nest index out of range"))?;
                Ok(StackEntry {
                    k: e.k,
                    l: e.l,
                    seed: e.seed,
                    data: change_statistics(s1, &e.data, group)?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let d = pool(&stats, |c| Ok((c.d, c.d_var)), alpha)?;
    let p = pool(&stats, |c| Ok((c.p, c.p_var)), alpha)?;
    Ok((d, p))
}
