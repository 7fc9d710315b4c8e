//! Truncated multivariate normal sampling on coordinate boxes.
//!
//! Two Markov kernels are provided. The slice kernel introduces one
//! auxiliary height `u ~ U(0, exp(-q(x)/2))` per sweep, where `q` is the
//! Gaussian quadratic form, and then moves each coordinate uniformly on the
//! intersection of its box interval with the slice `{q <= -2 ln u}`. The
//! Gibbs kernel draws each coordinate from its exact univariate truncated
//! normal full conditional. Both leave `N(mean, cov)` restricted to the box
//! invariant.
//!
//! Boxes follow the ordinal cell convention `lo < x <= hi`.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{MvopError, Result};
use crate::linalg;
use crate::rng::{rng_from_seed, Rng};
use crate::stats::{open_unit, sample_truncnorm_std};

const MAX_BURN_IN: usize = 10_000_000;
const MAX_THIN: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxConstraint {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(MvopError::domain("box bounds have different lengths"));
        }
        for (k, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if a.is_nan() || b.is_nan() || a >= b {
                return Err(MvopError::domain(format!(
                    "empty box interval ({a}, {b}] at coordinate {k}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn unbounded(j: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; j],
            hi: vec![f64::INFINITY; j],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(&self.lo)
                .zip(&self.hi)
                .all(|((&v, &a), &b)| v > a && v <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TmvnMethod {
    #[default]
    Slice,
    Gibbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TmvnSamplerConfig {
    pub method: TmvnMethod,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for TmvnSamplerConfig {
    fn default() -> Self {
        Self {
            method: TmvnMethod::Slice,
            burn_in: 100,
            thin: 1,
            seed: 0,
        }
    }
}

impl TmvnSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.thin > MAX_THIN {
            return Err(MvopError::validation(format!("thin must be in 1..={MAX_THIN}")));
        }
        if self.burn_in > MAX_BURN_IN {
            return Err(MvopError::validation(format!("burn_in must be at most {MAX_BURN_IN}")));
        }
        Ok(())
    }
}

/// Dense row-major precision matrix shared by all rows of a model.
#[derive(Debug, Clone)]
pub(crate) struct Precision {
    j: usize,
    p: Vec<f64>,
}

impl Precision {
    pub(crate) fn from_cov(cov: &DMatrix<f64>) -> Result<Self> {
        let inv = linalg::spd_inverse(cov, "covariance")?;
        let j = cov.nrows();
        let mut p = vec![0.0; j * j];
        for a in 0..j {
            for b in 0..j {
                p[a * j + b] = inv[(a, b)];
            }
        }
        Ok(Self { j, p })
    }

    #[inline]
    fn at(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.j + b]
    }
}

#[inline]
fn keep_inside(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        lo.next_up().min(hi)
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// A point inside `(lo, hi]`, preferring the mean when it is admissible.
pub(crate) fn interior_start(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if mean > lo && mean <= hi {
        mean
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo + 0.5 * sd
    } else {
        hi - 0.5 * sd
    }
}

fn residual_products(x: &[f64], mean: &[f64], prec: &Precision, pr: &mut [f64]) -> f64 {
    let j = prec.j;
    let mut q = 0.0;
    for a in 0..j {
        let mut s = 0.0;
        for b in 0..j {
            s += prec.at(a, b) * (x[b] - mean[b]);
        }
        pr[a] = s;
        q += (x[a] - mean[a]) * s;
    }
    q
}

/// One slice sweep in place. `pr` is scratch space of length J.
pub(crate) fn slice_sweep(
    x: &mut [f64],
    mean: &[f64],
    prec: &Precision,
    lo: &[f64],
    hi: &[f64],
    rng: &mut Rng,
    pr: &mut [f64],
) {
    let j = prec.j;
    let mut q = residual_products(x, mean, prec, pr);
    // u = U * exp(-q/2)  <=>  slice level t = q - 2 ln U.
    let t = q - 2.0 * open_unit(rng).ln();
    for k in 0..j {
        let pkk = prec.at(k, k);
        let r = x[k] - mean[k];
        let c = pr[k] - pkk * r;
        let rstar = -c / pkk;
        let dev = r - rstar;
        let qmin = q - pkk * dev * dev;
        let half = ((t - qmin) / pkk).max(0.0).sqrt();
        let centre = mean[k] + rstar;
        let a = lo[k].max(centre - half);
        let b = hi[k].min(centre + half);
        if !(a < b) {
            continue;
        }
        let xnew = keep_inside(a + (b - a) * rng.random::<f64>(), lo[k], hi[k]);
        let delta = xnew - x[k];
        for (a2, v) in pr.iter_mut().enumerate() {
            *v += prec.at(a2, k) * delta;
        }
        let dev_new = xnew - centre;
        q = qmin + pkk * dev_new * dev_new;
        x[k] = xnew;
    }
}

/// One systematic-scan Gibbs sweep in place.
pub(crate) fn gibbs_sweep(
    x: &mut [f64],
    mean: &[f64],
    prec: &Precision,
    lo: &[f64],
    hi: &[f64],
    rng: &mut Rng,
    pr: &mut [f64],
) {
    let j = prec.j;
    residual_products(x, mean, prec, pr);
    for k in 0..j {
        let pkk = prec.at(k, k);
        let r = x[k] - mean[k];
        let c = pr[k] - pkk * r;
        let centre = mean[k] - c / pkk;
        let sd = 1.0 / pkk.sqrt();
        let s = sample_truncnorm_std((lo[k] - centre) / sd, (hi[k] - centre) / sd, rng);
        let xnew = keep_inside(centre + sd * s, lo[k], hi[k]);
        let delta = xnew - x[k];
        for (a2, v) in pr.iter_mut().enumerate() {
            *v += prec.at(a2, k) * delta;
        }
        x[k] = xnew;
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn sweep(
    method: TmvnMethod,
    x: &mut [f64],
    mean: &[f64],
    prec: &Precision,
    lo: &[f64],
    hi: &[f64],
    rng: &mut Rng,
    pr: &mut [f64],
) {
    match method {
        TmvnMethod::Slice => slice_sweep(x, mean, prec, lo, hi, rng, pr),
        TmvnMethod::Gibbs => gibbs_sweep(x, mean, prec, lo, hi, rng, pr),
    }
}

fn check_step_inputs(current: &[f64], mean: &[f64], cov: &DMatrix<f64>, bounds: &BoxConstraint) -> Result<()> {
    let j = current.len();
    if mean.len() != j || cov.nrows() != j || cov.ncols() != j || bounds.dim() != j {
        return Err(MvopError::domain(
            "dimension mismatch between state, mean, covariance and box",
        ));
    }
    if !bounds.contains(current) {
        return Err(MvopError::domain("current state lies outside the box"));
    }
    Ok(())
}

/// One slice-sampler sweep from `current`.
pub fn slice_step(
    current: &[f64],
    mean: &[f64],
    cov: &DMatrix<f64>,
    bounds: &BoxConstraint,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_step_inputs(current, mean, cov, bounds)?;
    let prec = Precision::from_cov(cov)?;
    let mut x = current.to_vec();
    let mut pr = vec![0.0; x.len()];
    slice_sweep(&mut x, mean, &prec, bounds.lo(), bounds.hi(), rng, &mut pr);
    Ok(x)
}

/// One Gibbs sweep from `current`.
pub fn gibbs_step(
    current: &[f64],
    mean: &[f64],
    cov: &DMatrix<f64>,
    bounds: &BoxConstraint,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_step_inputs(current, mean, cov, bounds)?;
    let prec = Precision::from_cov(cov)?;
    let mut x = current.to_vec();
    let mut pr = vec![0.0; x.len()];
    gibbs_sweep(&mut x, mean, &prec, bounds.lo(), bounds.hi(), rng, &mut pr);
    Ok(x)
}

/// Run a chain targeting `N(mean, cov)` restricted to `bounds` and return
/// `n_draws` rows (after burn-in, every `thin`-th sweep).
pub fn sample_tmvn(
    mean: &[f64],
    cov: &DMatrix<f64>,
    bounds: &BoxConstraint,
    n_draws: usize,
    config: &TmvnSamplerConfig,
) -> Result<DMatrix<f64>> {
    config.validate()?;
    let j = mean.len();
    if cov.nrows() != j || cov.ncols() != j || bounds.dim() != j {
        return Err(MvopError::domain("dimension mismatch between mean, covariance and box"));
    }
    let prec = Precision::from_cov(cov)?;
    let mut rng = rng_from_seed(config.seed);
    let mut x: Vec<f64> = (0..j)
        .map(|k| interior_start(mean[k], cov[(k, k)].sqrt(), bounds.lo[k], bounds.hi[k]))
        .collect();
    let mut pr = vec![0.0; j];
    for _ in 0..config.burn_in {
        sweep(
            config.method,
            &mut x,
            mean,
            &prec,
            &bounds.lo,
            &bounds.hi,
            &mut rng,
            &mut pr,
        );
    }
    let mut out = DMatrix::<f64>::zeros(n_draws, j);
    for d in 0..n_draws {
        for _ in 0..config.thin {
            sweep(
                config.method,
                &mut x,
                mean,
                &prec,
                &bounds.lo,
                &bounds.hi,
                &mut rng,
                &mut pr,
            );
        }
        assert!(bounds.contains(&x), "sampler left the box: {x:?}");
        for k in 0..j {
            out[(d, k)] = x[k];
        }
    }
    Ok(out)
}
