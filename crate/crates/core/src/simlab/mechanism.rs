use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{MvopError, Result};
use crate::rng::rng_from_seed;

/// Box-Cox link CDF: `0` below the support for `lambda > 0`, `1` above it
/// for `lambda < 0`, logistic at `lambda = 0`, and otherwise
/// `(1 + lambda x)^(1/lambda) / ((1 + lambda x)^(1/lambda) + 1)`.
pub fn boxcox_cdf(x: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return logistic(x);
    }
    let base = 1.0 + lambda * x;
    if base <= 0.0 {
        return if lambda > 0.0 { 0.0 } else { 1.0 };
    }
    // t^(1/l) / (t^(1/l) + 1) = logistic(ln(t) / l), stable for large powers.
    logistic(base.ln() / lambda)
}

/// `exp(x) / (1 + exp(x))`, evaluated literally wherever `exp` is finite.
pub fn logistic(x: f64) -> f64 {
    if x > 700.0 {
        return 1.0;
    }
    let e = x.exp();
    e / (1.0 + e)
}

pub fn cauchy_cdf(x: f64) -> f64 {
    0.5 + x.atan() / std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LinkFamily {
    Logistic,
    Cauchy,
    Boxcox { lambda: f64 },
}

impl LinkFamily {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            LinkFamily::Logistic => logistic(x),
            LinkFamily::Cauchy => cauchy_cdf(x),
            LinkFamily::Boxcox { lambda } => boxcox_cdf(x, lambda),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            LinkFamily::Logistic => "logistic".into(),
            LinkFamily::Cauchy => "cauchy".into(),
            LinkFamily::Boxcox { lambda } => format!("boxcox({lambda})"),
        }
    }
}

/// `Pr(M_i = 1) = F(intercept + coefficients . w_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessMechanism {
    pub family: LinkFamily,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl MissingnessMechanism {
    pub fn linear_predictor(&self, w: &[f64]) -> Result<f64> {
        if w.len() != self.coefficients.len() {
            return Err(MvopError::domain("predictor length does not match the mechanism"));
        }
        Ok(w.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }

    pub fn probability(&self, w: &[f64]) -> Result<f64> {
        Ok(self.family.cdf(self.intercept + self.linear_predictor(w)?))
    }
}

/// Intercept `a0` with `mean_i F(a0 + eta_i) = target`, by bracket
/// expansion and bisection.
pub fn calibrate_intercept(family: LinkFamily, eta: &[f64], target: f64) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(MvopError::domain("target missingness rate must lie in (0, 1)"));
    }
    if eta.is_empty() {
        return Err(MvopError::domain(
            "calibration needs at least one linear predictor value",
        ));
    }
    let rate = |a: f64| eta.iter().map(|e| family.cdf(a + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while !(rate(lo) < target && rate(hi) > target) {
        lo *= 2.0;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(MvopError::numerical(format!(
                "could not bracket missingness rate {target} (achievable range {:.6}..{:.6})",
                rate(lo),
                rate(hi)
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let a = 0.5 * (lo + hi);
    if (rate(a) - target).abs() > 1e-4 {
        return Err(MvopError::numerical(format!(
            "missingness calibration stalled at rate {}",
            rate(a)
        )));
    }
    Ok(a)
}

/// Independent Bernoulli indicators with `p_i = F(intercept + eta_i)`.
pub fn generate_missingness(mechanism: &MissingnessMechanism, predictors: &[Vec<f64>], seed: u64) -> Result<Vec<bool>> {
    let mut rng = rng_from_seed(seed);
    predictors
        .iter()
        .map(|w| {
            let p = mechanism.probability(w)?;
            let u: f64 = rng.random();
            Ok(u < p)
        })
        .collect()
}
