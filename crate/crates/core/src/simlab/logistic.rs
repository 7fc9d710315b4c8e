use nalgebra::{DMatrix, DVector};

use crate::error::{MvopError, Result};
use crate::linalg;
use crate::model::OrdinalDataset;

use super::mechanism::logistic;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per predictor.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }
}

/// Maximum-likelihood logistic regression by Newton-Raphson with step
/// halving. An intercept is added; `names` label the predictor columns in
/// error messages.
pub fn fit_logistic(w: &[Vec<f64>], y: &[bool], names: &[String]) -> Result<LogisticFit> {
    let n = y.len();
    if w.len() != n || n == 0 {
        return Err(MvopError::domain("predictor rows and responses differ in length"));
    }
    let p = w[0].len() + 1;
    if names.len() + 1 != p || w.iter().any(|r| r.len() + 1 != p) {
        return Err(MvopError::domain("predictor rows have inconsistent lengths"));
    }
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(MvopError::estimation("response indicator is constant"));
    }
    let x = DMatrix::from_fn(n, p, |i, c| if c == 0 { 1.0 } else { w[i][c - 1] });
    let yv = DVector::from_fn(n, |i, _| if y[i] { 1.0 } else { 0.0 });
    let label = |c: usize| {
        if c == 0 {
            "(intercept)".to_string()
        } else {
            names[c - 1].clone()
        }
    };
    let loglik = |b: &DVector<f64>| -> f64 {
        let eta = &x * b;
        (0..n)
            .map(|i| {
                let e = eta[i];
                // log(1 + exp(e)) without overflow.
                let softplus = if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                };
                yv[i] * e - softplus
            })
            .sum()
    };
    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = loglik(&beta);
    for it in 1..=100 {
        let eta = &x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let mut info = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for i in 0..n {
            let wi = mu[i] * (1.0 - mu[i]);
            for a in 0..p {
                score[a] += x[(i, a)] * (yv[i] - mu[i]);
                for b in 0..=a {
                    info[(a, b)] += wi * x[(i, a)] * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let step = match linalg::cholesky(&info, "logistic information") {
            Ok(chol) => chol.solve(&score),
            Err(_) => {
                let dep = linalg::dependent_columns(&(x.transpose() * &x));
                if !dep.is_empty() {
                    let cols: Vec<String> = dep.iter().map(|&c| label(c)).collect();
                    return Err(MvopError::numerical(format!(
                        "collinear predictors: {}",
                        cols.join(", ")
                    )));
                }
                return Err(separation(&beta, &label));
            }
        };
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut next_ll = loglik(&next);
        while next_ll < ll - 1e-12 && t > 1e-8 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = loglik(&next);
        }
        let change = (&next - &beta).amax();
        beta = next;
        let gain = next_ll - ll;
        ll = next_ll;
        if beta.amax() > 50.0 && ll > -1e-6 * n as f64 {
            return Err(separation(&beta, &label));
        }
        if change < 1e-10 || (gain.abs() < 1e-12 * (1.0 + ll.abs()) && change < 1e-7) {
            let eta = &x * &beta;
            let mut info = DMatrix::<f64>::zeros(p, p);
            for i in 0..n {
                let m = logistic(eta[i]);
                let wi = m * (1.0 - m);
                for a in 0..p {
                    for b in 0..p {
                        info[(a, b)] += wi * x[(i, a)] * x[(i, b)];
                    }
                }
            }
            let cov = linalg::spd_inverse(&info, "logistic information").map_err(|_| separation(&beta, &label))?;
            let std_errors = (0..p).map(|a| cov[(a, a)].sqrt()).collect();
            if beta.iter().any(|v| v.abs() > 30.0) {
                return Err(separation(&beta, &label));
            }
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                std_errors,
                iterations: it,
            });
        }
    }
    Err(separation(&beta, &label))
}

fn separation(beta: &DVector<f64>, label: &dyn Fn(usize) -> String) -> MvopError {
    let (c, v) = beta.iter().enumerate().skip(1).fold(
        (0, 0.0f64),
        |acc, (c, v)| if v.abs() > acc.1.abs() { (c, *v) } else { acc },
    );
    let dir = if v >= 0.0 { "+" } else { "-" };
    MvopError::estimation(format!(
        "quasi-complete separation: coefficients diverge along {dir}{}",
        label(c)
    ))
}

/// Predictor rows for the missingness model: anchor item scores followed by
/// the named covariates.
pub fn missingness_predictors(
    data: &OrdinalDataset,
    anchor_items: &[usize],
    covariates: &[usize],
) -> (Vec<Vec<f64>>, Vec<String>) {
    let x = data.covariates();
    let rows = (0..data.n_units())
        .map(|i| {
            let mut r: Vec<f64> = anchor_items
                .iter()
                .map(|&j| data.response(i, j).map_or(f64::NAN, f64::from))
                .collect();
            r.extend(covariates.iter().map(|&c| x[(i, c)]));
            r
        })
        .collect();
    let mut names: Vec<String> = anchor_items.iter().map(|&j| data.item_names()[j].clone()).collect();
    names.extend(covariates.iter().map(|&c| data.covariate_names()[c].clone()));
    (rows, names)
}

/// Logistic missingness model on anchor scores and covariates.
pub fn fit_missingness_model(
    data: &OrdinalDataset,
    anchor_items: &[usize],
    covariates: &[usize],
    missing: &[bool],
) -> Result<LogisticFit> {
    let (rows, names) = missingness_predictors(data, anchor_items, covariates);
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MvopError::domain("anchor items must be fully observed"));
    }
    fit_logistic(&rows, missing, &names)
}
