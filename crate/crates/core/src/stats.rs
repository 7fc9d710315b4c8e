//! Scalar distribution helpers shared across samplers and estimators.

use libm::erfc;
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{MvopError, Result};
use crate::linalg;
use crate::rng::Rng;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail `1 - Phi(x)` computed without cancellation.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}

/// `P(a < X <= b)` for a standard normal, evaluated on the tail closest to
/// the interval so that far-tail cells do not cancel to zero.
pub fn normal_interval_prob(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        norm_sf(a) - norm_sf(b)
    } else if b <= 0.0 {
        norm_cdf(b) - norm_cdf(a)
    } else {
        1.0 - norm_cdf(a) - norm_sf(b)
    }
}

/// Inverse CDF of the standard normal truncated to `(a, b)`, evaluated at
/// `u` in `(0, 1)`.
pub fn truncnorm_std_icdf(a: f64, b: f64, u: f64) -> f64 {
    debug_assert!(a < b);
    let x = if a >= 0.0 {
        let sa = norm_sf(a);
        let sb = norm_sf(b);
        if sa > 1e-300 {
            -norm_quantile(sa - u * (sa - sb))
        } else {
            // Beyond ~37 sigma: exponential tail approximation.
            let span = if b.is_finite() { 1.0 - (-a * (b - a)).exp() } else { 1.0 };
            a - (1.0 - u * span).ln() / a
        }
    } else if b <= 0.0 {
        -truncnorm_std_icdf(-b, -a, 1.0 - u)
    } else {
        let pa = norm_cdf(a);
        let pb = norm_cdf(b);
        norm_quantile(pa + u * (pb - pa))
    };
    x.clamp(a, b)
}

/// Draw from the standard normal truncated to `(a, b)`.
pub fn sample_truncnorm_std(a: f64, b: f64, rng: &mut Rng) -> f64 {
    if a >= 0.0 && norm_sf(a) <= 1e-300 {
        return tail_rejection(a, b, rng);
    }
    if b <= 0.0 && norm_cdf(b) <= 1e-300 {
        return -tail_rejection(-b, -a, rng);
    }
    let u: f64 = open_unit(rng);
    truncnorm_std_icdf(a, b, u)
}

// Robert (1995) exponential proposal for a far-tail cell (a, b), a > 0.
fn tail_rejection(a: f64, b: f64, rng: &mut Rng) -> f64 {
    if b.is_finite() && (b - a) < 1.0 / a {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (-0.5 * (z * z - a * a)).exp() {
                return z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - open_unit(rng).ln() / alpha;
        if z > b {
            continue;
        }
        if rng.random::<f64>() <= (-0.5 * (z - alpha) * (z - alpha)).exp() {
            return z;
        }
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn open_unit(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn std_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn chi_square(df: f64, rng: &mut Rng) -> f64 {
    ChiSquared::new(df).expect("positive degrees of freedom").sample(rng)
}

/// Inverse-gamma draw with density proportional to `x^(-shape-1) exp(-rate/x)`.
pub fn inverse_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
    1.0 / g
}

/// Inverse-Wishart draw `IW(df, scale)` with mean `scale / (df - J - 1)`,
/// via the Bartlett decomposition of the matching Wishart.
pub fn sample_inverse_wishart(df: f64, scale: &DMatrix<f64>, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let j = scale.nrows();
    if df <= (j as f64) - 1.0 {
        return Err(MvopError::domain(format!(
            "inverse-Wishart needs df > J - 1 (df = {df}, J = {j})"
        )));
    }
    let c = linalg::cholesky(scale, "inverse-Wishart scale")?.l();
    let mut a = DMatrix::<f64>::zeros(j, j);
    for i in 0..j {
        a[(i, i)] = chi_square(df - i as f64, rng).sqrt();
        for k in 0..i {
            a[(i, k)] = std_normal(rng);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(j, j))
        .ok_or_else(|| MvopError::numerical("singular Bartlett factor"))?;
    let b = c * a_inv.transpose();
    let mut sigma = &b * b.transpose();
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Quantile of Student's t; infinite degrees of freedom fall back to the normal.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    if !df.is_finite() || df > 1e8 {
        return norm_quantile(p);
    }
    StudentsT::new(0.0, 1.0, df).expect("positive df").inverse_cdf(p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Monte Carlo standard error of the mean of a correlated chain by
/// non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len());
    let size = xs.len() / b;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..b).map(|i| mean(&xs[i * size..(i + 1) * size])).collect();
    (sample_variance(&means) / b as f64).sqrt()
}

/// Effective sample size using Geyer's initial monotone positive sequence.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - lag {
            s += (xs[t] - m) * (xs[t + lag] - m);
        }
        s / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = 2.0 * sum - 1.0;
    n as f64 / tau.max(1e-12)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic Kolmogorov p-value for statistic `d` at sample size `n`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Pearson chi-square goodness-of-fit p-value against equal cell counts.
pub fn chi_square_uniformity_pvalue(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = statrs::distribution::ChiSquared::new((counts.len() - 1) as f64).expect("df > 0");
    1.0 - dist.cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn tail_probabilities_do_not_cancel() {
        let p = normal_interval_prob(8.0, 9.0);
        assert!(p > 6.0e-16 && p < 7.0e-16, "{p}");
        let q = normal_interval_prob(-1.0, 1.0);
        assert!((q - 0.682_689_492_137_085_9).abs() < 1e-12, "{q:e} {:e}", norm_sf(1.0));
    }

    #[test]
    fn far_tail_truncated_draws_stay_inside() {
        let mut rng = rng_from_seed(3);
        for &(a, b) in &[(8.0, 9.0), (40.0, 41.0), (-9.0, -8.0), (50.0, f64::INFINITY)] {
            for _ in 0..200 {
                let x = sample_truncnorm_std(a, b, &mut rng);
                assert!(x.is_finite() && x >= a && x <= b, "{x} not in ({a},{b})");
            }
        }
    }

    #[test]
    fn truncated_icdf_matches_closed_form_median() {
        // Median of N(0,1) on (0, inf) is Phi^{-1}(0.75).
        let m = truncnorm_std_icdf(0.0, f64::INFINITY, 0.5);
        assert!((m - 0.674_489_750_196_081_7).abs() < 1e-9);
    }

    #[test]
    fn inverse_wishart_mean_identity() {
        let mut rng = rng_from_seed(11);
        let scale = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let df = 10.0;
        let reps = 20_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..reps {
            acc += sample_inverse_wishart(df, &scale, &mut rng).unwrap();
        }
        acc /= reps as f64;
        let expected = &scale / (df - 3.0);
        for i in 0..2 {
            for j in 0..2 {
                assert!((acc[(i, j)] - expected[(i, j)]).abs() < 0.01, "{acc}");
            }
        }
    }

    #[test]
    fn ess_of_iid_is_near_n() {
        let mut rng = rng_from_seed(5);
        let xs: Vec<f64> = (0..4000).map(|_| std_normal(&mut rng)).collect();
        let ess = effective_sample_size(&xs);
        assert!(ess > 3000.0 && ess < 5500.0, "{ess}");
    }
}
