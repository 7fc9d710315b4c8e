//! Parameter expansion: `z* = D z`, `beta* = D beta`, `R* = D R D`,
//! `gamma*_j = d_j gamma_j` with `D = diag(d)`.

use nalgebra::DMatrix;

use super::params::{IdentificationMode, LatentMatrix, MvopParams};
use crate::error::{MvopError, Result};

/// Positive diagonal of the expansion matrix `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionScale(Vec<f64>);

impl ExpansionScale {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(v) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(MvopError::domain(format!(
                "expansion scale entries must be positive, got {v}"
            )));
        }
        Ok(Self(d))
    }

    pub fn ones(j: usize) -> Self {
        Self(vec![1.0; j])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Map correlation-mode `(params, z)` into the unconstrained working space.
pub fn px_transform(
    params: &MvopParams,
    z: &LatentMatrix,
    scale: &ExpansionScale,
) -> Result<(MvopParams, LatentMatrix)> {
    if params.mode() != IdentificationMode::Correlation {
        return Err(MvopError::domain("px_transform expects correlation-mode parameters"));
    }
    let d = scale.values();
    if d.len() != params.n_items() || z.n_items() != params.n_items() {
        return Err(MvopError::domain("expansion scale length does not match items"));
    }
    Ok((
        scale_params(params, d, IdentificationMode::Unconstrained),
        scale_latent(z, d),
    ))
}

/// Result of mapping working-space values back to correlation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PxInverse {
    pub params: MvopParams,
    pub latent: LatentMatrix,
    pub scale: ExpansionScale,
}

/// Recover `d_j = sqrt(Sigma*_jj)` and divide every component by it.
pub fn px_inverse(working: &MvopParams, z: &LatentMatrix) -> Result<PxInverse> {
    let (params, scale) = px_inverse_params(working)?;
    let inv: Vec<f64> = scale.values().iter().map(|d| 1.0 / d).collect();
    Ok(PxInverse {
        params,
        latent: scale_latent(z, &inv),
        scale,
    })
}

/// [`px_inverse`] on parameters alone.
pub fn px_inverse_params(working: &MvopParams) -> Result<(MvopParams, ExpansionScale)> {
    let j = working.n_items();
    let s = working.sigma();
    let mut d = Vec::with_capacity(j);
    for a in 0..j {
        let v = s[(a, a)];
        if !(v > 0.0 && v.is_finite()) {
            return Err(MvopError::numerical(format!(
                "working covariance has diagonal {v} at item {a}"
            )));
        }
        d.push(v.sqrt());
    }
    let inv: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
    let mut p = scale_params(working, &inv, IdentificationMode::Correlation);
    for a in 0..j {
        p.sigma_mut()[(a, a)] = 1.0;
    }
    Ok((p, ExpansionScale(d)))
}

fn scale_params(params: &MvopParams, d: &[f64], mode: IdentificationMode) -> MvopParams {
    let j = params.n_items();
    let gamma = params
        .gamma()
        .iter()
        .zip(d)
        .map(|(g, &dj)| g.iter().map(|v| v * dj).collect())
        .collect();
    let beta = DMatrix::from_fn(j, params.n_covariates(), |a, p| d[a] * params.beta()[(a, p)]);
    let sigma = DMatrix::from_fn(j, j, |a, b| d[a] * params.sigma()[(a, b)] * d[b]);
    MvopParams::from_parts_unchecked(mode, gamma, beta, sigma)
}

fn scale_latent(z: &LatentMatrix, d: &[f64]) -> LatentMatrix {
    let j = z.n_items();
    let mut out = z.clone();
    for (idx, v) in out.values_mut().iter_mut().enumerate() {
        *v *= d[idx % j];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr_params() -> MvopParams {
        MvopParams::new(
            IdentificationMode::Correlation,
            vec![vec![0.0, 0.4, 1.0], vec![0.0, 0.7]],
            DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 1.1, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn unit_scale_is_identity() {
        let p = corr_params();
        let z = LatentMatrix::new(1, 2, vec![0.2, -1.0]).unwrap();
        let (wp, wz) = px_transform(&p, &z, &ExpansionScale::ones(2)).unwrap();
        assert_eq!(wp.sigma(), p.sigma());
        assert_eq!(wp.beta(), p.beta());
        assert_eq!(wp.gamma(), p.gamma());
        assert_eq!(wz, z);
    }

    #[test]
    fn drd_by_direct_product() {
        let p = corr_params();
        let z = LatentMatrix::new(1, 2, vec![0.2, -1.0]).unwrap();
        let (wp, _) = px_transform(&p, &z, &ExpansionScale::new(vec![2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(wp.sigma(), &DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0]));
        assert_eq!(wp.gamma()[0], vec![0.0, 0.8, 2.0]);
        let back = px_inverse(&wp, &z).unwrap();
        assert_eq!(back.scale.values(), &[2.0, 3.0]);
        assert_eq!(
            back.params.sigma(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])
        );
        assert_eq!(back.params.gamma()[0], vec![0.0, 0.4, 1.0]);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        assert!(matches!(ExpansionScale::new(vec![1.0, 0.0]), Err(MvopError::Domain(_))));
        assert!(ExpansionScale::new(vec![-1.0]).is_err());
    }

    #[test]
    fn transform_requires_correlation_mode() {
        let p = MvopParams::new(
            IdentificationMode::Threshold,
            vec![vec![0.0, 1.0]],
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let z = LatentMatrix::zeros(1, 1);
        assert!(px_transform(&p, &z, &ExpansionScale::ones(1)).is_err());
    }
}
