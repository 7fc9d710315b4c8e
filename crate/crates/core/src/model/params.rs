use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dataset::{Level, OrdinalDataset};
use crate::error::{MvopError, Result};
use crate::linalg;

const PIN_TOL: f64 = 1e-12;
const UNIT_DIAG_TOL: f64 = 1e-10;

/// Identification constraints on the latent scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentificationMode {
    /// `gamma_{j,1} = 0` and `gamma_{j,c_j-1} = 1`; Sigma is a free covariance.
    Threshold,
    /// `gamma_{j,1} = 0` and Sigma is a correlation matrix.
    Correlation,
    /// Parameter-expanded working form: no constraints besides ordering.
    Unconstrained,
}

/// MVOP parameters `(gamma, beta, Sigma)`.
///
/// `gamma[j]` stores only the interior thresholds `gamma_{j,1} .. gamma_{j,c_j-1}`;
/// the outer thresholds are the implicit `-inf` and `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct MvopParams {
    mode: IdentificationMode,
    gamma: Vec<Vec<f64>>,
    beta: DMatrix<f64>,
    sigma: DMatrix<f64>,
}

impl MvopParams {
    pub fn new(
        mode: IdentificationMode,
        gamma: Vec<Vec<f64>>,
        beta: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let p = Self {
            mode,
            gamma,
            beta,
            sigma,
        };
        p.validate()?;
        Ok(p)
    }

    /// Construct without checks; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        mode: IdentificationMode,
        gamma: Vec<Vec<f64>>,
        beta: DMatrix<f64>,
        sigma: DMatrix<f64>,
    ) -> Self {
        Self {
            mode,
            gamma,
            beta,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.gamma.len();
        if self.beta.nrows() != j || self.sigma.nrows() != j || self.sigma.ncols() != j {
            return Err(MvopError::validation(format!(
                "parameter shapes disagree: {} threshold vectors, beta {}x{}, sigma {}x{}",
                j,
                self.beta.nrows(),
                self.beta.ncols(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        for (item, g) in self.gamma.iter().enumerate() {
            if g.is_empty() {
                return Err(MvopError::validation(format!("item {item} has no thresholds")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(MvopError::validation(format!("item {item} has non-finite thresholds")));
            }
            if g.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MvopError::validation(format!(
                    "thresholds of item {item} are not strictly increasing: {g:?}"
                )));
            }
            match self.mode {
                IdentificationMode::Threshold => {
                    if g[0].abs() > PIN_TOL {
                        return Err(MvopError::validation(format!("item {item}: gamma_1 must be 0")));
                    }
                    if g.len() >= 2 && (g[g.len() - 1] - 1.0).abs() > PIN_TOL {
                        return Err(MvopError::validation(format!("item {item}: gamma_(c-1) must be 1")));
                    }
                }
                IdentificationMode::Correlation => {
                    if g[0].abs() > PIN_TOL {
                        return Err(MvopError::validation(format!("item {item}: gamma_1 must be 0")));
                    }
                }
                IdentificationMode::Unconstrained => {}
            }
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(MvopError::validation("beta has non-finite entries"));
        }
        for a in 0..j {
            for b in 0..a {
                if (self.sigma[(a, b)] - self.sigma[(b, a)]).abs() > 1e-10 * (1.0 + self.sigma[(a, b)].abs()) {
                    return Err(MvopError::validation("sigma is not symmetric"));
                }
            }
        }
        if self.mode == IdentificationMode::Correlation
            && (0..j).any(|a| (self.sigma[(a, a)] - 1.0).abs() > UNIT_DIAG_TOL)
        {
            return Err(MvopError::validation("correlation mode requires a unit diagonal"));
        }
        linalg::cholesky(&self.sigma, "sigma")?;
        Ok(())
    }

    pub fn mode(&self) -> IdentificationMode {
        self.mode
    }

    pub fn n_items(&self) -> usize {
        self.gamma.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.beta.ncols()
    }

    pub fn levels(&self, item: usize) -> Level {
        (self.gamma[item].len() + 1) as Level
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub(crate) fn sigma_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.sigma
    }

    pub(crate) fn beta_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.beta
    }

    pub(crate) fn gamma_mut(&mut self) -> &mut Vec<Vec<f64>> {
        &mut self.gamma
    }

    pub fn into_parts(self) -> (IdentificationMode, Vec<Vec<f64>>, DMatrix<f64>, DMatrix<f64>) {
        (self.mode, self.gamma, self.beta, self.sigma)
    }

    /// The cell `(gamma_{j,level-1}, gamma_{j,level}]` for an observed level.
    pub fn cell_interval(&self, item: usize, level: Level) -> Result<(f64, f64)> {
        let c = self.levels(item);
        if level < 1 || level > c {
            return Err(MvopError::domain(format!(
                "level {level} outside 1..={c} for item {item}"
            )));
        }
        Ok(self.cell_unchecked(item, level))
    }

    #[inline]
    pub(crate) fn cell_unchecked(&self, item: usize, level: Level) -> (f64, f64) {
        let g = &self.gamma[item];
        let l = level as usize;
        let lo = if l == 1 { f64::NEG_INFINITY } else { g[l - 2] };
        let hi = if l == g.len() + 1 { f64::INFINITY } else { g[l - 1] };
        (lo, hi)
    }

    /// The level whose cell contains `z`; ties at a threshold go to the lower level.
    pub fn encode_latent(&self, z: f64, item: usize) -> Result<Level> {
        if z.is_nan() {
            return Err(MvopError::domain("cannot encode NaN latent value"));
        }
        Ok(self.encode_unchecked(z, item))
    }

    #[inline]
    pub(crate) fn encode_unchecked(&self, z: f64, item: usize) -> Level {
        // Number of thresholds strictly below z.
        let below = self.gamma[item].partition_point(|&g| g < z);
        (below + 1) as Level
    }

    /// `beta x_i` for every unit, row-major N x J.
    pub fn linear_predictor(&self, data: &OrdinalDataset) -> Vec<f64> {
        let n = data.n_units();
        let j = self.n_items();
        let x = data.covariates();
        let mut out = vec![0.0; n * j];
        for i in 0..n {
            for a in 0..j {
                let mut s = 0.0;
                for p in 0..x.ncols() {
                    s += self.beta[(a, p)] * x[(i, p)];
                }
                out[i * j + a] = s;
            }
        }
        out
    }

    pub fn correlation(&self) -> DMatrix<f64> {
        let j = self.n_items();
        DMatrix::from_fn(j, j, |a, b| {
            self.sigma[(a, b)] / (self.sigma[(a, a)] * self.sigma[(b, b)]).sqrt()
        })
    }
}

/// Latent responses `z_ij`, row-major N x J.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMatrix {
    n: usize,
    j: usize,
    z: Vec<f64>,
}

impl LatentMatrix {
    pub fn new(n: usize, j: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != n * j {
            return Err(MvopError::validation("latent matrix shape mismatch"));
        }
        Ok(Self { n, j, z })
    }

    pub fn zeros(n: usize, j: usize) -> Self {
        Self {
            n,
            j,
            z: vec![0.0; n * j],
        }
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_items(&self) -> usize {
        self.j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.j + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.z
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.j..(i + 1) * self.j]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.z[i * self.j..(i + 1) * self.j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// Whether every observed cell's latent value lies in its cell.
    pub fn is_consistent(&self, data: &OrdinalDataset, params: &MvopParams) -> bool {
        (0..self.n).all(|i| {
            (0..self.j).all(|j| match data.response(i, j) {
                None => self.get(i, j).is_finite(),
                Some(l) => {
                    let (lo, hi) = params.cell_unchecked(j, l);
                    let z = self.get(i, j);
                    z > lo && z <= hi
                }
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thr(gamma: Vec<Vec<f64>>) -> MvopParams {
        let j = gamma.len();
        MvopParams::new(
            IdentificationMode::Threshold,
            gamma,
            DMatrix::zeros(j, 1),
            DMatrix::identity(j, j),
        )
        .unwrap()
    }

    #[test]
    fn cell_intervals_in_threshold_mode() {
        let p = thr(vec![vec![0.0, 0.3, 0.7, 1.0]]);
        assert_eq!(p.cell_interval(0, 1).unwrap(), (f64::NEG_INFINITY, 0.0));
        assert_eq!(p.cell_interval(0, 5).unwrap(), (1.0, f64::INFINITY));
        assert!(matches!(p.cell_interval(0, 6), Err(MvopError::Domain(_))));
        assert!(matches!(p.cell_interval(0, 0), Err(MvopError::Domain(_))));
        let q = thr(vec![vec![0.0, 0.4, 1.0]]);
        assert_eq!(q.cell_interval(0, 2).unwrap(), (0.0, 0.4));
    }

    #[test]
    fn encoding_is_right_closed() {
        let p = thr(vec![vec![0.0, 1.0]]);
        assert_eq!(p.encode_latent(-3.2, 0).unwrap(), 1);
        assert_eq!(p.encode_latent(0.0, 0).unwrap(), 1);
        assert_eq!(p.encode_latent(1.0, 0).unwrap(), 2);
        assert_eq!(p.encode_latent(1.0 + 1e-15, 0).unwrap(), 3);
        assert!(p.encode_latent(f64::NAN, 0).is_err());
        let q = thr(vec![vec![0.0, 0.4, 1.0]]);
        assert_eq!(q.encode_latent(0.5, 0).unwrap(), 3);
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let bad_order = MvopParams::new(
            IdentificationMode::Unconstrained,
            vec![vec![0.0, 0.0]],
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        );
        assert!(bad_order.is_err());
        let bad_pin = MvopParams::new(
            IdentificationMode::Threshold,
            vec![vec![0.0, 0.5]],
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
        );
        assert!(bad_pin.is_err());
        let bad_diag = MvopParams::new(
            IdentificationMode::Correlation,
            vec![vec![0.0, 0.5]],
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 2.0),
        );
        assert!(bad_diag.is_err());
        let not_pd = MvopParams::new(
            IdentificationMode::Unconstrained,
            vec![vec![0.0], vec![0.0]],
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(not_pd, Err(MvopError::Numerical(_))));
    }

    #[test]
    fn binary_item_pins_only_first_threshold() {
        let p = thr(vec![vec![0.0]]);
        assert_eq!(p.levels(0), 2);
    }
}
