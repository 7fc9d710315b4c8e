//! Per-row truncated-normal state shared by the MCEM E-step and the DA
//! I-step: row means, cell boxes, and warm-started sweeps.

use crate::error::Result;
use crate::model::{LatentMatrix, MvopParams, OrdinalDataset, ResponseMatrix};
use crate::rng::Rng;
use crate::tmvn::{self, interior_start, Precision, TmvnMethod};

/// Conditional law of `Z | Y_obs` under fixed parameters.
pub(crate) struct LatentModel {
    n: usize,
    j: usize,
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    sd: Vec<f64>,
    prec: Precision,
}

impl LatentModel {
    pub(crate) fn new(data: &OrdinalDataset, params: &MvopParams) -> Result<Self> {
        let n = data.n_units();
        let j = data.n_items();
        let prec = Precision::from_cov(params.sigma())?;
        let mean = params.linear_predictor(data);
        let mut lo = vec![f64::NEG_INFINITY; n * j];
        let mut hi = vec![f64::INFINITY; n * j];
        for i in 0..n {
            for (a, y) in data.row(i).iter().enumerate() {
                if let Some(l) = y {
                    let (l0, h0) = params.cell_unchecked(a, *l);
                    lo[i * j + a] = l0;
                    hi[i * j + a] = h0;
                }
            }
        }
        let sd = (0..j).map(|a| params.sigma()[(a, a)].sqrt()).collect();
        Ok(Self {
            n,
            j,
            mean,
            lo,
            hi,
            sd,
            prec,
        })
    }

    pub(crate) fn interior(&self) -> LatentMatrix {
        let mut z = LatentMatrix::zeros(self.n, self.j);
        self.repair(&mut z, true);
        z
    }

    /// Move coordinates that violate their box back inside. With `all`, every
    /// coordinate is reset to its interior start.
    pub(crate) fn repair(&self, z: &mut LatentMatrix, all: bool) {
        let j = self.j;
        for (k, v) in z.values_mut().iter_mut().enumerate() {
            let (lo, hi) = (self.lo[k], self.hi[k]);
            if all || !(*v > lo && *v <= hi) || !v.is_finite() {
                *v = interior_start(self.mean[k], self.sd[k % j], lo, hi);
            }
        }
    }

    pub(crate) fn sweep(&self, method: TmvnMethod, z: &mut LatentMatrix, rng: &mut Rng) {
        let j = self.j;
        let mut pr = vec![0.0; j];
        for i in 0..self.n {
            let r = i * j..(i + 1) * j;
            tmvn::sweep(
                method,
                z.row_mut(i),
                &self.mean[r.clone()],
                &self.prec,
                &self.lo[r.clone()],
                &self.hi[r],
                rng,
                &mut pr,
            );
        }
    }
}

/// Observed cells passed through, missing cells encoded from `z`.
pub(crate) fn encode_missing(data: &OrdinalDataset, params: &MvopParams, z: &LatentMatrix) -> ResponseMatrix {
    let n = data.n_units();
    let j = data.n_items();
    let mut codes = Vec::with_capacity(n * j);
    for i in 0..n {
        for (a, y) in data.row(i).iter().enumerate() {
            codes.push(match y {
                Some(l) => *l,
                None => params.encode_unchecked(z.get(i, a), a),
            });
        }
    }
    ResponseMatrix::new(n, j, codes)
}
