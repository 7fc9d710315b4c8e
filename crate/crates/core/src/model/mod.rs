//! The MVOP data model: ordinal responses generated by thresholding a
//! latent multivariate normal vector `z_i ~ N(beta x_i, Sigma)`.

mod dataset;
mod expansion;
mod likelihood;
mod params;
mod simulate;

pub use dataset::{Level, OrdinalDataset, ResponseMatrix};
pub use expansion::{px_inverse, px_inverse_params, px_transform, ExpansionScale, PxInverse};
pub use likelihood::{complete_data_loglik, observed_data_loglik_mc, McLoglik};
pub use params::{IdentificationMode, LatentMatrix, MvopParams};
pub use simulate::{simulate_dataset, simulate_latent};
