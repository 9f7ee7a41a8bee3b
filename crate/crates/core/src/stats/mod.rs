//! Statistical building blocks for the estimator: two-sample KS tests in one
//! and two dimensions, Savitzky–Golay smoothing and Gaussian peak fitting.

mod gaussian;
mod ks;
mod savgol;

pub use gaussian::{gaussian_fit, gaussian_fit_with, FitOptions, GaussianFit};
pub use ks::{
    kolmogorov_q, ks_1d, ks_2d, ks_2d_permutation, ks_2d_statistic, ks_2d_with, pearson, KsResult,
    PValueMethod, MIN_RELIABLE_N_EFF,
};
pub use savgol::{savgol_coefficients, savgol_smooth};
