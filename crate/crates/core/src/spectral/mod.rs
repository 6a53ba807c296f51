//! Numerical pipeline for the bandwidth and lifetime measurements:
//! damped least-squares fitting, regularized Fourier deconvolution, and
//! width extraction.

mod deconv;
pub mod fit;
mod lifetime;
mod spectrum;
mod width;

pub use deconv::{
    deconvolve_spectrum, fourier_forward, fourier_inverse, Deconvolution, DeconvolutionSettings,
    Window,
};
pub use fit::{
    fit_cavity_profile, fit_gaussian_scan, least_squares, least_squares_fit, CavityModel,
    CurveModel, FitError, FitOptions, FitOutput, GaussianModel, GaussianScanFit, LifetimeModel,
    ModelId, Termination, Weighting,
};
pub use lifetime::{fit_lifetime_curve, LifetimeFit};
pub use spectrum::{convolve, SampledSpectrum, MIN_POINTS};
pub use width::{fwhm, Width};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grids do not match: {0}")]
    GridMismatch(String),
    #[error("{have} points, need at least {need}")]
    TooFewPoints { have: usize, need: usize },
    #[error("invalid sample value {0}")]
    InvalidValue(f64),
    #[error("transfer function is identically zero")]
    ZeroKernel,
    #[error("peak at grid edge (index {0})")]
    EdgePeak(usize),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for SpectralError {
    fn from(e: csv::Error) -> Self {
        Self::Csv(e.to_string())
    }
}
