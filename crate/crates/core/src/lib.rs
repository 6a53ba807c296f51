//! Simulation of a warm-vapor DLCZ quantum memory: heralded photon pairs,
//! spin-wave storage, filter cascade, threshold detection, and the
//! spectral/fit pipeline used to analyze the results.

pub mod detection;
pub mod harness;
pub mod model;
pub mod optics;
pub mod rng;
pub mod source;
pub mod spectral;
pub mod spinwave;

pub use detection::{
    cauchy_schwarz_test, g2_auto_estimate, g2_cross_estimate, g2_cross_moments,
    heralding_efficiency, simulate_counts, simulate_photon_moments, simulate_trial, CSResult,
    ClickRecord, CountsTable, DetectionError, DetectionSetup, G2Estimate, PhotonMoments,
};
pub use harness::{run_scenario, HarnessError, RunReport, ScenarioId, ScenarioSpec, Sweep};
pub use model::{
    validate_config, AtomEnsembleParams, CoincidenceScheme, ConfigErrors, ConfigFileError,
    DetectionParams, ExperimentConfig, MotionModel, NoiseParams, PulseParams, ScanParams, Species,
    Violation,
};
pub use optics::{ArmEfficiency, CavityFitParams, CavityStage};
pub use source::{analytic_g2, AnalyticG2, EmissionModel, SourceError, TrialEmission};
pub use spectral::{SampledSpectrum, SpectralError};
pub use spinwave::{LifetimeFitParams, McEstimate, RetrievalCurve, SpinwaveError, WaveVectors};
