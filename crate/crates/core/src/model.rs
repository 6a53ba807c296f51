//! Physical constants, run configuration, and validation shared by every
//! other module.
//!
//! Internally all quantities are SI: kelvin, joules, hertz, metres, seconds.
//! The config file accepts `temperature_celsius` as an alternative to
//! `temperature` (kelvin); it is converted on ingestion and never written
//! back out.
//!
//! The beam waist is the 1/e² intensity radius of the write/read mode.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optics::CavityFitParams;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.99792458e8;
/// Mass of a caesium-133 atom (kg).
pub const CAESIUM_MASS: f64 = 2.2069e-25;
/// Caesium ground-state hyperfine splitting, rounded as quoted for the
/// experiment (Hz).
pub const CAESIUM_HYPERFINE: f64 = 9.2e9;
/// Caesium D2 line wavelength (m).
pub const CAESIUM_D2_WAVELENGTH: f64 = 852.347e-9;
/// 0 °C in kelvin.
pub const ZERO_CELSIUS: f64 = 273.15;

/// Operating-point energy of the write/read pulses (J).
pub const OPERATING_ENERGY: f64 = 129e-12;
/// Excitation probability at the operating point.
pub const OPERATING_LAMBDA: f64 = 0.172;
/// Unconditional noise calibration: mean anti-Stokes noise photons per
/// trial at 30 pJ read energy.
pub const NOISE_CALIBRATION_MEAN: f64 = 7.79e-5;
/// Read energy at which [`NOISE_CALIBRATION_MEAN`] was measured (J).
pub const NOISE_CALIBRATION_ENERGY: f64 = 30e-12;

/// Diffusion coefficient giving a 1/e retrieval-efficiency lifetime of
/// 800 ns at a 90 µm waist under the diffusive transit model, where the
/// efficiency falls as `(1 + 2Dt/w²)⁻²` (m²/s).
pub const DEFAULT_DIFFUSION: f64 = 3.284e-3;

/// How atoms move between write and read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    /// Gaussian displacement with variance `2Dt` per axis.
    #[default]
    Diffusive,
    /// Free flight with a Maxwell–Boltzmann velocity per atom.
    Ballistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAtoms")]
pub struct AtomEnsembleParams {
    pub cell_length: f64,
    /// Kelvin.
    pub temperature: f64,
    /// Torr.
    pub buffer_gas_pressure: f64,
    pub optical_depth: f64,
    pub atomic_mass: f64,
    pub hyperfine_splitting: f64,
    /// 1/e² intensity radius.
    pub beam_waist: f64,
    pub diffusion_coefficient: f64,
    pub motion: MotionModel,
}

impl Default for AtomEnsembleParams {
    fn default() -> Self {
        Self {
            cell_length: 0.075,
            temperature: 61.3 + ZERO_CELSIUS,
            buffer_gas_pressure: 10.0,
            optical_depth: 400.0,
            atomic_mass: CAESIUM_MASS,
            hyperfine_splitting: CAESIUM_HYPERFINE,
            beam_waist: 90e-6,
            diffusion_coefficient: DEFAULT_DIFFUSION,
            motion: MotionModel::Diffusive,
        }
    }
}

/// File-side form of [`AtomEnsembleParams`]; allows Celsius input.
#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawAtoms {
    cell_length: f64,
    temperature: Option<f64>,
    temperature_celsius: Option<f64>,
    buffer_gas_pressure: f64,
    optical_depth: f64,
    atomic_mass: f64,
    hyperfine_splitting: f64,
    beam_waist: f64,
    diffusion_coefficient: f64,
    motion: MotionModel,
}

impl Default for RawAtoms {
    fn default() -> Self {
        let d = AtomEnsembleParams::default();
        Self {
            cell_length: d.cell_length,
            temperature: None,
            temperature_celsius: None,
            buffer_gas_pressure: d.buffer_gas_pressure,
            optical_depth: d.optical_depth,
            atomic_mass: d.atomic_mass,
            hyperfine_splitting: d.hyperfine_splitting,
            beam_waist: d.beam_waist,
            diffusion_coefficient: d.diffusion_coefficient,
            motion: d.motion,
        }
    }
}

impl TryFrom<RawAtoms> for AtomEnsembleParams {
    type Error = String;

    fn try_from(raw: RawAtoms) -> Result<Self, Self::Error> {
        let temperature = match (raw.temperature, raw.temperature_celsius) {
            (Some(_), Some(_)) => {
                return Err("set only one of `temperature` and `temperature_celsius`".into())
            }
            (Some(k), None) => k,
            (None, Some(c)) => c + ZERO_CELSIUS,
            (None, None) => AtomEnsembleParams::default().temperature,
        };
        Ok(Self {
            cell_length: raw.cell_length,
            temperature,
            buffer_gas_pressure: raw.buffer_gas_pressure,
            optical_depth: raw.optical_depth,
            atomic_mass: raw.atomic_mass,
            hyperfine_splitting: raw.hyperfine_splitting,
            beam_waist: raw.beam_waist,
            diffusion_coefficient: raw.diffusion_coefficient,
            motion: raw.motion,
        })
    }
}

/// Write and read pulses share duration and energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseParams {
    pub duration_fwhm: f64,
    /// Joules per pulse.
    pub energy: f64,
    pub detuning_read: f64,
    pub detuning_write: f64,
    pub bandwidth: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            duration_fwhm: 2.3e-9,
            energy: OPERATING_ENERGY,
            detuning_read: 4e9,
            detuning_write: 4e9 + CAESIUM_HYPERFINE,
            bandwidth: 200e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoincidenceScheme {
    /// One detector per species; Stokes/anti-Stokes coincidences.
    #[default]
    Cross,
    /// One species through a 50:50 splitter onto two detectors.
    AutoHbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Stokes,
    #[default]
    AntiStokes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionParams {
    pub detector_efficiency: f64,
    pub dark_count_probability: f64,
    /// Cascade plus coupling transmission, identical for both arms.
    pub transmission_chain: f64,
    pub coincidence_scheme: CoincidenceScheme,
    /// Species routed through the HBT splitter in `auto_hbt` mode.
    pub hbt_species: Species,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            detector_efficiency: 0.6,
            dark_count_probability: 1e-6,
            transmission_chain: 0.4,
            coincidence_scheme: CoincidenceScheme::Cross,
            hbt_species: Species::AntiStokes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    /// Mean anti-Stokes noise photons per joule of read energy.
    pub unconditional_noise_slope: f64,
    /// Mean Stokes noise photons per joule of write energy.
    pub write_noise_slope: f64,
    /// `(read detuning Hz, added mean noise photons)`, linearly interpolated
    /// and clamped at the ends.
    pub detuning_noise_profile: Vec<(f64, f64)>,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            unconditional_noise_slope: NOISE_CALIBRATION_MEAN / NOISE_CALIBRATION_ENERGY,
            write_noise_slope: 0.0,
            detuning_noise_profile: Vec::new(),
        }
    }
}

impl NoiseParams {
    /// Added noise from the detuning profile at `detuning` (Hz).
    pub fn profile_noise(&self, detuning: f64) -> f64 {
        let p = &self.detuning_noise_profile;
        match p.len() {
            0 => 0.0,
            1 => p[0].1,
            _ => {
                let mut sorted = p.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let first = sorted[0];
                let last = sorted[sorted.len() - 1];
                if detuning <= first.0 {
                    return first.1;
                }
                if detuning >= last.0 {
                    return last.1;
                }
                let i = sorted.partition_point(|e| e.0 <= detuning);
                let (x0, y0) = sorted[i - 1];
                let (x1, y1) = sorted[i];
                if x1 == x0 {
                    return y1;
                }
                y0 + (y1 - y0) * (detuning - x0) / (x1 - x0)
            }
        }
    }
}

/// Frequency-scan settings for the bandwidth measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanParams {
    pub step: f64,
    /// Half-width of the detuning scan (Hz); the grid is `[-span, span]`.
    pub span: f64,
    /// Half-width of the classical-light cavity transmission scan (Hz).
    pub cavity_span: f64,
    /// FWHM of the photon spectrum used to synthesize the scan (Hz).
    pub photon_fwhm: f64,
    /// Relative (multiplicative) noise on the synthesized scans.
    pub noise_fraction: f64,
    /// Constant count offset added to the detuning scan.
    pub baseline: f64,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            step: 20e6,
            span: 3e9,
            cavity_span: 30e9,
            photon_fwhm: 504e6,
            noise_fraction: 0.01,
            baseline: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub atoms: AtomEnsembleParams,
    pub pulses: PulseParams,
    pub detection: DetectionParams,
    pub noise: NoiseParams,
    pub cavity: CavityFitParams,
    pub scan: ScanParams,
    /// Excitation probability per joule of write energy.
    pub excitation_slope: f64,
    /// Intrinsic read-out efficiency of a stored excitation at zero delay.
    pub read_efficiency: f64,
    pub trials: u64,
    pub storage_time: f64,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            atoms: AtomEnsembleParams::default(),
            pulses: PulseParams::default(),
            detection: DetectionParams::default(),
            noise: NoiseParams::default(),
            cavity: CavityFitParams::triple_cascade(),
            scan: ScanParams::default(),
            excitation_slope: OPERATING_LAMBDA / OPERATING_ENERGY,
            read_efficiency: 0.077,
            trials: 1_000_000,
            storage_time: 30e-9,
            rng_seed: 0x5eed,
        }
    }
}

/// One broken invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {} violates {}",
            self.field, self.value, self.constraint
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<Violation>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config ({} violations)", self.0.len())?;
        for v in &self.0 {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("writing config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Invalid(#[from] ConfigErrors),
}

struct Checker(Vec<Violation>);

impl Checker {
    fn check(&mut self, ok: bool, field: &'static str, value: f64, constraint: &'static str) {
        if !ok || value.is_nan() {
            self.0.push(Violation {
                field,
                value,
                constraint,
            });
        }
    }

    fn positive(&mut self, field: &'static str, value: f64) {
        self.check(value > 0.0 && value.is_finite(), field, value, "> 0");
    }

    fn non_negative(&mut self, field: &'static str, value: f64) {
        self.check(value >= 0.0 && value.is_finite(), field, value, ">= 0");
    }

    fn probability(&mut self, field: &'static str, value: f64) {
        self.check((0.0..=1.0).contains(&value), field, value, "in [0, 1]");
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate_config(cfg: ExperimentConfig) -> Result<ExperimentConfig, ConfigErrors> {
    let mut c = Checker(Vec::new());
    let a = &cfg.atoms;
    c.positive("atoms.cell_length", a.cell_length);
    c.positive("atoms.temperature", a.temperature);
    c.positive("atoms.buffer_gas_pressure", a.buffer_gas_pressure);
    c.positive("atoms.optical_depth", a.optical_depth);
    c.positive("atoms.atomic_mass", a.atomic_mass);
    c.positive("atoms.hyperfine_splitting", a.hyperfine_splitting);
    c.positive("atoms.beam_waist", a.beam_waist);
    c.positive("atoms.diffusion_coefficient", a.diffusion_coefficient);
    c.check(
        a.beam_waist < a.cell_length,
        "atoms.beam_waist",
        a.beam_waist,
        "< atoms.cell_length",
    );

    let p = &cfg.pulses;
    c.positive("pulses.duration_fwhm", p.duration_fwhm);
    c.non_negative("pulses.energy", p.energy);
    c.positive("pulses.bandwidth", p.bandwidth);
    c.check(
        p.detuning_read.is_finite(),
        "pulses.detuning_read",
        p.detuning_read,
        "finite",
    );
    c.check(
        (p.detuning_write - p.detuning_read - a.hyperfine_splitting).abs() <= 1.0,
        "pulses.detuning_write",
        p.detuning_write,
        "= detuning_read + hyperfine_splitting (within 1 Hz)",
    );

    let d = &cfg.detection;
    c.probability("detection.detector_efficiency", d.detector_efficiency);
    c.probability("detection.dark_count_probability", d.dark_count_probability);
    c.probability("detection.transmission_chain", d.transmission_chain);

    let n = &cfg.noise;
    c.non_negative(
        "noise.unconditional_noise_slope",
        n.unconditional_noise_slope,
    );
    c.non_negative("noise.write_noise_slope", n.write_noise_slope);
    for &(_, added) in &n.detuning_noise_profile {
        c.non_negative("noise.detuning_noise_profile", added);
    }

    for v in cfg.cavity.violations() {
        c.0.push(v);
    }

    let s = &cfg.scan;
    c.positive("scan.step", s.step);
    c.positive("scan.span", s.span);
    c.positive("scan.cavity_span", s.cavity_span);
    c.positive("scan.photon_fwhm", s.photon_fwhm);
    c.non_negative("scan.noise_fraction", s.noise_fraction);
    c.non_negative("scan.baseline", s.baseline);
    c.check(
        s.span / s.step >= 8.0,
        "scan.span",
        s.span,
        ">= 8 grid steps (16-point minimum)",
    );

    c.non_negative("excitation_slope", cfg.excitation_slope);
    c.probability("read_efficiency", cfg.read_efficiency);
    c.check(cfg.trials >= 1, "trials", cfg.trials as f64, ">= 1");
    c.non_negative("storage_time", cfg.storage_time);

    if c.0.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigErrors(c.0))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigFileError> {
        Ok(toml::to_string(self)?)
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(validate_config(Self::from_toml_str(&text)?)?)
    }
}

/// One-dimensional rms thermal speed `√(k_B T / m)`.
pub fn thermal_speed(atoms: &AtomEnsembleParams) -> f64 {
    (BOLTZMANN * atoms.temperature / atoms.atomic_mass).sqrt()
}
