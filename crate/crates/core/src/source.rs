//! Write-process emission: collective-excitation/Stokes pairs plus
//! uncorrelated noise photons in each arm.
//!
//! Pairs follow two-mode thermal statistics, `P(n) = λⁿ/(1+λ)ⁿ⁺¹`. Noise
//! photons are Poisson and independent of the pair process.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::model::{ExperimentConfig, NoiseParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SourceError {
    #[error("mean {0} intensity is zero; correlation undefined")]
    DegenerateDenominator(&'static str),
    #[error("invalid emission parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    pub lambda: f64,
    pub noise_mean_stokes: f64,
    pub noise_mean_antistokes: f64,
}

impl EmissionModel {
    pub fn ideal(lambda: f64) -> Self {
        Self {
            lambda,
            noise_mean_stokes: 0.0,
            noise_mean_antistokes: 0.0,
        }
    }

    /// Emission at the configured pulse energy. With `write_enabled = false`
    /// only the read-induced noise remains.
    pub fn from_config(cfg: &ExperimentConfig, write_enabled: bool) -> Self {
        let energy = cfg.pulses.energy;
        let noise_as = unconditional_noise_mean(energy, cfg.pulses.detuning_read, &cfg.noise);
        if write_enabled {
            Self {
                lambda: excitation_probability(energy, cfg.excitation_slope),
                noise_mean_stokes: cfg.noise.write_noise_slope * energy,
                noise_mean_antistokes: noise_as,
            }
        } else {
            Self {
                lambda: 0.0,
                noise_mean_stokes: 0.0,
                noise_mean_antistokes: noise_as,
            }
        }
    }

    fn check(&self) -> Result<(), SourceError> {
        for (name, value) in [
            ("lambda", self.lambda),
            ("noise_mean_stokes", self.noise_mean_stokes),
            ("noise_mean_antistokes", self.noise_mean_antistokes),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SourceError::InvalidParameter { name, value });
            }
        }
        Ok(())
    }
}

/// Photon content of one write/read attempt, before any loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrialEmission {
    pub pair_count: u32,
    pub stokes_noise_count: u32,
    pub antistokes_noise_count: u32,
}

/// Linear excitation model, `λ = slope · E_write`.
pub fn excitation_probability(write_energy: f64, slope: f64) -> f64 {
    slope * write_energy
}

/// Draws a pair number from the thermal distribution with mean `lambda`.
pub fn sample_pair_number<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let geo = Geometric::new(1.0 / (1.0 + lambda)).expect("success probability in (0, 1]");
    geo.sample(rng) as u32
}

/// Mean read-induced anti-Stokes noise photons per trial: linear in read
/// energy plus the detuning-dependent leakage profile.
pub fn unconditional_noise_mean(read_energy: f64, detuning_read: f64, noise: &NoiseParams) -> f64 {
    noise.unconditional_noise_slope * read_energy + noise.profile_noise(detuning_read)
}

/// Threshold-detector click probability for Poisson light of mean
/// `mean_photons` through `efficiency`, including dark counts.
pub fn unconditional_click_probability(mean_photons: f64, efficiency: f64, dark: f64) -> f64 {
    1.0 - (1.0 - dark) * (-efficiency * mean_photons).exp()
}

/// Normalized second-order correlations of the photon fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticG2 {
    pub cross: f64,
    pub auto_stokes: f64,
    pub auto_antistokes: f64,
}

/// Moment-ratio correlations of the thermal pair field with Poisson noise
/// added to each arm and the anti-Stokes pair component thinned by
/// `retrieval_efficiency`. Loss after the memory cancels out of every ratio.
pub fn analytic_g2(
    model: &EmissionModel,
    retrieval_efficiency: f64,
) -> Result<AnalyticG2, SourceError> {
    model.check()?;
    if !(0.0..=1.0).contains(&retrieval_efficiency) {
        return Err(SourceError::InvalidParameter {
            name: "retrieval_efficiency",
            value: retrieval_efficiency,
        });
    }
    let l = model.lambda;
    let eta = retrieval_efficiency;
    let ns = model.noise_mean_stokes;
    let na = model.noise_mean_antistokes;
    let i_s = l + ns;
    let i_a = eta * l + na;
    if i_s <= 0.0 {
        return Err(SourceError::DegenerateDenominator("Stokes"));
    }
    if i_a <= 0.0 {
        return Err(SourceError::DegenerateDenominator("anti-Stokes"));
    }
    // <n k> with k ~ Bin(n, eta) and <n^2> = lambda + 2 lambda^2
    let pair = eta * (l + 2.0 * l * l);
    let cross = (pair + l * na + ns * eta * l + ns * na) / (i_s * i_a);
    let auto_stokes = 1.0 + (l / i_s).powi(2);
    let auto_antistokes = 1.0 + (eta * l / i_a).powi(2);
    Ok(AnalyticG2 {
        cross,
        auto_stokes,
        auto_antistokes,
    })
}

/// Per-trial sampler with its distributions built once.
#[derive(Debug, Clone)]
pub struct EmissionSampler {
    pairs: Option<Geometric>,
    stokes_noise: Option<Poisson<f64>>,
    antistokes_noise: Option<Poisson<f64>>,
}

impl EmissionSampler {
    pub fn new(model: &EmissionModel) -> Result<Self, SourceError> {
        model.check()?;
        let poisson = |m: f64| (m > 0.0).then(|| Poisson::new(m).expect("positive finite mean"));
        Ok(Self {
            pairs: (model.lambda > 0.0)
                .then(|| Geometric::new(1.0 / (1.0 + model.lambda)).expect("p in (0, 1]")),
            stokes_noise: poisson(model.noise_mean_stokes),
            antistokes_noise: poisson(model.noise_mean_antistokes),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialEmission {
        TrialEmission {
            pair_count: self.pairs.map_or(0, |g| g.sample(rng) as u32),
            stokes_noise_count: self.stokes_noise.map_or(0, |p| p.sample(rng) as u32),
            antistokes_noise_count: self.antistokes_noise.map_or(0, |p| p.sample(rng) as u32),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OPERATING_ENERGY, OPERATING_LAMBDA};
    use crate::rng::stream_rng;

    /// Exact normally-ordered moments by enumeration over the truncated
    /// thermal distribution, with binomial thinning enumerated explicitly.
    fn enumerated_g2(lambda: f64, eta: f64) -> (f64, f64, f64) {
        let p = lambda / (1.0 + lambda);
        let mut prob = 1.0 / (1.0 + lambda);
        let (mut mean_n, mut fact_n, mut mean_k, mut fact_k, mut nk) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for n in 0..2000u32 {
            if n > 2 && prob < 1e-16 {
                break;
            }
            let nf = n as f64;
            // enumerate k ~ Bin(n, eta)
            let mut c = 1.0f64;
            for k in 0..=n {
                if k > 0 {
                    c *= (n - k + 1) as f64 / k as f64;
                }
                let pk = c * eta.powi(k as i32) * (1.0 - eta).powi((n - k) as i32);
                let kf = k as f64;
                mean_k += prob * pk * kf;
                fact_k += prob * pk * kf * (kf - 1.0);
                nk += prob * pk * nf * kf;
            }
            mean_n += prob * nf;
            fact_n += prob * nf * (nf - 1.0);
            prob *= p;
        }
        (
            nk / (mean_n * mean_k),
            fact_n / (mean_n * mean_n),
            fact_k / (mean_k * mean_k),
        )
    }

    #[test]
    fn operating_slope_gives_operating_lambda() {
        let slope = ExperimentConfig::default().excitation_slope;
        assert!((slope * 1e-12 - 1.33e-3).abs() < 5e-6);
        let l = excitation_probability(OPERATING_ENERGY, slope);
        assert!((l - OPERATING_LAMBDA).abs() < 1e-12);
        assert_eq!(excitation_probability(0.0, slope), 0.0);
        assert!((excitation_probability(2.0 * OPERATING_ENERGY, slope) - 2.0 * l).abs() < 1e-15);
    }

    #[test]
    fn ideal_g2_matches_enumeration() {
        let g = analytic_g2(&EmissionModel::ideal(0.172), 1.0).unwrap();
        let (cross, auto_s, auto_a) = enumerated_g2(0.172, 1.0);
        assert!((g.cross - cross).abs() < 1e-9, "{} vs {}", g.cross, cross);
        assert!((g.cross - 7.814).abs() < 1e-3);
        assert!((g.auto_stokes - auto_s).abs() < 1e-9);
        assert!((g.auto_antistokes - auto_a).abs() < 1e-9);
        assert!((g.auto_stokes - 2.0).abs() < 1e-12);
    }

    #[test]
    fn thinned_g2_matches_enumeration() {
        for &(l, eta) in &[(0.05, 0.3), (0.5, 0.08), (0.172, 0.77)] {
            let g = analytic_g2(&EmissionModel::ideal(l), eta).unwrap();
            let (cross, _, auto_a) = enumerated_g2(l, eta);
            assert!((g.cross - cross).abs() < 1e-9);
            assert!((g.auto_antistokes - auto_a).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_dominated_limit_is_uncorrelated() {
        let m = EmissionModel {
            lambda: 1e-6,
            noise_mean_stokes: 10.0,
            noise_mean_antistokes: 10.0,
        };
        let g = analytic_g2(&m, 1.0).unwrap();
        assert!((g.cross - 1.0).abs() < 1e-5);
    }

    #[test]
    fn operating_point_with_calibrated_noise() {
        let cfg = ExperimentConfig::default();
        let m = EmissionModel::from_config(&cfg, true);
        let g = analytic_g2(&m, cfg.read_efficiency).unwrap();
        assert!((g.cross - 7.83).abs() < 0.54, "{}", g.cross);
        assert!((1.6..=2.2).contains(&g.auto_stokes));
        assert!((1.6..=2.2).contains(&g.auto_antistokes));
    }

    #[test]
    fn degenerate_denominators() {
        assert_eq!(
            analytic_g2(&EmissionModel::ideal(0.0), 1.0),
            Err(SourceError::DegenerateDenominator("Stokes"))
        );
        assert_eq!(
            analytic_g2(&EmissionModel::ideal(0.1), 0.0),
            Err(SourceError::DegenerateDenominator("anti-Stokes"))
        );
    }

    #[test]
    fn cross_decreases_with_lambda_and_violates_cs() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let l = i as f64 * 0.01;
            let g = analytic_g2(&EmissionModel::ideal(l), 1.0).unwrap();
            assert!(g.cross < prev);
            assert!(g.cross * g.cross > g.auto_stokes * g.auto_antistokes);
            prev = g.cross;
        }
    }

    #[test]
    fn noise_mean_calibration_and_extrapolation() {
        let n = NoiseParams::default();
        assert_eq!(unconditional_noise_mean(0.0, 4e9, &n), 0.0);
        assert!((unconditional_noise_mean(30e-12, 4e9, &n) - 7.79e-5).abs() < 1e-15);
        assert!((unconditional_noise_mean(60e-12, 4e9, &n) - 1.558e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_lambda_never_emits() {
        let mut rng = stream_rng(1, 0);
        assert!((0..1000).all(|_| sample_pair_number(0.0, &mut rng) == 0));
    }

    #[test]
    fn vacuum_probability_at_quarter() {
        let mut rng = stream_rng(2, 0);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| sample_pair_number(0.25, &mut rng) == 0)
            .count();
        let p = zeros as f64 / n as f64;
        let sigma = (0.8 * 0.2 / n as f64).sqrt();
        assert!((p - 0.8).abs() < 3.0 * sigma, "{p}");
    }

    #[test]
    fn sample_mean_and_factorial_moment() {
        let l = 0.172;
        let sampler = EmissionSampler::new(&EmissionModel::ideal(l)).unwrap();
        let mut rng = stream_rng(3, 0);
        let n = 1_000_000;
        let (mut s1, mut s2, mut sq) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let k = sampler.sample(&mut rng).pair_count as f64;
            s1 += k;
            s2 += k * (k - 1.0);
            sq += k * k;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let var = sq / nf - mean * mean;
        assert!((mean - l).abs() < 3.0 * (var / nf).sqrt(), "{mean}");
        // second factorial moment 2 lambda^2; loose statistical bound
        assert!((s2 / nf - 2.0 * l * l).abs() < 0.003, "{}", s2 / nf);
    }
}
