//! Threshold detectors, the HBT splitter, click accumulation and the
//! correlation estimators.
//!
//! A trial is one write/read attempt, which is also the coincidence window.
//! Counts are treated as independent Poisson variables when propagating
//! errors.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{CoincidenceScheme, DetectionParams, ExperimentConfig, Species};
use crate::optics::ArmEfficiency;
use crate::rng::{batches, stream_rng};
use crate::source::{EmissionModel, EmissionSampler, SourceError, TrialEmission};

/// Trials per independently seeded batch.
pub const TRIAL_BATCH: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectionError {
    #[error("insufficient counts: {0} is zero")]
    InsufficientCounts(&'static str),
    #[error("invalid probability {name} = {value}")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error(transparent)]
    Source(#[from] SourceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClickRecord {
    pub stokes_click: bool,
    pub antistokes_click: bool,
    pub hbt_arm1_click: bool,
    pub hbt_arm2_click: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountsTable {
    pub trials: u64,
    pub n_stokes: u64,
    pub n_antistokes: u64,
    pub n_coincidence: u64,
    pub n_arm1: u64,
    pub n_arm2: u64,
    pub n_arm_coincidence: u64,
}

impl CountsTable {
    pub fn record(&mut self, c: &ClickRecord) {
        self.trials += 1;
        self.n_stokes += c.stokes_click as u64;
        self.n_antistokes += c.antistokes_click as u64;
        self.n_coincidence += (c.stokes_click && c.antistokes_click) as u64;
        self.n_arm1 += c.hbt_arm1_click as u64;
        self.n_arm2 += c.hbt_arm2_click as u64;
        self.n_arm_coincidence += (c.hbt_arm1_click && c.hbt_arm2_click) as u64;
    }

    pub fn merge(&mut self, o: &Self) {
        self.trials += o.trials;
        self.n_stokes += o.n_stokes;
        self.n_antistokes += o.n_antistokes;
        self.n_coincidence += o.n_coincidence;
        self.n_arm1 += o.n_arm1;
        self.n_arm2 += o.n_arm2;
        self.n_arm_coincidence += o.n_arm_coincidence;
    }

    pub fn is_consistent(&self) -> bool {
        let singles = [self.n_stokes, self.n_antistokes, self.n_arm1, self.n_arm2];
        singles.iter().all(|&n| n <= self.trials)
            && self.n_coincidence <= self.n_stokes.min(self.n_antistokes)
            && self.n_arm_coincidence <= self.n_arm1.min(self.n_arm2)
    }

    pub const CSV_HEADER: &'static str =
        "trials,n_stokes,n_antistokes,n_coincidence,n_arm1,n_arm2,n_arm_coincidence";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.trials,
            self.n_stokes,
            self.n_antistokes,
            self.n_coincidence,
            self.n_arm1,
            self.n_arm2,
            self.n_arm_coincidence
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Estimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CSResult {
    /// `g2_cross² / (g2_SS · g2_ASAS)`.
    pub ratio: f64,
    pub ratio_error: f64,
    /// `g2_cross² − g2_SS · g2_ASAS`.
    pub excess: f64,
    pub excess_error: f64,
    /// Excess in units of its propagated error.
    pub significance: f64,
}

fn check_prob(name: &'static str, value: f64) -> Result<(), DetectionError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(DetectionError::InvalidProbability { name, value })
    }
}

/// Everything needed to turn emissions into clicks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSetup {
    pub emission: EmissionModel,
    /// Probability that a stored excitation comes out as an anti-Stokes
    /// photon.
    pub retrieval_efficiency: f64,
    pub stokes_arm: ArmEfficiency,
    pub antistokes_arm: ArmEfficiency,
    pub detection: DetectionParams,
}

impl DetectionSetup {
    /// Both arms get the configured chain.
    pub fn from_config(
        cfg: &ExperimentConfig,
        write_enabled: bool,
        retrieval_efficiency: f64,
    ) -> Self {
        let arm = ArmEfficiency::from_detection(&cfg.detection);
        Self {
            emission: EmissionModel::from_config(cfg, write_enabled),
            retrieval_efficiency,
            stokes_arm: arm,
            antistokes_arm: arm,
            detection: cfg.detection.clone(),
        }
    }

    /// Lossless arms, dark-count free detectors.
    pub fn ideal(
        emission: EmissionModel,
        retrieval_efficiency: f64,
        scheme: CoincidenceScheme,
    ) -> Self {
        Self {
            emission,
            retrieval_efficiency,
            stokes_arm: ArmEfficiency::PERFECT,
            antistokes_arm: ArmEfficiency::PERFECT,
            detection: DetectionParams {
                detector_efficiency: 1.0,
                dark_count_probability: 0.0,
                transmission_chain: 1.0,
                coincidence_scheme: scheme,
                hbt_species: crate::model::Species::AntiStokes,
            },
        }
    }

    pub fn with_scheme(&self, scheme: CoincidenceScheme, species: Species) -> Self {
        let mut s = self.clone();
        s.detection.coincidence_scheme = scheme;
        s.detection.hbt_species = species;
        s
    }

    fn validate(&self) -> Result<(), DetectionError> {
        check_prob("retrieval_efficiency", self.retrieval_efficiency)?;
        check_prob(
            "dark_count_probability",
            self.detection.dark_count_probability,
        )?;
        for arm in [&self.stokes_arm, &self.antistokes_arm] {
            if !arm.is_valid() {
                return Err(DetectionError::InvalidProbability {
                    name: "arm efficiency",
                    value: arm.total(),
                });
            }
        }
        Ok(())
    }
}

/// Threshold click: at least one of `n` photons survives with probability
/// `p` each, or a dark count fires. One uniform draw.
fn threshold_click<R: Rng + ?Sized>(survival: f64, n: u32, dark: f64, rng: &mut R) -> bool {
    let none = (1.0 - dark) * (1.0 - survival).powi(n as i32);
    rng.random::<f64>() >= none
}

/// Routes each photon through loss and a fair splitter. Returns whether
/// each output port received at least one photon.
fn split_photons<R: Rng + ?Sized>(n: u32, survival: f64, rng: &mut R, ports: &mut [bool; 2]) {
    for _ in 0..n {
        let u: f64 = rng.random();
        if u < 0.5 * survival {
            ports[0] = true;
        } else if u < survival {
            ports[1] = true;
        }
    }
}

/// Realizes one trial's clicks from its photon content.
///
/// Every photon independently survives its arm; the anti-Stokes member of
/// a pair additionally survives retrieval. A detector clicks when at least
/// one photon arrives or a dark count fires. In `auto_hbt` mode the chosen
/// species is split 50:50 onto two detectors and the cross-arm fields stay
/// false.
pub fn simulate_trial<R: Rng + ?Sized>(
    emission: &TrialEmission,
    retrieval_eff: f64,
    stokes_arm: &ArmEfficiency,
    antistokes_arm: &ArmEfficiency,
    det: &DetectionParams,
    rng: &mut R,
) -> ClickRecord {
    let dark = det.dark_count_probability;
    let p_s = stokes_arm.total();
    let p_as = antistokes_arm.total();
    match det.coincidence_scheme {
        CoincidenceScheme::Cross => {
            // pair photons and noise photons have different survival
            // probabilities on the anti-Stokes side
            let s_photons = emission.pair_count + emission.stokes_noise_count;
            let stokes_click = threshold_click(p_s, s_photons, dark, rng);
            let none_as = (1.0 - dark)
                * (1.0 - retrieval_eff * p_as).powi(emission.pair_count as i32)
                * (1.0 - p_as).powi(emission.antistokes_noise_count as i32);
            let antistokes_click = rng.random::<f64>() >= none_as;
            ClickRecord {
                stokes_click,
                antistokes_click,
                ..Default::default()
            }
        }
        CoincidenceScheme::AutoHbt => {
            let mut ports = [false; 2];
            match det.hbt_species {
                Species::Stokes => {
                    split_photons(
                        emission.pair_count + emission.stokes_noise_count,
                        p_s,
                        rng,
                        &mut ports,
                    );
                }
                Species::AntiStokes => {
                    split_photons(emission.pair_count, retrieval_eff * p_as, rng, &mut ports);
                    split_photons(emission.antistokes_noise_count, p_as, rng, &mut ports);
                }
            }
            let d1 = rng.random::<f64>() < dark;
            let d2 = rng.random::<f64>() < dark;
            ClickRecord {
                hbt_arm1_click: ports[0] || d1,
                hbt_arm2_click: ports[1] || d2,
                ..Default::default()
            }
        }
    }
}

/// Runs `trials` attempts in fixed batches of [`TRIAL_BATCH`], batch `i`
/// drawing from stream `i` of `seed`. Identical for any rayon pool size.
pub fn simulate_counts(
    setup: &DetectionSetup,
    trials: u64,
    seed: u64,
) -> Result<CountsTable, DetectionError> {
    setup.validate()?;
    let sampler = EmissionSampler::new(&setup.emission)?;
    let list: Vec<_> = batches(trials, TRIAL_BATCH).collect();
    let parts: Vec<CountsTable> = list
        .par_iter()
        .map(|&(index, len)| {
            let mut rng = stream_rng(seed, index);
            let mut table = CountsTable::default();
            for _ in 0..len {
                let e = sampler.sample(&mut rng);
                let c = simulate_trial(
                    &e,
                    setup.retrieval_efficiency,
                    &setup.stokes_arm,
                    &setup.antistokes_arm,
                    &setup.detection,
                    &mut rng,
                );
                table.record(&c);
            }
            table
        })
        .collect();
    let mut total = CountsTable::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// Photon-number sums for lossless number-resolving detection: `x` counts
/// Stokes photons, `y` anti-Stokes photons after retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonMoments {
    pub trials: u64,
    pub x: f64,
    pub y: f64,
    pub xy: f64,
    pub x2: f64,
    pub y2: f64,
    pub x2y: f64,
    pub xy2: f64,
    pub x2y2: f64,
}

impl PhotonMoments {
    fn record(&mut self, x: u32, y: u32) {
        let (x, y) = (x as f64, y as f64);
        self.trials += 1;
        self.x += x;
        self.y += y;
        self.xy += x * y;
        self.x2 += x * x;
        self.y2 += y * y;
        self.x2y += x * x * y;
        self.xy2 += x * y * y;
        self.x2y2 += x * x * y * y;
    }

    pub fn merge(&mut self, o: &Self) {
        self.trials += o.trials;
        self.x += o.x;
        self.y += o.y;
        self.xy += o.xy;
        self.x2 += o.x2;
        self.y2 += o.y2;
        self.x2y += o.x2y;
        self.xy2 += o.xy2;
        self.x2y2 += o.x2y2;
    }
}

/// Photon numbers per trial with every photon detected and resolved; the
/// anti-Stokes member of each pair survives retrieval with probability
/// `retrieval_efficiency`. Batched and seeded like [`simulate_counts`].
pub fn simulate_photon_moments(
    emission: &EmissionModel,
    retrieval_efficiency: f64,
    trials: u64,
    seed: u64,
) -> Result<PhotonMoments, DetectionError> {
    check_prob("retrieval_efficiency", retrieval_efficiency)?;
    let sampler = EmissionSampler::new(emission)?;
    let list: Vec<_> = batches(trials, TRIAL_BATCH).collect();
    let parts: Vec<PhotonMoments> = list
        .par_iter()
        .map(|&(index, len)| {
            let mut rng = stream_rng(seed, index);
            let mut m = PhotonMoments::default();
            for _ in 0..len {
                let e = sampler.sample(&mut rng);
                let retrieved = (0..e.pair_count)
                    .filter(|_| rng.random::<f64>() < retrieval_efficiency)
                    .count() as u32;
                m.record(
                    e.pair_count + e.stokes_noise_count,
                    retrieved + e.antistokes_noise_count,
                );
            }
            m
        })
        .collect();
    let mut total = PhotonMoments::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// `⟨xy⟩ / (⟨x⟩⟨y⟩)` with a delta-method standard error from the sampled
/// second moments.
pub fn g2_cross_moments(m: &PhotonMoments) -> Result<G2Estimate, DetectionError> {
    if m.x == 0.0 {
        return Err(DetectionError::InsufficientCounts("stokes photons"));
    }
    if m.y == 0.0 {
        return Err(DetectionError::InsufficientCounts("anti-stokes photons"));
    }
    let n = m.trials as f64;
    let (mx, my) = (m.x / n, m.y / n);
    let g = m.xy / n / (mx * my);
    // variance of the influence function xy/(mx my) - g x/mx - g y/my + g
    let e_a2 = m.x2y2 / n / (mx * my).powi(2);
    let e_b2 = g * g * m.x2 / n / (mx * mx);
    let e_c2 = g * g * m.y2 / n / (my * my);
    let e_ab = g * m.x2y / n / (mx * mx * my);
    let e_ac = g * m.xy2 / n / (mx * my * my);
    let var = (e_a2 + e_b2 + e_c2 - 2.0 * e_ab - 2.0 * e_ac + 2.0 * g * g * g - g * g).max(0.0);
    Ok(G2Estimate {
        value: g,
        std_error: (var / n).sqrt(),
    })
}

/// `g = k · N / (a · b)` with Poisson errors on `k`, `a`, `b`.
fn normalized_ratio(k: u64, a: u64, b: u64, trials: u64) -> G2Estimate {
    let (k, a, b, n) = (k as f64, a as f64, b as f64, trials as f64);
    let value = k * n / (a * b);
    let rel = (1.0 / a + 1.0 / b + if k > 0.0 { 1.0 / k } else { 0.0 }).sqrt();
    let std_error = if k > 0.0 {
        value * rel
    } else {
        // one-count scale when no coincidences were seen
        n / (a * b)
    };
    G2Estimate { value, std_error }
}

pub fn g2_cross_estimate(counts: &CountsTable) -> Result<G2Estimate, DetectionError> {
    if counts.n_stokes == 0 {
        return Err(DetectionError::InsufficientCounts("n_stokes"));
    }
    if counts.n_antistokes == 0 {
        return Err(DetectionError::InsufficientCounts("n_antistokes"));
    }
    Ok(normalized_ratio(
        counts.n_coincidence,
        counts.n_stokes,
        counts.n_antistokes,
        counts.trials,
    ))
}

pub fn g2_auto_estimate(counts: &CountsTable) -> Result<G2Estimate, DetectionError> {
    if counts.n_arm1 == 0 {
        return Err(DetectionError::InsufficientCounts("n_arm1"));
    }
    if counts.n_arm2 == 0 {
        return Err(DetectionError::InsufficientCounts("n_arm2"));
    }
    Ok(normalized_ratio(
        counts.n_arm_coincidence,
        counts.n_arm1,
        counts.n_arm2,
        counts.trials,
    ))
}

/// Cauchy–Schwarz test with first-order propagation of the three
/// independent estimate errors.
pub fn cauchy_schwarz_test(
    cross: &G2Estimate,
    auto_s: &G2Estimate,
    auto_as: &G2Estimate,
) -> CSResult {
    let (c, s, a) = (cross.value, auto_s.value, auto_as.value);
    let prod = s * a;
    let ratio = c * c / prod;
    let ratio_error = ratio
        * ((2.0 * cross.std_error / c).powi(2)
            + (auto_s.std_error / s).powi(2)
            + (auto_as.std_error / a).powi(2))
        .sqrt();
    let excess = c * c - prod;
    let excess_error = ((2.0 * c * cross.std_error).powi(2)
        + (a * auto_s.std_error).powi(2)
        + (s * auto_as.std_error).powi(2))
    .sqrt();
    let significance = if excess_error > 0.0 {
        excess / excess_error
    } else {
        0.0
    };
    CSResult {
        ratio,
        ratio_error,
        excess,
        excess_error,
        significance,
    }
}

/// Conditional anti-Stokes detection probability corrected for the
/// anti-Stokes chain.
pub fn heralding_efficiency(
    counts: &CountsTable,
    antistokes_chain_eff: f64,
) -> Result<f64, DetectionError> {
    if counts.n_stokes == 0 {
        return Err(DetectionError::InsufficientCounts("n_stokes"));
    }
    if !(antistokes_chain_eff > 0.0 && antistokes_chain_eff <= 1.0) {
        return Err(DetectionError::InvalidProbability {
            name: "antistokes_chain_eff",
            value: antistokes_chain_eff,
        });
    }
    Ok(counts.n_coincidence as f64 / (counts.n_stokes as f64 * antistokes_chain_eff))
}

/// Exact click probabilities in cross mode, summed over the thermal pair
/// distribution: `(P_S, P_AS, P_coincidence)`.
pub fn exact_click_probabilities(setup: &DetectionSetup) -> (f64, f64, f64) {
    let l = setup.emission.lambda;
    let dark = setup.detection.dark_count_probability;
    let p_s = setup.stokes_arm.total();
    let p_as = setup.antistokes_arm.total();
    let q = setup.retrieval_efficiency * p_as;
    let ns = (-p_s * setup.emission.noise_mean_stokes).exp() * (1.0 - dark);
    let na = (-p_as * setup.emission.noise_mean_antistokes).exp() * (1.0 - dark);
    // E[x^n] for thermal n is 1 / (1 + λ(1 − x))
    let gen = |x: f64| 1.0 / (1.0 + l * (1.0 - x));
    let none_s = ns * gen(1.0 - p_s);
    let none_as = na * gen(1.0 - q);
    let none_both = ns * na * gen((1.0 - p_s) * (1.0 - q));
    let p_s_click = 1.0 - none_s;
    let p_as_click = 1.0 - none_as;
    (p_s_click, p_as_click, 1.0 - none_s - none_as + none_both)
}
