//! Storage of the collective excitation: wavevector-mismatch dephasing and
//! motional loss out of the read mode.
//!
//! Atom `n` sits at `r_n` and carries the spin-wave phase `e^{iΔk·r_n}`. On
//! read-out the ensemble amplitude is projected back onto the beam mode, so
//! an atom that moved by `δ` during storage contributes
//! `u(r_n + δ) / u(r_n) · e^{iΔk·δ}` when atoms are drawn from the
//! creation intensity `|u|²`, with `u(r) = exp(-r⊥²/w²)`. The retrieval
//! efficiency is the squared modulus of the ensemble mean. `Δk` points
//! along the beam axis, which is where the mode has no transverse profile.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{thermal_speed, AtomEnsembleParams, MotionModel, SPEED_OF_LIGHT};
use crate::rng::{batches, stream_rng};
use crate::source::{analytic_g2, EmissionModel, SourceError};
use rand_distr::{Distribution, StandardNormal};

const ATOM_BATCH: u64 = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpinwaveError {
    #[error("decay model has no positive 1/e crossing (A = {a}, B = {b})")]
    NoPositiveRoot { a: f64, b: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Source(#[from] SourceError),
}

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveVectors {
    pub k_write: Vec3,
    pub k_read: Vec3,
    pub k_stokes: Vec3,
    pub k_antistokes: Vec3,
}

impl WaveVectors {
    /// All four fields along +z. The Stokes photon sits one hyperfine
    /// splitting below the write frequency and the anti-Stokes photon
    /// follows from phase matching.
    pub fn collinear(write_wavelength: f64, hyperfine_splitting: f64) -> Self {
        let k = 2.0 * std::f64::consts::PI / write_wavelength;
        let dk = 2.0 * std::f64::consts::PI * hyperfine_splitting / SPEED_OF_LIGHT;
        Self {
            k_write: [0.0, 0.0, k],
            k_read: [0.0, 0.0, k],
            k_stokes: [0.0, 0.0, k - dk],
            k_antistokes: [0.0, 0.0, k + dk],
        }
    }

    /// Stokes emitted backwards against the write beam.
    pub fn counter_propagating(write_wavelength: f64, hyperfine_splitting: f64) -> Self {
        let mut w = Self::collinear(write_wavelength, hyperfine_splitting);
        w.k_stokes[2] = -w.k_stokes[2];
        w.k_antistokes = sub([0.0, 0.0, 2.0 * w.k_write[2]], w.k_stokes);
        w
    }

    /// Residual of `k_W + k_R − k_S − k_AS` relative to `|k_W|`.
    pub fn phase_mismatch(&self) -> f64 {
        let r: Vec3 = std::array::from_fn(|i| {
            self.k_write[i] + self.k_read[i] - self.k_stokes[i] - self.k_antistokes[i]
        });
        norm(r) / norm(self.k_write)
    }

    pub fn is_phase_matched(&self) -> bool {
        self.phase_mismatch() < 1e-6
    }
}

/// `|k_W − k_S|`, the spatial frequency of the stored spin wave.
pub fn spin_wave_mismatch(geometry: &WaveVectors) -> f64 {
    norm(sub(geometry.k_write, geometry.k_stokes))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Copy, Default)]
struct OverlapSums {
    n: f64,
    re: f64,
    im: f64,
    re2: f64,
    im2: f64,
    reim: f64,
}

impl OverlapSums {
    fn add(&mut self, re: f64, im: f64) {
        self.n += 1.0;
        self.re += re;
        self.im += im;
        self.re2 += re * re;
        self.im2 += im * im;
        self.reim += re * im;
    }

    fn merge(&mut self, o: &Self) {
        self.n += o.n;
        self.re += o.re;
        self.im += o.im;
        self.re2 += o.re2;
        self.im2 += o.im2;
        self.reim += o.reim;
    }

    fn estimate(&self) -> McEstimate {
        let n = self.n;
        let (mr, mi) = (self.re / n, self.im / n);
        let amp = (mr * mr + mi * mi).sqrt();
        if amp == 0.0 {
            return McEstimate {
                value: 0.0,
                std_error: ((self.re2 + self.im2) / n / n).sqrt(),
            };
        }
        // variance of the projection onto the direction of the mean
        let (c, s) = (mr / amp, mi / amp);
        let second = (c * c * self.re2 + 2.0 * c * s * self.reim + s * s * self.im2) / n;
        let var = (second - amp * amp).max(0.0);
        McEstimate {
            value: amp * amp,
            std_error: 2.0 * amp * (var / n).sqrt(),
        }
    }
}

/// Retrieval efficiency (normalized to 1 at zero delay) at each of `times`,
/// sharing one set of sampled atoms across all times.
///
/// Deterministic for a given `seed` regardless of the rayon pool size.
pub fn efficiency_curve(
    times: &[f64],
    atoms: &AtomEnsembleParams,
    dk: f64,
    seed: u64,
    n_atoms: u64,
) -> Result<Vec<McEstimate>, SpinwaveError> {
    if n_atoms < 100 {
        return Err(SpinwaveError::InvalidInput(format!(
            "n_atoms = {n_atoms}, need at least 100"
        )));
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(SpinwaveError::InvalidInput(format!("storage time {t}")));
    }
    let w = atoms.beam_waist;
    let sigma_r = w / 2.0;
    let v_rms = thermal_speed(atoms);
    let d = atoms.diffusion_coefficient;
    // per-time displacement scale multiplying a unit normal
    let scales: Vec<f64> = times
        .iter()
        .map(|&t| match atoms.motion {
            MotionModel::Diffusive => (2.0 * d * t).sqrt(),
            MotionModel::Ballistic => v_rms * t,
        })
        .collect();
    let inv_w2 = 1.0 / (w * w);

    let batch_list: Vec<_> = batches(n_atoms, ATOM_BATCH).collect();
    let partials: Vec<Vec<OverlapSums>> = batch_list
        .par_iter()
        .map(|&(index, len)| {
            let mut rng = stream_rng(seed, index);
            let mut sums = vec![OverlapSums::default(); scales.len()];
            for _ in 0..len {
                let x: f64 = StandardNormal.sample(&mut rng);
                let y: f64 = StandardNormal.sample(&mut rng);
                let (x, y) = (x * sigma_r, y * sigma_r);
                let ex: f64 = StandardNormal.sample(&mut rng);
                let ey: f64 = StandardNormal.sample(&mut rng);
                let ez: f64 = StandardNormal.sample(&mut rng);
                let r2 = x * x + y * y;
                for (acc, &s) in sums.iter_mut().zip(&scales) {
                    let (nx, ny) = (x + s * ex, y + s * ey);
                    let amp = (-(nx * nx + ny * ny - r2) * inv_w2).exp();
                    let phase = dk * s * ez;
                    acc.add(amp * phase.cos(), amp * phase.sin());
                }
            }
            sums
        })
        .collect();

    let mut total = vec![OverlapSums::default(); scales.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    Ok(total.iter().map(OverlapSums::estimate).collect())
}

/// Single-time form of [`efficiency_curve`].
pub fn retrieval_efficiency_mc(
    t: f64,
    atoms: &AtomEnsembleParams,
    dk: f64,
    seed: u64,
    n_atoms: u64,
) -> Result<McEstimate, SpinwaveError> {
    Ok(efficiency_curve(&[t], atoms, dk, seed, n_atoms)?[0])
}

/// Storage time at which the Monte Carlo efficiency falls to 1/e, found by
/// bisection on a fixed atom sample.
pub fn mc_lifetime_1e(
    atoms: &AtomEnsembleParams,
    dk: f64,
    seed: u64,
    n_atoms: u64,
) -> Result<f64, SpinwaveError> {
    let target = (-1.0f64).exp();
    let eff = |t: f64| retrieval_efficiency_mc(t, atoms, dk, seed, n_atoms).map(|e| e.value);
    let mut lo = 0.0;
    let mut hi = atoms.beam_waist / thermal_speed(atoms);
    let mut doublings = 0;
    while eff(hi)? > target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(SpinwaveError::InvalidInput(
                "efficiency never falls to 1/e".into(),
            ));
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if eff(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-6 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Spin-wave efficiency and cross-correlation versus storage time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalCurve {
    pub times: Vec<f64>,
    pub efficiency: Vec<f64>,
    pub efficiency_err: Vec<f64>,
    pub g2_cross: Vec<f64>,
    pub g2_err: Vec<f64>,
}

impl RetrievalCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `time_ns,efficiency,efficiency_err,g2,g2_err`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_ns,efficiency,efficiency_err,g2,g2_err\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.times[i] * 1e9,
                self.efficiency[i],
                self.efficiency_err[i],
                self.g2_cross[i],
                self.g2_err[i]
            ));
        }
        out
    }
}

/// Composes the analytic correlation with a time-dependent efficiency: at
/// each time the anti-Stokes pair component is thinned by
/// `read_efficiency × efficiency(t)` while the noise stays fixed. The g2
/// error propagates the efficiency error through a central difference.
pub fn g2_vs_time(
    model: &EmissionModel,
    read_efficiency: f64,
    times: &[f64],
    efficiency: &[McEstimate],
) -> Result<RetrievalCurve, SpinwaveError> {
    if times.len() != efficiency.len() {
        return Err(SpinwaveError::InvalidInput(format!(
            "{} times but {} efficiencies",
            times.len(),
            efficiency.len()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpinwaveError::InvalidInput(
            "times must be strictly increasing".into(),
        ));
    }
    let mut curve = RetrievalCurve {
        times: times.to_vec(),
        efficiency: Vec::with_capacity(times.len()),
        efficiency_err: Vec::with_capacity(times.len()),
        g2_cross: Vec::with_capacity(times.len()),
        g2_err: Vec::with_capacity(times.len()),
    };
    for e in efficiency {
        if !(0.0..=1.0).contains(&e.value) {
            return Err(SpinwaveError::InvalidInput(format!(
                "efficiency {}",
                e.value
            )));
        }
        let eta = read_efficiency * e.value;
        let g = analytic_g2(model, eta)?.cross;
        let h = (1e-6 * eta).max(1e-12);
        let lo = (eta - h).max(0.0);
        let hi = (eta + h).min(1.0);
        let slope = if hi > lo && lo > 0.0 {
            (analytic_g2(model, hi)?.cross - analytic_g2(model, lo)?.cross) / (hi - lo)
        } else {
            0.0
        };
        curve.efficiency.push(e.value);
        curve.efficiency_err.push(e.std_error);
        curve.g2_cross.push(g);
        curve
            .g2_err
            .push((slope * read_efficiency * e.std_error).abs());
    }
    Ok(curve)
}

/// Parameters of `g2(t) = 1 + C / (1 + A t² + B t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFitParams {
    pub c: f64,
    /// s⁻²
    pub a: f64,
    /// s⁻¹
    pub b: f64,
}

impl LifetimeFitParams {
    pub fn g2_at(&self, t: f64) -> f64 {
        1.0 + self.c / (1.0 + self.a * t * t + self.b * t)
    }
}

/// Time at which the excess correlation `g2 − 1` falls to 1/e of its
/// zero-delay value: the positive root of `A t² + B t = e − 1`.
pub fn lifetime_1e(fit: &LifetimeFitParams) -> Result<f64, SpinwaveError> {
    let (a, b) = (fit.a, fit.b);
    let k = std::f64::consts::E - 1.0;
    if fit.c <= 0.0 {
        return Err(SpinwaveError::InvalidInput(format!(
            "contrast C = {}",
            fit.c
        )));
    }
    let disc = b * b + 4.0 * a * k;
    if disc < 0.0 {
        return Err(SpinwaveError::NoPositiveRoot { a, b });
    }
    // rationalized root, stable for a -> 0
    let denom = b + disc.sqrt();
    if denom <= 0.0 {
        return Err(SpinwaveError::NoPositiveRoot { a, b });
    }
    Ok(2.0 * k / denom)
}
