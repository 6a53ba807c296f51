use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SpectralError;

pub const MIN_POINTS: usize = 16;

/// Values on a uniform frequency grid `f_start + i · f_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    pub f_start: f64,
    pub f_step: f64,
    pub values: Vec<f64>,
}

impl SampledSpectrum {
    pub fn new(f_start: f64, f_step: f64, values: Vec<f64>) -> Result<Self, SpectralError> {
        if !(f_step > 0.0 && f_step.is_finite()) || !f_start.is_finite() {
            return Err(SpectralError::InvalidGrid(format!(
                "start {f_start}, step {f_step}"
            )));
        }
        if values.len() < MIN_POINTS {
            return Err(SpectralError::TooFewPoints {
                have: values.len(),
                need: MIN_POINTS,
            });
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(SpectralError::InvalidValue(*v));
        }
        Ok(Self {
            f_start,
            f_step,
            values,
        })
    }

    /// Samples `f` on the grid. Panics on an invalid grid.
    pub fn from_fn(f_start: f64, f_step: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(f_step > 0.0, "grid step must be positive");
        let values = (0..n).map(|i| f(f_start + i as f64 * f_step)).collect();
        Self {
            f_start,
            f_step,
            values,
        }
    }

    /// Grid `[-half_span, half_span]` with the given step; zero is a point.
    pub fn symmetric_grid(half_span: f64, step: f64) -> (f64, usize) {
        let half = (half_span / step).round() as i64;
        (-(half as f64) * step, (2 * half + 1) as usize)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.f_start + i as f64 * self.f_step
    }

    pub fn f_end(&self) -> f64 {
        self.frequency(self.len().saturating_sub(1))
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.frequency(i))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            f_start: self.f_start,
            f_step: self.f_step,
            values,
        }
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation; zero outside the grid.
    pub fn interpolate(&self, f: f64) -> f64 {
        let x = (f - self.f_start) / self.f_step;
        if x < 0.0 || x > (self.len() - 1) as f64 {
            return 0.0;
        }
        let i = (x.floor() as usize).min(self.len() - 2);
        let frac = x - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Linear resampling onto `n` points from `f_start` with step `f_step`.
    pub fn resample(&self, f_start: f64, f_step: f64, n: usize) -> Self {
        Self::from_fn(f_start, f_step, n, |f| self.interpolate(f))
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.len() == other.len()
            && (self.f_step - other.f_step).abs() <= 1e-9 * self.f_step
            && (self.f_start - other.f_start).abs() <= 1e-6 * self.f_step
    }

    /// Two-column CSV, `freq_MHz,<value_name>`.
    pub fn write_csv<W: Write>(&self, out: W, value_name: &str) -> Result<(), SpectralError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["freq_MHz", value_name])?;
        for (f, v) in self.frequencies().zip(&self.values) {
            w.write_record([(f / 1e6).to_string(), v.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self, value_name: &str) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, value_name)
            .expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads a two-column CSV with a header row. The grid must be uniform
    /// to within 1e-6 of a step.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SpectralError> {
        let mut r = csv::Reader::from_reader(input);
        let mut freqs = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(SpectralError::Csv(format!("row has {} columns", rec.len())));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| SpectralError::Csv(format!("{s:?}: {e}")))
            };
            freqs.push(parse(&rec[0])? * 1e6);
            values.push(parse(&rec[1])?);
        }
        if freqs.len() < 2 {
            return Err(SpectralError::TooFewPoints {
                have: freqs.len(),
                need: MIN_POINTS,
            });
        }
        let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
        for (i, f) in freqs.iter().enumerate() {
            if (f - (freqs[0] + i as f64 * step)).abs() > 1e-6 * step.abs() {
                return Err(SpectralError::InvalidGrid(format!(
                    "non-uniform grid at row {i}"
                )));
            }
        }
        Self::new(freqs[0], step, values)
    }
}

/// Direct linear convolution `(T ⊛ S)(f) = Σ_k T(g_k) S(f − g_k) Δ` evaluated
/// on `signal`'s grid, with the kernel's own grid giving the offsets `g_k`.
/// The kernel step must match the signal step.
pub fn convolve(
    signal: &SampledSpectrum,
    kernel: &SampledSpectrum,
) -> Result<SampledSpectrum, SpectralError> {
    let step = signal.f_step;
    if (kernel.f_step - step).abs() > 1e-9 * step {
        return Err(SpectralError::GridMismatch(format!(
            "kernel step {} vs signal step {}",
            kernel.f_step, step
        )));
    }
    let k_first = (kernel.f_start / step).round() as i64;
    let n = signal.len() as i64;
    let values = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, tk) in kernel.values.iter().enumerate() {
                let j = i - (k_first + k as i64);
                if (0..n).contains(&j) {
                    acc += tk * signal.values[j as usize];
                }
            }
            acc * step
        })
        .collect();
    Ok(signal.with_values(values))
}
