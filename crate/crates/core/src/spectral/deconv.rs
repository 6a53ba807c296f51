use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{SampledSpectrum, SpectralError};

/// Largest step ratio between the two grids that is resampled rather than
/// rejected.
const MAX_STEP_RATIO: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    None,
    /// Tukey taper over the outer 10% at each end of the scan.
    RaisedCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeconvolutionSettings {
    /// Added to `|F{T}|²` as a fraction of its peak.
    pub regularization_epsilon: f64,
    pub window: Window,
    pub zero_padding_factor: usize,
}

impl Default for DeconvolutionSettings {
    fn default() -> Self {
        Self {
            regularization_epsilon: 1e-3,
            window: Window::None,
            zero_padding_factor: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deconvolution {
    pub spectrum: SampledSpectrum,
    /// Fraction of samples that came out negative and were set to zero.
    pub clipped_fraction: f64,
}

/// Unnormalized forward DFT.
pub fn fourier_forward(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

/// Inverse DFT including the `1/n` factor, so it undoes [`fourier_forward`].
pub fn fourier_inverse(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

fn tukey(i: usize, n: usize) -> f64 {
    let taper = ((n as f64) * 0.1).max(1.0);
    let x = i.min(n - 1 - i) as f64;
    if x >= taper {
        1.0
    } else {
        0.5 * (1.0 - (std::f64::consts::PI * x / taper).cos())
    }
}

/// Recovers `S` from `U − U0 = T ⊛ S` by regularized spectral division
///
/// `F{S} = F{U−U0} · conj(F{T}) / (|F{T}|² + ε · max|F{T}|²)`.
///
/// The convolution convention matches [`super::convolve`]: the kernel's own
/// grid supplies the offsets, so a transfer function centred on zero
/// frequency leaves the recovered spectrum in place. `T` is linearly
/// resampled onto `U`'s step when the steps differ by at most a factor of 8.
/// The result lives on `U`'s grid.
pub fn deconvolve_spectrum(
    u: &SampledSpectrum,
    u0: f64,
    t: &SampledSpectrum,
    settings: &DeconvolutionSettings,
) -> Result<Deconvolution, SpectralError> {
    if !(settings.regularization_epsilon > 0.0 && settings.regularization_epsilon.is_finite()) {
        return Err(SpectralError::InvalidValue(settings.regularization_epsilon));
    }
    if settings.zero_padding_factor == 0 {
        return Err(SpectralError::InvalidGrid(
            "zero padding factor must be at least 1".into(),
        ));
    }
    if !u0.is_finite() {
        return Err(SpectralError::InvalidValue(u0));
    }
    let step = u.f_step;
    let ratio = t.f_step / step;
    let kernel = if (ratio - 1.0).abs() <= 1e-9 {
        t.clone()
    } else if (1.0 / MAX_STEP_RATIO..=MAX_STEP_RATIO).contains(&ratio) {
        let n = ((t.f_end() - t.f_start) / step).floor() as usize + 1;
        t.resample(t.f_start, step, n)
    } else {
        return Err(SpectralError::GridMismatch(format!(
            "transfer step {} vs scan step {}",
            t.f_step, step
        )));
    };
    if kernel.values.iter().all(|&v| v == 0.0) {
        return Err(SpectralError::ZeroKernel);
    }
    let off = kernel.f_start / step;
    if (off - off.round()).abs() > 1e-6 {
        return Err(SpectralError::GridMismatch(format!(
            "transfer grid start {} is not a multiple of the scan step",
            kernel.f_start
        )));
    }

    let (nu, nt) = (u.len(), kernel.len());
    let len = (settings.zero_padding_factor * (nu + nt)).next_power_of_two();
    let mut y = vec![Complex64::new(0.0, 0.0); len];
    for (i, v) in u.values.iter().enumerate() {
        let w = match settings.window {
            Window::None => 1.0,
            Window::RaisedCosine => tukey(i, nu),
        };
        y[i] = Complex64::new((v - u0) * w, 0.0);
    }
    let mut h = vec![Complex64::new(0.0, 0.0); len];
    let first = off.round() as i64;
    for (k, v) in kernel.values.iter().enumerate() {
        let idx = (first + k as i64).rem_euclid(len as i64) as usize;
        h[idx] += Complex64::new(v * step, 0.0);
    }

    let fy = fourier_forward(&y);
    let fh = fourier_forward(&h);
    let peak = fh.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let reg = settings.regularization_epsilon * peak;
    let fs: Vec<Complex64> = fy
        .iter()
        .zip(&fh)
        .map(|(a, b)| a * b.conj() / (b.norm_sqr() + reg))
        .collect();
    let s = fourier_inverse(&fs);

    let mut clipped = 0usize;
    let values = s[..nu]
        .iter()
        .map(|z| {
            if z.re < 0.0 {
                clipped += 1;
                0.0
            } else {
                z.re
            }
        })
        .collect();
    Ok(Deconvolution {
        spectrum: u.with_values(values),
        clipped_fraction: clipped as f64 / nu as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{transmission_spectrum, CavityFitParams, CavityStage};
    use crate::spectral::{convolve, fwhm};
    use proptest::prelude::*;

    fn gaussian_fwhm(width: f64) -> impl Fn(f64) -> f64 {
        let d = width / (2.0 * 2f64.ln()).sqrt();
        move |f| (-2.0 * f * f / (d * d)).exp()
    }

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn impulse_kernel_shifts_back() {
        let u = SampledSpectrum::from_fn(-1e9, 10e6, 201, |f| 1.0 + gaussian_fwhm(2e8)(f - 1e8));
        let mut k = vec![0.0; 16];
        k[3] = 1.0 / 10e6;
        let t = SampledSpectrum::new(0.0, 10e6, k).unwrap();
        let out = deconvolve_spectrum(&u, 1.0, &t, &DeconvolutionSettings::default()).unwrap();
        // a 3-step kernel offset moves the recovered spectrum back by 3 steps
        for i in 0..190 {
            let expected = u.values[i + 3] - 1.0;
            assert!(
                (out.spectrum.values[i] - expected / (1.0 + 1e-3)).abs() < 1e-9,
                "{i}"
            );
        }
    }

    #[test]
    fn gaussian_through_cascade_round_trip() {
        let step = 20e6;
        let (start, n) = SampledSpectrum::symmetric_grid(3e9, step);
        let s = SampledSpectrum::from_fn(start, step, n, gaussian_fwhm(504e6));
        let t = transmission_spectrum(&CavityFitParams::triple_cascade(), start, step, n);
        let u = convolve(&s, &t).unwrap();
        let out = deconvolve_spectrum(&u, 0.0, &t, &DeconvolutionSettings::default()).unwrap();
        let w = fwhm(&out.spectrum).unwrap().width;
        assert!((w / 504e6 - 1.0).abs() < 5e-3, "{w}");

        // reconvolving reproduces the scan
        let back = convolve(&out.spectrum, &t).unwrap();
        let err = rel_l2(&back.values, &u.values);
        assert!(err < 3e-3, "{err}");
    }

    #[test]
    fn self_deconvolution_is_narrow() {
        let step = 20e6;
        let (start, n) = SampledSpectrum::symmetric_grid(3e9, step);
        let narrow = CavityFitParams::single(
            CavityStage {
                fwhm: 40e6,
                fsr: 18.4e9,
            },
            0.9,
            0.0,
        );
        let t = transmission_spectrum(&narrow, start, step, n);
        let out = deconvolve_spectrum(&t, 0.0, &t, &DeconvolutionSettings::default()).unwrap();
        let w = fwhm(&out.spectrum).unwrap();
        assert!(w.width <= 2.0 * step, "{}", w.width);
        assert!(w.peak_frequency.abs() < 0.5 * step);
    }

    #[test]
    fn errors() {
        let u = SampledSpectrum::from_fn(0.0, 1.0, 32, |f| f);
        let zero = SampledSpectrum::from_fn(0.0, 1.0, 32, |_| 0.0);
        let set = DeconvolutionSettings::default();
        assert_eq!(
            deconvolve_spectrum(&u, 0.0, &zero, &set),
            Err(SpectralError::ZeroKernel)
        );
        let coarse = SampledSpectrum::from_fn(0.0, 9.0, 32, |_| 1.0);
        assert!(matches!(
            deconvolve_spectrum(&u, 0.0, &coarse, &set),
            Err(SpectralError::GridMismatch(_))
        ));
        let bad = DeconvolutionSettings {
            regularization_epsilon: 0.0,
            ..set
        };
        assert!(deconvolve_spectrum(&u, 0.0, &u, &bad).is_err());
    }

    #[test]
    fn resampled_kernel_matches_native() {
        let step = 20e6;
        let (start, n) = SampledSpectrum::symmetric_grid(3e9, step);
        let s = SampledSpectrum::from_fn(start, step, n, gaussian_fwhm(537e6));
        let cav = CavityFitParams::triple_cascade();
        let t = transmission_spectrum(&cav, start, step, n);
        let u = convolve(&s, &t).unwrap();
        let fine = transmission_spectrum(&cav, start, step / 4.0, 4 * (n - 1) + 1);
        let set = DeconvolutionSettings {
            window: Window::RaisedCosine,
            ..Default::default()
        };
        let a = deconvolve_spectrum(&u, 0.0, &t, &set).unwrap();
        let b = deconvolve_spectrum(&u, 0.0, &fine, &set).unwrap();
        let wa = fwhm(&a.spectrum).unwrap().width;
        let wb = fwhm(&b.spectrum).unwrap().width;
        assert!((wa / wb - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn fourier_pair_is_consistent(v in proptest::collection::vec(-1e3f64..1e3, 16..200)) {
            let z: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.5 * x)).collect();
            let back = fourier_inverse(&fourier_forward(&z));
            let num: f64 = z.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = z.iter().map(|a| a.norm_sqr()).sum::<f64>().max(1e-300);
            prop_assert!((num / den).sqrt() < 1e-10);
        }
    }
}
