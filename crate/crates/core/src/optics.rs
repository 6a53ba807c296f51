//! Filtering and collection chain: three Fabry–Perot cavities in series
//! and the end-to-end arm efficiency.
//!
//! The cascade transmission is
//!
//! ```text
//! T(f) = T0 / [(1 + A sin²(d(f−f0))) (1 + B sin²(h(f−f0))) (1 + C sin²(g(f−f0)))]
//! ```
//!
//! with `f` in Hz and the phase slopes `d, h, g` in rad/Hz, so each stage
//! has free spectral range `π/slope`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::model::{DetectionParams, Violation, CAESIUM_HYPERFINE};
use crate::spectral::SampledSpectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityFitParams {
    pub t0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub h: f64,
    pub g: f64,
    pub f0: f64,
}

impl Default for CavityFitParams {
    fn default() -> Self {
        Self::triple_cascade()
    }
}

/// One cavity described by its linewidth and free spectral range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityStage {
    pub fwhm: f64,
    pub fsr: f64,
}

impl CavityStage {
    /// `(contrast, slope)` such that transmission halves at ±FWHM/2.
    pub fn contrast_and_slope(&self) -> (f64, f64) {
        let slope = PI / self.fsr;
        let s = (slope * self.fwhm / 2.0).sin();
        (1.0 / (s * s), slope)
    }
}

/// Stages of the default filter: 380 MHz linewidth, free spectral ranges
/// chosen so the 9.2 GHz hyperfine offset falls far from every resonance.
pub const DEFAULT_STAGES: [CavityStage; 3] = [
    CavityStage {
        fwhm: 380e6,
        fsr: 18.4e9,
    },
    CavityStage {
        fwhm: 380e6,
        fsr: 25.0e9,
    },
    CavityStage {
        fwhm: 380e6,
        fsr: 33.0e9,
    },
];

/// Peak transmission of each default stage.
pub const DEFAULT_STAGE_TRANSMISSION: f64 = 0.9;

impl CavityFitParams {
    pub fn from_stages(stages: [CavityStage; 3], t0: f64, f0: f64) -> Self {
        let (a, d) = stages[0].contrast_and_slope();
        let (b, h) = stages[1].contrast_and_slope();
        let (c, g) = stages[2].contrast_and_slope();
        Self {
            t0,
            a,
            b,
            c,
            d,
            h,
            g,
            f0,
        }
    }

    /// A lone cavity: the second and third stages are switched off.
    pub fn single(stage: CavityStage, t0: f64, f0: f64) -> Self {
        let (a, d) = stage.contrast_and_slope();
        Self {
            t0,
            a,
            b: 0.0,
            c: 0.0,
            d,
            h: d,
            g: d,
            f0,
        }
    }

    /// The default three-stage filter centred at zero offset.
    pub fn triple_cascade() -> Self {
        Self::from_stages(DEFAULT_STAGES, DEFAULT_STAGE_TRANSMISSION.powi(3), 0.0)
    }

    /// Stage `i` (0..3) as a stand-alone cavity with unit peak transmission.
    pub fn stage(&self, i: usize) -> Self {
        let (contrast, slope) = match i {
            0 => (self.a, self.d),
            1 => (self.b, self.h),
            2 => (self.c, self.g),
            _ => panic!("cavity stage index {i} out of range"),
        };
        Self {
            t0: 1.0,
            a: contrast,
            b: 0.0,
            c: 0.0,
            d: slope,
            h: slope,
            g: slope,
            f0: self.f0,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.t0, self.a, self.b, self.c, self.d, self.h, self.g, self.f0,
        ]
    }

    pub fn from_array(p: &[f64]) -> Self {
        Self {
            t0: p[0],
            a: p[1],
            b: p[2],
            c: p[3],
            d: p[4],
            h: p[5],
            g: p[6],
            f0: p[7],
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field, value: f64, constraint, ok: bool| {
            if !ok || value.is_nan() {
                out.push(Violation {
                    field,
                    value,
                    constraint,
                });
            }
        };
        push(
            "cavity.t0",
            self.t0,
            "in (0, 1]",
            self.t0 > 0.0 && self.t0 <= 1.0,
        );
        push("cavity.a", self.a, ">= 0", self.a >= 0.0);
        push("cavity.b", self.b, ">= 0", self.b >= 0.0);
        push("cavity.c", self.c, ">= 0", self.c >= 0.0);
        push("cavity.d", self.d, "> 0", self.d > 0.0);
        push("cavity.h", self.h, "> 0", self.h > 0.0);
        push("cavity.g", self.g, "> 0", self.g > 0.0);
        push("cavity.f0", self.f0, "finite", self.f0.is_finite());
        out
    }

    pub fn is_valid(&self) -> bool {
        self.violations().is_empty()
    }
}

/// Cascade transmission at frequency `f` (Hz).
pub fn cascade_transmission(f: f64, p: &CavityFitParams) -> f64 {
    let x = f - p.f0;
    let stage = |contrast: f64, slope: f64| {
        let s = (slope * x).sin();
        1.0 + contrast * s * s
    };
    p.t0 / (stage(p.a, p.d) * stage(p.b, p.h) * stage(p.c, p.g))
}

/// `T(f0) / T(f0 + offset)`.
pub fn extinction_ratio(p: &CavityFitParams, offset: f64) -> f64 {
    cascade_transmission(p.f0, p) / cascade_transmission(p.f0 + offset, p)
}

/// Extinction at the hyperfine offset that separates Stokes from
/// anti-Stokes light.
pub fn hyperfine_extinction(p: &CavityFitParams) -> f64 {
    extinction_ratio(p, CAESIUM_HYPERFINE)
}

/// Pointwise product of `spectrum` with the cascade transmission.
pub fn apply_filter(spectrum: &SampledSpectrum, p: &CavityFitParams) -> SampledSpectrum {
    let values = spectrum
        .frequencies()
        .zip(&spectrum.values)
        .map(|(f, v)| v * cascade_transmission(f, p))
        .collect();
    spectrum.with_values(values)
}

/// Transmission sampled on a grid, as a spectrum.
pub fn transmission_spectrum(
    p: &CavityFitParams,
    f_start: f64,
    f_step: f64,
    n: usize,
) -> SampledSpectrum {
    SampledSpectrum::from_fn(f_start, f_step, n, |f| cascade_transmission(f, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmEfficiency {
    pub cavity_transmission: f64,
    pub other_optics: f64,
    pub detector: f64,
}

impl ArmEfficiency {
    pub const PERFECT: Self = Self {
        cavity_transmission: 1.0,
        other_optics: 1.0,
        detector: 1.0,
    };

    /// The configured chain: `transmission_chain` already folds in the
    /// cavities and coupling.
    pub fn from_detection(det: &DetectionParams) -> Self {
        Self {
            cavity_transmission: det.transmission_chain,
            other_optics: 1.0,
            detector: det.detector_efficiency,
        }
    }

    /// Photon survival probability from source to click.
    pub fn total(&self) -> f64 {
        self.cavity_transmission * self.other_optics * self.detector
    }

    pub fn is_valid(&self) -> bool {
        [self.cavity_transmission, self.other_optics, self.detector]
            .iter()
            .all(|x| (0.0..=1.0).contains(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fwhm;
    use proptest::prelude::*;

    #[test]
    fn peak_is_t0() {
        let p = CavityFitParams::triple_cascade();
        assert_eq!(cascade_transmission(p.f0, &p), p.t0);
        assert!(p.t0 >= 0.7);
    }

    #[test]
    fn single_cavity_half_width() {
        let stage = CavityStage {
            fwhm: 380e6,
            fsr: 18.4e9,
        };
        let p = CavityFitParams::single(stage, 0.9, 1e9);
        for off in [-190e6, 190e6] {
            let t = cascade_transmission(1e9 + off, &p);
            assert!((t / 0.45 - 1.0).abs() < 1e-9, "{t}");
        }
    }

    #[test]
    fn extinction_at_hyperfine_offset() {
        let p = CavityFitParams::triple_cascade();
        for i in 0..3 {
            let e = hyperfine_extinction(&p.stage(i));
            assert!(e >= 500.0, "stage {i}: {e}");
        }
        let total = hyperfine_extinction(&p);
        assert!(total >= 1e7, "{total}");
        let rel = cascade_transmission(CAESIUM_HYPERFINE, &p) / p.t0;
        assert!(rel <= 1e-7);
    }

    #[test]
    fn extinction_tends_to_one_for_small_offset() {
        let p = CavityFitParams::triple_cascade();
        assert!((extinction_ratio(&p, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_stages_cube_the_ratio() {
        let s = DEFAULT_STAGES[0];
        let one = CavityFitParams::single(s, 1.0, 0.0);
        let three = CavityFitParams::from_stages([s; 3], 1.0, 0.0);
        let r1 = extinction_ratio(&one, 9.2e9);
        let r3 = extinction_ratio(&three, 9.2e9);
        assert!((r3 / r1.powi(3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_and_delta_spectra_through_filter() {
        let p = CavityFitParams::triple_cascade();
        let flat = SampledSpectrum::from_fn(-1e9, 20e6, 101, |_| 1.0);
        let out = apply_filter(&flat, &p);
        for (f, v) in out.frequencies().zip(&out.values) {
            assert_eq!(*v, cascade_transmission(f, &p));
        }
        let delta =
            SampledSpectrum::from_fn(-1e9, 20e6, 101, |f| if f.abs() < 1.0 { 3.0 } else { 0.0 });
        let out = apply_filter(&delta, &p);
        assert!((out.values[50] - 3.0 * p.t0).abs() < 1e-15);
    }

    #[test]
    fn filtering_narrows_a_broad_line() {
        let p = CavityFitParams::triple_cascade();
        let d = 504e6 / (2.0 * 2f64.ln()).sqrt();
        let s = SampledSpectrum::from_fn(-3e9, 5e6, 1201, |f| (-2.0 * f * f / (d * d)).exp());
        let before = fwhm(&s).unwrap().width;
        let after = fwhm(&apply_filter(&s, &p)).unwrap().width;
        assert!((before - 504e6).abs() < 1e6);
        assert!(after < before);
    }

    #[test]
    fn arm_efficiency_is_product() {
        let arm = ArmEfficiency {
            cavity_transmission: 0.73,
            other_optics: 0.8,
            detector: 0.6,
        };
        assert!((arm.total() - 0.73 * 0.8 * 0.6).abs() < 1e-15);
        assert!(arm.is_valid());
    }

    #[test]
    fn toml_round_trip() {
        let p = CavityFitParams::triple_cascade();
        let text = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<CavityFitParams>(&text).unwrap(), p);
    }

    proptest! {
        #[test]
        fn extinction_identity(off in -20e9f64..20e9) {
            let p = CavityFitParams::triple_cascade();
            let lhs = extinction_ratio(&p, off) * cascade_transmission(p.f0 + off, &p);
            prop_assert!((lhs - p.t0).abs() <= 1e-12 * p.t0);
        }

        #[test]
        fn bounded_by_peak_and_periodic(f in -50e9f64..50e9, k in 1i32..4) {
            let p = CavityFitParams::triple_cascade();
            let t = cascade_transmission(f, &p);
            prop_assert!((0.0..=p.t0).contains(&t));
            let stage = p.stage(0);
            let period = PI / stage.d;
            let shifted = cascade_transmission(f + k as f64 * period, &stage);
            prop_assert!((shifted - cascade_transmission(f, &stage)).abs() < 1e-6);
        }

        #[test]
        fn filter_never_amplifies(vals in proptest::collection::vec(0.0f64..10.0, 16..64)) {
            let s = SampledSpectrum::new(-5e8, 2e7, vals).unwrap();
            let out = apply_filter(&s, &CavityFitParams::triple_cascade());
            for (a, b) in s.values.iter().zip(&out.values) {
                prop_assert!(*b >= 0.0 && b <= a);
            }
        }
    }
}
