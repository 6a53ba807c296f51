use serde::{Deserialize, Serialize};

use super::{SampledSpectrum, SpectralError};

/// Full width at half maximum of a single peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Width {
    /// Hz.
    pub width: f64,
    /// Midpoint of the samples at the maximum.
    pub peak_frequency: f64,
    /// Number of half-level crossings over the whole grid.
    pub crossings: usize,
}

impl Width {
    pub fn is_multimodal(&self) -> bool {
        self.crossings > 2
    }
}

/// Width at half of (max − min) above the minimum, with crossings located
/// by linear interpolation on either side of the global maximum.
///
/// A flat top spanning several samples is treated as one peak centred at
/// the middle of the plateau; its width still comes from the outer
/// crossings.
pub fn fwhm(s: &SampledSpectrum) -> Result<Width, SpectralError> {
    let v = &s.values;
    let n = v.len();
    if n < 3 {
        return Err(SpectralError::TooFewPoints { have: n, need: 3 });
    }
    let max = s.max();
    let base = s.min();
    let first = v.iter().position(|&x| x == max).expect("max exists");
    let mut last = first;
    while last + 1 < n && v[last + 1] == max {
        last += 1;
    }
    if first == 0 {
        return Err(SpectralError::EdgePeak(0));
    }
    if last == n - 1 {
        return Err(SpectralError::EdgePeak(n - 1));
    }
    let half = base + 0.5 * (max - base);
    if max == base {
        return Err(SpectralError::InvalidValue(max));
    }

    let cross = |i: usize, j: usize| {
        // interpolated position between neighbouring samples i and j
        let (fi, fj) = (s.frequency(i), s.frequency(j));
        fi + (half - v[i]) / (v[j] - v[i]) * (fj - fi)
    };
    let mut l = first;
    while l > 0 && v[l - 1] >= half {
        l -= 1;
    }
    if l == 0 {
        return Err(SpectralError::EdgePeak(0));
    }
    let left = cross(l - 1, l);
    let mut r = last;
    while r + 1 < n && v[r + 1] >= half {
        r += 1;
    }
    if r == n - 1 {
        return Err(SpectralError::EdgePeak(n - 1));
    }
    let right = cross(r, r + 1);

    let crossings = v
        .windows(2)
        .filter(|w| (w[0] >= half) != (w[1] >= half))
        .count();
    Ok(Width {
        width: right - left,
        peak_frequency: 0.5 * (s.frequency(first) + s.frequency(last)),
        crossings,
    })
}
