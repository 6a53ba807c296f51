use serde::{Deserialize, Serialize};

use super::fit::{
    least_squares, FitError, FitOptions, FitOutput, LifetimeModel, ModelId, Weighting,
};
use crate::spinwave::{lifetime_1e, LifetimeFitParams, RetrievalCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    pub params: LifetimeFitParams,
    /// Row-major 3 × 3 over `(C, A, B)`.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: [f64; 3],
    /// `A < 0`: the decay turns around at long times. Reported, not clamped.
    pub negative_a: bool,
    /// 1/e lifetime of the fitted curve, when one exists.
    pub lifetime_1e: Option<f64>,
    pub output: FitOutput,
}

/// Weighted fit of `g2(t) = 1 + C / (1 + A t² + B t)` to a retrieval curve,
/// using the curve's g2 errors as σ.
pub fn fit_lifetime_curve(curve: &RetrievalCurve) -> Result<LifetimeFit, FitError> {
    let n = curve.len();
    if n < 4 {
        return Err(FitError::TooFewPoints {
            points: n,
            params: 3,
        });
    }
    if curve.g2_err.len() != n || curve.g2_cross.len() != n {
        return Err(FitError::InvalidData(
            "curve columns differ in length".into(),
        ));
    }
    let t_max = curve.times.iter().copied().fold(0.0, f64::max);
    let model = LifetimeModel { t_max };
    let init = initial_guess(curve);
    let mut out = least_squares(
        &model,
        &curve.times,
        &curve.g2_cross,
        &Weighting::Absolute(curve.g2_err.clone()),
        &init,
        &FitOptions::default(),
    )?;
    out.model = Some(ModelId::Lifetime);
    let params = LifetimeFitParams {
        c: out.params[0],
        a: out.params[1],
        b: out.params[2],
    };
    Ok(LifetimeFit {
        params,
        covariance: out.covariance.clone(),
        std_errors: [out.std_errors[0], out.std_errors[1], out.std_errors[2]],
        negative_a: params.a < 0.0,
        lifetime_1e: lifetime_1e(&params).ok(),
        output: out,
    })
}

/// `C` from the earliest point; `A` from a 1/e crossing found by linear
/// interpolation, with `B = 0`.
fn initial_guess(curve: &RetrievalCurve) -> [f64; 3] {
    let i0 = (0..curve.len())
        .min_by(|&a, &b| curve.times[a].total_cmp(&curve.times[b]))
        .unwrap_or(0);
    let c = (curve.g2_cross[i0] - 1.0).max(1e-3);
    let target = c / std::f64::consts::E;
    let t_max = curve.times.iter().copied().fold(0.0, f64::max).max(1e-12);
    let mut t_e = t_max;
    for i in 1..curve.len() {
        let (y0, y1) = (curve.g2_cross[i - 1] - 1.0, curve.g2_cross[i] - 1.0);
        if y0 >= target && y1 < target {
            let (t0, t1) = (curve.times[i - 1], curve.times[i]);
            t_e = t0 + (y0 - target) / (y0 - y1) * (t1 - t0);
            break;
        }
    }
    [c, (std::f64::consts::E - 1.0) / (t_e * t_e), 0.0]
}
