//! Levenberg–Marquardt least squares with Jacobian column scaling.
//!
//! Minimizes `½ Σ ((y_i − m(x_i; p)) / σ_i)²`. Each iteration solves the
//! damped normal equations in column-scaled coordinates, where every
//! parameter has unit Jacobian norm, so parameters of wildly different
//! magnitudes (Hz offsets next to rad/Hz slopes) are handled alike. A step
//! is accepted only when it lowers the objective and keeps the parameters
//! inside the model's domain; otherwise the damping grows and the step is
//! retried.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SampledSpectrum;
use crate::optics::{cascade_transmission, CavityFitParams};

/// A curve `y = m(x; p)` with an analytic gradient in `p`.
pub trait CurveModel {
    fn n_params(&self) -> usize;
    fn value(&self, x: f64, p: &[f64]) -> f64;
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
    /// Whether `p` lies in the model's domain.
    fn admissible(&self, _p: &[f64]) -> bool {
        true
    }
    fn param_names(&self) -> Vec<&'static str>;
}

/// Cascade transmission, parameters `[T0, A, B, C, d, h, g, f0]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CavityModel;

impl CurveModel for CavityModel {
    fn n_params(&self) -> usize {
        8
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        cascade_transmission(x, &CavityFitParams::from_array(p))
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let u = x - p[7];
        let t = self.value(x, p);
        out[0] = t / p[0];
        out[7] = 0.0;
        for (k, (ci, si)) in [(1, 4), (2, 5), (3, 6)].into_iter().enumerate() {
            let _ = k;
            let (contrast, slope) = (p[ci], p[si]);
            let (s, c) = (slope * u).sin_cos();
            let stage = 1.0 + contrast * s * s;
            out[ci] = -t * s * s / stage;
            out[si] = -t * contrast * 2.0 * s * c * u / stage;
            out[7] += t * contrast * 2.0 * s * c * slope / stage;
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[0] > 0.0 && p[1..4].iter().all(|&c| c >= 0.0) && p[4..7].iter().all(|&s| s > 0.0)
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["T0", "A", "B", "C", "d", "h", "g", "f0"]
    }
}

/// The cascade in the coordinates the optimizer walks in: each stage's
/// contrast is replaced by its half-width `w = 1/(√A·slope)`, which the
/// data pin directly, leaving the slope free to absorb the wing shape.
/// Parameters `[T0, w1, w2, w3, d, h, g, f0]`.
#[derive(Debug, Clone, Copy, Default)]
struct CavityWidthModel;

impl CavityWidthModel {
    fn to_cavity(q: &[f64]) -> [f64; 8] {
        let mut p = [0.0; 8];
        p.copy_from_slice(&q[..8]);
        for i in 0..3 {
            let (w, slope) = (q[1 + i], q[4 + i]);
            p[1 + i] = if w.is_finite() && w > 0.0 {
                1.0 / (w * slope).powi(2)
            } else {
                0.0
            };
        }
        p
    }

    fn from_cavity(p: &[f64]) -> [f64; 8] {
        let mut q = [0.0; 8];
        q.copy_from_slice(&p[..8]);
        for i in 0..3 {
            q[1 + i] = 1.0 / (p[1 + i].sqrt() * p[4 + i]);
        }
        q
    }
}

impl CurveModel for CavityWidthModel {
    fn n_params(&self) -> usize {
        8
    }

    fn value(&self, x: f64, q: &[f64]) -> f64 {
        CavityModel.value(x, &Self::to_cavity(q))
    }

    fn gradient(&self, x: f64, q: &[f64], out: &mut [f64]) {
        let p = Self::to_cavity(q);
        CavityModel.gradient(x, &p, out);
        // chain rule through A = 1 / (w d)²
        for i in 0..3 {
            let (w, slope) = (q[1 + i], q[4 + i]);
            let da = out[1 + i];
            out[1 + i] = da * (-2.0 * p[1 + i] / w);
            out[4 + i] += da * (-2.0 * p[1 + i] / slope);
        }
    }

    fn admissible(&self, q: &[f64]) -> bool {
        q[1..4].iter().all(|&w| w > 0.0 && w.is_finite())
            && CavityModel.admissible(&Self::to_cavity(q))
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["T0", "w1", "w2", "w3", "d", "h", "g", "f0"]
    }
}

/// `U(f) = a exp(−2(f−b)²/d²) + U0`, parameters `[a, b, d, U0]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianModel;

impl CurveModel for GaussianModel {
    fn n_params(&self) -> usize {
        4
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let u = x - p[1];
        p[0] * (-2.0 * u * u / (p[2] * p[2])).exp() + p[3]
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (a, d) = (p[0], p[2]);
        let u = x - p[1];
        let e = (-2.0 * u * u / (d * d)).exp();
        out[0] = e;
        out[1] = a * e * 4.0 * u / (d * d);
        out[2] = a * e * 4.0 * u * u / (d * d * d);
        out[3] = 1.0;
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[2] > 0.0
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["a", "b", "d", "U0"]
    }
}

/// `g2(t) = 1 + C / (1 + A t² + B t)`, parameters `[C, A, B]`.
#[derive(Debug, Clone, Default)]
pub struct LifetimeModel {
    /// Largest time in the data; the denominator must stay positive up to it.
    pub t_max: f64,
}

impl CurveModel for LifetimeModel {
    fn n_params(&self) -> usize {
        3
    }

    fn value(&self, t: f64, p: &[f64]) -> f64 {
        1.0 + p[0] / (1.0 + p[1] * t * t + p[2] * t)
    }

    fn gradient(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let den = 1.0 + p[1] * t * t + p[2] * t;
        out[0] = 1.0 / den;
        out[1] = -p[0] * t * t / (den * den);
        out[2] = -p[0] * t / (den * den);
    }

    fn admissible(&self, p: &[f64]) -> bool {
        // denominator positive on [0, t_max]: check the ends and the vertex
        let den = |t: f64| 1.0 + p[1] * t * t + p[2] * t;
        let mut ok = den(self.t_max) > 0.0;
        if p[1] != 0.0 {
            let v = -p[2] / (2.0 * p[1]);
            if v > 0.0 && v < self.t_max {
                ok &= den(v) > 0.0;
            }
        }
        ok
    }

    fn param_names(&self) -> Vec<&'static str> {
        vec!["C", "A", "B"]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    CavityCascade,
    GaussianScan,
    Lifetime,
}

/// Per-point uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    /// Unit weights; covariance is scaled by the reduced chi-square.
    Uniform,
    /// `σ_i = fraction × |y_i|`; zero samples take the smallest nonzero `|y|`.
    Relative(f64),
    /// Known absolute `σ_i`.
    Absolute(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when the scaled gradient norm falls below this fraction of its
    /// initial value.
    pub gradient_tolerance: f64,
    /// Stop when the scaled step is below this relative size.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    /// Damping saturated without any further decrease.
    NoProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub model: Option<ModelId>,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// Row-major `n × n`.
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// `sqrt(Σ r_i²)` of the weighted residuals.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub termination: Option<Termination>,
    /// The Jacobian at the optimum is rank deficient.
    pub singular: bool,
}

impl fmt::Display for FitOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(m) = self.model {
            writeln!(f, "model: {m:?}")?;
        }
        for ((name, p), s) in self
            .param_names
            .iter()
            .zip(&self.params)
            .zip(&self.std_errors)
        {
            writeln!(f, "{name} = {p:e} +/- {s:e}")?;
        }
        writeln!(f, "residual_norm = {:e}", self.residual_norm)?;
        writeln!(
            f,
            "initial_residual_norm = {:e}",
            self.initial_residual_norm
        )?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "termination = {:?}", self.termination)?;
        write!(f, "singular_jacobian = {}", self.singular)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("{points} data points for {params} parameters")]
    TooFewPoints { points: usize, params: usize },
    #[error("initial parameters outside the model domain or give a non-finite residual")]
    InvalidInitial,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("no convergence after {} iterations (residual {})", best.iterations, best.residual_norm)]
    NonConvergence { best: Box<FitOutput> },
}

struct Problem<'a, M: ?Sized> {
    model: &'a M,
    x: &'a [f64],
    y: &'a [f64],
    inv_sigma: Vec<f64>,
}

impl<M: CurveModel + ?Sized> Problem<'_, M> {
    fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
        let r = DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.inv_sigma)
                .map(|((&x, &y), &w)| (y - self.model.value(x, p)) * w),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    /// Jacobian of the model (not the residual), weighted.
    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = p.len();
        let mut j = DMatrix::zeros(self.x.len(), n);
        let mut g = vec![0.0; n];
        for (i, (&x, &w)) in self.x.iter().zip(&self.inv_sigma).enumerate() {
            self.model.gradient(x, p, &mut g);
            for k in 0..n {
                j[(i, k)] = g[k] * w;
            }
        }
        j
    }
}

/// Column norms used as parameter scales; zero columns get scale 1 so
/// their step stays zero.
fn column_scales(j: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        j.ncols(),
        j.column_iter().map(|c| {
            let s = c.norm();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        }),
    )
}

fn covariance_of(j: &DMatrix<f64>, scale: f64) -> (DMatrix<f64>, bool) {
    let d = column_scales(j);
    let mut js = j.clone();
    for (k, mut col) in js.column_iter_mut().enumerate() {
        col /= d[k];
    }
    let h = js.transpose() * &js;
    let n = h.nrows();
    let svd = h.svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-14 * n as f64;
    let singular = svd.singular_values.iter().any(|&s| s <= cutoff);
    let inv = svd
        .pseudo_inverse(cutoff)
        .unwrap_or_else(|_| DMatrix::zeros(n, n));
    let cov = DMatrix::from_fn(n, n, |a, b| inv[(a, b)] / (d[a] * d[b]) * scale);
    (cov, singular)
}

/// Weighted damped least squares. Validates inputs and returns the optimum,
/// or the best point reached when the iteration budget runs out.
pub fn least_squares<M: CurveModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    weighting: &Weighting,
    initial: &[f64],
    options: &FitOptions,
) -> Result<FitOutput, FitError> {
    let n = model.n_params();
    if initial.len() != n {
        return Err(FitError::InvalidData(format!(
            "{} initial parameters for a {n}-parameter model",
            initial.len()
        )));
    }
    if x.len() != y.len() {
        return Err(FitError::InvalidData("x and y lengths differ".into()));
    }
    if x.len() < n {
        return Err(FitError::TooFewPoints {
            points: x.len(),
            params: n,
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::InvalidData("non-finite sample".into()));
    }
    let inv_sigma: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; x.len()],
        Weighting::Relative(frac) => {
            let floor = y
                .iter()
                .map(|v| v.abs())
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
            y.iter()
                .map(|v| 1.0 / (frac * v.abs().max(floor)))
                .collect()
        }
        Weighting::Absolute(s) => {
            if s.len() != x.len() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(FitError::InvalidData(
                    "sigmas must be finite and positive".into(),
                ));
            }
            s.iter().map(|v| 1.0 / v).collect()
        }
    };
    if inv_sigma.iter().any(|w| !w.is_finite()) {
        return Err(FitError::InvalidData("zero uncertainty".into()));
    }
    if !model.admissible(initial) {
        return Err(FitError::InvalidInitial);
    }
    match weighting {
        Weighting::Relative(frac) => {
            // iteratively reweighted: σ follows the model, not the noisy data
            let floor = y
                .iter()
                .map(|v| v.abs())
                .filter(|v| *v > 0.0)
                .fold(f64::INFINITY, f64::min);
            // log-space pass first: multiplicative structure becomes additive,
            // which keeps far-off starts from stalling
            let start = log_space_start(model, x, y, *frac, initial, options)
                .unwrap_or_else(|| initial.to_vec());
            let mut prob = Problem {
                model,
                x,
                y,
                inv_sigma,
            };
            let mut out = solve(&prob, &start, options, false)?;
            let first_initial = out.initial_residual_norm;
            let mut total_iterations = out.iterations;
            for _ in 0..REWEIGHT_PASSES {
                let prev = out.params.clone();
                prob.inv_sigma = x
                    .iter()
                    .map(|&xi| 1.0 / (frac * model.value(xi, &prev).abs().max(floor)))
                    .collect();
                if prob.inv_sigma.iter().any(|w| !w.is_finite()) {
                    break;
                }
                out = solve(&prob, &prev, options, false).map_err(|e| match e {
                    FitError::NonConvergence { mut best } => {
                        best.iterations += total_iterations;
                        FitError::NonConvergence { best }
                    }
                    e => e,
                })?;
                total_iterations += out.iterations;
                let moved = out
                    .params
                    .iter()
                    .zip(&prev)
                    .zip(&out.std_errors)
                    .any(|((a, b), s)| (a - b).abs() > 1e-3 * s.max(1e-300));
                if !moved {
                    break;
                }
            }
            out.iterations = total_iterations;
            // both norms under the final weights
            out.initial_residual_norm = prob.residuals(initial).map_or(first_initial, |r| r.norm());
            Ok(out)
        }
        Weighting::Absolute(_) => solve(
            &Problem {
                model,
                x,
                y,
                inv_sigma,
            },
            initial,
            options,
            true,
        ),
        Weighting::Uniform => solve(
            &Problem {
                model,
                x,
                y,
                inv_sigma,
            },
            initial,
            options,
            false,
        ),
    }
}

/// `ln m(x; p)`, for fitting `ln y` when the noise is multiplicative.
struct LogModel<'a, M: ?Sized>(&'a M);

impl<M: CurveModel + ?Sized> CurveModel for LogModel<'_, M> {
    fn n_params(&self) -> usize {
        self.0.n_params()
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        // non-positive model values give NaN and the step is rejected
        self.0.value(x, p).ln()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let m = self.0.value(x, p);
        self.0.gradient(x, p, out);
        out.iter_mut().for_each(|g| *g /= m);
    }

    fn admissible(&self, p: &[f64]) -> bool {
        self.0.admissible(p)
    }

    fn param_names(&self) -> Vec<&'static str> {
        self.0.param_names()
    }
}

fn log_space_start<M: CurveModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: &[f64],
    frac: f64,
    initial: &[f64],
    options: &FitOptions,
) -> Option<Vec<f64>> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&a, &v)| (a, v.ln()))
        .unzip();
    if lx.len() < 2 * model.n_params() {
        return None;
    }
    let prob = Problem {
        model: &LogModel(model),
        x: &lx,
        y: &ly,
        inv_sigma: vec![1.0 / frac; lx.len()],
    };
    match solve(&prob, initial, options, false) {
        Ok(o) => Some(o.params),
        Err(FitError::NonConvergence { best }) => Some(best.params),
        Err(_) => None,
    }
}

/// Reweighting rounds after the first relative-weight fit.
const REWEIGHT_PASSES: usize = 8;

fn solve<M: CurveModel + ?Sized>(
    prob: &Problem<'_, M>,
    initial: &[f64],
    options: &FitOptions,
    known_sigma: bool,
) -> Result<FitOutput, FitError> {
    let model = prob.model;
    let n = model.n_params();
    let mut p = DVector::from_column_slice(initial);
    let mut r = prob
        .residuals(p.as_slice())
        .ok_or(FitError::InvalidInitial)?;
    let mut cost = r.norm_squared();
    let initial_norm = cost.sqrt();
    let mut mu = options.initial_damping;
    let mut g0 = None;
    let mut termination = None;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        let j = prob.jacobian(p.as_slice());
        let d = column_scales(&j);
        let mut js = j.clone();
        for (k, mut col) in js.column_iter_mut().enumerate() {
            col /= d[k];
        }
        let h = js.transpose() * &js;
        let g = js.transpose() * &r;
        let gnorm = g.norm();
        let g0v = *g0.get_or_insert(gnorm);
        if gnorm <= options.gradient_tolerance * g0v || gnorm == 0.0 {
            termination = Some(Termination::Gradient);
            break;
        }

        let mut accepted = false;
        let mut tiny_step = false;
        for _ in 0..60 {
            let mut a = h.clone();
            for k in 0..n {
                a[(k, k)] += mu * (1.0 + h[(k, k)]);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let step_s = chol.solve(&g);
            let step = step_s.component_div(&d);
            let trial = &p + &step;
            let scaled_p = p.component_mul(&d).norm();
            if step_s.norm() <= options.step_tolerance * (scaled_p + options.step_tolerance) {
                tiny_step = true;
                break;
            }
            if model.admissible(trial.as_slice()) {
                if let Some(rt) = prob.residuals(trial.as_slice()) {
                    let ct = rt.norm_squared();
                    if ct < cost {
                        p = trial;
                        r = rt;
                        cost = ct;
                        mu = (mu / 3.0).max(1e-12);
                        accepted = true;
                        break;
                    }
                }
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if tiny_step {
            termination = Some(Termination::Step);
            break;
        }
        if !accepted {
            termination = Some(Termination::NoProgress);
            break;
        }
    }

    let j = prob.jacobian(p.as_slice());
    let dof = (prob.x.len() - n).max(1) as f64;
    let scale = if known_sigma { 1.0 } else { cost / dof };
    let (cov, singular) = covariance_of(&j, scale);
    let out = FitOutput {
        model: None,
        param_names: model.param_names().into_iter().map(String::from).collect(),
        params: p.iter().copied().collect(),
        std_errors: (0..n).map(|k| cov[(k, k)].max(0.0).sqrt()).collect(),
        covariance: (0..n)
            .map(|a| (0..n).map(|b| cov[(a, b)]).collect())
            .collect(),
        residual_norm: cost.sqrt(),
        initial_residual_norm: initial_norm,
        iterations,
        termination,
        singular,
    };
    match termination {
        Some(_) => Ok(out),
        None => Err(FitError::NonConvergence {
            best: Box::new(out),
        }),
    }
}

fn spectrum_xy(data: &SampledSpectrum) -> (Vec<f64>, Vec<f64>) {
    (data.frequencies().collect(), data.values.clone())
}

/// Fits one of the built-in models to a sampled spectrum with unit weights.
/// The lifetime model takes the grid frequencies as times.
pub fn least_squares_fit(
    model_id: ModelId,
    data: &SampledSpectrum,
    initial: &[f64],
) -> Result<FitOutput, FitError> {
    let (x, y) = spectrum_xy(data);
    let opts = FitOptions::default();
    let mut out = match model_id {
        ModelId::CavityCascade => {
            least_squares(&CavityModel, &x, &y, &Weighting::Uniform, initial, &opts)
        }
        ModelId::GaussianScan => {
            least_squares(&GaussianModel, &x, &y, &Weighting::Uniform, initial, &opts)
        }
        ModelId::Lifetime => {
            let m = LifetimeModel {
                t_max: data.f_end(),
            };
            least_squares(&m, &x, &y, &Weighting::Uniform, initial, &opts)
        }
    }?;
    out.model = Some(model_id);
    Ok(out)
}

/// The cascade is symmetric under relabeling its stages; report them in
/// order of decreasing slope (increasing free spectral range). Permutes
/// the covariance along with the parameters.
fn canonical_stage_order(q: &[f64], cov: &mut [Vec<f64>]) -> Vec<f64> {
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| q[4 + b].total_cmp(&q[4 + a]));
    let mut perm: Vec<usize> = (0..q.len()).collect();
    for (slot, &src) in order.iter().enumerate() {
        perm[1 + slot] = 1 + src;
        perm[4 + slot] = 4 + src;
    }
    let old = cov.to_vec();
    for a in 0..q.len() {
        for b in 0..q.len() {
            cov[a][b] = old[perm[a]][perm[b]];
        }
    }
    perm.iter().map(|&i| q[i]).collect()
}

/// Fits the cascade model starting from `initial`. With periodic data the
/// fit settles on the transmission peak nearest `initial.f0`. Stages come
/// back ordered by decreasing slope.
pub fn fit_cavity_profile(
    data: &SampledSpectrum,
    initial: &CavityFitParams,
    weighting: &Weighting,
) -> Result<(CavityFitParams, FitOutput), FitError> {
    let (x, y) = spectrum_xy(data);
    let p0 = initial.to_array();
    // stages with zero contrast have no width; fit those directly
    if p0[1..4].iter().any(|&a| a <= 0.0) {
        let mut out = least_squares(&CavityModel, &x, &y, weighting, &p0, &FitOptions::default())?;
        out.model = Some(ModelId::CavityCascade);
        return Ok((CavityFitParams::from_array(&out.params), out));
    }
    let q0 = CavityWidthModel::from_cavity(&p0);
    let to_cavity = |mut out: FitOutput| {
        let q = canonical_stage_order(&out.params, &mut out.covariance);
        let p = CavityWidthModel::to_cavity(&q);
        // first-order map of the covariance through A = 1/(w·slope)²
        let mut jac = DMatrix::<f64>::identity(8, 8);
        for i in 0..3 {
            jac[(1 + i, 1 + i)] = -2.0 * p[1 + i] / q[1 + i];
            jac[(1 + i, 4 + i)] = -2.0 * p[1 + i] / q[4 + i];
        }
        let cq = DMatrix::from_fn(8, 8, |a, b| out.covariance[a][b]);
        let cp = &jac * cq * jac.transpose();
        out.params = p.to_vec();
        out.covariance = (0..8)
            .map(|a| (0..8).map(|b| cp[(a, b)]).collect())
            .collect();
        out.std_errors = (0..8).map(|k| cp[(k, k)].max(0.0).sqrt()).collect();
        out.param_names = CavityModel
            .param_names()
            .into_iter()
            .map(String::from)
            .collect();
        out.model = Some(ModelId::CavityCascade);
        out
    };
    let q = q0;
    let initial_norm = |out: &FitOutput| {
        let inv = match weighting {
            Weighting::Uniform => vec![1.0; x.len()],
            Weighting::Absolute(s) => s.iter().map(|v| 1.0 / v).collect(),
            Weighting::Relative(frac) => {
                let floor = y
                    .iter()
                    .map(|v| v.abs())
                    .filter(|v| *v > 0.0)
                    .fold(f64::INFINITY, f64::min);
                x.iter()
                    .map(|&xi| 1.0 / (frac * CavityModel.value(xi, &out.params).abs().max(floor)))
                    .collect()
            }
        };
        Problem {
            model: &CavityModel,
            x: &x,
            y: &y,
            inv_sigma: inv,
        }
        .residuals(&p0)
        .map_or(f64::INFINITY, |r| r.norm())
    };
    let out = match least_squares(
        &CavityWidthModel,
        &x,
        &y,
        weighting,
        &q,
        &FitOptions::default(),
    ) {
        Ok(o) => to_cavity(o),
        Err(FitError::NonConvergence { best }) => {
            let mut best = to_cavity(*best);
            best.initial_residual_norm = initial_norm(&best);
            return Err(FitError::NonConvergence {
                best: Box::new(best),
            });
        }
        Err(e) => return Err(e),
    };
    let mut out = out;
    out.initial_residual_norm = initial_norm(&out);
    Ok((CavityFitParams::from_array(&out.params), out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScanFit {
    pub a: f64,
    pub b: f64,
    /// 1/e² half-width parameter (Hz).
    pub d: f64,
    pub u0: f64,
}

impl GaussianScanFit {
    pub fn fwhm(&self) -> f64 {
        self.d * (2.0 * 2f64.ln()).sqrt()
    }

    pub fn value(&self, f: f64) -> f64 {
        GaussianModel.value(f, &[self.a, self.b, self.d, self.u0])
    }

    /// Flat data: no amplitude or a rank-deficient Jacobian.
    pub fn is_degenerate(&self, out: &FitOutput) -> bool {
        let scale = self.u0.abs() + self.a.abs();
        out.singular || self.a <= 1e-6 * scale || self.d <= 0.0
    }

    /// Moment-based starting point.
    pub fn initial_guess(data: &SampledSpectrum) -> Self {
        let u0 = data.min();
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (f, v) in data.frequencies().zip(&data.values) {
            let y = (v - u0).max(0.0);
            w += y;
            m1 += y * f;
            m2 += y * f * f;
        }
        let a = data.max() - u0;
        if w <= 0.0 {
            let span = data.f_end() - data.f_start;
            return Self {
                a: 0.0,
                b: 0.5 * (data.f_start + data.f_end()),
                d: 0.25 * span,
                u0,
            };
        }
        let mean = m1 / w;
        let var = (m2 / w - mean * mean).max(data.f_step * data.f_step);
        // the 1/e² half-width is twice the standard deviation
        Self {
            a,
            b: mean,
            d: 2.0 * var.sqrt(),
            u0,
        }
    }
}

pub fn fit_gaussian_scan(
    data: &SampledSpectrum,
    initial: Option<GaussianScanFit>,
    weighting: &Weighting,
) -> Result<(GaussianScanFit, FitOutput), FitError> {
    let init = initial.unwrap_or_else(|| GaussianScanFit::initial_guess(data));
    let (x, y) = spectrum_xy(data);
    let mut out = least_squares(
        &GaussianModel,
        &x,
        &y,
        weighting,
        &[init.a, init.b, init.d, init.u0],
        &FitOptions::default(),
    )?;
    out.model = Some(ModelId::GaussianScan);
    let p = &out.params;
    Ok((
        GaussianScanFit {
            a: p[0],
            b: p[1],
            d: p[2],
            u0: p[3],
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::CavityFitParams;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn check_gradient<M: CurveModel>(m: &M, x: f64, p: &[f64]) {
        let mut g = vec![0.0; p.len()];
        m.gradient(x, p, &mut g);
        for k in 0..p.len() {
            let h = if p[k] != 0.0 { 1e-6 * p[k].abs() } else { 1e-6 };
            let mut hi = p.to_vec();
            let mut lo = p.to_vec();
            hi[k] += h;
            lo[k] -= h;
            let fd = (m.value(x, &hi) - m.value(x, &lo)) / (2.0 * h);
            let tol = 1e-5 * fd.abs().max(g[k].abs()) + 1e-12 * m.value(x, p).abs() / h;
            assert!((fd - g[k]).abs() <= tol, "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut cav = CavityFitParams::triple_cascade().to_array();
        cav[7] = 1e8;
        for x in [-5e9, -3e8, 2e8, 7e9] {
            check_gradient(&CavityModel, x, &cav);
        }
        for x in [-1e9, 0.0, 3e8] {
            check_gradient(&GaussianModel, x, &[100.0, 1e7, 5e8, 2.0]);
        }
        for t in [1e-7, 1e-6] {
            check_gradient(&LifetimeModel { t_max: 3e-6 }, t, &[6.8, 2.7e12, 1e5]);
        }
    }

    fn gaussian_data() -> SampledSpectrum {
        SampledSpectrum::from_fn(-3e9, 20e6, 301, |f| {
            GaussianModel.value(f, &[100.0, 0.0, 5e8, 2.0])
        })
    }

    #[test]
    fn gaussian_exact_recovery() {
        let data = gaussian_data();
        let init = GaussianScanFit {
            a: 118.0,
            b: 0.15 * 5e8,
            d: 4.2e8,
            u0: 2.3,
        };
        let (fit, out) = fit_gaussian_scan(&data, Some(init), &Weighting::Uniform).unwrap();
        assert!((fit.a / 100.0 - 1.0).abs() < 1e-6);
        assert!(fit.b.abs() < 1e-6 * 5e8);
        assert!((fit.d / 5e8 - 1.0).abs() < 1e-6);
        assert!((fit.u0 / 2.0 - 1.0).abs() < 1e-6);
        assert!(out.residual_norm <= out.initial_residual_norm);
        assert!(!fit.is_degenerate(&out));
    }

    #[test]
    fn flat_data_is_degenerate() {
        let data = SampledSpectrum::from_fn(-3e9, 20e6, 301, |_| 2.0);
        let (fit, out) = fit_gaussian_scan(&data, None, &Weighting::Uniform).unwrap();
        assert!(fit.is_degenerate(&out), "{fit:?} {out}");
    }

    #[test]
    fn least_squares_fit_dispatch() {
        let data = gaussian_data();
        let out =
            least_squares_fit(ModelId::GaussianScan, &data, &[90.0, 1e7, 5.5e8, 1.8]).unwrap();
        assert_eq!(out.model, Some(ModelId::GaussianScan));
        assert!((out.params[2] / 5e8 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn errors_on_bad_input() {
        let data = gaussian_data();
        assert_eq!(
            least_squares_fit(ModelId::GaussianScan, &data, &[1.0, 0.0, -1.0, 0.0]),
            Err(FitError::InvalidInitial)
        );
        let x = [0.0, 1.0];
        assert!(matches!(
            least_squares(
                &GaussianModel,
                &x,
                &x,
                &Weighting::Uniform,
                &[1.0, 0.0, 1.0, 0.0],
                &FitOptions::default()
            ),
            Err(FitError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn iteration_budget_reports_best_so_far() {
        let data = gaussian_data();
        let (x, y) = spectrum_xy(&data);
        let opts = FitOptions {
            max_iterations: 1,
            ..FitOptions::default()
        };
        match least_squares(
            &GaussianModel,
            &x,
            &y,
            &Weighting::Uniform,
            &[60.0, 2e8, 3e8, 0.0],
            &opts,
        ) {
            Err(FitError::NonConvergence { best }) => {
                assert_eq!(best.iterations, 1);
                assert!(best.residual_norm < best.initial_residual_norm);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cavity_noiseless_recovery_and_peak_locking() {
        let truth = CavityFitParams {
            f0: 2e8,
            ..CavityFitParams::triple_cascade()
        };
        let data = SampledSpectrum::from_fn(-30e9, 20e6, 3001, |f| cascade_transmission(f, &truth));
        let mut init = truth.to_array();
        for (k, v) in init.iter_mut().enumerate().take(7) {
            *v *= if k % 2 == 0 { 1.1 } else { 0.92 };
        }
        init[7] = truth.f0 + 60e6;
        let (fit, _) = fit_cavity_profile(
            &data,
            &CavityFitParams::from_array(&init),
            &Weighting::Relative(0.05),
        )
        .unwrap();
        for (a, b) in fit.to_array().iter().zip(truth.to_array()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e6), "{a} vs {b}");
        }

        // one stage over two free spectral ranges locks to the nearer peak
        let single = CavityFitParams::single(crate::optics::DEFAULT_STAGES[0], 0.9, 0.0);
        let fsr = std::f64::consts::PI / single.d;
        let data =
            SampledSpectrum::from_fn(-0.3 * fsr, 10e6, 1 + (1.6 * fsr / 10e6) as usize, |f| {
                cascade_transmission(f, &single)
            });
        let near_second = CavityFitParams {
            f0: fsr - 50e6,
            ..single
        };
        let (fit, _) = fit_cavity_profile(&data, &near_second, &Weighting::Uniform).unwrap();
        assert!((fit.f0 - fsr).abs() < 1e3, "{}", fit.f0);
    }

    #[test]
    fn cavity_noisy_recovery_within_reported_sigma() {
        let truth = CavityFitParams::triple_cascade();
        let rng = std::cell::RefCell::new(stream_rng(17, 0));
        let data = SampledSpectrum::from_fn(-30e9, 20e6, 3001, |f| {
            let z: f64 = StandardNormal.sample(&mut *rng.borrow_mut());
            cascade_transmission(f, &truth) * (1.0 + 0.05 * z)
        });
        let mut init = truth.to_array();
        for v in init.iter_mut().take(7) {
            *v *= 1.15;
        }
        init[7] = 50e6;
        let (fit, out) = fit_cavity_profile(
            &data,
            &CavityFitParams::from_array(&init),
            &Weighting::Relative(0.05),
        )
        .unwrap();
        for k in 0..8 {
            let z = (fit.to_array()[k] - truth.to_array()[k]) / out.std_errors[k];
            assert!(z.abs() < 3.0, "param {k}: z = {z}\n{out}");
        }
    }
}
