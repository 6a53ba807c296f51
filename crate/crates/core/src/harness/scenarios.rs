use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{cell, svg::PlotSpec, time_bandwidth_product, PointOutput, ScenarioId};
use crate::detection::{
    cauchy_schwarz_test, exact_click_probabilities, g2_auto_estimate, g2_cross_estimate,
    heralding_efficiency, simulate_counts, CountsTable, DetectionSetup,
};
use crate::model::{CoincidenceScheme, ExperimentConfig, Species, CAESIUM_D2_WAVELENGTH};
use crate::optics::{cascade_transmission, hyperfine_extinction, CavityFitParams};
use crate::rng::{derive_seed, stream_rng};
use crate::source::{analytic_g2, unconditional_click_probability, EmissionModel};
use crate::spectral::{
    convolve, deconvolve_spectrum, fit_cavity_profile, fit_gaussian_scan, fit_lifetime_curve, fwhm,
    Deconvolution, DeconvolutionSettings, FitOutput, GaussianScanFit, SampledSpectrum, Weighting,
};
use crate::spinwave::{
    efficiency_curve, mc_lifetime_1e, spin_wave_mismatch, McEstimate, RetrievalCurve, WaveVectors,
};

/// Atoms per spin-wave Monte Carlo estimate.
pub const SPINWAVE_ATOMS: u64 = 200_000;

/// Storage times of the lifetime scan: 0 to 3 µs.
const LIFETIME_POINTS: usize = 13;
const LIFETIME_STEP: f64 = 250e-9;

type Metrics = BTreeMap<String, f64>;

fn put(m: &mut Metrics, k: &str, v: f64) {
    m.insert(k.to_string(), v);
}

fn err_string(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub(crate) fn run_point(
    id: ScenarioId,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<PointOutput, String> {
    match id {
        ScenarioId::NoiseVsReadPower => noise_point(cfg, seed),
        ScenarioId::G2VsPower => g2_point(cfg, seed),
        ScenarioId::LambdaVsPower => lambda_point(cfg, seed),
        ScenarioId::BandwidthMeasurement => bandwidth_point(cfg, seed),
        ScenarioId::LifetimeVsTime => lifetime_point(cfg, seed),
        ScenarioId::CsViolation => cs_point(cfg, seed),
        ScenarioId::TbpReport => tbp_point(cfg, seed),
    }
}

pub(crate) fn summary_columns(id: ScenarioId) -> &'static [&'static str] {
    match id {
        ScenarioId::NoiseVsReadPower => &[
            "noise_mean",
            "click_probability",
            "click_probability_err",
            "analytic_click_probability",
        ],
        ScenarioId::G2VsPower => &[
            "lambda",
            "g2_cross",
            "g2_cross_err",
            "exact_g2_cross",
            "analytic_g2_cross",
        ],
        ScenarioId::LambdaVsPower => &["lambda", "lambda_estimate", "lambda_estimate_err"],
        ScenarioId::BandwidthMeasurement => &[
            "true_fwhm_mhz",
            "scan_fwhm_mhz",
            "recovered_fwhm_mhz",
            "crossing_fwhm_mhz",
            "relative_error",
            "clipped_fraction",
            "cavity_t0",
            "cavity_extinction_9_2ghz",
        ],
        ScenarioId::LifetimeVsTime => &[
            "fit_c",
            "fit_a",
            "fit_b",
            "fit_c_err",
            "fit_a_err",
            "fit_b_err",
            "lifetime_1e_ns",
            "efficiency_lifetime_ns",
        ],
        ScenarioId::CsViolation => &[
            "trials",
            "retrieval_efficiency",
            "g2_cross",
            "g2_cross_err",
            "g2_ss",
            "g2_ss_err",
            "g2_asas",
            "g2_asas_err",
            "cs_ratio",
            "cs_ratio_err",
            "cs_excess",
            "cs_excess_err",
            "cs_significance",
            "heralding_efficiency",
        ],
        ScenarioId::TbpReport => &[
            "lifetime_ns",
            "pulse_duration_ns",
            "bandwidth_mhz",
            "tbp_by_duration",
            "tbp_by_bandwidth",
            "g2_lifetime_ns",
            "g2_tbp_by_duration",
            "g2_tbp_by_bandwidth",
        ],
    }
}

pub(crate) fn summary_plot(id: ScenarioId, x: Option<&str>) -> Option<PlotSpec> {
    let x = x?.to_string();
    let (y, err, title) = match id {
        ScenarioId::NoiseVsReadPower => (
            "click_probability",
            Some("click_probability_err"),
            "Unconditional noise",
        ),
        ScenarioId::G2VsPower => ("g2_cross", Some("g2_cross_err"), "Cross-correlation"),
        ScenarioId::LambdaVsPower => (
            "lambda_estimate",
            Some("lambda_estimate_err"),
            "Excitation probability",
        ),
        ScenarioId::BandwidthMeasurement => ("recovered_fwhm_mhz", None, "Recovered bandwidth"),
        ScenarioId::LifetimeVsTime => ("lifetime_1e_ns", None, "Fitted 1/e lifetime"),
        ScenarioId::CsViolation | ScenarioId::TbpReport => return None,
    };
    Some(PlotSpec {
        x,
        y: y.into(),
        y_err: err.map(String::from),
        title: title.into(),
        output: Default::default(),
    })
}

/// Spin-wave retrieval at the configured storage time times the
/// intrinsic read efficiency.
pub(crate) fn retrieval_at(cfg: &ExperimentConfig, t: f64, seed: u64) -> Result<f64, String> {
    let dk = spin_wave_mismatch(&WaveVectors::collinear(
        CAESIUM_D2_WAVELENGTH,
        cfg.atoms.hyperfine_splitting,
    ));
    let e = efficiency_curve(&[t], &cfg.atoms, dk, seed, SPINWAVE_ATOMS).map_err(err_string)?[0];
    Ok((cfg.read_efficiency * e.value).clamp(0.0, 1.0))
}

/// Threshold-detector cross-correlation from exact click probabilities.
fn exact_cross(setup: &DetectionSetup) -> f64 {
    let (s, a, c) = exact_click_probabilities(setup);
    c / (s * a)
}

fn counts_csv(rows: &[(&str, &CountsTable)]) -> String {
    let mut s = format!("run,{}\n", CountsTable::CSV_HEADER);
    for (name, c) in rows {
        s.push_str(&format!("{name},{}\n", c.csv_row()));
    }
    s
}

fn noise_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let setup = DetectionSetup::from_config(cfg, false, 0.0);
    let counts = simulate_counts(&setup, cfg.trials, seed).map_err(err_string)?;
    let n = counts.trials as f64;
    let p = counts.n_antistokes as f64 / n;
    let mut m = Metrics::new();
    put(&mut m, "noise_mean", setup.emission.noise_mean_antistokes);
    put(&mut m, "click_probability", p);
    put(&mut m, "click_probability_err", (p * (1.0 - p) / n).sqrt());
    put(
        &mut m,
        "analytic_click_probability",
        unconditional_click_probability(
            setup.emission.noise_mean_antistokes,
            setup.antistokes_arm.total(),
            cfg.detection.dark_count_probability,
        ),
    );
    put(&mut m, "trials", n);
    Ok(PointOutput {
        metrics: m,
        files: vec![("counts".into(), counts_csv(&[("unconditional", &counts)]))],
    })
}

fn g2_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let eta = retrieval_at(cfg, cfg.storage_time, derive_seed(seed, 1))?;
    let setup = DetectionSetup::from_config(cfg, true, eta);
    let counts = simulate_counts(&setup, cfg.trials, derive_seed(seed, 0)).map_err(err_string)?;
    let g = g2_cross_estimate(&counts).map_err(err_string)?;
    let mut m = Metrics::new();
    put(&mut m, "lambda", setup.emission.lambda);
    put(&mut m, "retrieval_efficiency", eta);
    put(&mut m, "g2_cross", g.value);
    put(&mut m, "g2_cross_err", g.std_error);
    put(
        &mut m,
        "analytic_g2_cross",
        analytic_g2(&setup.emission, eta).map_err(err_string)?.cross,
    );
    put(&mut m, "exact_g2_cross", exact_cross(&setup));
    Ok(PointOutput {
        metrics: m,
        files: vec![("counts".into(), counts_csv(&[("cross", &counts)]))],
    })
}

/// Inverts the thermal Stokes click probability for λ, correcting for the
/// arm efficiency and dark counts.
fn lambda_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let setup = DetectionSetup::from_config(cfg, true, 0.0);
    let counts = simulate_counts(&setup, cfg.trials, seed).map_err(err_string)?;
    let n = counts.trials as f64;
    let p = counts.n_stokes as f64 / n;
    let eta = setup.stokes_arm.total();
    let dark = cfg.detection.dark_count_probability;
    let noise = (-eta * setup.emission.noise_mean_stokes).exp() * (1.0 - dark);
    // P(no click) = noise / (1 + λ η)
    let none = 1.0 - p;
    let lambda_hat = (noise / none - 1.0) / eta;
    let dp = (p * (1.0 - p) / n).sqrt();
    let mut m = Metrics::new();
    put(&mut m, "lambda", setup.emission.lambda);
    put(&mut m, "lambda_estimate", lambda_hat);
    put(
        &mut m,
        "lambda_estimate_err",
        noise / (none * none) / eta * dp,
    );
    Ok(PointOutput {
        metrics: m,
        files: vec![("counts".into(), counts_csv(&[("stokes", &counts)]))],
    })
}

/// Everything produced by the synthetic bandwidth measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRecovery {
    pub cavity_scan: SampledSpectrum,
    pub cavity_fit: CavityFitParams,
    pub cavity_fit_output: FitOutput,
    /// Fitted transfer function on the photon scan grid.
    pub transfer: SampledSpectrum,
    pub true_spectrum: SampledSpectrum,
    pub scan: SampledSpectrum,
    pub scan_fit: GaussianScanFit,
    pub recovered: Deconvolution,
    /// Gaussian fitted to the recovered spectrum.
    pub recovered_fit: GaussianScanFit,
    pub true_fwhm: f64,
    pub scan_fwhm: f64,
    /// FWHM of `recovered_fit`; the reported bandwidth.
    pub recovered_fwhm: f64,
    /// Half-maximum crossing width of the recovered samples.
    pub crossing_fwhm: f64,
}

fn with_noise(s: &SampledSpectrum, fraction: f64, seed: u64) -> SampledSpectrum {
    if fraction == 0.0 {
        return s.clone();
    }
    let mut rng = stream_rng(seed, 0);
    s.with_values(
        s.values
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (v * (1.0 + fraction * z)).max(0.0)
            })
            .collect(),
    )
}

/// Synthetic bandwidth measurement: calibrate the cascade on a classical
/// transmission scan, scan a Gaussian photon spectrum through the true
/// filter, then fit the scan and deconvolve it with the fitted filter.
pub fn recover_bandwidth(
    cfg: &ExperimentConfig,
    seed: u64,
    settings: &DeconvolutionSettings,
) -> Result<BandwidthRecovery, String> {
    let sc = &cfg.scan;
    let truth = cfg.cavity;
    let (cstart, cn) = SampledSpectrum::symmetric_grid(sc.cavity_span, sc.step);
    let clean_t =
        SampledSpectrum::from_fn(cstart, sc.step, cn, |f| cascade_transmission(f, &truth));
    let cavity_scan = with_noise(&clean_t, sc.noise_fraction, derive_seed(seed, 0));
    let weighting = Weighting::Relative(sc.noise_fraction.max(1e-3));
    let (cavity_fit, cavity_fit_output) =
        fit_cavity_profile(&cavity_scan, &truth, &weighting).map_err(err_string)?;

    let (start, n) = SampledSpectrum::symmetric_grid(sc.span, sc.step);
    let d = sc.photon_fwhm / (2.0 * 2f64.ln()).sqrt();
    let unit = SampledSpectrum::from_fn(start, sc.step, n, |f| (-2.0 * f * f / (d * d)).exp());
    let true_t = SampledSpectrum::from_fn(start, sc.step, n, |f| cascade_transmission(f, &truth));
    let raw = convolve(&unit, &true_t).map_err(err_string)?;
    // normalize the scan to unit peak above the baseline
    let scale = 1.0 / raw.max();
    let true_spectrum = unit.with_values(unit.values.iter().map(|v| v * scale).collect());
    let clean_u = raw.with_values(raw.values.iter().map(|v| v * scale + sc.baseline).collect());
    let scan = with_noise(&clean_u, sc.noise_fraction, derive_seed(seed, 1));

    let scan_weight = if sc.noise_fraction > 0.0 {
        Weighting::Relative(sc.noise_fraction)
    } else {
        Weighting::Uniform
    };
    let (scan_fit, _) = fit_gaussian_scan(&scan, None, &scan_weight).map_err(err_string)?;
    let transfer =
        SampledSpectrum::from_fn(start, sc.step, n, |f| cascade_transmission(f, &cavity_fit));
    let recovered =
        deconvolve_spectrum(&scan, scan_fit.u0, &transfer, settings).map_err(err_string)?;
    let crossing_fwhm = fwhm(&recovered.spectrum).map_err(err_string)?.width;
    // noise on the deconvolved samples biases a crossing width; a profile
    // fit averages over the whole line
    let (recovered_fit, fit_out) =
        fit_gaussian_scan(&recovered.spectrum, None, &Weighting::Uniform).map_err(err_string)?;
    if recovered_fit.is_degenerate(&fit_out) {
        return Err("degenerate fit to the recovered spectrum".into());
    }
    Ok(BandwidthRecovery {
        cavity_scan,
        cavity_fit,
        cavity_fit_output,
        transfer,
        true_fwhm: fwhm(&true_spectrum).map_err(err_string)?.width,
        true_spectrum,
        scan_fwhm: scan_fit.fwhm(),
        scan,
        scan_fit,
        recovered,
        recovered_fwhm: recovered_fit.fwhm(),
        recovered_fit,
        crossing_fwhm,
    })
}

fn bandwidth_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let r = recover_bandwidth(cfg, seed, &DeconvolutionSettings::default())?;
    let mut m = Metrics::new();
    put(&mut m, "true_fwhm_mhz", cfg.scan.photon_fwhm / 1e6);
    put(&mut m, "scan_fwhm_mhz", r.scan_fwhm / 1e6);
    put(&mut m, "recovered_fwhm_mhz", r.recovered_fwhm / 1e6);
    put(&mut m, "crossing_fwhm_mhz", r.crossing_fwhm / 1e6);
    put(
        &mut m,
        "relative_error",
        r.recovered_fwhm / cfg.scan.photon_fwhm - 1.0,
    );
    put(&mut m, "clipped_fraction", r.recovered.clipped_fraction);
    put(&mut m, "cavity_t0", r.cavity_fit.t0);
    put(
        &mut m,
        "cavity_extinction_9_2ghz",
        hyperfine_extinction(&r.cavity_fit),
    );
    put(&mut m, "scan_baseline", r.scan_fit.u0);

    let mut cav = String::from("freq_MHz,transmission,fit\n");
    for (f, v) in r.cavity_scan.frequencies().zip(&r.cavity_scan.values) {
        cav.push_str(&format!(
            "{},{},{}\n",
            cell(f / 1e6),
            cell(*v),
            cell(cascade_transmission(f, &r.cavity_fit))
        ));
    }
    let mut scan = String::from("freq_MHz,scan,scan_fit,recovered,recovered_fit,true_spectrum\n");
    for i in 0..r.scan.len() {
        let f = r.scan.frequency(i);
        scan.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell(f / 1e6),
            cell(r.scan.values[i]),
            cell(r.scan_fit.value(f)),
            cell(r.recovered.spectrum.values[i]),
            cell(r.recovered_fit.value(f)),
            cell(r.true_spectrum.values[i])
        ));
    }
    Ok(PointOutput {
        metrics: m,
        files: vec![("cavity".into(), cav), ("scan".into(), scan)],
    })
}

/// Simulated g2 versus storage time with Poisson errors, plus the fitted
/// decay model.
pub(crate) fn lifetime_curve(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(RetrievalCurve, Vec<f64>, crate::spectral::LifetimeFit, f64), String> {
    let times: Vec<f64> = (0..LIFETIME_POINTS)
        .map(|i| i as f64 * LIFETIME_STEP)
        .collect();
    let dk = spin_wave_mismatch(&WaveVectors::collinear(
        CAESIUM_D2_WAVELENGTH,
        cfg.atoms.hyperfine_splitting,
    ));
    let atoms_seed = derive_seed(seed, 0);
    let eff: Vec<McEstimate> =
        efficiency_curve(&times, &cfg.atoms, dk, atoms_seed, SPINWAVE_ATOMS).map_err(err_string)?;
    let emission = EmissionModel::from_config(cfg, true);
    let mut curve = RetrievalCurve {
        times: times.clone(),
        efficiency: Vec::new(),
        efficiency_err: Vec::new(),
        g2_cross: Vec::new(),
        g2_err: Vec::new(),
    };
    let mut model = Vec::new();
    for (i, e) in eff.iter().enumerate() {
        let eta = (cfg.read_efficiency * e.value).clamp(0.0, 1.0);
        let setup = DetectionSetup::from_config(cfg, true, eta);
        let counts = simulate_counts(&setup, cfg.trials, derive_seed(seed, 1 + i as u64))
            .map_err(err_string)?;
        let g = g2_cross_estimate(&counts).map_err(err_string)?;
        curve.efficiency.push(e.value);
        curve.efficiency_err.push(e.std_error);
        curve.g2_cross.push(g.value);
        curve.g2_err.push(g.std_error);
        model.push(analytic_g2(&emission, eta).map_err(err_string)?.cross);
    }
    let fit = fit_lifetime_curve(&curve).map_err(err_string)?;
    let eff_life =
        mc_lifetime_1e(&cfg.atoms, dk, atoms_seed, SPINWAVE_ATOMS).map_err(err_string)?;
    Ok((curve, model, fit, eff_life))
}

fn lifetime_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let (curve, model, fit, eff_life) = lifetime_curve(cfg, seed)?;
    let mut m = Metrics::new();
    put(&mut m, "fit_c", fit.params.c);
    put(&mut m, "fit_a", fit.params.a);
    put(&mut m, "fit_b", fit.params.b);
    put(&mut m, "fit_c_err", fit.std_errors[0]);
    put(&mut m, "fit_a_err", fit.std_errors[1]);
    put(&mut m, "fit_b_err", fit.std_errors[2]);
    put(
        &mut m,
        "fit_negative_a",
        if fit.negative_a { 1.0 } else { 0.0 },
    );
    put(
        &mut m,
        "lifetime_1e_ns",
        fit.lifetime_1e.map_or(f64::NAN, |t| t * 1e9),
    );
    put(&mut m, "efficiency_lifetime_ns", eff_life * 1e9);
    let mut csv = String::from("time_ns,efficiency,efficiency_err,g2,g2_err,g2_model,g2_fit\n");
    for (i, &t) in curve.times.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            cell(t * 1e9),
            cell(curve.efficiency[i]),
            cell(curve.efficiency_err[i]),
            cell(curve.g2_cross[i]),
            cell(curve.g2_err[i]),
            cell(model[i]),
            cell(fit.params.g2_at(t))
        ));
    }
    Ok(PointOutput {
        metrics: m,
        files: vec![("curve".into(), csv)],
    })
}

fn cs_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let eta = retrieval_at(cfg, cfg.storage_time, derive_seed(seed, 3))?;
    let base = DetectionSetup::from_config(cfg, true, eta);
    let cross = simulate_counts(&base, cfg.trials, derive_seed(seed, 0)).map_err(err_string)?;
    let ss = simulate_counts(
        &base.with_scheme(CoincidenceScheme::AutoHbt, Species::Stokes),
        cfg.trials,
        derive_seed(seed, 1),
    )
    .map_err(err_string)?;
    let asas = simulate_counts(
        &base.with_scheme(CoincidenceScheme::AutoHbt, Species::AntiStokes),
        cfg.trials,
        derive_seed(seed, 2),
    )
    .map_err(err_string)?;
    let gc = g2_cross_estimate(&cross).map_err(err_string)?;
    let gs = g2_auto_estimate(&ss).map_err(err_string)?;
    let ga = g2_auto_estimate(&asas).map_err(err_string)?;
    let cs = cauchy_schwarz_test(&gc, &gs, &ga);
    let mut m = Metrics::new();
    put(&mut m, "trials", cfg.trials as f64);
    put(&mut m, "retrieval_efficiency", eta);
    put(&mut m, "g2_cross", gc.value);
    put(&mut m, "g2_cross_err", gc.std_error);
    put(&mut m, "g2_ss", gs.value);
    put(&mut m, "g2_ss_err", gs.std_error);
    put(&mut m, "g2_asas", ga.value);
    put(&mut m, "g2_asas_err", ga.std_error);
    put(&mut m, "cs_ratio", cs.ratio);
    put(&mut m, "cs_ratio_err", cs.ratio_error);
    put(&mut m, "cs_excess", cs.excess);
    put(&mut m, "cs_excess_err", cs.excess_error);
    put(&mut m, "cs_significance", cs.significance);
    put(
        &mut m,
        "heralding_efficiency",
        heralding_efficiency(&cross, base.antistokes_arm.total()).map_err(err_string)?,
    );
    let a = analytic_g2(&base.emission, eta).map_err(err_string)?;
    put(&mut m, "analytic_g2_cross", a.cross);
    put(&mut m, "exact_g2_cross", exact_cross(&base));
    put(&mut m, "analytic_g2_ss", a.auto_stokes);
    put(&mut m, "analytic_g2_asas", a.auto_antistokes);
    Ok(PointOutput {
        metrics: m,
        files: vec![(
            "counts".into(),
            counts_csv(&[
                ("cross", &cross),
                ("hbt_stokes", &ss),
                ("hbt_antistokes", &asas),
            ]),
        )],
    })
}

/// The memory lifetime is the 1/e decay of the retrieval efficiency; the
/// g2-fit lifetime and its products are reported alongside when the
/// fitted curve crosses 1/e.
fn tbp_point(cfg: &ExperimentConfig, seed: u64) -> Result<PointOutput, String> {
    let (_, _, fit, lifetime) = lifetime_curve(cfg, derive_seed(seed, 0))?;
    let bw = recover_bandwidth(cfg, derive_seed(seed, 1), &DeconvolutionSettings::default())?
        .recovered_fwhm;
    let tau = cfg.pulses.duration_fwhm;
    let main = time_bandwidth_product(lifetime, tau, bw);
    let g2 = fit
        .lifetime_1e
        .map(|t| (t, time_bandwidth_product(t, tau, bw)));
    let mut m = Metrics::new();
    put(&mut m, "lifetime_ns", lifetime * 1e9);
    put(&mut m, "pulse_duration_ns", tau * 1e9);
    put(&mut m, "bandwidth_mhz", bw / 1e6);
    put(&mut m, "tbp_by_duration", main.tbp_by_duration);
    put(&mut m, "tbp_by_bandwidth", main.tbp_by_bandwidth);
    put(
        &mut m,
        "g2_lifetime_ns",
        g2.map_or(f64::NAN, |(t, _)| t * 1e9),
    );
    put(
        &mut m,
        "g2_tbp_by_duration",
        g2.map_or(f64::NAN, |(_, p)| p.tbp_by_duration),
    );
    put(
        &mut m,
        "g2_tbp_by_bandwidth",
        g2.map_or(f64::NAN, |(_, p)| p.tbp_by_bandwidth),
    );
    Ok(PointOutput {
        metrics: m,
        files: Vec::new(),
    })
}
