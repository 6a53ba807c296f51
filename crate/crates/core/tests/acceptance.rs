//! Acceptance criteria, one line per criterion. Oracles are computed here
//! from first principles rather than through the library.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use dlcz_core::detection::{
    cauchy_schwarz_test, g2_cross_estimate, g2_cross_moments, simulate_counts,
    simulate_photon_moments, DetectionSetup, G2Estimate,
};
use dlcz_core::harness::{recover_bandwidth, run_scenario, ScenarioId, ScenarioSpec, Sweep};
use dlcz_core::model::{CoincidenceScheme, ExperimentConfig, CAESIUM_D2_WAVELENGTH};
use dlcz_core::optics::{cascade_transmission, extinction_ratio, CavityFitParams, DEFAULT_STAGES};
use dlcz_core::rng::stream_rng;
use dlcz_core::source::EmissionModel;
use dlcz_core::spectral::{
    fit_cavity_profile, fit_gaussian_scan, fit_lifetime_curve, DeconvolutionSettings,
    GaussianScanFit, SampledSpectrum, Weighting,
};
use dlcz_core::spinwave::{
    mc_lifetime_1e, spin_wave_mismatch, LifetimeFitParams, RetrievalCurve, WaveVectors,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// `⟨n²⟩ / ⟨n⟩²` for a thermal pair source, summed until the tail mass
/// drops below 1e-12.
fn thermal_moment_oracle(lambda: f64) -> f64 {
    let q = lambda / (1.0 + lambda);
    let (mut m1, mut m2, mut mass, mut p) = (0.0, 0.0, 0.0, 1.0 / (1.0 + lambda));
    let mut n = 0.0;
    while 1.0 - mass > 1e-12 {
        m1 += n * p;
        m2 += n * n * p;
        mass += p;
        p *= q;
        n += 1.0;
    }
    m2 / (m1 * m1)
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for lambda in [0.01, 0.1, 0.5] {
        let start = Instant::now();
        let m = simulate_photon_moments(&EmissionModel::ideal(lambda), 1.0, 1_000_000, 17).unwrap();
        let g = g2_cross_moments(&m).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let oracle = thermal_moment_oracle(lambda);
        assert!((oracle - (2.0 + 1.0 / lambda)).abs() < 1e-6 * oracle);
        let z = (g.value - oracle) / g.std_error;
        pass &= z.abs() < 5.0 && secs < 60.0;
        parts.push(format!(
            "λ={lambda}: {:.4}±{:.4} vs {oracle:.4} (z={z:+.2}, {secs:.2}s)",
            g.value, g.std_error
        ));

        // threshold detectors against their own exact click oracle
        let setup =
            DetectionSetup::ideal(EmissionModel::ideal(lambda), 1.0, CoincidenceScheme::Cross);
        let c = g2_cross_estimate(&simulate_counts(&setup, 1_000_000, 18).unwrap()).unwrap();
        let click_oracle = 1.0 + 1.0 / lambda;
        let zc = (c.value - click_oracle) / c.std_error;
        pass &= zc.abs() < 5.0;
        parts.push(format!(
            "threshold {:.4} vs 1+1/λ {click_oracle:.4} (z={zc:+.2})",
            c.value
        ));
    }
    outcome(pass, parts.join("; "))
}

fn read_metrics(
    dir: &Path,
    id: ScenarioId,
    cfg: ExperimentConfig,
    sweep: Option<Sweep>,
) -> BTreeMap<String, f64> {
    let spec = ScenarioSpec {
        sweep,
        ..ScenarioSpec::new(id, cfg, dir)
    };
    let report = run_scenario(&spec).unwrap();
    assert!(report.all_ok(), "{:?}", report.points[0].error);
    report.points[0].metrics.clone()
}

fn criterion_2(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        trials: 100_000_000,
        ..Default::default()
    };
    let m = read_metrics(&dir.join("c2"), ScenarioId::CsViolation, cfg, None);
    let (gc, gs, ga, h) = (
        m["g2_cross"],
        m["g2_ss"],
        m["g2_asas"],
        m["heralding_efficiency"],
    );
    let pass = (gc - 7.83).abs() <= 0.54
        && (1.6..=2.2).contains(&gs)
        && (1.6..=2.2).contains(&ga)
        && (h - 0.10).abs() < 0.02;
    outcome(
        pass,
        format!(
            "g2_cross {gc:.3}±{:.3} (target 7.83±0.54), g2_SS {gs:.3}±{:.3}, g2_ASAS {ga:.3}±{:.3}, heralding {h:.4}",
            m["g2_cross_err"], m["g2_ss_err"], m["g2_asas_err"]
        ),
    )
}

fn criterion_3() -> Outcome {
    let e = |value, std_error| G2Estimate { value, std_error };
    let quoted = cauchy_schwarz_test(&e(7.83, 0.18), &e(1.97, 0.05), &e(1.87, 0.05));
    let ratio_oracle = 7.83f64.powi(2) / (1.97 * 1.87);
    let mut pass = (quoted.ratio - 16.6).abs() <= 0.1
        && (quoted.ratio - ratio_oracle).abs() < 1e-9
        && quoted.excess > 0.0;

    let emission = EmissionModel {
        lambda: 0.05,
        noise_mean_stokes: 0.005,
        noise_mean_antistokes: 0.01,
    };
    let sig = |trials: u64, seed: u64| {
        let base = DetectionSetup::ideal(emission, 0.3, CoincidenceScheme::Cross);
        let cross = g2_cross_estimate(&simulate_counts(&base, trials, seed).unwrap()).unwrap();
        let auto = |species| {
            let s = base.with_scheme(CoincidenceScheme::AutoHbt, species);
            dlcz_core::detection::g2_auto_estimate(&simulate_counts(&s, trials, seed + 1).unwrap())
                .unwrap()
        };
        let ss = auto(dlcz_core::model::Species::Stokes);
        let aa = auto(dlcz_core::model::Species::AntiStokes);
        cauchy_schwarz_test(&cross, &ss, &aa).significance
    };
    let (s1, s4) = (sig(1_000_000, 40), sig(4_000_000, 50));
    let growth = s4 / s1;
    pass &= (growth - 2.0).abs() <= 0.2;
    outcome(
        pass,
        format!(
            "quoted values: ratio {:.3} (oracle {ratio_oracle:.3}), excess {:.2}; significance {s1:.1} -> {s4:.1} at 4x trials (x{growth:.3})",
            quoted.ratio, quoted.excess
        ),
    )
}

fn criterion_4(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        trials: 4_000_000,
        ..Default::default()
    };
    let sweep = Some(Sweep {
        parameter: "pulses.energy_pj".into(),
        values: vec![30.0],
    });
    let m = read_metrics(
        &dir.join("c4"),
        ScenarioId::NoiseVsReadPower,
        cfg.clone(),
        sweep,
    );
    let p = m["click_probability"];
    let err = m["click_probability_err"];
    // noise photons at the source times the anti-Stokes chain efficiency
    let eta = cfg.detection.transmission_chain * cfg.detection.detector_efficiency;
    let dark = cfg.detection.dark_count_probability;
    let oracle = 1.0 - (1.0 - dark) * (-7.79e-5 * eta).exp();
    let pass = p <= 1e-4
        && (m["noise_mean"] - 7.79e-5).abs() < 1e-12
        && (p - oracle).abs() < 3.0 * err.max(1e-12);
    outcome(
        pass,
        format!(
            "30 pJ: {p:.3e}±{err:.1e} clicks/trial, oracle {oracle:.3e}, noise mean {:.3e}",
            m["noise_mean"]
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for fwhm in [504e6, 537e6] {
        for noise in [0.0, 0.01] {
            let mut cfg = ExperimentConfig::default();
            cfg.scan.photon_fwhm = fwhm;
            cfg.scan.noise_fraction = noise;
            let seeds: &[u64] = if noise == 0.0 { &[1] } else { &[1, 2, 3, 4, 5] };
            let limit = if noise == 0.0 { 0.005 } else { 0.05 };
            let worse = |w: f64, e: f64| if e.abs() > w.abs() { e } else { w };
            let (mut worst, mut worst_crossing) = (0.0f64, 0.0f64);
            for &s in seeds {
                let r = recover_bandwidth(&cfg, s, &DeconvolutionSettings::default()).unwrap();
                worst = worse(worst, r.recovered_fwhm / fwhm - 1.0);
                worst_crossing = worse(worst_crossing, r.crossing_fwhm / fwhm - 1.0);
            }
            pass &= worst.abs() < limit;
            parts.push(format!(
                "{:.0} MHz noise {noise}: worst {:+.3}% (crossing width {:+.3}%)",
                fwhm / 1e6,
                100.0 * worst,
                100.0 * worst_crossing
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

/// Airy transmission of one lossless cavity with unit peak, with the
/// contrast fixed by T(±fwhm/2) = 1/2.
fn airy(f: f64, fwhm: f64, fsr: f64) -> f64 {
    use std::f64::consts::PI;
    let k = 1.0 / (PI * fwhm / (2.0 * fsr)).sin().powi(2);
    1.0 / (1.0 + k * (PI * f / fsr).sin().powi(2))
}

fn criterion_6() -> Outcome {
    let p = CavityFitParams::triple_cascade();
    let offset = 9.2e9;
    let per: Vec<f64> = (0..3)
        .map(|i| extinction_ratio(&p.stage(i), offset))
        .collect();
    let oracle: Vec<f64> = DEFAULT_STAGES
        .iter()
        .map(|s| 1.0 / airy(offset, s.fwhm, s.fsr))
        .collect();
    let total = extinction_ratio(&p, offset);
    let mut pass = per.iter().all(|&e| e >= 500.0) && total >= 1e7 && p.t0 >= 0.7;
    for (i, (e, o)) in per.iter().zip(&oracle).enumerate() {
        pass &= (e / o - 1.0).abs() < 1e-9;
        let half = cascade_transmission(DEFAULT_STAGES[i].fwhm / 2.0, &p.stage(i));
        pass &= (half - 0.5).abs() < 1e-9;
    }
    // the cascade as recovered by the calibration fit
    let r = recover_bandwidth(
        &ExperimentConfig::default(),
        7,
        &DeconvolutionSettings::default(),
    )
    .unwrap();
    let fitted = extinction_ratio(&r.cavity_fit, offset);
    pass &= fitted >= 1e7 && r.cavity_fit.t0 >= 0.7;
    outcome(
        pass,
        format!(
            "per-cavity {:.0}/{:.0}/{:.0}, cascade {total:.3e}, T0 {:.3}; fitted cascade {fitted:.3e}, T0 {:.3}",
            per[0], per[1], per[2], p.t0, r.cavity_fit.t0
        ),
    )
}

fn criterion_7() -> Outcome {
    let target = 800e-9;
    let truth = LifetimeFitParams {
        c: 6.8,
        a: (std::f64::consts::E - 1.0) / (target * target),
        b: 0.0,
    };
    let mut worst = 0.0f64;
    let mut pass = true;
    for seed in 0..20u64 {
        let mut rng = stream_rng(1000 + seed, 0);
        let times: Vec<f64> = (0..12).map(|i| i as f64 * 3e-6 / 11.0).collect();
        let clean: Vec<f64> = times
            .iter()
            .map(|&t| 1.0 + truth.c / (1.0 + truth.a * t * t + truth.b * t))
            .collect();
        let g2: Vec<f64> = clean
            .iter()
            .map(|y| {
                let z: f64 = StandardNormal.sample(&mut rng);
                y * (1.0 + 0.02 * z)
            })
            .collect();
        let curve = RetrievalCurve {
            efficiency: vec![0.0; 12],
            efficiency_err: vec![0.0; 12],
            g2_err: clean.iter().map(|y| 0.02 * y).collect(),
            times,
            g2_cross: g2,
        };
        match fit_lifetime_curve(&curve).ok().and_then(|f| f.lifetime_1e) {
            Some(t) => {
                let e = t / target - 1.0;
                if e.abs() > worst.abs() {
                    worst = e;
                }
            }
            None => pass = false,
        }
    }
    pass &= worst.abs() < 0.10;

    let mut cfg = ExperimentConfig::default();
    let dk = spin_wave_mismatch(&WaveVectors::collinear(
        CAESIUM_D2_WAVELENGTH,
        cfg.atoms.hyperfine_splitting,
    ));
    let narrow = mc_lifetime_1e(&cfg.atoms, dk, 5, 200_000).unwrap();
    cfg.atoms.beam_waist = 240e-6;
    let wide = mc_lifetime_1e(&cfg.atoms, dk, 5, 200_000).unwrap();
    pass &= wide > narrow;
    outcome(
        pass,
        format!(
            "fit over 20 seeds: worst lifetime error {:+.2}%; MC lifetime {:.0} ns at 90 µm -> {:.0} ns at 240 µm",
            100.0 * worst,
            narrow * 1e9,
            wide * 1e9
        ),
    )
}

fn artifact_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name.ends_with(".csv") || name.ends_with(".svg") {
            out.insert(name, std::fs::read(&path).unwrap());
        }
    }
    out
}

fn criterion_8(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        trials: 200_000,
        rng_seed: 77,
        ..Default::default()
    };
    let mut pass = true;
    let mut files = 0;
    for id in ScenarioId::ALL {
        let runs: Vec<BTreeMap<String, Vec<u8>>> = [1, 2, 8]
            .into_iter()
            .map(|threads| {
                let out = dir.join(format!("c8_{id}_{threads}"));
                let spec = ScenarioSpec::new(id, cfg.clone(), &out);
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .unwrap();
                pool.install(|| run_scenario(&spec)).unwrap();
                artifact_bytes(&out)
            })
            .collect();
        pass &= !runs[0].is_empty() && runs[0] == runs[1] && runs[0] == runs[2];
        files += runs[0].len();
    }
    outcome(
        pass,
        format!(
            "{} scenarios, {files} artifacts compared across 1/2/8 workers",
            ScenarioId::ALL.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let truth = CavityFitParams::triple_cascade();
    let truth_arr = truth.to_array();
    let (start, n) = SampledSpectrum::symmetric_grid(30e9, 20e6);
    let noise = 0.05;
    let mut cavity_ok = 0;
    for trial in 0..100u64 {
        let mut rng = stream_rng(5000 + trial, 0);
        let values = (0..n)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (cascade_transmission(start + i as f64 * 20e6, &truth) * (1.0 + noise * z)).max(0.0)
            })
            .collect();
        let data = SampledSpectrum::new(start, 20e6, values).unwrap();
        let mut init = truth_arr;
        for v in init.iter_mut().take(7) {
            *v *= 1.0 + 0.2 * (2.0 * rng.random::<f64>() - 1.0);
        }
        // the centre is zero; perturb by a fraction of the linewidth
        init[7] = 0.2 * 380e6 * (2.0 * rng.random::<f64>() - 1.0);
        if let Ok((fit, out)) = fit_cavity_profile(
            &data,
            &CavityFitParams::from_array(&init),
            &Weighting::Relative(noise),
        ) {
            let got = fit.to_array();
            if (0..8).all(|k| ((got[k] - truth_arr[k]) / out.std_errors[k]).abs() < 3.0) {
                cavity_ok += 1;
            }
        }
    }

    let g_truth = [1.0, 0.0, 567e6 / (2.0 * 2f64.ln()).sqrt(), 0.02];
    let (gs, gn) = SampledSpectrum::symmetric_grid(3e9, 20e6);
    let mut gauss_ok = 0;
    for trial in 0..100u64 {
        let mut rng = stream_rng(9000 + trial, 0);
        let values = (0..gn)
            .map(|i| {
                let f = gs + i as f64 * 20e6;
                let clean = g_truth[0]
                    * (-2.0 * (f - g_truth[1]).powi(2) / g_truth[2].powi(2)).exp()
                    + g_truth[3];
                let z: f64 = StandardNormal.sample(&mut rng);
                clean * (1.0 + 0.01 * z)
            })
            .collect();
        let data = SampledSpectrum::new(gs, 20e6, values).unwrap();
        let mut p = g_truth;
        for k in [0, 2, 3] {
            p[k] *= 1.0 + 0.2 * (2.0 * rng.random::<f64>() - 1.0);
        }
        p[1] = 0.2 * 567e6 * (2.0 * rng.random::<f64>() - 1.0);
        let init = GaussianScanFit {
            a: p[0],
            b: p[1],
            d: p[2],
            u0: p[3],
        };
        if let Ok((fit, out)) = fit_gaussian_scan(&data, Some(init), &Weighting::Relative(0.01)) {
            let got = [fit.a, fit.b, fit.d, fit.u0];
            if (0..4).all(|k| ((got[k] - g_truth[k]) / out.std_errors[k]).abs() < 3.0) {
                gauss_ok += 1;
            }
        }
    }
    outcome(
        cavity_ok >= 95 && gauss_ok >= 95,
        format!(
            "8-parameter cascade {cavity_ok}/100, 4-parameter Gaussian {gauss_ok}/100 within 3σ"
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let criteria: [(&str, Check); 9] = [
        ("oracle equivalence", Box::new(criterion_1)),
        ("operating point", Box::new(|| criterion_2(dir))),
        ("Cauchy-Schwarz", Box::new(criterion_3)),
        ("unconditional noise", Box::new(|| criterion_4(dir))),
        ("deconvolution round trip", Box::new(criterion_5)),
        ("cavity model", Box::new(criterion_6)),
        ("lifetime fit", Box::new(criterion_7)),
        ("determinism", Box::new(|| criterion_8(dir))),
        ("fit engine", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{name}]: {verdict} ({:.1}s) {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} of 9 passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
