//! Scenario runner: applies a parameter sweep to a base config, runs one
//! scenario per sweep point, and writes CSV/SVG artifacts plus a JSON run
//! report.
//!
//! Every point gets its own seed derived from `(master seed, point index)`;
//! all Monte Carlo work inside a point uses fixed batch streams, so outputs
//! depend only on the `ScenarioSpec` and never on the worker count.

mod scenarios;
mod svg;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{validate_config, ConfigErrors, ExperimentConfig};
use crate::rng::derive_seed;

pub use scenarios::{recover_bandwidth, BandwidthRecovery, SPINWAVE_ATOMS};
pub use svg::{export_svg, render_svg, PlotError, PlotSpec};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config:\n{0}")]
    Config(#[from] ConfigErrors),
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Plot(#[from] PlotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    NoiseVsReadPower,
    G2VsPower,
    LambdaVsPower,
    BandwidthMeasurement,
    LifetimeVsTime,
    CsViolation,
    TbpReport,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        Self::NoiseVsReadPower,
        Self::G2VsPower,
        Self::LambdaVsPower,
        Self::BandwidthMeasurement,
        Self::LifetimeVsTime,
        Self::CsViolation,
        Self::TbpReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoiseVsReadPower => "noise_vs_read_power",
            Self::G2VsPower => "g2_vs_power",
            Self::LambdaVsPower => "lambda_vs_power",
            Self::BandwidthMeasurement => "bandwidth_measurement",
            Self::LifetimeVsTime => "lifetime_vs_time",
            Self::CsViolation => "cs_violation",
            Self::TbpReport => "tbp_report",
        }
    }

    /// Sweep used when the `ScenarioSpec` does not give one.
    pub fn default_sweep(self) -> Option<Sweep> {
        let s = |p: &str, v: &[f64]| {
            Some(Sweep {
                parameter: p.into(),
                values: v.to_vec(),
            })
        };
        match self {
            Self::NoiseVsReadPower => s(
                "pulses.energy_pj",
                &[0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            ),
            Self::G2VsPower | Self::LambdaVsPower => s(
                "pulses.energy_pj",
                &[20.0, 40.0, 60.0, 80.0, 100.0, 129.0, 160.0, 200.0],
            ),
            Self::BandwidthMeasurement => s("scan.photon_fwhm", &[504e6, 537e6]),
            Self::LifetimeVsTime => s("atoms.beam_waist", &[90e-6, 240e-6]),
            Self::CsViolation | Self::TbpReport => None,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

/// A dotted config path and the values it takes. A `_pj` suffix on the
/// last segment gives values in picojoules for a field stored in joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

impl FromStr for Sweep {
    type Err = String;

    /// `path=v1,v2,...`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (p, vals) = s.split_once('=').ok_or("expected PARAM=V1,V2,...")?;
        let values = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            parameter: p.trim().to_string(),
            values,
        })
    }
}

/// Sets one numeric field of `cfg` by dotted path. Fails when the path
/// does not name an existing numeric field, or the result is invalid.
pub fn set_config_value(
    cfg: &ExperimentConfig,
    path: &str,
    value: f64,
) -> Result<ExperimentConfig, HarnessError> {
    let (path, value) = match path.strip_suffix("_pj") {
        Some(base) => (base, value * 1e-12),
        None => (path, value),
    };
    let mut json = serde_json::to_value(cfg)?;
    let mut node = &mut json;
    for seg in path.split('.') {
        node = node
            .get_mut(seg)
            .ok_or_else(|| HarnessError::Sweep(format!("config has no field {path:?}")))?;
    }
    let as_json = match node {
        serde_json::Value::Number(n) if n.is_u64() => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(HarnessError::Sweep(format!(
                    "{path} takes non-negative integers, got {value}"
                )));
            }
            serde_json::Value::from(value as u64)
        }
        serde_json::Value::Number(_) => serde_json::Number::from_f64(value)
            .map(serde_json::Value::Number)
            .ok_or_else(|| HarnessError::Sweep(format!("{path}: value {value} is not finite")))?,
        _ => {
            return Err(HarnessError::Sweep(format!(
                "{path:?} is not a numeric field"
            )))
        }
    };
    *node = as_json;
    let out: ExperimentConfig =
        serde_json::from_value(json).map_err(|e| HarnessError::Sweep(format!("{path}: {e}")))?;
    Ok(validate_config(out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: ScenarioId,
    pub base_config: ExperimentConfig,
    /// `None` runs the scenario's default sweep (or a single point).
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
}

impl ScenarioSpec {
    pub fn new(
        scenario_id: ScenarioId,
        base_config: ExperimentConfig,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            scenario_id,
            base_config,
            sweep: None,
            output_dir: output_dir.into(),
        }
    }

    pub fn effective_sweep(&self) -> Option<Sweep> {
        self.sweep
            .clone()
            .or_else(|| self.scenario_id.default_sweep())
    }

    /// The config at each sweep point; fails before running anything when
    /// the sweep is malformed.
    pub fn point_configs(&self) -> Result<Vec<(Option<f64>, ExperimentConfig)>, HarnessError> {
        let base = validate_config(self.base_config.clone())?;
        match self.effective_sweep() {
            None => Ok(vec![(None, base)]),
            Some(sw) => {
                if sw.values.is_empty() {
                    return Err(HarnessError::Sweep(format!(
                        "{}: empty value list",
                        sw.parameter
                    )));
                }
                // reject unknown parameters up front
                set_config_value(&base, &sw.parameter, sw.values[0])?;
                sw.values
                    .iter()
                    .map(|&v| Ok((Some(v), set_config_value(&base, &sw.parameter, v)?)))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub index: usize,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    /// Artifact file names holding this point's data.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario_id: ScenarioId,
    pub seed: u64,
    pub sweep: Option<Sweep>,
    pub config: ExperimentConfig,
    pub points: Vec<PointResult>,
    pub failed_points: Vec<usize>,
    /// Every file written, relative to the output directory; the report
    /// itself is `report.json`.
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.failed_points.is_empty()
    }

    pub fn point(&self, index: usize) -> Option<&PointResult> {
        self.points.get(index)
    }
}

/// Output of one scenario point before it is written out.
#[derive(Debug, Default)]
pub(crate) struct PointOutput {
    pub metrics: BTreeMap<String, f64>,
    /// `(file-name suffix, CSV contents)`.
    pub files: Vec<(String, String)>,
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest round-trip formatting; non-finite values become empty cells.
pub(crate) fn cell(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Runs every sweep point, writes artifacts into `spec.output_dir`, and
/// returns the report (also written as `report.json`). A failing point is
/// recorded and the remaining points still run.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let points = spec.point_configs()?;
    let dir = &spec.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let name = spec.scenario_id.name();
    let master = spec.base_config.rng_seed;
    let sweep = spec.effective_sweep();

    let mut results = Vec::with_capacity(points.len());
    let mut artifacts = Vec::new();
    for (index, (value, cfg)) in points.iter().enumerate() {
        let seed = derive_seed(master, index as u64);
        let outcome = scenarios::run_point(spec.scenario_id, cfg, seed);
        let mut point = PointResult {
            index,
            sweep_value: *value,
            seed,
            ok: outcome.is_ok(),
            error: None,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        };
        match outcome {
            Ok(out) => {
                for (suffix, contents) in &out.files {
                    let file = format!("{name}_p{index:03}_{suffix}.csv");
                    write_file(dir, &file, contents.as_bytes())?;
                    point.artifacts.push(file.clone());
                    artifacts.push(file);
                }
                point.metrics = out.metrics;
            }
            Err(e) => point.error = Some(e),
        }
        results.push(point);
    }

    // summary table over successful points
    let columns = scenarios::summary_columns(spec.scenario_id);
    let mut csv = String::new();
    let label = sweep.as_ref().map(|s| s.parameter.replace('.', "_"));
    if let Some(l) = &label {
        csv.push_str(l);
        csv.push(',');
    }
    csv.push_str(&columns.join(","));
    csv.push('\n');
    for p in results.iter().filter(|p| p.ok) {
        let mut row: Vec<String> = Vec::new();
        if label.is_some() {
            row.push(cell(p.sweep_value.unwrap_or(f64::NAN)));
        }
        row.extend(
            columns
                .iter()
                .map(|c| cell(p.metrics.get(*c).copied().unwrap_or(f64::NAN))),
        );
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let summary = format!("{name}.csv");
    write_file(dir, &summary, csv.as_bytes())?;
    artifacts.push(summary.clone());

    if let Some(plot) = scenarios::summary_plot(spec.scenario_id, label.as_deref()) {
        let path = dir.join(&summary);
        let svg_name = format!("{name}.svg");
        match export_svg(
            &path,
            &PlotSpec {
                output: dir.join(&svg_name),
                ..plot
            },
        ) {
            Ok(()) => artifacts.push(svg_name),
            // nothing to draw when every point failed
            Err(PlotError::Empty) => {}
            Err(e) => return Err(e.into()),
        }
    }

    let failed_points: Vec<usize> = results.iter().filter(|p| !p.ok).map(|p| p.index).collect();
    artifacts.push("report.json".into());
    let report = RunReport {
        scenario_id: spec.scenario_id,
        seed: master,
        sweep,
        config: spec.base_config.clone(),
        points: results,
        failed_points,
        artifacts,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_file(
        dir,
        "report.json",
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}

/// Both readings of the time-bandwidth product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBandwidth {
    /// Lifetime divided by pulse duration.
    pub tbp_by_duration: f64,
    /// Lifetime times bandwidth.
    pub tbp_by_bandwidth: f64,
}

pub fn time_bandwidth_product(lifetime: f64, pulse_duration: f64, bandwidth: f64) -> TimeBandwidth {
    TimeBandwidth {
        tbp_by_duration: lifetime / pulse_duration,
        tbp_by_bandwidth: lifetime * bandwidth,
    }
}
