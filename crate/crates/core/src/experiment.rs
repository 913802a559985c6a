//! Experiment configuration and the (m, r) grid runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::freqdomain::{hinf_estimate, sweep, StringStabilityReport, SweepParams, Transfer, Verdict};
use crate::protocol::{internal_stability_check, ProtocolConfig, MAX_ORDER, REFERENCE_GAINS};
use crate::svg::{AxisScale, Chart, Series};
use crate::timedomain::{simulate, DisturbanceProfile, PropagationMetrics, SimParams, SimulationTrace};
use crate::topology::{build_r_predecessor, BoundaryConvention};

fn default_gains() -> BTreeMap<usize, f64> {
    REFERENCE_GAINS.iter().copied().enumerate().collect()
}

/// User gains are overlaid on the reference gains.
fn merge_gains<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<usize, f64>, D::Error> {
    let user = BTreeMap::<usize, f64>::deserialize(d)?;
    let mut gains = default_gains();
    gains.extend(user);
    Ok(gains)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub dt: f64,
    pub horizon: f64,
    pub record_every: usize,
    pub allow_unstable: bool,
    pub disturbance: DisturbanceProfile,
    /// Row stride of `sim.csv` and `spacing.svg` relative to the recorded trace.
    pub csv_every: usize,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        let p = SimParams::default();
        SimulationSettings {
            dt: p.dt,
            horizon: p.horizon,
            record_every: p.record_every,
            allow_unstable: p.allow_unstable,
            disturbance: DisturbanceProfile::UnitImpulse,
            csv_every: 100,
        }
    }
}

impl SimulationSettings {
    pub fn params(&self) -> SimParams {
        SimParams {
            dt: self.dt,
            horizon: self.horizon,
            record_every: self.record_every,
            allow_unstable: self.allow_unstable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub orders: Vec<usize>,
    pub richness: Vec<usize>,
    #[serde(deserialize_with = "merge_gains")]
    pub gains: BTreeMap<usize, f64>,
    pub coupling: f64,
    pub boundary: BoundaryConvention,
    pub sweep: SweepParams,
    pub simulation: SimulationSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 20,
            orders: vec![1, 2, 3],
            richness: vec![1, 2, 3],
            gains: default_gains(),
            coupling: 1.0,
            boundary: BoundaryConvention::LeaderPadded,
            sweep: SweepParams::default(),
            simulation: SimulationSettings::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_unique(path: &str, values: &[usize]) -> Result<()> {
    if values.is_empty() {
        return Err(config_error(path, "must not be empty"));
    }
    let mut seen = BTreeSet::new();
    for (k, v) in values.iter().enumerate() {
        if !seen.insert(v) {
            return Err(config_error(format!("{path}[{k}]"), format!("duplicate value {v}")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config_error("n", "must be at least 1"));
        }
        check_unique("orders", &self.orders)?;
        check_unique("richness", &self.richness)?;
        for (k, &m) in self.orders.iter().enumerate() {
            if m == 0 || m > MAX_ORDER {
                return Err(config_error(format!("orders[{k}]"), format!("order must be in 1..={MAX_ORDER}")));
            }
        }
        for (k, &r) in self.richness.iter().enumerate() {
            if r == 0 {
                return Err(config_error(format!("richness[{k}]"), "must be at least 1"));
            }
        }
        for (&k, &g) in &self.gains {
            if k >= MAX_ORDER {
                return Err(config_error(format!("gains.{k}"), "gain index beyond the maximum order"));
            }
            if !(g.is_finite() && g > 0.0) {
                return Err(config_error(format!("gains.{k}"), format!("gain {g} must be positive")));
            }
        }
        let max_order = self.orders.iter().copied().max().unwrap_or(0);
        for k in 0..max_order {
            if !self.gains.contains_key(&k) {
                return Err(config_error(format!("gains.{k}"), format!("missing gain for order {max_order}")));
            }
        }
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(config_error("coupling", "must be positive"));
        }
        self.sweep
            .validate()
            .map_err(|e| config_error("sweep", e.to_string()))?;
        self.simulation
            .params()
            .validate()
            .map_err(|e| config_error("simulation", e.to_string()))?;
        self.simulation
            .disturbance
            .validate()
            .map_err(|e| config_error("simulation.disturbance", e.to_string()))?;
        if self.simulation.csv_every == 0 {
            return Err(config_error("simulation.csv_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Protocol of order `m` using this config's gains and coupling.
    pub fn protocol(&self, m: usize) -> Result<ProtocolConfig> {
        let gains = (0..m)
            .map(|k| {
                self.gains
                    .get(&k)
                    .copied()
                    .ok_or_else(|| config_error(format!("gains.{k}"), "missing"))
            })
            .collect::<Result<Vec<_>>>()?;
        ProtocolConfig::new(gains, self.coupling)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses a JSON experiment config, filling defaults and rejecting unknown keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_error(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub m: usize,
    pub r: usize,
    pub dc_gain: f64,
    pub hinf: f64,
    pub omega_peak: f64,
    pub verdict: Verdict,
    pub internal_stable: bool,
    pub peaks: Vec<f64>,
    pub ratios: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCellResult {
    pub m: usize,
    pub r: usize,
    pub internal_stable: bool,
    pub report: StringStabilityReport,
    pub metrics: PropagationMetrics,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug)]
pub struct GridOutcome {
    pub cells: Vec<GridCellResult>,
    /// Cells that failed, with the reason.
    pub failures: Vec<(usize, usize, Error)>,
}

impl GridOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cell_dir(root: &Path, m: usize, r: usize) -> PathBuf {
    root.join(format!("m{m}_r{r}"))
}

/// Frequency sweep, H-infinity report and simulation for one cell, without I/O.
pub struct CellComputation {
    pub internal_stable: bool,
    pub report: StringStabilityReport,
    pub phi: crate::freqdomain::FrequencyResponse,
    pub trace: SimulationTrace,
}

pub fn compute_cell(cfg: &ExperimentConfig, m: usize, r: usize) -> Result<CellComputation> {
    let protocol = cfg.protocol(m)?;
    let topology = build_r_predecessor(cfg.n, r, cfg.boundary)?;
    let internal_stable = internal_stability_check(&topology, &protocol)?.overall;
    let report = hinf_estimate(&protocol, r, &cfg.sweep)?;
    let phi = sweep(&protocol, r, &cfg.sweep.grid()?, Transfer::Phi)?;
    let trace = simulate(&topology, &protocol, &cfg.simulation.disturbance, &cfg.simulation.params())?;
    Ok(CellComputation {
        internal_stable,
        report,
        phi,
        trace,
    })
}

fn emit_cell(cfg: &ExperimentConfig, root: &Path, m: usize, r: usize) -> Result<GridCellResult> {
    let cell = compute_cell(cfg, m, r)?;
    let dir = cell_dir(root, m, r);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let freq_csv = dir.join("freq.csv");
    write_file(&freq_csv, &cell.phi.to_csv())?;
    let sim_csv = dir.join("sim.csv");
    write_file(&sim_csv, &cell.trace.to_csv(cfg.simulation.csv_every))?;

    let metrics = cell.trace.metrics.clone();
    let report_json = dir.join("report.json");
    let body = CellReport {
        m,
        r,
        dc_gain: cell.report.dc_gain,
        hinf: cell.report.hinf,
        omega_peak: cell.report.omega_peak,
        verdict: cell.report.verdict,
        internal_stable: cell.internal_stable,
        peaks: metrics.peaks.clone(),
        ratios: metrics.ratios.clone(),
    };
    write_file(&report_json, &(serde_json::to_string_pretty(&body).expect("report serializes") + "\n"))?;

    let freq_svg = dir.join("freq.svg");
    magnitude_chart(format!("|Phi_{m}(jw)|, r = {r}"), vec![phi_series(&cell.phi, r)]).write(&freq_svg)?;
    let spacing_svg = dir.join("spacing.svg");
    spacing_chart(format!("spacing errors, m = {m}, r = {r}"), &cell.trace, cfg.simulation.csv_every)
        .write(&spacing_svg)?;

    Ok(GridCellResult {
        m,
        r,
        internal_stable: cell.internal_stable,
        report: cell.report,
        metrics,
        paths: vec![freq_csv, sim_csv, report_json, freq_svg, spacing_svg],
    })
}

fn phi_series(phi: &crate::freqdomain::FrequencyResponse, r: usize) -> Series {
    Series::new(format!("r = {r}"), phi.grid.omegas().to_vec(), phi.magnitudes.clone())
}

pub fn magnitude_chart(title: String, series: Vec<Series>) -> Chart {
    Chart {
        title,
        x_label: "omega [rad/s]".into(),
        y_label: "|Phi(j omega)|".into(),
        x_scale: AxisScale::Log,
        series,
    }
}

/// One polyline per follower; `every` thins the samples.
pub fn spacing_chart(title: String, trace: &SimulationTrace, every: usize) -> Chart {
    let idx: Vec<usize> = (0..trace.times.len()).step_by(every.max(1)).collect();
    let xs: Vec<f64> = idx.iter().map(|&j| trace.times[j]).collect();
    let series = (0..trace.followers())
        .map(|i| {
            Series::new(
                format!("e{}", i + 1),
                xs.clone(),
                idx.iter().map(|&j| trace.spacing[(j, i)]).collect(),
            )
        })
        .collect();
    Chart {
        title,
        x_label: "t [s]".into(),
        y_label: "e_i(t)".into(),
        x_scale: AxisScale::Linear,
        series,
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    cells: Vec<CellReport>,
    failures: Vec<SummaryFailure>,
}

#[derive(Serialize)]
struct SummaryFailure {
    m: usize,
    r: usize,
    error: String,
}

/// Runs every (m, r) cell and writes per-cell artifacts under `root`.
///
/// Cells run in parallel into distinct directories; the summary and the
/// per-order magnitude overlays are written afterwards. Amplifying cells are
/// results, not failures.
pub fn run_grid(cfg: &ExperimentConfig, root: &Path) -> Result<GridOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let cells: Vec<(usize, usize)> = cfg
        .orders
        .iter()
        .flat_map(|&m| cfg.richness.iter().map(move |&r| (m, r)))
        .collect();
    let results: Vec<((usize, usize), Result<GridCellResult>)> = cells
        .par_iter()
        .map(|&(m, r)| ((m, r), emit_cell(cfg, root, m, r)))
        .collect();

    let mut outcome = GridOutcome {
        cells: Vec::new(),
        failures: Vec::new(),
    };
    for ((m, r), result) in results {
        match result {
            Ok(cell) => outcome.cells.push(cell),
            Err(err @ Error::Io { .. }) => return Err(err),
            Err(err) => outcome.failures.push((m, r, err)),
        }
    }

    for &m in &cfg.orders {
        let protocol = match cfg.protocol(m) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let grid = cfg.sweep.grid()?;
        let series = cfg
            .richness
            .iter()
            .filter_map(|&r| sweep(&protocol, r, &grid, Transfer::Phi).ok().map(|phi| phi_series(&phi, r)))
            .collect::<Vec<_>>();
        if !series.is_empty() {
            magnitude_chart(format!("|Phi_{m}(jw)|"), series).write(&root.join(format!("phi_m{m}.svg")))?;
        }
    }

    let summary = Summary {
        config: cfg,
        cells: outcome
            .cells
            .iter()
            .map(|c| CellReport {
                m: c.m,
                r: c.r,
                dc_gain: c.report.dc_gain,
                hinf: c.report.hinf,
                omega_peak: c.report.omega_peak,
                verdict: c.report.verdict,
                internal_stable: c.internal_stable,
                peaks: c.metrics.peaks.clone(),
                ratios: c.metrics.ratios.clone(),
            })
            .collect(),
        failures: outcome
            .failures
            .iter()
            .map(|(m, r, e)| SummaryFailure {
                m: *m,
                r: *r,
                error: e.to_string(),
            })
            .collect(),
    };
    write_file(
        &root.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"),
    )?;
    Ok(outcome)
}
