//! Config-driven front end. A scenario config is one strict JSON object:
//!
//! ```json
//! {"scenario": "cavity-single", "parameters": {...}, "output_prefix": "out/run", "seed": 7}
//! ```
//!
//! A run writes `<prefix>.timeseries.csv` and `<prefix>.summary.json`.
//! Exit codes: 0 success, 2 invalid config (nothing written), 3 numerical
//! failure (summary still written), 1 output I/O failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::bubble::{classify_bubbles, frequency_band, sample_diameters, BubbleEnsemble, BubbleLabel, BubbleSpec};
use crate::exchanger::{estimate_cooling, run_exchanger, sweep, ExchangerConfig, HeatCapacity, SweepRow};
use crate::fock::{observation_times, EvolveOptions, DEFAULT_PHONON_CUTOFF, DEFAULT_PHOTON_CUTOFF};
use crate::rate::oracle::{cavity_moments, single_ion_moments};
use crate::rate::{
    cavity_trajectory, cooling_rate_cavity, cooling_rate_collective, cooling_rate_single, fitted_decay_rate,
    single_ion_trajectory, validate_cooling_conditions, CavityParams, ConditionReport, RateStateAtom,
    RateStateCavity, SingleIonParams, DEFAULT_TOLERANCE_BAND,
};
use crate::thermo::{thermal_state, thermalise_gas, ThermalParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default number of observation intervals when `dt` is omitted.
const DEFAULT_OBSERVATIONS: f64 = 200.0;
const PAPER_GAMMA_COOL: f64 = 3.81e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Validation(_) => EXIT_INVALID,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Write { .. } => EXIT_IO,
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

fn numerical(msg: impl std::fmt::Display) -> CliError {
    CliError::Numerical(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SingleIon,
    CavitySingle,
    CavityCollective,
    Thermal,
    BubbleSpectrum,
    Exchanger,
    Sweep,
    Validate,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::SingleIon,
        Scenario::CavitySingle,
        Scenario::CavityCollective,
        Scenario::Thermal,
        Scenario::BubbleSpectrum,
        Scenario::Exchanger,
        Scenario::Sweep,
        Scenario::Validate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SingleIon => "single-ion",
            Scenario::CavitySingle => "cavity-single",
            Scenario::CavityCollective => "cavity-collective",
            Scenario::Thermal => "thermal",
            Scenario::BubbleSpectrum => "bubble-spectrum",
            Scenario::Exchanger => "exchanger",
            Scenario::Sweep => "sweep",
            Scenario::Validate => "validate",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|s| s.name() == name).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|s| s.name()).collect();
            invalid(format!("unknown scenario `{name}`; expected one of {}", known.join(", ")))
        })
    }
}

fn default_band() -> f64 {
    DEFAULT_TOLERANCE_BAND
}
fn default_true() -> bool {
    true
}
fn default_phonon_cutoff() -> usize {
    DEFAULT_PHONON_CUTOFF
}
fn default_photon_cutoff() -> usize {
    DEFAULT_PHOTON_CUTOFF
}
fn default_two() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_one_u64() -> u64 {
    1
}
fn default_one_u32() -> u32 {
    1
}
fn default_unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleIonConfig {
    pub g: f64,
    pub gamma: f64,
    pub nu: f64,
    pub delta: f64,
    #[serde(default = "default_two")]
    pub initial_phonons: usize,
    #[serde(default)]
    pub initial_excited: bool,
    pub t_final: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_phonon_cutoff")]
    pub phonon_cutoff: usize,
    #[serde(default = "default_true")]
    pub oracle: bool,
    #[serde(default = "default_band")]
    pub tolerance_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    #[serde(default)]
    pub g_eff: Option<f64>,
    #[serde(default)]
    pub n_atoms: Option<usize>,
    #[serde(default)]
    pub couplings: Option<Vec<f64>>,
    pub kappa: f64,
    pub nu: f64,
    pub delta_cav: f64,
    #[serde(default)]
    pub omega_cav: Option<f64>,
    #[serde(default = "default_one")]
    pub initial_phonons: usize,
    #[serde(default)]
    pub initial_photons: usize,
    pub t_final: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_phonon_cutoff")]
    pub phonon_cutoff: usize,
    #[serde(default = "default_photon_cutoff")]
    pub photon_cutoff: usize,
    #[serde(default = "default_true")]
    pub oracle: bool,
    #[serde(default = "default_band")]
    pub tolerance_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    pub temperatures: Vec<f64>,
    pub nu: f64,
    #[serde(default)]
    pub nu_eff: Option<f64>,
    #[serde(default = "default_one_u64")]
    pub n_atoms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleConfig {
    #[serde(default)]
    pub diameters: Option<Vec<f64>>,
    #[serde(default)]
    pub diameter_mean: Option<f64>,
    #[serde(default)]
    pub diameter_spread: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    pub kappa: f64,
    pub nu_max: f64,
    pub laser_frequency: f64,
    #[serde(default = "default_one_u32")]
    pub mode_index: u32,
    #[serde(default = "default_unit")]
    pub refractive_index: f64,
    #[serde(default = "default_band")]
    pub band_tolerance: f64,
}

/// Exchanger fields plus the run length and the ΔT of the closed-form
/// estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangerScenario {
    pub config: ExchangerConfig,
    pub duration: f64,
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepScenario {
    pub base: Map<String, Value>,
    pub grid: Vec<Map<String, Value>>,
    pub delta_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioParams {
    SingleIon(SingleIonConfig),
    Cavity(CavityConfig),
    Thermal(ThermalConfig),
    Bubble(BubbleConfig),
    Exchanger(ExchangerScenario),
    Sweep(SweepScenario),
    Validate(Box<ScenarioConfig>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub params: ScenarioParams,
    pub output_prefix: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    #[serde(default)]
    parameters: Option<Value>,
    #[serde(default)]
    output_prefix: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    /// Free-form documentation, ignored.
    #[serde(default, rename = "notes")]
    _notes: Option<Value>,
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| invalid(format!("parameters: {e}")))
}

fn object(v: Option<Value>, what: &str) -> Result<Map<String, Value>, CliError> {
    match v {
        None | Some(Value::Null) => Ok(Map::new()),
        Some(Value::Object(m)) => Ok(m),
        Some(other) => Err(invalid(format!("{what} must be a JSON object, got {other}"))),
    }
}

fn take_f64(map: &mut Map<String, Value>, key: &str, default: f64) -> Result<f64, CliError> {
    match map.remove(key) {
        None => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| invalid(format!("parameters: `{key}` must be a number, got {v}"))),
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => invalid(e),
        _ => CliError::Parse { line: e.line(), column: e.column(), message: e.to_string() },
    })?;
    let scenario = Scenario::parse(&raw.scenario)?;
    let params = parse_params(scenario, raw.parameters)?;
    let cfg = ScenarioConfig {
        scenario,
        params,
        output_prefix: raw.output_prefix.map(PathBuf::from),
        seed: raw.seed.unwrap_or(0),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_params(scenario: Scenario, parameters: Option<Value>) -> Result<ScenarioParams, CliError> {
    let params = Value::Object(object(parameters, "parameters")?);
    Ok(match scenario {
        Scenario::SingleIon => {
            let mut c: SingleIonConfig = from_value(params)?;
            c.dt.get_or_insert(c.t_final / DEFAULT_OBSERVATIONS);
            ScenarioParams::SingleIon(c)
        }
        Scenario::CavitySingle | Scenario::CavityCollective => {
            let mut c: CavityConfig = from_value(params)?;
            c.dt.get_or_insert(c.t_final / DEFAULT_OBSERVATIONS);
            if scenario == Scenario::CavityCollective && c.couplings.is_none() && c.n_atoms.is_none() {
                c.n_atoms = Some(1);
            }
            ScenarioParams::Cavity(c)
        }
        Scenario::Thermal => ScenarioParams::Thermal(from_value(params)?),
        Scenario::BubbleSpectrum => ScenarioParams::Bubble(from_value(params)?),
        Scenario::Exchanger => {
            let Value::Object(mut map) = params else { unreachable!() };
            let delta_t = take_f64(&mut map, "delta_T", 1.0)?;
            let duration = map.remove("duration");
            let config: ExchangerConfig = from_value(Value::Object(map))?;
            let duration = match duration {
                None => 1e4 * config.stage_period,
                Some(v) => v.as_f64().ok_or_else(|| invalid(format!("parameters: `duration` must be a number, got {v}")))?,
            };
            ScenarioParams::Exchanger(ExchangerScenario { config, duration, delta_t })
        }
        Scenario::Sweep => {
            let Value::Object(mut map) = params else { unreachable!() };
            let delta_t = take_f64(&mut map, "delta_T", 1.0)?;
            let base = object(map.remove("base"), "parameters.base")?;
            let grid = match map.remove("grid") {
                Some(Value::Array(items)) => {
                    items.into_iter().map(|v| object(Some(v), "each parameters.grid entry")).collect::<Result<Vec<_>, _>>()?
                }
                Some(other) => return Err(invalid(format!("parameters: `grid` must be an array, got {other}"))),
                None => return Err(invalid("parameters: missing field `grid`")),
            };
            if let Some(key) = map.keys().next() {
                return Err(invalid(format!("parameters: unknown field `{key}`, expected one of `base`, `grid`, `delta_T`")));
            }
            ScenarioParams::Sweep(SweepScenario { base, grid, delta_t })
        }
        Scenario::Validate => {
            let Value::Object(mut map) = params else { unreachable!() };
            let target = match map.remove("target") {
                Some(Value::String(s)) => Scenario::parse(&s)?,
                Some(other) => return Err(invalid(format!("parameters: `target` must be a scenario name, got {other}"))),
                None => return Err(invalid("parameters: missing field `target`")),
            };
            if target == Scenario::Validate {
                return Err(invalid("parameters: `target` cannot be `validate`"));
            }
            let inner = map.remove("parameters");
            if let Some(key) = map.keys().next() {
                return Err(invalid(format!("parameters: unknown field `{key}`, expected one of `target`, `parameters`")));
            }
            let params = parse_params(target, inner)?;
            ScenarioParams::Validate(Box::new(ScenarioConfig { scenario: target, params, output_prefix: None, seed: 0 }))
        }
    })
}

/// Reads, parses and validates a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

fn check(cond: bool, key: &str, constraint: &str, value: impl std::fmt::Display) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(invalid(format!("parameters: `{key}` {constraint}, got {value}")))
    }
}

fn check_schedule(t_final: f64, dt: Option<f64>) -> Result<(), CliError> {
    check(t_final.is_finite() && t_final > 0.0, "t_final", "must be positive", t_final)?;
    let dt = dt.unwrap_or(t_final);
    check(dt.is_finite() && dt > 0.0 && dt <= t_final, "dt", "must lie in (0, t_final]", dt)
}

fn single_ion_params(c: &SingleIonConfig) -> Result<SingleIonParams, CliError> {
    SingleIonParams::new(c.g, c.gamma, c.nu, c.delta).map_err(invalid)
}

fn cavity_params(scenario: Scenario, c: &CavityConfig) -> Result<CavityParams, CliError> {
    let p = match (scenario, &c.couplings, c.g_eff) {
        (Scenario::CavitySingle, Some(_), _) => return Err(invalid("parameters: `couplings` is only valid for cavity-collective")),
        (Scenario::CavitySingle, None, _) if c.n_atoms.is_some_and(|n| n != 1) => {
            return Err(invalid("parameters: `n_atoms` must be 1 for cavity-single (use cavity-collective)"))
        }
        (_, Some(_), Some(_)) => return Err(invalid("parameters: give either `g_eff` or `couplings`, not both")),
        (_, Some(list), None) => CavityParams::with_couplings(list.clone(), c.kappa, c.nu, c.delta_cav),
        (_, None, Some(g)) => CavityParams::uniform(g, c.kappa, c.nu, c.delta_cav, c.n_atoms.unwrap_or(1)),
        (_, None, None) => return Err(invalid("parameters: missing field `g_eff`")),
    }
    .map_err(invalid)?;
    match c.omega_cav {
        Some(w) => p.with_cavity_frequency(w).map_err(invalid),
        None => Ok(p),
    }
}

fn bubble_ensemble(c: &BubbleConfig, seed: u64) -> Result<BubbleEnsemble, CliError> {
    let diameters = match (&c.diameters, c.diameter_mean, c.count) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(invalid("parameters: give either `diameters` or `diameter_mean`/`count`, not both"))
        }
        (Some(list), None, None) => list.clone(),
        (None, Some(mean), Some(count)) => sample_diameters(mean, c.diameter_spread.unwrap_or(0.0), count, seed).map_err(invalid)?,
        (None, _, _) => return Err(invalid("parameters: need `diameters` or both `diameter_mean` and `count`")),
    };
    let bubbles = diameters.iter().map(|&d| BubbleSpec::new(d, c.kappa, c.nu_max)).collect::<Result<Vec<_>, _>>().map_err(invalid)?;
    check(c.band_tolerance.is_finite() && c.band_tolerance > 0.0, "band_tolerance", "must be positive", c.band_tolerance)?;
    BubbleEnsemble::new(bubbles, c.laser_frequency, c.mode_index)
        .and_then(|e| e.with_refractive_index(c.refractive_index))
        .map_err(invalid)
}

fn sweep_entry(base: &Map<String, Value>, overrides: &Map<String, Value>) -> Result<ExchangerConfig, String> {
    let mut merged = base.clone();
    for (k, v) in overrides {
        merged.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| e.to_string())
}

/// Checks every constraint a run would hit before any numerics start.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), CliError> {
    match &cfg.params {
        ScenarioParams::SingleIon(c) => {
            single_ion_params(c)?;
            check_schedule(c.t_final, c.dt)?;
            check(c.phonon_cutoff >= 1, "phonon_cutoff", "must be at least 1", c.phonon_cutoff)?;
            check(c.initial_phonons <= c.phonon_cutoff, "initial_phonons", "must not exceed phonon_cutoff", c.initial_phonons)?;
            check(c.tolerance_band.is_finite() && c.tolerance_band > 0.0, "tolerance_band", "must be positive", c.tolerance_band)
        }
        ScenarioParams::Cavity(c) => {
            cavity_params(cfg.scenario, c)?;
            check_schedule(c.t_final, c.dt)?;
            check(c.phonon_cutoff >= 1, "phonon_cutoff", "must be at least 1", c.phonon_cutoff)?;
            check(c.photon_cutoff >= 1, "photon_cutoff", "must be at least 1", c.photon_cutoff)?;
            check(c.initial_phonons <= c.phonon_cutoff, "initial_phonons", "must not exceed phonon_cutoff", c.initial_phonons)?;
            check(c.initial_photons <= c.photon_cutoff, "initial_photons", "must not exceed photon_cutoff", c.initial_photons)?;
            check(c.tolerance_band.is_finite() && c.tolerance_band > 0.0, "tolerance_band", "must be positive", c.tolerance_band)
        }
        ScenarioParams::Thermal(c) => {
            check(!c.temperatures.is_empty(), "temperatures", "must not be empty", "[]")?;
            check(c.n_atoms >= 1, "n_atoms", "must be at least 1", c.n_atoms)?;
            for &t in &c.temperatures {
                let p = ThermalParams::new(t, c.nu).map_err(invalid)?;
                let p = p.with_nu_eff(c.nu_eff.unwrap_or(c.nu)).map_err(invalid)?;
                thermal_state(&p).map_err(invalid)?;
            }
            Ok(())
        }
        ScenarioParams::Bubble(c) => bubble_ensemble(c, cfg.seed).map(|_| ()),
        ScenarioParams::Exchanger(x) => {
            x.config.validate().map_err(invalid)?;
            check(x.delta_t.is_finite() && x.delta_t >= 0.0, "delta_T", "must be non-negative", x.delta_t)?;
            check(
                x.duration.is_finite() && x.duration >= x.config.stage_period,
                "duration",
                "must be at least one stage_period",
                x.duration,
            )
        }
        ScenarioParams::Sweep(s) => {
            check(!s.grid.is_empty(), "grid", "must contain at least one entry", "[]")?;
            check(s.delta_t.is_finite() && s.delta_t >= 0.0, "delta_T", "must be non-negative", s.delta_t)
        }
        ScenarioParams::Validate(inner) => validate(inner),
    }
}

impl ScenarioConfig {
    /// Parameters after defaults, in the same shape the config accepts.
    pub fn resolved_parameters(&self) -> Value {
        match &self.params {
            ScenarioParams::SingleIon(c) => json!(c),
            ScenarioParams::Cavity(c) => json!(c),
            ScenarioParams::Thermal(c) => json!(c),
            ScenarioParams::Bubble(c) => json!(c),
            ScenarioParams::Exchanger(x) => {
                let mut v = json!(x.config);
                v["duration"] = json!(x.duration);
                v["delta_T"] = json!(x.delta_t);
                v
            }
            ScenarioParams::Sweep(s) => json!({"base": s.base, "grid": s.grid, "delta_T": s.delta_t}),
            ScenarioParams::Validate(inner) => json!({"target": inner.scenario.name(), "parameters": inner.resolved_parameters()}),
        }
    }

    /// A config object that reproduces this run.
    pub fn echo(&self) -> Value {
        json!({"scenario": self.scenario.name(), "parameters": self.resolved_parameters(), "seed": self.seed})
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub program: String,
    pub version: String,
    pub scenario: String,
    /// Resolved config; loading it reproduces the run.
    pub config: Value,
    /// name → {"value": …, "unit": …}
    pub headline: Map<String, Value>,
    pub warnings: Vec<String>,
    pub status: RunStatus,
    pub exit_code: i32,
    pub error: Option<String>,
}

impl RunSummary {
    fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: cfg.scenario.name().to_string(),
            config: cfg.echo(),
            headline: Map::new(),
            warnings: Vec::new(),
            status: RunStatus::Ok,
            exit_code: EXIT_OK,
            error: None,
        }
    }

    pub fn add(&mut self, name: &str, value: impl Into<Value>, unit: &str) {
        self.headline.insert(name.to_string(), json!({"value": value.into(), "unit": unit}));
    }

    /// Numeric headline value, if present.
    pub fn value(&self, name: &str) -> Option<f64> {
        self.headline.get(name)?.get("value")?.as_f64()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

/// CSV payload: fixed header, preformatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub summary: RunSummary,
    pub table: Option<Table>,
}

/// Runs a validated config. Numerical failures come back as a summary with
/// exit code 3 and no table.
pub fn run_scenario(cfg: &ScenarioConfig) -> ScenarioOutput {
    let mut summary = RunSummary::new(cfg);
    let result = match &cfg.params {
        ScenarioParams::SingleIon(c) => run_single_ion(c, &mut summary),
        ScenarioParams::Cavity(c) => run_cavity(cfg.scenario, c, &mut summary),
        ScenarioParams::Thermal(c) => run_thermal(c, &mut summary),
        ScenarioParams::Bubble(c) => run_bubbles(c, cfg.seed, &mut summary),
        ScenarioParams::Exchanger(x) => run_exchanger_scenario(x, &mut summary),
        ScenarioParams::Sweep(s) => run_sweep(s, &mut summary),
        ScenarioParams::Validate(inner) => validation_report(inner, &mut summary),
    };
    match result {
        Ok(table) => ScenarioOutput { summary, table: Some(table) },
        Err(e) => {
            summary.status = RunStatus::NumericalFailure;
            summary.exit_code = e.exit_code();
            summary.error = Some(e.to_string());
            ScenarioOutput { summary, table: None }
        }
    }
}

fn conditions(report: &ConditionReport, summary: &mut RunSummary) {
    summary.add("cooling_conditions_met", report.all_pass(), "bool");
    for c in &report.checks {
        if !c.pass {
            summary.warnings.push(format!("cooling condition `{}` not met (value {})", c.name, fmt_f64(c.value)));
        }
    }
    if report.side.is_heating_side() {
        summary.warnings.push(format!("detuning {} is on the heating side", fmt_f64(report.detuning)));
    }
    summary.warnings.extend(report.notes.iter().cloned());
}

fn tail_warning(max_tail: f64, summary: &mut RunSummary) {
    summary.add("max_truncation_tail", max_tail, "dimensionless");
    if max_tail > 0.0 {
        summary.warnings.push(format!("oracle population in the top Fock level reached {}", fmt_f64(max_tail)));
    }
}

fn run_single_ion(c: &SingleIonConfig, summary: &mut RunSummary) -> Result<Table, CliError> {
    let p = single_ion_params(c)?;
    let times = observation_times(c.t_final, c.dt.unwrap_or(c.t_final)).map_err(invalid)?;
    let init = RateStateAtom::new(c.initial_phonons as f64, if c.initial_excited { 1.0 } else { 0.0 }, 0.0);
    let traj = single_ion_trajectory(init, &p, &times).map_err(numerical)?;
    let oracle = if c.oracle {
        Some(single_ion_moments(&p, c.initial_phonons, c.initial_excited, c.phonon_cutoff, &times, &EvolveOptions::default()).map_err(numerical)?)
    } else {
        None
    };

    conditions(&validate_cooling_conditions(&p, c.tolerance_band), summary);
    match cooling_rate_single(&p) {
        Ok(r) => summary.add("cooling_rate", r, "1/s"),
        Err(e) => summary.warnings.push(e.to_string()),
    }
    let m: Vec<f64> = traj.iter().map(|s| s.m).collect();
    summary.add("fitted_decay_rate", fitted_decay_rate(&times, &m, 0.2 * c.t_final), "1/s");
    let last = traj.last().expect("t = 0 is always observed");
    summary.add("final_m", last.m, "dimensionless");
    summary.add("final_s", last.s, "dimensionless");
    summary.add("final_k1", last.k1, "dimensionless");

    let mut table = Table::new(&["time", "m", "s", "k1", "m_oracle", "s_oracle", "k1_oracle"]);
    for (i, (t, s)) in times.iter().zip(&traj).enumerate() {
        let o = oracle.as_ref().map(|o| o.states[i]);
        table.rows.push(vec![
            fmt_f64(*t),
            fmt_f64(s.m),
            fmt_f64(s.s),
            fmt_f64(s.k1),
            opt_f64(o.map(|o| o.m)),
            opt_f64(o.map(|o| o.s)),
            opt_f64(o.map(|o| o.k1)),
        ]);
    }
    if let Some(o) = &oracle {
        let last = o.states.last().expect("non-empty");
        summary.add("final_m_oracle", last.m, "dimensionless");
        summary.add("max_abs_m_deviation", max_dev(&m, o.states.iter().map(|s| s.m)), "dimensionless");
        tail_warning(o.max_tail, summary);
    }
    Ok(table)
}

fn max_dev(a: &[f64], b: impl Iterator<Item = f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run_cavity(scenario: Scenario, c: &CavityConfig, summary: &mut RunSummary) -> Result<Table, CliError> {
    let p = cavity_params(scenario, c)?;
    let times = observation_times(c.t_final, c.dt.unwrap_or(c.t_final)).map_err(invalid)?;
    let init = RateStateCavity::new(c.initial_phonons as f64, c.initial_photons as f64, 0.0);
    let traj = cavity_trajectory(init, &p, &times).map_err(numerical)?;
    let oracle = if c.oracle {
        let opts = EvolveOptions::default();
        Some(cavity_moments(&p, c.initial_phonons, c.initial_photons, c.phonon_cutoff, c.photon_cutoff, &times, &opts).map_err(numerical)?)
    } else {
        None
    };

    conditions(&validate_cooling_conditions(&p, c.tolerance_band), summary);
    summary.add("n_atoms", p.n_atoms() as u64, "atoms");
    summary.add("collective_coupling", p.collective_coupling(), "rad/s");
    let rate = if scenario == Scenario::CavityCollective { cooling_rate_collective(&p) } else { cooling_rate_cavity(p.g_eff, p.kappa) };
    match rate {
        Ok(r) => summary.add("cooling_rate", r, "1/s"),
        Err(e) => summary.warnings.push(e.to_string()),
    }
    let m: Vec<f64> = traj.iter().map(|s| s.m).collect();
    summary.add("fitted_decay_rate", fitted_decay_rate(&times, &m, 0.2 * c.t_final), "1/s");
    let last = traj.last().expect("t = 0 is always observed");
    summary.add("final_m", last.m, "dimensionless");
    summary.add("final_n", last.n, "dimensionless");
    summary.add("final_k1", last.k1, "dimensionless");

    let mut table = Table::new(&["time", "m", "n", "k1", "m_oracle", "n_oracle", "k1_oracle"]);
    for (i, (t, s)) in times.iter().zip(&traj).enumerate() {
        let o = oracle.as_ref().map(|o| o.states[i]);
        table.rows.push(vec![
            fmt_f64(*t),
            fmt_f64(s.m),
            fmt_f64(s.n),
            fmt_f64(s.k1),
            opt_f64(o.map(|o| o.m)),
            opt_f64(o.map(|o| o.n)),
            opt_f64(o.map(|o| o.k1)),
        ]);
    }
    if let Some(o) = &oracle {
        summary.add("final_m_oracle", o.states.last().expect("non-empty").m, "dimensionless");
        summary.add("max_abs_m_deviation", max_dev(&m, o.states.iter().map(|s| s.m)), "dimensionless");
        tail_warning(o.max_tail, summary);
    }
    Ok(table)
}

fn run_thermal(c: &ThermalConfig, summary: &mut RunSummary) -> Result<Table, CliError> {
    let mut table = Table::new(&[
        "temperature",
        "lambda",
        "lambda_eff",
        "partition_function",
        "mean_energy",
        "mean_phonons",
        "b_mode_occupation",
        "total_phonons",
    ]);
    for &t in &c.temperatures {
        let p = ThermalParams::new(t, c.nu).and_then(|p| p.with_nu_eff(c.nu_eff.unwrap_or(c.nu))).map_err(invalid)?;
        let st = thermal_state(&p).map_err(numerical)?;
        let gas = thermalise_gas(c.n_atoms, &p).map_err(numerical)?;
        table.rows.push(vec![
            fmt_f64(t),
            fmt_f64(p.lambda()),
            fmt_f64(p.lambda_eff()),
            fmt_f64(st.partition_function),
            fmt_f64(st.mean_energy),
            fmt_f64(st.mean_phonons),
            fmt_f64(gas.b_mode_occupation()),
            fmt_f64(gas.total_phonons()),
        ]);
        if c.temperatures.len() == 1 {
            summary.add("lambda", p.lambda(), "dimensionless");
            summary.add("partition_function", st.partition_function, "dimensionless");
            summary.add("mean_energy", st.mean_energy, "J");
            summary.add("mean_phonons", st.mean_phonons, "dimensionless");
            summary.add("total_phonons", gas.total_phonons(), "phonons");
        }
    }
    summary.add("points", c.temperatures.len() as u64, "count");
    Ok(table)
}

fn run_bubbles(c: &BubbleConfig, seed: u64, summary: &mut RunSummary) -> Result<Table, CliError> {
    let e = bubble_ensemble(c, seed)?;
    let band = frequency_band(&e);
    let report = classify_bubbles(&e, c.band_tolerance);
    summary.add("band_min", band.band.min, "rad/s");
    summary.add("band_max", band.band.max, "rad/s");
    summary.add("band_separation", band.separation, "rad/s");
    summary.add("safe", report.safe, "bool");
    summary.add("resonant_cooling", report.count(BubbleLabel::ResonantCooling) as u64, "bubbles");
    summary.add("off_resonant_cooling", report.count(BubbleLabel::OffResonantCooling) as u64, "bubbles");
    summary.add("heating_risk", report.count(BubbleLabel::HeatingRisk) as u64, "bubbles");
    if !band.isolated() {
        summary.warnings.push(format!("mode {} band overlaps a neighbouring mode band", band.mode_index));
    }
    if !report.safe {
        summary.warnings.push(format!("{} bubble(s) see the laser at or above their cavity frequency", report.count(BubbleLabel::HeatingRisk)));
    }
    let mut table = Table::new(&["d_min", "j", "omega_cav", "lambda_cav", "delta_cav", "label"]);
    for b in &report.bubbles {
        table.rows.push(vec![
            fmt_f64(b.d_min),
            b.mode_index.to_string(),
            fmt_f64(b.omega_cav),
            fmt_f64(b.lambda_cav),
            fmt_f64(b.delta_cav),
            b.label.as_str().to_string(),
        ]);
    }
    Ok(table)
}

fn is_paper_example(cfg: &ExchangerConfig) -> bool {
    cfg.liquid_mass == 1e-15
        && cfg.heat_capacity == HeatCapacity::Constant(4.18)
        && cfg.n_atoms == 100_000_000
        && cfg.emission_rate == 1e6
        && cfg.nu_max == 1e8
}

fn run_exchanger_scenario(x: &ExchangerScenario, summary: &mut RunSummary) -> Result<Table, CliError> {
    let cfg = &x.config;
    let est = estimate_cooling(cfg, x.delta_t).map_err(invalid)?;
    summary.add("gamma_cool", est.rate, "s/K");
    summary.add("photons_needed", est.photons_needed, "photons");
    summary.add("cooling_time", est.cooling_time, "s");
    summary.add("heat_removed", est.heat_removed, "J");
    if is_paper_example(cfg) {
        summary.add("gamma_cool_paper", PAPER_GAMMA_COOL, "s/K");
        summary.warnings.push(format!(
            "paper quotes gamma_cool = 3.81 ms/K for these inputs; direct evaluation gives {} s/K ({:+.2}%)",
            fmt_f64(est.rate),
            100.0 * (est.rate / PAPER_GAMMA_COOL - 1.0)
        ));
        summary.warnings.push("paper states m_water = 1e-15 g for 1 um^3 of water, which has a mass of about 1e-12 g; the stated mass is used".into());
    }

    let trace = run_exchanger(cfg, x.duration).map_err(numerical)?;
    let last = trace.last();
    let drop = cfg.initial_temperature - last.reservoir_temperature;
    summary.add("elapsed", last.time, "s");
    summary.add("stage_periods", (trace.records.len() / 2) as u64, "periods");
    summary.add("reached_floor", trace.reached_floor, "bool");
    summary.add("final_reservoir_temperature", last.reservoir_temperature, "K");
    summary.add("final_gas_temperature", last.gas_temperature, "K");
    summary.add("reservoir_temperature_drop", drop, "K");
    summary.add("cumulative_photons", last.cumulative_photons, "photons");
    summary.add("cumulative_heat_removed", last.cumulative_heat_removed, "J");
    if drop > 0.0 {
        let budget = estimate_cooling(cfg, drop).map_err(invalid)?.cooling_time;
        summary.add("elapsed_over_estimate", last.time / budget, "dimensionless");
        summary.warnings.push(format!(
            "staged run took {:.3}x the closed-form t_cool for the same reservoir drop; the estimate ignores the gas heat capacity and the time outside cooling stages",
            last.time / budget
        ));
    }

    let mut table = Table::new(&[
        "time",
        "stage",
        "gas_temperature",
        "reservoir_temperature",
        "b_mode_occupation",
        "cumulative_photons",
        "cumulative_heat_removed",
    ]);
    for r in &trace.records {
        table.rows.push(vec![
            fmt_f64(r.time),
            r.stage.as_str().to_string(),
            fmt_f64(r.gas_temperature),
            fmt_f64(r.reservoir_temperature),
            fmt_f64(r.b_mode_occupation),
            fmt_f64(r.cumulative_photons),
            fmt_f64(r.cumulative_heat_removed),
        ]);
    }
    Ok(table)
}

fn run_sweep(s: &SweepScenario, summary: &mut RunSummary) -> Result<Table, CliError> {
    let mut parsed = Vec::new();
    let mut index_of = Vec::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    let mut failed: Vec<(usize, String)> = Vec::new();
    for (i, entry) in s.grid.iter().enumerate() {
        match sweep_entry(&s.base, entry) {
            Ok(cfg) => {
                parsed.push(cfg);
                index_of.push(i);
            }
            Err(e) => failed.push((i, e)),
        }
    }
    if !parsed.is_empty() {
        rows = sweep(&parsed, s.delta_t).map_err(invalid)?;
        for r in &mut rows {
            r.index = index_of[r.index];
        }
    }
    let mut table = Table::new(&[
        "index",
        "n_atoms",
        "nu_max",
        "emission_rate",
        "liquid_mass",
        "photons_needed",
        "cooling_time",
        "rate",
        "heat_removed",
        "error",
    ]);
    let mut errors: Vec<(usize, Vec<String>)> = failed
        .into_iter()
        .map(|(i, e)| (i, vec![i.to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), e]))
        .collect();
    for r in &rows {
        let c = &r.config;
        let mut cells = vec![r.index.to_string(), c.n_atoms.to_string(), fmt_f64(c.nu_max), fmt_f64(c.emission_rate), fmt_f64(c.liquid_mass)];
        match (&r.estimate, &r.error) {
            (Some(e), _) => {
                cells.extend([fmt_f64(e.photons_needed), fmt_f64(e.cooling_time), fmt_f64(e.rate), fmt_f64(e.heat_removed), String::new()]);
                table.rows.push(cells);
            }
            (None, err) => {
                cells.extend([String::new(), String::new(), String::new(), String::new(), err.clone().unwrap_or_default()]);
                errors.push((r.index, cells));
            }
        }
    }
    summary.add("entries", s.grid.len() as u64, "count");
    summary.add("failed_entries", errors.len() as u64, "count");
    if let Some(best) = rows.iter().find_map(|r| r.estimate) {
        summary.add("best_rate", best.rate, "s/K");
    }
    errors.sort_by_key(|(i, _)| *i);
    for (i, cells) in errors {
        summary.warnings.push(format!("grid entry {i}: {}", cells[9]));
        table.rows.push(cells);
    }
    Ok(table)
}

fn validation_report(cfg: &ScenarioConfig, summary: &mut RunSummary) -> Result<Table, CliError> {
    let mut table = Table::new(&["check", "value", "pass"]);
    let push = |table: &mut Table, name: &str, value: f64, pass: bool| {
        table.rows.push(vec![name.to_string(), fmt_f64(value), pass.to_string()]);
    };
    summary.add("target", cfg.scenario.name(), "scenario");
    let report = match &cfg.params {
        ScenarioParams::SingleIon(c) => Some(validate_cooling_conditions(&single_ion_params(c)?, c.tolerance_band)),
        ScenarioParams::Cavity(c) => Some(validate_cooling_conditions(&cavity_params(cfg.scenario, c)?, c.tolerance_band)),
        ScenarioParams::Bubble(c) => {
            let e = bubble_ensemble(c, cfg.seed)?;
            let r = classify_bubbles(&e, c.band_tolerance);
            summary.add("safe", r.safe, "bool");
            summary.add("heating_risk", r.count(BubbleLabel::HeatingRisk) as u64, "bubbles");
            for (i, b) in r.bubbles.iter().enumerate() {
                push(&mut table, &format!("bubble[{i}] {}", b.label.as_str()), b.delta_cav, b.label != BubbleLabel::HeatingRisk);
            }
            if !r.safe {
                summary.warnings.push("ensemble is not safe: some bubble sees the laser at or above its cavity frequency".into());
            }
            None
        }
        _ => None,
    };
    if let Some(report) = report {
        for c in &report.checks {
            push(&mut table, &c.name, c.value, c.pass);
        }
        push(&mut table, "red-detuned", report.detuning, !report.side.is_heating_side());
        conditions(&report, summary);
    }
    summary.add("valid", true, "bool");
    Ok(table)
}

/// Writes `<prefix>.timeseries.csv` (when there is a table) and
/// `<prefix>.summary.json`, each via a temporary file and a rename.
pub fn write_outputs(prefix: &Path, output: &ScenarioOutput) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if let Some(table) = &output.table {
        let path = with_suffix(prefix, ".timeseries.csv");
        write_atomic(&path, table.to_csv().as_bytes())?;
        written.push(path);
    }
    let path = with_suffix(prefix, ".summary.json");
    write_atomic(&path, output.summary.to_json().as_bytes())?;
    written.push(path);
    Ok(written)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Write { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let tmp = with_suffix(path, &format!(".tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        err(e)
    })
}

#[derive(Debug, Parser)]
#[command(name = "phonox", version, about = "Collective laser cooling models: Lindblad oracle, rate equations, bubble cavities, staged heat exchanger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write <prefix>.timeseries.csv and <prefix>.summary.json
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's output_prefix, else the config path without its extension
        #[arg(long)]
        output_prefix: Option<PathBuf>,
        /// Overrides the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and its cooling conditions; prints the report, writes nothing
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run { config, output_prefix, seed } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
                if let Err(e) = validate(&cfg) {
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
            }
            let prefix = output_prefix.or_else(|| cfg.output_prefix.clone()).unwrap_or_else(|| config.with_extension(""));
            let output = run_scenario(&cfg);
            match write_outputs(&prefix, &output) {
                Ok(paths) => {
                    for p in paths {
                        println!("{}", p.display());
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
            }
            if let Some(err) = &output.summary.error {
                eprintln!("error: {err}");
            }
            for w in &output.summary.warnings {
                eprintln!("warning: {w}");
            }
            output.summary.exit_code
        }
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                let target = match cfg.params {
                    ScenarioParams::Validate(inner) => *inner,
                    _ => cfg,
                };
                let mut summary = RunSummary::new(&target);
                if let Err(e) = validation_report(&target, &mut summary) {
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
                print!("{}", summary.to_json());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    }
}
