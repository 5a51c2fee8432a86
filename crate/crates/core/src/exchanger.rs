//! Staged heat exchanger and the photon-budget estimate of Eqs. (24)–(27).
//!
//! A liquid reservoir (mass m, specific heat c) exchanges heat with a gas of
//! N atoms inside the bubble. Each stage period starts with a cooling stage,
//! during which the collective mode B drains at `cooling_rate` and every
//! lost phonon leaves as one photon of energy ħν_max, followed by a
//! thermalisation stage in which gas and reservoir relax toward their
//! common temperature.
//!
//! `nu_max` enters only through the quantum ħν_max. The paper's example
//! quotes ν = 100 MHz and uses ħ·1e8 directly, and so do we.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::HBAR;
use crate::thermo::{oscillator_energy, temperature_from_mean_phonons, thermalise_gas, ThermalParams, ThermoError};

pub const DEFAULT_HEAT_CAPACITY: f64 = 4.18;
pub const DEFAULT_STAGE_PERIOD: f64 = 25e-6;
pub const DEFAULT_COOLING_FRACTION: f64 = 0.02;
pub const DEFAULT_THERMAL_COUPLING_TIME: f64 = 1e-6;
pub const DEFAULT_FLOOR_TEMPERATURE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExchangerError {
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("duration {duration} s is shorter than one stage period ({period} s)")]
    DurationTooShort { duration: f64, period: f64 },
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ExchangerError {
    ExchangerError::InvalidParameter { name, reason: reason.into() }
}

/// Specific heat of the liquid, J/(g·K): one value, or a piecewise-linear
/// table of `[temperature, c]` points held constant beyond its ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HeatCapacity {
    Constant(f64),
    Table(Vec<[f64; 2]>),
}

impl Default for HeatCapacity {
    fn default() -> Self {
        HeatCapacity::Constant(DEFAULT_HEAT_CAPACITY)
    }
}

impl HeatCapacity {
    fn validate(&self) -> Result<(), ExchangerError> {
        match self {
            HeatCapacity::Constant(c) => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(invalid("heat_capacity", format!("must be positive, got {c}")));
                }
            }
            HeatCapacity::Table(points) => {
                if points.is_empty() {
                    return Err(invalid("heat_capacity", "table is empty"));
                }
                for w in points.windows(2) {
                    if !(w[1][0] > w[0][0]) {
                        return Err(invalid("heat_capacity", "table temperatures must be strictly increasing"));
                    }
                }
                for &[t, c] in points {
                    if !(t.is_finite() && t >= 0.0 && c.is_finite() && c > 0.0) {
                        return Err(invalid("heat_capacity", format!("invalid table point [{t}, {c}]")));
                    }
                }
            }
        }
        Ok(())
    }

    /// c(T) in J/(g·K).
    pub fn at(&self, t: f64) -> f64 {
        match self {
            HeatCapacity::Constant(c) => *c,
            HeatCapacity::Table(p) => {
                let last = p.len() - 1;
                if t <= p[0][0] {
                    return p[0][1];
                }
                if t >= p[last][0] {
                    return p[last][1];
                }
                let i = p.partition_point(|q| q[0] <= t) - 1;
                let [t0, c0] = p[i];
                let [t1, c1] = p[i + 1];
                c0 + (c1 - c0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// ∫₀ᵀ c(T′) dT′ in J/g.
    pub fn integral(&self, t: f64) -> f64 {
        match self {
            HeatCapacity::Constant(c) => c * t,
            HeatCapacity::Table(p) => {
                let mut acc = p[0][1] * t.min(p[0][0]);
                for w in p.windows(2) {
                    let [t0, c0] = w[0];
                    let [t1, _] = w[1];
                    if t <= t0 {
                        break;
                    }
                    let hi = t.min(t1);
                    acc += 0.5 * (c0 + self.at(hi)) * (hi - t0);
                }
                let [tl, cl] = p[p.len() - 1];
                if t > tl {
                    acc += cl * (t - tl);
                }
                acc
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangerConfig {
    /// Liquid mass, g.
    pub liquid_mass: f64,
    #[serde(default)]
    pub heat_capacity: HeatCapacity,
    /// T₀, K.
    pub initial_temperature: f64,
    pub n_atoms: u64,
    /// Photons per second per atom.
    pub emission_rate: f64,
    /// Defines the energy quantum ħν_max.
    pub nu_max: f64,
    /// B-mode drain rate during a cooling stage, 1/s.
    pub cooling_rate: f64,
    #[serde(default = "default_stage_period")]
    pub stage_period: f64,
    #[serde(default = "default_cooling_fraction")]
    pub cooling_fraction: f64,
    #[serde(default = "default_thermal_coupling_time")]
    pub thermal_coupling_time: f64,
    #[serde(default = "default_floor_temperature")]
    pub floor_temperature: f64,
}

fn default_stage_period() -> f64 {
    DEFAULT_STAGE_PERIOD
}
fn default_cooling_fraction() -> f64 {
    DEFAULT_COOLING_FRACTION
}
fn default_thermal_coupling_time() -> f64 {
    DEFAULT_THERMAL_COUPLING_TIME
}
fn default_floor_temperature() -> f64 {
    DEFAULT_FLOOR_TEMPERATURE
}

fn positive(name: &'static str, v: f64) -> Result<(), ExchangerError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

impl ExchangerConfig {
    /// The §IV.D example: 1e-15 g of water at 20 °C, ν = 100 MHz,
    /// I = 1e6/s, N = 1e8.
    pub fn paper_example() -> Self {
        Self {
            liquid_mass: 1e-15,
            heat_capacity: HeatCapacity::Constant(4.18),
            initial_temperature: 293.15,
            n_atoms: 100_000_000,
            emission_rate: 1e6,
            nu_max: 1e8,
            cooling_rate: 1e6,
            stage_period: DEFAULT_STAGE_PERIOD,
            cooling_fraction: DEFAULT_COOLING_FRACTION,
            thermal_coupling_time: DEFAULT_THERMAL_COUPLING_TIME,
            floor_temperature: DEFAULT_FLOOR_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<(), ExchangerError> {
        positive("liquid_mass", self.liquid_mass)?;
        self.heat_capacity.validate()?;
        positive("initial_temperature", self.initial_temperature)?;
        if self.n_atoms == 0 {
            return Err(invalid("n_atoms", "must be at least 1"));
        }
        positive("emission_rate", self.emission_rate)?;
        positive("nu_max", self.nu_max)?;
        // zero is the pure heat-transfer limit
        if !(self.cooling_rate.is_finite() && self.cooling_rate >= 0.0) {
            return Err(invalid("cooling_rate", format!("must be non-negative and finite, got {}", self.cooling_rate)));
        }
        positive("stage_period", self.stage_period)?;
        if !(self.cooling_fraction > 0.0 && self.cooling_fraction < 1.0) {
            return Err(invalid("cooling_fraction", format!("must lie in (0, 1), got {}", self.cooling_fraction)));
        }
        // +∞ isolates the reservoir
        if !(self.thermal_coupling_time > 0.0) {
            return Err(invalid("thermal_coupling_time", format!("must be positive, got {}", self.thermal_coupling_time)));
        }
        positive("floor_temperature", self.floor_temperature)?;
        if self.floor_temperature >= self.initial_temperature {
            return Err(invalid("floor_temperature", "must be below initial_temperature"));
        }
        ThermalParams::new(self.initial_temperature, self.nu_max)?;
        Ok(())
    }

    /// Energy quantum ħν_max carried by each photon, J.
    pub fn quantum(&self) -> f64 {
        HBAR * self.nu_max
    }

    /// Thermal energy of the liquid above 0 K, J.
    pub fn reservoir_energy(&self, t: f64) -> f64 {
        self.liquid_mass * self.heat_capacity.integral(t)
    }

    /// Mean energy of the gas (N oscillators at ν_max), J.
    pub fn gas_energy(&self, t: f64) -> Result<f64, ExchangerError> {
        Ok(self.n_atoms as f64 * oscillator_energy(t, self.nu_max)?)
    }

    fn reservoir_temperature(&self, energy: f64) -> f64 {
        if let HeatCapacity::Constant(c) = self.heat_capacity {
            return (energy / (self.liquid_mass * c)).max(0.0);
        }
        if energy <= 0.0 {
            return 0.0;
        }
        let mut hi = self.initial_temperature.max(1.0);
        while self.reservoir_energy(hi) < energy {
            hi *= 2.0;
        }
        bisect(0.0, hi, |t| self.reservoir_energy(t) - energy)
    }

    /// Total gas+reservoir energy at the given temperatures.
    pub fn total_energy(&self, gas_temperature: f64, reservoir_temperature: f64) -> Result<f64, ExchangerError> {
        Ok(self.gas_energy(gas_temperature)? + self.reservoir_energy(reservoir_temperature))
    }
}

/// Root of an increasing function on [lo, hi], to the last representable bit.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoolingEstimate {
    pub photons_needed: f64,
    /// s
    pub cooling_time: f64,
    /// γ_cool, s/K.
    pub rate: f64,
    /// ΔQ, J.
    pub heat_removed: f64,
}

/// Eqs. (24)–(27) with c evaluated at T₀.
pub fn estimate_cooling(cfg: &ExchangerConfig, delta_t: f64) -> Result<CoolingEstimate, ExchangerError> {
    cfg.validate()?;
    if !(delta_t.is_finite() && delta_t >= 0.0) {
        return Err(invalid("delta_T", format!("must be non-negative, got {delta_t}")));
    }
    let c = cfg.heat_capacity.at(cfg.initial_temperature);
    let quantum = cfg.quantum();
    let flux = cfg.n_atoms as f64 * cfg.emission_rate;
    let heat_removed = c * cfg.liquid_mass * delta_t;
    let photons_needed = heat_removed / quantum;
    Ok(CoolingEstimate {
        photons_needed,
        cooling_time: photons_needed / flux,
        rate: c * cfg.liquid_mass / (flux * quantum),
        heat_removed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Cooling,
    Thermalisation,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Cooling => "COOLING",
            Stage::Thermalisation => "THERMALISATION",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageRecord {
    pub time: f64,
    pub stage: Stage,
    pub gas_temperature: f64,
    pub reservoir_temperature: f64,
    pub b_mode_occupation: f64,
    pub cumulative_photons: f64,
    pub cumulative_heat_removed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTrace {
    /// State at t = 0 (both subsystems at T₀, B mode thermal).
    pub initial: StageRecord,
    pub records: Vec<StageRecord>,
    /// True when the floor temperature stopped the run before `duration`.
    pub reached_floor: bool,
}

impl StageTrace {
    pub fn last(&self) -> &StageRecord {
        self.records.last().unwrap_or(&self.initial)
    }

    /// Time of the first record with reservoir temperature at or below `t`.
    pub fn time_to_reach(&self, reservoir_temperature: f64) -> Option<f64> {
        self.records.iter().find(|r| r.reservoir_temperature <= reservoir_temperature).map(|r| r.time)
    }
}

struct GasState {
    /// Per-atom occupation, equal to the B-mode occupation.
    m: f64,
    temperature: f64,
}

impl GasState {
    fn thermal(cfg: &ExchangerConfig, temperature: f64) -> Result<Self, ExchangerError> {
        if temperature <= 0.0 {
            return Ok(Self { m: 0.0, temperature: 0.0 });
        }
        let p = ThermalParams::new(temperature, cfg.nu_max)?;
        let gas = thermalise_gas(cfg.n_atoms, &p)?;
        Ok(Self { m: gas.b_mode_occupation(), temperature })
    }

    fn from_occupation(cfg: &ExchangerConfig, m: f64) -> Result<Self, ExchangerError> {
        if m <= 0.0 {
            return Ok(Self { m: 0.0, temperature: 0.0 });
        }
        Ok(Self { m, temperature: temperature_from_mean_phonons(m, cfg.nu_max)? })
    }
}

/// Simulates whole stage periods until `duration` or until the reservoir
/// reaches the floor temperature. Two records per period: end of cooling,
/// end of thermalisation.
pub fn run_exchanger(cfg: &ExchangerConfig, duration: f64) -> Result<StageTrace, ExchangerError> {
    cfg.validate()?;
    if !(duration.is_finite() && duration >= cfg.stage_period) {
        return Err(ExchangerError::DurationTooShort { duration, period: cfg.stage_period });
    }
    let n = cfg.n_atoms as f64;
    let quantum = cfg.quantum();
    let period = cfg.stage_period;
    let t_cool = cfg.cooling_fraction * period;
    let t_therm = period - t_cool;
    // photons a stage may emit without any atom exceeding `emission_rate`
    let budget = n * cfg.emission_rate * t_cool;
    let relax = -(-t_therm / cfg.thermal_coupling_time).exp_m1();
    let periods = ((duration / period) * (1.0 + 1e-12)).floor() as u64;

    let mut gas = GasState::thermal(cfg, cfg.initial_temperature)?;
    let mut t_res = cfg.initial_temperature;
    let mut photons = 0.0;
    let record = |time, stage, gas: &GasState, t_res, photons: f64| StageRecord {
        time,
        stage,
        gas_temperature: gas.temperature,
        reservoir_temperature: t_res,
        b_mode_occupation: gas.m,
        cumulative_photons: photons,
        cumulative_heat_removed: photons * quantum,
    };
    let initial = record(0.0, Stage::Thermalisation, &gas, t_res, 0.0);
    let mut records = Vec::with_capacity(2 * periods.min(1 << 22) as usize);
    let mut reached_floor = false;

    for k in 0..periods {
        let start = k as f64 * period;

        let drained = n * gas.m * -(-cfg.cooling_rate * t_cool).exp_m1();
        let emitted = drained.min(budget);
        photons += emitted;
        gas = GasState::from_occupation(cfg, gas.m - emitted / n)?;
        records.push(record(start + t_cool, Stage::Cooling, &gas, t_res, photons));

        let e_gas = n * quantum * (gas.m + 0.5);
        let e_res = cfg.reservoir_energy(t_res);
        let (lo, hi) = if gas.temperature <= t_res { (gas.temperature, t_res) } else { (t_res, gas.temperature) };
        let total = e_gas + e_res;
        let t_eq = bisect(lo, hi, |t| cfg.gas_energy(t).unwrap_or(f64::NAN) + cfg.reservoir_energy(t) - total);
        // difference taken on the smaller energy to keep rounding out of q
        let mut q_full = if e_gas < e_res { cfg.gas_energy(t_eq)? - e_gas } else { e_res - cfg.reservoir_energy(t_eq) };
        // heat never flows against the temperature difference
        if (t_res - gas.temperature) * q_full < 0.0 {
            q_full = 0.0;
        }
        let q = q_full * relax;
        if q != 0.0 {
            t_res = cfg.reservoir_temperature(e_res - q);
        }
        let m = (e_gas + q) / (n * quantum) - 0.5;
        let warmed = GasState::from_occupation(cfg, m)?;
        gas = GasState::thermal(cfg, warmed.temperature)?;
        records.push(record(start + period, Stage::Thermalisation, &gas, t_res, photons));

        if t_res <= cfg.floor_temperature {
            reached_floor = true;
            break;
        }
    }
    Ok(StageTrace { initial, records, reached_floor })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Position in the input grid.
    pub index: usize,
    pub config: ExchangerConfig,
    pub estimate: Option<CoolingEstimate>,
    pub error: Option<String>,
}

/// One estimate per config, sorted by γ_cool; invalid configs become error
/// rows at the end, in input order.
pub fn sweep(grid: &[ExchangerConfig], delta_t: f64) -> Result<Vec<SweepRow>, ExchangerError> {
    if grid.is_empty() {
        return Err(invalid("grid", "must contain at least one config"));
    }
    let mut rows: Vec<SweepRow> = grid
        .iter()
        .enumerate()
        .map(|(index, cfg)| match estimate_cooling(cfg, delta_t) {
            Ok(e) => SweepRow { index, config: cfg.clone(), estimate: Some(e), error: None },
            Err(e) => SweepRow { index, config: cfg.clone(), estimate: None, error: Some(e.to_string()) },
        })
        .collect();
    rows.sort_by(|a, b| match (&a.estimate, &b.estimate) {
        (Some(x), Some(y)) => x.rate.total_cmp(&y.rate).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    Ok(rows)
}
