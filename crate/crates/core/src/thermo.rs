//! Thermal states of a trapped oscillator and of a collision-dominated gas.
//!
//! Occupations use the Bose–Einstein form m = 1/(e^λ − 1) with λ = ħν/k_BT.

use thiserror::Error;

use crate::constants::{HBAR, K_B};

/// Above this λ the occupation is reported as exactly zero.
pub const LAMBDA_UNDERFLOW: f64 = 700.0;
/// Below this λ the classical limit is outside the validated range.
pub const LAMBDA_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThermoError {
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("λ = {0} must be positive and finite")]
    NonPositiveLambda(f64),
    #[error("λ = {0:e} is below the validated range (λ ≥ {LAMBDA_MIN:e})")]
    LambdaOutOfRange(f64),
    #[error("mean phonon number {0} has no finite positive temperature")]
    NonPositiveOccupation(f64),
    #[error("at least one atom is required")]
    NoAtoms,
}

fn positive(name: &'static str, value: f64) -> Result<f64, ThermoError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ThermoError::InvalidParameter { name, value })
    }
}

/// Temperature and trap frequencies; λ and λ_eff are derived on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalParams {
    temperature: f64,
    nu: f64,
    nu_eff: f64,
}

impl ThermalParams {
    /// `nu_eff` defaults to `nu`.
    pub fn new(temperature: f64, nu: f64) -> Result<Self, ThermoError> {
        Ok(Self { temperature: positive("temperature", temperature)?, nu: positive("nu", nu)?, nu_eff: nu })
    }

    pub fn with_nu_eff(mut self, nu_eff: f64) -> Result<Self, ThermoError> {
        self.nu_eff = positive("nu_eff", nu_eff)?;
        Ok(self)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn nu_eff(&self) -> f64 {
        self.nu_eff
    }

    pub fn k_b(&self) -> f64 {
        K_B
    }

    /// β = 1/k_B T.
    pub fn beta(&self) -> f64 {
        1.0 / (K_B * self.temperature)
    }

    /// λ = βħν.
    pub fn lambda(&self) -> f64 {
        HBAR * self.nu / (K_B * self.temperature)
    }

    /// λ_eff = βħν_eff.
    pub fn lambda_eff(&self) -> f64 {
        HBAR * self.nu_eff / (K_B * self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalState {
    /// Z = e^{−λ/2}/(1 − e^{−λ}); underflows to 0 for λ ≳ 1490.
    pub partition_function: f64,
    pub log_partition_function: f64,
    /// ⟨H⟩ in joules.
    pub mean_energy: f64,
    pub mean_phonons: f64,
}

fn check_lambda(lambda: f64) -> Result<f64, ThermoError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ThermoError::NonPositiveLambda(lambda));
    }
    if lambda < LAMBDA_MIN {
        return Err(ThermoError::LambdaOutOfRange(lambda));
    }
    Ok(lambda)
}

/// Bose–Einstein occupation 1/(e^λ − 1), exactly 0 above [`LAMBDA_UNDERFLOW`].
pub fn bose_einstein(lambda: f64) -> Result<f64, ThermoError> {
    let lambda = check_lambda(lambda)?;
    if lambda > LAMBDA_UNDERFLOW {
        return Ok(0.0);
    }
    Ok(1.0 / lambda.exp_m1())
}

/// ln Z = −λ/2 − ln(1 − e^{−λ}).
pub fn log_partition_function(lambda: f64) -> Result<f64, ThermoError> {
    let lambda = check_lambda(lambda)?;
    Ok(-0.5 * lambda - (-(-lambda).exp_m1()).ln())
}

pub fn thermal_state(p: &ThermalParams) -> Result<ThermalState, ThermoError> {
    let lambda = p.lambda();
    let ln_z = log_partition_function(lambda)?;
    let m = bose_einstein(lambda)?;
    Ok(ThermalState {
        partition_function: ln_z.exp(),
        log_partition_function: ln_z,
        mean_energy: HBAR * p.nu() * (m + 0.5),
        mean_phonons: m,
    })
}

/// Outcome of a thermalisation stage: a product of identical thermal
/// states at λ_eff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalisedGas {
    pub n_atoms: u64,
    pub mean_phonons_per_atom: f64,
}

impl ThermalisedGas {
    pub fn total_phonons(&self) -> f64 {
        self.n_atoms as f64 * self.mean_phonons_per_atom
    }

    /// Occupation of the collective mode B for uniform couplings. B is a
    /// normalised superposition of independent, identically populated
    /// modes, so its occupation equals the per-atom value.
    pub fn b_mode_occupation(&self) -> f64 {
        self.mean_phonons_per_atom
    }
}

/// Thermalises `n_atoms` at the parameters' temperature and ν_eff. The
/// previous state of the gas plays no role.
pub fn thermalise_gas(n_atoms: u64, p: &ThermalParams) -> Result<ThermalisedGas, ThermoError> {
    if n_atoms == 0 {
        return Err(ThermoError::NoAtoms);
    }
    Ok(ThermalisedGas { n_atoms, mean_phonons_per_atom: bose_einstein(p.lambda_eff())? })
}

/// T = ħν / (k_B ln(1 + 1/m)).
pub fn temperature_from_mean_phonons(m: f64, nu: f64) -> Result<f64, ThermoError> {
    if !(m.is_finite() && m > 0.0) {
        return Err(ThermoError::NonPositiveOccupation(m));
    }
    positive("nu", nu)?;
    Ok(HBAR * nu / (K_B * (1.0 / m).ln_1p()))
}

/// Mean energy ħν(m + ½) of one oscillator at temperature `t` (t = 0 gives
/// the zero-point energy).
pub fn oscillator_energy(temperature: f64, nu: f64) -> Result<f64, ThermoError> {
    positive("nu", nu)?;
    if temperature == 0.0 {
        return Ok(0.5 * HBAR * nu);
    }
    let p = ThermalParams::new(temperature, nu)?;
    let lambda = p.lambda();
    let m = if lambda < LAMBDA_MIN { K_B * temperature / (HBAR * nu) - 0.5 } else { bose_einstein(lambda)? };
    Ok(HBAR * nu * (m + 0.5))
}

/// Inverse of [`oscillator_energy`]; energies at or below the zero point
/// map to T = 0.
pub fn oscillator_temperature(energy: f64, nu: f64) -> Result<f64, ThermoError> {
    positive("nu", nu)?;
    let m = energy / (HBAR * nu) - 0.5;
    if m <= 0.0 {
        return Ok(0.0);
    }
    temperature_from_mean_phonons(m, nu)
}
