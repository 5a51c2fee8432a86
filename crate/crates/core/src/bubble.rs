//! Collapsed bubbles as optical cavities.
//!
//! A bubble of minimum diameter d supports the ladder ω_cav = jπc/d,
//! j = 1, 2, …, i.e. wavelengths 2d/j. An ensemble of slightly different
//! bubbles turns each j into a narrow band. A laser at ω_L cools a bubble
//! when Δ_cav = ω_cav − ω_L is positive, resonantly so when Δ_cav ∼ ν_max
//! and ν_max ≥ κ.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::constants::SPEED_OF_LIGHT;
use crate::rate::comparable;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BubbleError {
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("mode index must be at least 1, got {0}")]
    InvalidModeIndex(u32),
    #[error("ensemble contains no bubbles")]
    EmptyEnsemble,
}

fn invalid(name: &'static str, reason: impl Into<String>) -> BubbleError {
    BubbleError::InvalidParameter { name, reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BubbleSpec {
    /// Minimum diameter at collapse, m.
    pub d_min: f64,
    /// Cavity decay rate, rad/s.
    pub kappa: f64,
    /// Peak phonon frequency at collapse, rad/s.
    pub nu_max: f64,
}

impl BubbleSpec {
    pub fn new(d_min: f64, kappa: f64, nu_max: f64) -> Result<Self, BubbleError> {
        if !(d_min.is_finite() && d_min > 0.0) {
            return Err(invalid("d_min", format!("must be positive, got {d_min}")));
        }
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(invalid("kappa", format!("must be non-negative, got {kappa}")));
        }
        if !(nu_max.is_finite() && nu_max > 0.0) {
            return Err(invalid("nu_max", format!("must be positive, got {nu_max}")));
        }
        Ok(Self { d_min, kappa, nu_max })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubbleEnsemble {
    bubbles: Vec<BubbleSpec>,
    pub laser_frequency: f64,
    mode_index: u32,
    pub speed_of_light: f64,
    /// Divides the vacuum speed of light; 1 by default.
    pub refractive_index: f64,
}

impl BubbleEnsemble {
    pub fn new(bubbles: Vec<BubbleSpec>, laser_frequency: f64, mode_index: u32) -> Result<Self, BubbleError> {
        if bubbles.is_empty() {
            return Err(BubbleError::EmptyEnsemble);
        }
        if mode_index < 1 {
            return Err(BubbleError::InvalidModeIndex(mode_index));
        }
        if !(laser_frequency.is_finite() && laser_frequency >= 0.0) {
            return Err(invalid("laser_frequency", format!("must be non-negative, got {laser_frequency}")));
        }
        Ok(Self { bubbles, laser_frequency, mode_index, speed_of_light: SPEED_OF_LIGHT, refractive_index: 1.0 })
    }

    pub fn with_refractive_index(mut self, n: f64) -> Result<Self, BubbleError> {
        if !(n.is_finite() && n > 0.0) {
            return Err(invalid("refractive_index", format!("must be positive, got {n}")));
        }
        self.refractive_index = n;
        Ok(self)
    }

    pub fn bubbles(&self) -> &[BubbleSpec] {
        &self.bubbles
    }

    pub fn mode_index(&self) -> u32 {
        self.mode_index
    }

    fn light_speed(&self) -> f64 {
        self.speed_of_light / self.refractive_index
    }
}

fn mode_frequency(d_min: f64, j: u32, c: f64) -> f64 {
    j as f64 * PI * c / d_min
}

/// ω_cav = jπc/d_min with the vacuum speed of light.
pub fn cavity_frequency(b: &BubbleSpec, j: u32) -> Result<f64, BubbleError> {
    if j < 1 {
        return Err(BubbleError::InvalidModeIndex(j));
    }
    Ok(mode_frequency(b.d_min, j, SPEED_OF_LIGHT))
}

/// λ_cav = 2d_min/j.
pub fn cavity_wavelength(b: &BubbleSpec, j: u32) -> Result<f64, BubbleError> {
    if j < 1 {
        return Err(BubbleError::InvalidModeIndex(j));
    }
    Ok(2.0 * b.d_min / j as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn overlaps(&self, other: &Band) -> bool {
        self.min <= other.max && other.min <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyBand {
    pub mode_index: u32,
    pub band: Band,
    /// Band of mode j − 1 (absent for j = 1).
    pub lower_neighbour: Option<Band>,
    pub upper_neighbour: Band,
    /// Gap to the nearest neighbouring band; negative when they overlap.
    pub separation: f64,
}

impl FrequencyBand {
    pub fn isolated(&self) -> bool {
        !self.lower_neighbour.is_some_and(|b| b.overlaps(&self.band)) && !self.upper_neighbour.overlaps(&self.band)
    }
}

fn band_for(e: &BubbleEnsemble, j: u32) -> Band {
    let c = e.light_speed();
    let (min, max) = e.bubbles.iter().map(|b| mode_frequency(b.d_min, j, c)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| (lo.min(w), hi.max(w)));
    Band { min, max }
}

/// Extremes of ω_cav over the ensemble at its mode index, plus the
/// neighbouring bands j ± 1.
pub fn frequency_band(e: &BubbleEnsemble) -> FrequencyBand {
    let j = e.mode_index;
    let band = band_for(e, j);
    let upper = band_for(e, j + 1);
    let lower = (j > 1).then(|| band_for(e, j - 1));
    let mut separation = upper.min - band.max;
    if let Some(lo) = lower {
        separation = separation.min(band.min - lo.max);
    }
    FrequencyBand { mode_index: j, band, lower_neighbour: lower, upper_neighbour: upper, separation }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BubbleLabel {
    ResonantCooling,
    OffResonantCooling,
    HeatingRisk,
}

impl BubbleLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            BubbleLabel::ResonantCooling => "RESONANT_COOLING",
            BubbleLabel::OffResonantCooling => "OFF_RESONANT_COOLING",
            BubbleLabel::HeatingRisk => "HEATING_RISK",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BubbleReport {
    pub d_min: f64,
    pub mode_index: u32,
    pub omega_cav: f64,
    pub lambda_cav: f64,
    /// ω_cav − ω_L.
    pub delta_cav: f64,
    pub label: BubbleLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub bubbles: Vec<BubbleReport>,
    /// True iff every bubble sees the laser strictly below its cavity mode.
    pub safe: bool,
    pub tolerance_band: f64,
}

impl ClassificationReport {
    pub fn count(&self, label: BubbleLabel) -> usize {
        self.bubbles.iter().filter(|b| b.label == label).count()
    }
}

/// Labels each bubble by the sign and size of Δ_cav = ω_cav − ω_L.
pub fn classify_bubbles(e: &BubbleEnsemble, band_tolerance: f64) -> ClassificationReport {
    let band = if band_tolerance.is_finite() && band_tolerance > 0.0 { band_tolerance } else { crate::rate::DEFAULT_TOLERANCE_BAND };
    let j = e.mode_index;
    let c = e.light_speed();
    let bubbles: Vec<BubbleReport> = e
        .bubbles
        .iter()
        .map(|b| {
            let omega_cav = mode_frequency(b.d_min, j, c);
            let delta_cav = omega_cav - e.laser_frequency;
            let label = if delta_cav <= 0.0 {
                BubbleLabel::HeatingRisk
            } else if comparable(delta_cav, b.nu_max, band) && b.nu_max >= b.kappa {
                BubbleLabel::ResonantCooling
            } else {
                BubbleLabel::OffResonantCooling
            };
            BubbleReport { d_min: b.d_min, mode_index: j, omega_cav, lambda_cav: 2.0 * b.d_min / j as f64, delta_cav, label }
        })
        .collect();
    let safe = bubbles.iter().all(|b| b.label != BubbleLabel::HeatingRisk);
    ClassificationReport { bubbles, safe, tolerance_band: band }
}

/// `count` diameters drawn uniformly from [mean − spread/2, mean + spread/2]
/// with a seeded generator.
pub fn sample_diameters(mean: f64, spread: f64, count: usize, seed: u64) -> Result<Vec<f64>, BubbleError> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(invalid("diameter_mean", format!("must be positive, got {mean}")));
    }
    if !(spread.is_finite() && spread >= 0.0 && spread < 2.0 * mean) {
        return Err(invalid("diameter_spread", format!("must lie in [0, 2·mean), got {spread}")));
    }
    if count == 0 {
        return Err(BubbleError::EmptyEnsemble);
    }
    if spread == 0.0 {
        return Ok(vec![mean; count]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = mean - 0.5 * spread;
    Ok((0..count).map(|_| lo + spread * rng.gen::<f64>()).collect())
}
