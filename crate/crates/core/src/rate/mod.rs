//! Closed moment equations for laser cooling and the associated rate
//! formulas.
//!
//! Two moment systems are modelled:
//!
//! * single ion, (m, s, k₁) with k₁ = i⟨σ⁻b† − σ⁺b⟩:
//!   ṁ = −g k₁, ṡ = g k₁ − Γ s, k̇₁ = 2g(m − s) − 4g m s − ½Γ k₁
//!   (closed with ⟨σ⁺σ⁻ b†b⟩ ≈ m s);
//! * cavity mediated, (m, n, k₁) with k₁ = i⟨b c† − b† c⟩:
//!   ṁ = g k₁, ṅ = −g k₁ − κ n, k̇₁ = 2g(n − m) − ½κ k₁ (exact, linear).
//!
//! The two coherences follow different sign conventions, so they live on
//! distinct state types.
//!
//! Both systems run on the same [`Dopri5`] settings as the Lindblad oracle.

pub mod oracle;

use thiserror::Error;

use crate::integrator::{Dopri5, StepFailure};

/// Default relative band for "comparable" in the resonance conditions.
pub const DEFAULT_TOLERANCE_BAND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("parameter `{name}` is invalid: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("state is not finite")]
    NonFiniteState,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("cooling rate undefined: `{0}` is zero")]
    UndefinedRate(&'static str),
    #[error("at least one coupling is required")]
    EmptyCouplings,
    #[error("integration failed: {0}")]
    Step(#[from] StepFailure),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> RateError {
    RateError::InvalidParameter { name, reason: reason.into() }
}

fn non_negative(name: &'static str, v: f64) -> Result<f64, RateError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(invalid(name, format!("must be finite and ≥ 0, got {v}")))
    }
}

fn finite(name: &'static str, v: f64) -> Result<f64, RateError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(name, format!("must be finite, got {v}")))
    }
}

/// Parameters of a single laser-cooled ion. All frequencies angular.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleIonParams {
    pub g: f64,
    pub gamma: f64,
    pub nu: f64,
    delta: f64,
    omega0: Option<f64>,
    omega_l: Option<f64>,
}

impl SingleIonParams {
    /// Detuning given directly as Δ = ω₀ − ω_L.
    pub fn new(g: f64, gamma: f64, nu: f64, delta: f64) -> Result<Self, RateError> {
        let p = Self { g: non_negative("g", g)?, gamma: non_negative("gamma", gamma)?, nu, delta: finite("delta", delta)?, omega0: None, omega_l: None };
        if !(nu.is_finite() && nu > 0.0) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        Ok(p)
    }

    /// Detuning derived from the atomic and laser frequencies.
    pub fn from_frequencies(g: f64, gamma: f64, nu: f64, omega0: f64, omega_l: f64) -> Result<Self, RateError> {
        let mut p = Self::new(g, gamma, nu, finite("omega0", omega0)? - finite("omegaL", omega_l)?)?;
        p.omega0 = Some(omega0);
        p.omega_l = Some(omega_l);
        Ok(p)
    }

    /// Δ = ω₀ − ω_L.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn omega0(&self) -> Option<f64> {
        self.omega0
    }

    pub fn omega_l(&self) -> Option<f64> {
        self.omega_l
    }
}

/// Parameters of cavity-mediated cooling of one or more atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct CavityParams {
    pub g_eff: f64,
    pub kappa: f64,
    pub nu: f64,
    /// Δ_cav = ω_cav − ω_L; positive means the laser sits red of the cavity.
    pub delta_cav: f64,
    pub omega_cav: Option<f64>,
    n_atoms: usize,
    per_atom_couplings: Option<Vec<f64>>,
}

impl CavityParams {
    /// One atom with coupling `g_eff`.
    pub fn single(g_eff: f64, kappa: f64, nu: f64, delta_cav: f64) -> Result<Self, RateError> {
        Self::uniform(g_eff, kappa, nu, delta_cav, 1)
    }

    /// `n_atoms` atoms sharing the coupling `g_eff`.
    pub fn uniform(g_eff: f64, kappa: f64, nu: f64, delta_cav: f64, n_atoms: usize) -> Result<Self, RateError> {
        if n_atoms == 0 {
            return Err(invalid("n_atoms", "must be at least 1"));
        }
        if !(nu.is_finite() && nu > 0.0) {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        Ok(Self {
            g_eff: finite("g_eff", g_eff)?,
            kappa: non_negative("kappa", kappa)?,
            nu,
            delta_cav: finite("delta_cav", delta_cav)?,
            omega_cav: None,
            n_atoms,
            per_atom_couplings: None,
        })
    }

    /// Individually specified couplings g_eff^(i); `g_eff` is set to their
    /// mean magnitude for reporting.
    pub fn with_couplings(couplings: Vec<f64>, kappa: f64, nu: f64, delta_cav: f64) -> Result<Self, RateError> {
        if couplings.is_empty() {
            return Err(RateError::EmptyCouplings);
        }
        if couplings.iter().any(|g| !g.is_finite()) {
            return Err(invalid("per_atom_couplings", "entries must be finite"));
        }
        let mean = couplings.iter().map(|g| g.abs()).sum::<f64>() / couplings.len() as f64;
        let mut p = Self::uniform(mean, kappa, nu, delta_cav, couplings.len())?;
        p.per_atom_couplings = Some(couplings);
        Ok(p)
    }

    pub fn with_cavity_frequency(mut self, omega_cav: f64) -> Result<Self, RateError> {
        self.omega_cav = Some(finite("omega_cav", omega_cav)?);
        Ok(self)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn per_atom_couplings(&self) -> Option<&[f64]> {
        self.per_atom_couplings.as_deref()
    }

    fn is_uniform(&self) -> bool {
        match &self.per_atom_couplings {
            None => true,
            Some(gs) => gs.iter().all(|g| g.abs() == gs[0].abs()),
        }
    }

    /// Coupling of the collective mode B to the cavity: g̃_eff.
    pub fn collective_coupling(&self) -> f64 {
        match &self.per_atom_couplings {
            Some(gs) => root_sum_square(gs),
            None => (self.n_atoms as f64).sqrt() * self.g_eff.abs(),
        }
    }
}

/// (m, s, k₁) of the single-ion model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateStateAtom {
    pub m: f64,
    pub s: f64,
    pub k1: f64,
}

impl RateStateAtom {
    pub fn new(m: f64, s: f64, k1: f64) -> Self {
        Self { m, s, k1 }
    }

    fn to_array(self) -> [f64; 3] {
        [self.m, self.s, self.k1]
    }

    fn from_slice(y: &[f64]) -> Self {
        Self { m: y[0], s: y[1], k1: y[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.m.is_finite() && self.s.is_finite() && self.k1.is_finite()
    }

    /// Copy with m and s clipped into their physical ranges, for reporting.
    pub fn clipped(&self) -> Self {
        Self { m: self.m.max(0.0), s: self.s.clamp(0.0, 1.0), k1: self.k1 }
    }
}

/// (m, n, k₁) of the cavity-mediated model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateStateCavity {
    pub m: f64,
    pub n: f64,
    pub k1: f64,
}

impl RateStateCavity {
    pub fn new(m: f64, n: f64, k1: f64) -> Self {
        Self { m, n, k1 }
    }

    fn to_array(self) -> [f64; 3] {
        [self.m, self.n, self.k1]
    }

    fn from_slice(y: &[f64]) -> Self {
        Self { m: y[0], n: y[1], k1: y[2] }
    }

    pub fn is_finite(&self) -> bool {
        self.m.is_finite() && self.n.is_finite() && self.k1.is_finite()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { m: alpha * self.m, n: alpha * self.n, k1: alpha * self.k1 }
    }
}

fn single_ion_rhs(g: f64, gamma: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |_, y, dy| {
        let (m, s, k1) = (y[0], y[1], y[2]);
        dy[0] = -g * k1;
        dy[1] = g * k1 - gamma * s;
        dy[2] = 2.0 * g * (m - s) - 4.0 * g * m * s - 0.5 * gamma * k1;
    }
}

fn cavity_rhs(g: f64, kappa: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |_, y, dy| {
        let (m, n, k1) = (y[0], y[1], y[2]);
        dy[0] = g * k1;
        dy[1] = -g * k1 - kappa * n;
        dy[2] = 2.0 * g * (n - m) - 0.5 * kappa * k1;
    }
}

/// Matrix A of ẋ = A x for x = (m, n, k₁) in the cavity model.
pub fn cavity_system_matrix(g_eff: f64, kappa: f64) -> [[f64; 3]; 3] {
    [[0.0, 0.0, g_eff], [0.0, -kappa, -g_eff], [-2.0 * g_eff, 2.0 * g_eff, -0.5 * kappa]]
}

fn check_dt(dt: f64) -> Result<f64, RateError> {
    if dt.is_finite() && dt > 0.0 {
        Ok(dt)
    } else {
        Err(RateError::InvalidTimeStep(dt))
    }
}

fn check_times(times: &[f64]) -> Result<(), RateError> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times", "must be finite, non-negative and strictly increasing"));
    }
    Ok(())
}

/// Advances the single-ion moments by `dt`.
pub fn step_single_ion(state: RateStateAtom, p: &SingleIonParams, dt: f64) -> Result<RateStateAtom, RateError> {
    step_single_ion_with(state, p, dt, &Dopri5::from_env())
}

pub fn step_single_ion_with(state: RateStateAtom, p: &SingleIonParams, dt: f64, solver: &Dopri5) -> Result<RateStateAtom, RateError> {
    let dt = check_dt(dt)?;
    Ok(single_ion_trajectory_with(state, p, &[dt], solver)?[0])
}

/// Single-ion moments at each of `times` (measured from the initial state).
pub fn single_ion_trajectory(state: RateStateAtom, p: &SingleIonParams, times: &[f64]) -> Result<Vec<RateStateAtom>, RateError> {
    single_ion_trajectory_with(state, p, times, &Dopri5::from_env())
}

pub fn single_ion_trajectory_with(
    state: RateStateAtom,
    p: &SingleIonParams,
    times: &[f64],
    solver: &Dopri5,
) -> Result<Vec<RateStateAtom>, RateError> {
    if !state.is_finite() {
        return Err(RateError::NonFiniteState);
    }
    check_times(times)?;
    let out = solver.solve(single_ion_rhs(p.g, p.gamma), 0.0, &state.to_array(), times)?;
    Ok(out.iter().map(|y| RateStateAtom::from_slice(y)).collect())
}

/// Advances the cavity moments by `dt`. For several atoms the phonon
/// variable is the occupation of the collective mode B, coupled with g̃_eff.
pub fn step_cavity(state: RateStateCavity, p: &CavityParams, dt: f64) -> Result<RateStateCavity, RateError> {
    step_cavity_with(state, p, dt, &Dopri5::from_env())
}

pub fn step_cavity_with(state: RateStateCavity, p: &CavityParams, dt: f64, solver: &Dopri5) -> Result<RateStateCavity, RateError> {
    let dt = check_dt(dt)?;
    Ok(cavity_trajectory_with(state, p, &[dt], solver)?[0])
}

pub fn cavity_trajectory(state: RateStateCavity, p: &CavityParams, times: &[f64]) -> Result<Vec<RateStateCavity>, RateError> {
    cavity_trajectory_with(state, p, times, &Dopri5::from_env())
}

pub fn cavity_trajectory_with(
    state: RateStateCavity,
    p: &CavityParams,
    times: &[f64],
    solver: &Dopri5,
) -> Result<Vec<RateStateCavity>, RateError> {
    if !state.is_finite() {
        return Err(RateError::NonFiniteState);
    }
    check_times(times)?;
    let out = solver.solve(cavity_rhs(p.collective_coupling(), p.kappa), 0.0, &state.to_array(), times)?;
    Ok(out.iter().map(|y| RateStateCavity::from_slice(y)).collect())
}

/// γ = g²/Γ for standard single-ion laser cooling.
pub fn cooling_rate_single(p: &SingleIonParams) -> Result<f64, RateError> {
    if p.gamma == 0.0 {
        return Err(RateError::UndefinedRate("gamma"));
    }
    Ok(p.g * p.g / p.gamma)
}

/// γ = g_eff²/κ for one atom in a cavity.
pub fn cooling_rate_cavity(g_eff: f64, kappa: f64) -> Result<f64, RateError> {
    non_negative("kappa", kappa)?;
    if kappa == 0.0 {
        return Err(RateError::UndefinedRate("kappa"));
    }
    Ok(finite("g_eff", g_eff)?.powi(2) / kappa)
}

fn root_sum_square(values: &[f64]) -> f64 {
    // Scale by the largest entry to avoid overflow for extreme couplings.
    let scale = values.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * values.iter().map(|g| (g / scale).powi(2)).sum::<f64>().sqrt()
}

/// g̃_eff = (Σ |g_eff^(i)|²)^{1/2}.
pub fn collective_coupling(per_atom: &[f64]) -> Result<f64, RateError> {
    if per_atom.is_empty() {
        return Err(RateError::EmptyCouplings);
    }
    if per_atom.iter().any(|g| !g.is_finite()) {
        return Err(invalid("per_atom_couplings", "entries must be finite"));
    }
    Ok(root_sum_square(per_atom))
}

/// N g_eff²/κ for uniform couplings, g̃_eff²/κ otherwise.
pub fn cooling_rate_collective(p: &CavityParams) -> Result<f64, RateError> {
    if p.is_uniform() {
        let g = match p.per_atom_couplings() {
            Some(gs) => gs[0],
            None => p.g_eff,
        };
        Ok(p.n_atoms as f64 * cooling_rate_cavity(g, p.kappa)?)
    } else {
        cooling_rate_cavity(p.collective_coupling(), p.kappa)
    }
}

/// Least-squares decay constant of `values` ∝ e^{−γ t}, using samples with
/// positive values at or after `t_min`.
pub fn fitted_decay_rate(times: &[f64], values: &[f64], t_min: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= t_min && **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Which side of resonance the drive sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DetuningSide {
    /// Laser below resonance (positive detuning): cooling side.
    Red,
    /// Laser above resonance: heating side.
    Blue,
    Resonant,
}

impl DetuningSide {
    pub fn of(detuning: f64) -> Self {
        if detuning > 0.0 {
            DetuningSide::Red
        } else if detuning < 0.0 {
            DetuningSide::Blue
        } else {
            DetuningSide::Resonant
        }
    }

    pub fn is_heating_side(&self) -> bool {
        !matches!(self, DetuningSide::Red)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionCheck {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
    pub detuning: f64,
    pub side: DetuningSide,
    pub tolerance_band: f64,
    pub notes: Vec<String>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && !self.side.is_heating_side()
    }

    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Parameter sets that carry a resonance condition "detuning ∼ ν" and a
/// linewidth condition "ν ≥ decay".
pub trait CoolingConditions {
    fn detuning(&self) -> f64;
    fn phonon_frequency(&self) -> f64;
    fn decay_rate(&self) -> f64;
    fn detuning_label(&self) -> &'static str;
    fn decay_label(&self) -> &'static str;
}

impl CoolingConditions for SingleIonParams {
    fn detuning(&self) -> f64 {
        self.delta
    }
    fn phonon_frequency(&self) -> f64 {
        self.nu
    }
    fn decay_rate(&self) -> f64 {
        self.gamma
    }
    fn detuning_label(&self) -> &'static str {
        "delta ~ nu"
    }
    fn decay_label(&self) -> &'static str {
        "nu >= gamma"
    }
}

impl CoolingConditions for CavityParams {
    fn detuning(&self) -> f64 {
        self.delta_cav
    }
    fn phonon_frequency(&self) -> f64 {
        self.nu
    }
    fn decay_rate(&self) -> f64 {
        self.kappa
    }
    fn detuning_label(&self) -> &'static str {
        "delta_cav ~ nu"
    }
    fn decay_label(&self) -> &'static str {
        "nu >= kappa"
    }
}

/// "x ∼ y" read as |x/y − 1| ≤ band.
pub fn comparable(x: f64, y: f64, band: f64) -> bool {
    y != 0.0 && (x / y - 1.0).abs() <= band
}

/// Checks the resonance and linewidth conditions. Never fails: a
/// non-positive or non-finite band is replaced by the default and noted.
pub fn validate_cooling_conditions<P: CoolingConditions>(p: &P, tolerance_band: f64) -> ConditionReport {
    let mut notes = Vec::new();
    let band = if tolerance_band.is_finite() && tolerance_band > 0.0 {
        tolerance_band
    } else {
        notes.push(format!("tolerance band {tolerance_band} is not positive; using {DEFAULT_TOLERANCE_BAND}"));
        DEFAULT_TOLERANCE_BAND
    };
    let (delta, nu, decay) = (p.detuning(), p.phonon_frequency(), p.decay_rate());
    let side = DetuningSide::of(delta);
    if side.is_heating_side() {
        notes.push("drive is not red-detuned: heating side".to_string());
    }
    ConditionReport {
        checks: vec![
            ConditionCheck { name: p.detuning_label().into(), value: delta / nu, pass: comparable(delta, nu, band) },
            ConditionCheck { name: p.decay_label().into(), value: decay / nu, pass: nu >= decay },
        ],
        detuning: delta,
        side,
        tolerance_band: band,
        notes,
    }
}
