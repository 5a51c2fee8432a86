//! Truncated Fock-space operator algebra and an exact Lindblad integrator.
//!
//! The composite space is ordered atom ⊗ phonon ⊗ photon, with the atomic
//! factor spanned by {|g⟩, |e⟩} (index 0 and 1). Every frequency is angular;
//! ħ never appears here, so Hamiltonians are stored as frequencies.
//!
//! This layer is the brute-force reference for every approximate model in
//! the crate.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::integrator::{Dopri5, StepFailure};

/// Default phonon cutoff (states |0⟩…|20⟩).
pub const DEFAULT_PHONON_CUTOFF: usize = 20;
/// Default photon cutoff (states |0⟩…|10⟩).
pub const DEFAULT_PHOTON_CUTOFF: usize = 10;
/// Maximum population tolerated in the highest retained Fock level.
pub const TRUNCATION_TAIL_LIMIT: f64 = 1e-6;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FockError {
    #[error("invalid Fock space: {0}")]
    InvalidSpace(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("operators act on different Fock spaces")]
    SpaceMismatch,
    #[error("parameter `{0}` must be finite")]
    NonFinite(&'static str),
    #[error("rate `{name}` must be non-negative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("the space has no {0} subsystem")]
    MissingSubsystem(&'static str),
    #[error("the atom-phonon model does not accept a photon subsystem")]
    UnexpectedPhotonSubsystem,
    #[error("hamiltonian is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),
    #[error("invalid observation schedule: {0}")]
    InvalidSchedule(String),
    #[error("truncation overflow at t = {time:e}: {subsystem} top-level population {population:e} exceeds {limit:e}")]
    TruncationOverflow { time: f64, subsystem: Subsystem, population: f64, limit: f64 },
    #[error("integration failed: {0}")]
    Step(#[from] StepFailure),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    Atom,
    Phonon,
    Photon,
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subsystem::Atom => "atom",
            Subsystem::Phonon => "phonon",
            Subsystem::Photon => "photon",
        })
    }
}

/// Truncated tensor-product space atom ⊗ phonon ⊗ (photon).
///
/// `atom_levels` is 2 for {|g⟩, |e⟩}; the phonon–photon model may drop the
/// atomic factor (`atom_levels == 1`) because the atom stays in |g⟩ there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    atom_levels: usize,
    phonon_cutoff: usize,
    photon_cutoff: Option<usize>,
}

impl FockSpace {
    pub fn new(atom_levels: usize, phonon_cutoff: usize, photon_cutoff: Option<usize>) -> Result<Self, FockError> {
        if atom_levels != 1 && atom_levels != 2 {
            return Err(FockError::InvalidSpace(format!("atom_levels must be 2 (or 1 without an atom), got {atom_levels}")));
        }
        if phonon_cutoff < 1 {
            return Err(FockError::InvalidSpace("phonon_cutoff must be at least 1".into()));
        }
        match photon_cutoff {
            Some(0) => return Err(FockError::InvalidSpace("photon_cutoff must be at least 1".into())),
            None if atom_levels == 1 => {
                return Err(FockError::InvalidSpace("a space without atom needs a photon subsystem".into()))
            }
            _ => {}
        }
        Ok(Self { atom_levels, phonon_cutoff, photon_cutoff })
    }

    /// |x, m⟩ with x ∈ {g, e}.
    pub fn atom_phonon(phonon_cutoff: usize) -> Result<Self, FockError> {
        Self::new(2, phonon_cutoff, None)
    }

    /// |x, m, n⟩.
    pub fn atom_phonon_photon(phonon_cutoff: usize, photon_cutoff: usize) -> Result<Self, FockError> {
        Self::new(2, phonon_cutoff, Some(photon_cutoff))
    }

    /// |m, n⟩ with the atom traced out (held in |g⟩).
    pub fn phonon_photon(phonon_cutoff: usize, photon_cutoff: usize) -> Result<Self, FockError> {
        Self::new(1, phonon_cutoff, Some(photon_cutoff))
    }

    pub fn atom_levels(&self) -> usize {
        self.atom_levels
    }

    pub fn phonon_cutoff(&self) -> usize {
        self.phonon_cutoff
    }

    pub fn photon_cutoff(&self) -> Option<usize> {
        self.photon_cutoff
    }

    pub fn has_atom(&self) -> bool {
        self.atom_levels == 2
    }

    pub fn has_photon(&self) -> bool {
        self.photon_cutoff.is_some()
    }

    fn photon_levels(&self) -> usize {
        self.photon_cutoff.map_or(1, |p| p + 1)
    }

    pub fn dim(&self) -> usize {
        self.atom_levels * (self.phonon_cutoff + 1) * self.photon_levels()
    }

    /// Flat basis index of |atom, phonon, photon⟩; `atom` and `photon` must
    /// be 0 when the corresponding factor is absent.
    pub fn index(&self, atom: usize, phonon: usize, photon: usize) -> usize {
        debug_assert!(atom < self.atom_levels && phonon <= self.phonon_cutoff && photon < self.photon_levels());
        (atom * (self.phonon_cutoff + 1) + phonon) * self.photon_levels() + photon
    }

    /// Inverse of [`FockSpace::index`].
    pub fn labels(&self, index: usize) -> (usize, usize, usize) {
        let np = self.photon_levels();
        let photon = index % np;
        let rest = index / np;
        (rest / (self.phonon_cutoff + 1), rest % (self.phonon_cutoff + 1), photon)
    }
}

/// Dense complex operator on a [`FockSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    space: FockSpace,
    entries: DMatrix<Complex64>,
}

impl OperatorMatrix {
    pub fn from_matrix(space: FockSpace, entries: DMatrix<Complex64>) -> Result<Self, FockError> {
        let d = space.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(FockError::DimensionMismatch { expected: d, found: entries.nrows().max(entries.ncols()) });
        }
        Ok(Self { space, entries })
    }

    pub fn zeros(space: FockSpace) -> Self {
        let d = space.dim();
        Self { space, entries: DMatrix::zeros(d, d) }
    }

    pub fn identity(space: FockSpace) -> Self {
        let d = space.dim();
        Self { space, entries: DMatrix::identity(d, d) }
    }

    /// Builds an operator from its action on basis labels: `f(atom, m, n)`
    /// returns the image label and amplitude, or `None` for zero.
    fn from_basis_map<F>(space: FockSpace, f: F) -> Self
    where
        F: Fn(usize, usize, usize) -> Option<((usize, usize, usize), f64)>,
    {
        let d = space.dim();
        let mut entries = DMatrix::zeros(d, d);
        for col in 0..d {
            let (a, m, n) = space.labels(col);
            if let Some(((a2, m2, n2), amp)) = f(a, m, n) {
                entries[(space.index(a2, m2, n2), col)] = Complex64::new(amp, 0.0);
            }
        }
        Self { space, entries }
    }

    /// Phonon annihilation b, ⟨m−1|b|m⟩ = √m.
    pub fn phonon_annihilation(space: FockSpace) -> Self {
        Self::from_basis_map(space, |a, m, n| (m > 0).then(|| ((a, m - 1, n), (m as f64).sqrt())))
    }

    /// Phonon creation b†, ⟨m+1|b†|m⟩ = √(m+1) below the cutoff.
    pub fn phonon_creation(space: FockSpace) -> Self {
        let top = space.phonon_cutoff;
        Self::from_basis_map(space, |a, m, n| (m < top).then(|| ((a, m + 1, n), ((m + 1) as f64).sqrt())))
    }

    /// Photon annihilation c.
    pub fn photon_annihilation(space: FockSpace) -> Result<Self, FockError> {
        if !space.has_photon() {
            return Err(FockError::MissingSubsystem("photon"));
        }
        Ok(Self::from_basis_map(space, |a, m, n| (n > 0).then(|| ((a, m, n - 1), (n as f64).sqrt()))))
    }

    /// Photon creation c†.
    pub fn photon_creation(space: FockSpace) -> Result<Self, FockError> {
        let top = space.photon_cutoff.ok_or(FockError::MissingSubsystem("photon"))?;
        Ok(Self::from_basis_map(space, |a, m, n| (n < top).then(|| ((a, m, n + 1), ((n + 1) as f64).sqrt()))))
    }

    /// σ⁻ = |g⟩⟨e|.
    pub fn sigma_minus(space: FockSpace) -> Result<Self, FockError> {
        if !space.has_atom() {
            return Err(FockError::MissingSubsystem("atom"));
        }
        Ok(Self::from_basis_map(space, |a, m, n| (a == 1).then_some(((0, m, n), 1.0))))
    }

    /// σ⁺ = |e⟩⟨g|.
    pub fn sigma_plus(space: FockSpace) -> Result<Self, FockError> {
        if !space.has_atom() {
            return Err(FockError::MissingSubsystem("atom"));
        }
        Ok(Self::from_basis_map(space, |a, m, n| (a == 0).then_some(((1, m, n), 1.0))))
    }

    /// b†b.
    pub fn phonon_number(space: FockSpace) -> Self {
        Self::from_basis_map(space, |a, m, n| (m > 0).then(|| ((a, m, n), m as f64)))
    }

    /// c†c.
    pub fn photon_number(space: FockSpace) -> Result<Self, FockError> {
        if !space.has_photon() {
            return Err(FockError::MissingSubsystem("photon"));
        }
        Ok(Self::from_basis_map(space, |a, m, n| (n > 0).then(|| ((a, m, n), n as f64))))
    }

    /// σ⁺σ⁻ = |e⟩⟨e|.
    pub fn excited_projector(space: FockSpace) -> Result<Self, FockError> {
        if !space.has_atom() {
            return Err(FockError::MissingSubsystem("atom"));
        }
        Ok(Self::from_basis_map(space, |a, m, n| (a == 1).then_some(((a, m, n), 1.0))))
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self { space: self.space, entries: self.entries.adjoint() }
    }

    fn same_space(&self, other: &Self) -> Result<(), FockError> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(FockError::SpaceMismatch)
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self, FockError> {
        self.same_space(other)?;
        Ok(Self { space: self.space, entries: &self.entries * &other.entries })
    }

    pub fn add(&self, other: &Self) -> Result<Self, FockError> {
        self.same_space(other)?;
        Ok(Self { space: self.space, entries: &self.entries + &other.entries })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FockError> {
        self.same_space(other)?;
        Ok(Self { space: self.space, entries: &self.entries - &other.entries })
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self { space: self.space, entries: &self.entries * factor }
    }

    /// [A, B] = AB − BA.
    pub fn commutator(&self, other: &Self) -> Result<Self, FockError> {
        Ok(self.mul(other)?.sub(&other.mul(self)?)?)
    }

    /// max |A − A†| over entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.entries)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    fn nonzeros(&self) -> Vec<(usize, usize, Complex64)> {
        sparse_entries(&self.entries)
    }
}

fn max_hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..d {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn sparse_entries(m: &DMatrix<Complex64>) -> Vec<(usize, usize, Complex64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != ZERO {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// Quantum state on a [`FockSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: FockSpace,
    entries: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity at the module
    /// tolerances.
    pub fn new(space: FockSpace, entries: DMatrix<Complex64>) -> Result<Self, FockError> {
        let rho = Self::from_raw(space, entries)?;
        let herm = rho.hermiticity_deviation();
        if herm > HERMITIAN_TOL {
            return Err(FockError::InvalidDensityMatrix(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = rho.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(FockError::InvalidDensityMatrix(format!("trace {tr} differs from 1")));
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(FockError::InvalidDensityMatrix(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(rho)
    }

    /// Shape check only.
    fn from_raw(space: FockSpace, entries: DMatrix<Complex64>) -> Result<Self, FockError> {
        let d = space.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(FockError::DimensionMismatch { expected: d, found: entries.nrows().max(entries.ncols()) });
        }
        if entries.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(FockError::NonFinite("density matrix"));
        }
        Ok(Self { space, entries })
    }

    /// Pure state |ψ⟩⟨ψ| from an (unnormalised) amplitude vector.
    pub fn pure(space: FockSpace, amplitudes: &[Complex64]) -> Result<Self, FockError> {
        let d = space.dim();
        if amplitudes.len() != d {
            return Err(FockError::DimensionMismatch { expected: d, found: amplitudes.len() });
        }
        let norm2: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm2 > 0.0 && norm2.is_finite()) {
            return Err(FockError::InvalidDensityMatrix("zero or non-finite state vector".into()));
        }
        let entries = DMatrix::from_fn(d, d, |i, j| amplitudes[i] * amplitudes[j].conj() / norm2);
        Self::new(space, entries)
    }

    /// Basis state |atom, phonons, photons⟩⟨…|.
    pub fn basis(space: FockSpace, atom: usize, phonons: usize, photons: usize) -> Result<Self, FockError> {
        if atom >= space.atom_levels {
            return Err(FockError::InvalidDensityMatrix(format!("atom level {atom} outside space")));
        }
        if phonons > space.phonon_cutoff {
            return Err(FockError::InvalidDensityMatrix(format!("{phonons} phonons exceed cutoff {}", space.phonon_cutoff)));
        }
        if photons >= space.photon_levels() {
            return Err(FockError::InvalidDensityMatrix(format!("{photons} photons outside space")));
        }
        let d = space.dim();
        let mut entries = DMatrix::zeros(d, d);
        let k = space.index(atom, phonons, photons);
        entries[(k, k)] = ONE;
        Ok(Self { space, entries })
    }

    /// Atom in |g⟩, photon vacuum, phonon mode in the thermal state
    /// ∝ e^{−λ b†b}, truncated and renormalised at the cutoff.
    pub fn thermal_phonons(space: FockSpace, lambda: f64) -> Result<Self, FockError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(FockError::InvalidDensityMatrix(format!("thermal state needs λ > 0, got {lambda}")));
        }
        let weights: Vec<f64> = (0..=space.phonon_cutoff).map(|m| (-lambda * m as f64).exp()).collect();
        let total: f64 = weights.iter().sum();
        let d = space.dim();
        let mut entries = DMatrix::zeros(d, d);
        for (m, w) in weights.iter().enumerate() {
            let k = space.index(0, m, 0);
            entries[(k, k)] = Complex64::new(w / total, 0.0);
        }
        Ok(Self { space, entries })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        max_hermitian_deviation(&self.entries)
    }

    /// Smallest eigenvalue of the Hermitian part (ρ + ρ†)/2.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.entries + self.entries.adjoint()) * Complex64::new(0.5, 0.0);
        sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Population of `level` in the phonon or photon factor.
    pub fn level_population(&self, subsystem: Subsystem, level: usize) -> f64 {
        let d = self.space.dim();
        (0..d)
            .filter(|&k| {
                let (a, m, n) = self.space.labels(k);
                match subsystem {
                    Subsystem::Atom => a == level,
                    Subsystem::Phonon => m == level,
                    Subsystem::Photon => n == level,
                }
            })
            .map(|k| self.entries[(k, k)].re)
            .sum()
    }

    /// Largest population found in the highest retained phonon or photon
    /// level, with the subsystem it belongs to.
    pub fn truncation_tail(&self) -> (Subsystem, f64) {
        let phonon = self.level_population(Subsystem::Phonon, self.space.phonon_cutoff);
        match self.space.photon_cutoff {
            Some(p) => {
                let photon = self.level_population(Subsystem::Photon, p);
                if photon > phonon {
                    (Subsystem::Photon, photon)
                } else {
                    (Subsystem::Phonon, phonon)
                }
            }
            None => (Subsystem::Phonon, phonon),
        }
    }
}

/// Tr(op · ρ).
pub fn expectation(op: &OperatorMatrix, rho: &DensityMatrix) -> Result<Complex64, FockError> {
    if op.space != rho.space {
        return Err(FockError::SpaceMismatch);
    }
    let a = &op.entries;
    let r = &rho.entries;
    let d = a.nrows();
    let mut acc = ZERO;
    for j in 0..d {
        for i in 0..d {
            acc += a[(i, j)] * r[(j, i)];
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseTerm {
    pub operator: OperatorMatrix,
    pub rate: f64,
}

/// Hamiltonian (as a frequency) plus weighted collapse operators.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    hamiltonian: OperatorMatrix,
    collapse_terms: Vec<CollapseTerm>,
}

impl LindbladModel {
    pub fn new(hamiltonian: OperatorMatrix, collapse_terms: Vec<CollapseTerm>) -> Result<Self, FockError> {
        let dev = hamiltonian.hermiticity_deviation();
        if dev > HERMITIAN_TOL {
            return Err(FockError::NotHermitian(dev));
        }
        for term in &collapse_terms {
            if term.operator.space != hamiltonian.space {
                return Err(FockError::SpaceMismatch);
            }
            if !term.rate.is_finite() {
                return Err(FockError::NonFinite("rate"));
            }
            if term.rate < 0.0 {
                return Err(FockError::NegativeRate { name: "rate", value: term.rate });
            }
        }
        Ok(Self { hamiltonian, collapse_terms })
    }

    pub fn space(&self) -> &FockSpace {
        &self.hamiltonian.space
    }

    pub fn hamiltonian(&self) -> &OperatorMatrix {
        &self.hamiltonian
    }

    pub fn collapse_terms(&self) -> &[CollapseTerm] {
        &self.collapse_terms
    }
}

/// H = g(σ⁻b† + σ⁺b) with spontaneous emission (σ⁻, Γ).
pub fn build_atom_phonon_model(g: f64, gamma: f64, space: FockSpace) -> Result<LindbladModel, FockError> {
    if !g.is_finite() {
        return Err(FockError::NonFinite("g"));
    }
    if !gamma.is_finite() {
        return Err(FockError::NonFinite("gamma"));
    }
    if gamma < 0.0 {
        return Err(FockError::NegativeRate { name: "gamma", value: gamma });
    }
    if space.has_photon() {
        return Err(FockError::UnexpectedPhotonSubsystem);
    }
    let sm = OperatorMatrix::sigma_minus(space)?;
    let sp = OperatorMatrix::sigma_plus(space)?;
    let b = OperatorMatrix::phonon_annihilation(space);
    let bd = OperatorMatrix::phonon_creation(space);
    let h = sm.mul(&bd)?.add(&sp.mul(&b)?)?.scale(Complex64::new(g, 0.0));
    LindbladModel::new(h, vec![CollapseTerm { operator: sm, rate: gamma }])
}

/// H = g_eff(b c† + b† c) with cavity leakage (c, κ).
pub fn build_phonon_photon_model(g_eff: f64, kappa: f64, space: FockSpace) -> Result<LindbladModel, FockError> {
    if !g_eff.is_finite() {
        return Err(FockError::NonFinite("g_eff"));
    }
    if !kappa.is_finite() {
        return Err(FockError::NonFinite("kappa"));
    }
    if kappa < 0.0 {
        return Err(FockError::NegativeRate { name: "kappa", value: kappa });
    }
    let c = OperatorMatrix::photon_annihilation(space)?;
    let cd = OperatorMatrix::photon_creation(space)?;
    let b = OperatorMatrix::phonon_annihilation(space);
    let bd = OperatorMatrix::phonon_creation(space);
    let h = b.mul(&cd)?.add(&bd.mul(&c)?)?.scale(Complex64::new(g_eff, 0.0));
    LindbladModel::new(h, vec![CollapseTerm { operator: c, rate: kappa }])
}

/// Snapshot of an evolving state.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub rho: DensityMatrix,
}

/// Observation grid 0, dt, 2dt, … ≤ t_final.
pub fn observation_times(t_final: f64, dt_observe: f64) -> Result<Vec<f64>, FockError> {
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(FockError::InvalidSchedule(format!("t_final must be positive, got {t_final}")));
    }
    if !(dt_observe.is_finite() && dt_observe > 0.0 && dt_observe <= t_final) {
        return Err(FockError::InvalidSchedule(format!("dt_observe must lie in (0, t_final], got {dt_observe}")));
    }
    let count = (t_final / dt_observe * (1.0 + 1e-12)).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * dt_observe).collect())
}

/// Solver settings and validity monitoring for [`evolve_with_options`].
#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub solver: Dopri5,
    /// Largest tolerated population in the highest phonon or photon level;
    /// `f64::INFINITY` disables the monitor (only for blocks known to be
    /// closed under the dynamics).
    pub truncation_limit: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { solver: Dopri5::from_env(), truncation_limit: TRUNCATION_TAIL_LIMIT }
    }
}

impl EvolveOptions {
    pub fn with_solver(solver: Dopri5) -> Self {
        Self { solver, ..Self::default() }
    }
}

/// Integrates the master equation and returns snapshots at multiples of
/// `dt_observe` (including t = 0).
pub fn evolve(model: &LindbladModel, rho0: &DensityMatrix, t_final: f64, dt_observe: f64) -> Result<Vec<Snapshot>, FockError> {
    evolve_with_options(model, rho0, t_final, dt_observe, &EvolveOptions::default())
}

pub fn evolve_with_options(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_final: f64,
    dt_observe: f64,
    options: &EvolveOptions,
) -> Result<Vec<Snapshot>, FockError> {
    let times = observation_times(t_final, dt_observe)?;
    let mut out = Vec::with_capacity(times.len());
    evolve_observed(model, rho0, &times, options, |time, rho| {
        out.push(Snapshot { time, rho: rho.clone() });
        Ok(())
    })?;
    Ok(out)
}

/// Streams each snapshot to `observe` instead of collecting them; useful
/// when only a few moments are needed from a large space.
pub fn evolve_observed<F>(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    times: &[f64],
    options: &EvolveOptions,
    mut observe: F,
) -> Result<(), FockError>
where
    F: FnMut(f64, &DensityMatrix) -> Result<(), FockError>,
{
    if rho0.space != *model.space() {
        return Err(FockError::SpaceMismatch);
    }
    let space = rho0.space;
    let d = space.dim();
    let kernel = Liouvillian::new(model);
    let y0: Vec<Complex64> = rho0.entries.as_slice().to_vec();
    let mut scratch = KernelScratch::new(d);
    let limit = options.truncation_limit;

    options.solver.integrate(
        |_, y: &[Complex64], dy: &mut [Complex64]| kernel.apply(y, dy, &mut scratch),
        0.0,
        &y0,
        times,
        |_, t, y: &[Complex64]| {
            let rho = DensityMatrix { space, entries: DMatrix::from_column_slice(d, d, y) };
            let (subsystem, population) = rho.truncation_tail();
            if population > limit {
                return Err(FockError::TruncationOverflow { time: t, subsystem, population, limit });
            }
            observe(t, &rho)
        },
    )
}

/// Sparse evaluation of dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ γ L ρ L†
/// with H_eff = H − (i/2) Σ γ L†L, on a column-major flat ρ.
struct Liouvillian {
    d: usize,
    h_eff: Vec<(usize, usize, Complex64)>,
    jumps: Vec<(f64, Vec<(usize, usize, Complex64)>)>,
}

struct KernelScratch {
    w: Vec<Complex64>,
    u: Vec<Complex64>,
}

impl KernelScratch {
    fn new(d: usize) -> Self {
        Self { w: vec![ZERO; d * d], u: vec![ZERO; d * d] }
    }
}

impl Liouvillian {
    fn new(model: &LindbladModel) -> Self {
        let mut h_eff = model.hamiltonian.entries.clone();
        let mut jumps = Vec::new();
        for term in &model.collapse_terms {
            if term.rate == 0.0 {
                continue;
            }
            let l = &term.operator.entries;
            h_eff -= (l.adjoint() * l) * Complex64::new(0.0, 0.5 * term.rate);
            jumps.push((term.rate, term.operator.nonzeros()));
        }
        Self { d: model.hamiltonian.dim(), h_eff: sparse_entries(&h_eff), jumps }
    }

    /// out += src · A† for sparse A (column operations).
    #[inline]
    fn add_right_adjoint(d: usize, src: &[Complex64], a: &[(usize, usize, Complex64)], out: &mut [Complex64]) {
        for &(r, c, v) in a {
            let vc = v.conj();
            let (src_col, out_col) = (&src[c * d..(c + 1) * d], &mut out[r * d..(r + 1) * d]);
            for (o, s) in out_col.iter_mut().zip(src_col) {
                *o += *s * vc;
            }
        }
    }

    fn apply(&self, rho: &[Complex64], drho: &mut [Complex64], scratch: &mut KernelScratch) {
        let d = self.d;
        let KernelScratch { w, u } = scratch;

        // W = ρ H_eff†, so H_eff ρ = W† for Hermitian ρ.
        w.fill(ZERO);
        Self::add_right_adjoint(d, rho, &self.h_eff, w);
        let minus_i = Complex64::new(0.0, -1.0);
        for j in 0..d {
            for i in 0..d {
                drho[i + d * j] = minus_i * (w[j + d * i].conj() - w[i + d * j]);
            }
        }

        for (rate, l) in &self.jumps {
            // V = ρ L†, U = V† = L ρ, then L ρ L† = U L†.
            w.fill(ZERO);
            Self::add_right_adjoint(d, rho, l, w);
            for j in 0..d {
                for i in 0..d {
                    u[i + d * j] = w[j + d * i].conj();
                }
            }
            w.fill(ZERO);
            Self::add_right_adjoint(d, u, l, w);
            for (o, t) in drho.iter_mut().zip(w.iter()) {
                *o += *t * *rate;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn dimensions() {
        assert_eq!(FockSpace::atom_phonon(5).unwrap().dim(), 12);
        assert_eq!(FockSpace::atom_phonon_photon(3, 2).unwrap().dim(), 2 * 4 * 3);
        assert_eq!(FockSpace::phonon_photon(15, 15).unwrap().dim(), 256);
    }

    #[test]
    fn invalid_spaces_rejected() {
        assert!(FockSpace::atom_phonon(0).is_err());
        assert!(FockSpace::atom_phonon_photon(3, 0).is_err());
        assert!(FockSpace::new(3, 3, None).is_err());
        assert!(FockSpace::new(1, 3, None).is_err());
    }

    #[test]
    fn index_labels_round_trip() {
        let s = FockSpace::atom_phonon_photon(4, 3).unwrap();
        for k in 0..s.dim() {
            let (a, m, n) = s.labels(k);
            assert_eq!(s.index(a, m, n), k);
        }
    }

    #[test]
    fn ladder_matrix_elements() {
        let s = FockSpace::atom_phonon(6).unwrap();
        let b = OperatorMatrix::phonon_annihilation(s);
        let bd = OperatorMatrix::phonon_creation(s);
        for a in 0..2 {
            for m in 1..=6 {
                let v = b.entries()[(s.index(a, m - 1, 0), s.index(a, m, 0))];
                assert!((v - c((m as f64).sqrt())).norm() < 1e-15);
            }
            for m in 0..6 {
                let v = bd.entries()[(s.index(a, m + 1, 0), s.index(a, m, 0))];
                assert!((v - c(((m + 1) as f64).sqrt())).norm() < 1e-15);
            }
        }
        assert_eq!(bd, b.adjoint());
    }

    #[test]
    fn bosonic_commutator_below_cutoff() {
        let s = FockSpace::phonon_photon(7, 4).unwrap();
        for (a, ad) in [
            (OperatorMatrix::phonon_annihilation(s), OperatorMatrix::phonon_creation(s)),
            (OperatorMatrix::photon_annihilation(s).unwrap(), OperatorMatrix::photon_creation(s).unwrap()),
        ] {
            let comm = a.commutator(&ad).unwrap();
            let is_phonon = a == OperatorMatrix::phonon_annihilation(s);
            for k in 0..s.dim() {
                let (_, m, n) = s.labels(k);
                let top = if is_phonon { m == 7 } else { n == 4 };
                if top {
                    continue;
                }
                for j in 0..s.dim() {
                    let want = if j == k { ONE } else { ZERO };
                    assert!((comm.entries()[(k, j)] - want).norm() < 1e-12, "row {k} col {j}");
                }
            }
        }
    }

    #[test]
    fn atomic_operators_need_atom() {
        let s = FockSpace::phonon_photon(3, 3).unwrap();
        assert!(matches!(OperatorMatrix::sigma_minus(s), Err(FockError::MissingSubsystem("atom"))));
        let s = FockSpace::atom_phonon(3).unwrap();
        assert!(matches!(OperatorMatrix::photon_annihilation(s), Err(FockError::MissingSubsystem("photon"))));
    }

    #[test]
    fn density_matrix_validation() {
        let s = FockSpace::atom_phonon(1).unwrap();
        let mut m = DMatrix::zeros(4, 4);
        m[(0, 0)] = c(0.5);
        assert!(DensityMatrix::new(s, m.clone()).is_err());
        m[(1, 1)] = c(0.5);
        assert!(DensityMatrix::new(s, m.clone()).is_ok());
        m[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(DensityMatrix::new(s, m.clone()).is_err(), "non-Hermitian accepted");
        m[(1, 0)] = Complex64::new(0.0, -0.1);
        assert!(DensityMatrix::new(s, m.clone()).is_ok());
        m[(0, 1)] = c(0.9);
        m[(1, 0)] = c(0.9);
        assert!(DensityMatrix::new(s, m).is_err(), "negative eigenvalue accepted");
    }

    #[test]
    fn expectation_examples() {
        let s = FockSpace::atom_phonon(60).unwrap();
        let rho = DensityMatrix::thermal_phonons(s, std::f64::consts::LN_2).unwrap();
        let id = OperatorMatrix::identity(s);
        assert!((expectation(&id, &rho).unwrap() - ONE).norm() < 1e-12);
        let n = OperatorMatrix::phonon_number(s);
        let m = expectation(&n, &rho).unwrap();
        assert!((m.re - 1.0).abs() < 1e-12 && m.im.abs() < 1e-10, "{m}");
        let pe = OperatorMatrix::excited_projector(s).unwrap();
        for k in 0..=5 {
            let g = DensityMatrix::basis(s, 0, k, 0).unwrap();
            assert_eq!(expectation(&pe, &g).unwrap(), ZERO);
        }
    }

    #[test]
    fn expectation_rejects_mismatched_space() {
        let s1 = FockSpace::atom_phonon(3).unwrap();
        let s2 = FockSpace::atom_phonon(4).unwrap();
        let rho = DensityMatrix::basis(s2, 0, 0, 0).unwrap();
        assert_eq!(expectation(&OperatorMatrix::identity(s1), &rho), Err(FockError::SpaceMismatch));
    }

    #[test]
    fn model_builders_validate_inputs() {
        let ap = FockSpace::atom_phonon(3).unwrap();
        let pp = FockSpace::phonon_photon(3, 3).unwrap();
        assert!(matches!(build_atom_phonon_model(f64::NAN, 1.0, ap), Err(FockError::NonFinite("g"))));
        assert!(matches!(build_atom_phonon_model(1.0, -1.0, ap), Err(FockError::NegativeRate { .. })));
        assert!(matches!(
            build_atom_phonon_model(1.0, 1.0, FockSpace::atom_phonon_photon(3, 2).unwrap()),
            Err(FockError::UnexpectedPhotonSubsystem)
        ));
        assert!(matches!(build_phonon_photon_model(1.0, 1.0, ap), Err(FockError::MissingSubsystem("photon"))));
        assert!(matches!(build_phonon_photon_model(1.0, -2.0, pp), Err(FockError::NegativeRate { name: "kappa", .. })));
        let m = build_phonon_photon_model(0.5, 2.0, pp).unwrap();
        assert!(m.hamiltonian().is_hermitian(1e-14));
        assert_eq!(m.collapse_terms().len(), 1);
    }

    #[test]
    fn null_dynamics_is_identity() {
        let s = FockSpace::atom_phonon(3).unwrap();
        let model = build_atom_phonon_model(0.0, 0.0, s).unwrap();
        let rho0 = DensityMatrix::thermal_phonons(s, 6.0).unwrap();
        let snaps = evolve(&model, &rho0, 5.0, 1.0).unwrap();
        assert_eq!(snaps.len(), 6);
        for snap in snaps {
            assert_eq!(snap.rho.entries(), rho0.entries());
        }
    }

    #[test]
    fn rabi_pair_oscillation() {
        // {|g,1⟩, |e,0⟩} is closed under H, so the M = 1 space is exact even
        // though |g,1⟩ sits in the top level; the tail monitor is disabled.
        let options = EvolveOptions { truncation_limit: f64::INFINITY, ..EvolveOptions::default() };
        let s = FockSpace::atom_phonon(1).unwrap();
        let model = build_atom_phonon_model(1.0, 0.0, s).unwrap();
        let rho0 = DensityMatrix::basis(s, 0, 1, 0).unwrap();
        let pe = OperatorMatrix::excited_projector(s).unwrap();
        for snap in evolve_with_options(&model, &rho0, 6.0, 0.25, &options).unwrap() {
            let p = expectation(&pe, &snap.rho).unwrap().re;
            assert!((p - snap.time.sin().powi(2)).abs() < 1e-8, "t={} p={p}", snap.time);
        }
        assert!(matches!(evolve(&model, &rho0, 1.0, 0.5), Err(FockError::TruncationOverflow { .. })));

        let s = FockSpace::atom_phonon(2).unwrap();
        let model = build_atom_phonon_model(1.0, 0.0, s).unwrap();
        let rho0 = DensityMatrix::basis(s, 0, 1, 0).unwrap();
        let pe = OperatorMatrix::excited_projector(s).unwrap();
        for snap in evolve(&model, &rho0, 6.0, 0.25).unwrap() {
            let p = expectation(&pe, &snap.rho).unwrap().re;
            assert!((p - snap.time.sin().powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn spontaneous_decay_is_exponential() {
        let s = FockSpace::atom_phonon(1).unwrap();
        let gamma = 0.7;
        let model = build_atom_phonon_model(0.0, gamma, s).unwrap();
        let rho0 = DensityMatrix::basis(s, 1, 0, 0).unwrap();
        let pe = OperatorMatrix::excited_projector(s).unwrap();
        for snap in evolve(&model, &rho0, 10.0, 0.5).unwrap() {
            let p = expectation(&pe, &snap.rho).unwrap().re;
            assert!((p - (-gamma * snap.time).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn truncation_overflow_detected() {
        let s = FockSpace::phonon_photon(3, 3).unwrap();
        let model = build_phonon_photon_model(0.5, 1.0, s).unwrap();
        let rho0 = DensityMatrix::basis(s, 0, 3, 0).unwrap();
        let err = evolve(&model, &rho0, 1.0, 0.5).unwrap_err();
        assert!(matches!(err, FockError::TruncationOverflow { subsystem: Subsystem::Phonon, .. }), "{err:?}");
    }

    #[test]
    fn observation_grid() {
        assert_eq!(observation_times(1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(observation_times(1.0, 0.3).unwrap().len(), 4);
        assert!(observation_times(1.0, 2.0).is_err());
        assert!(observation_times(0.0, 0.1).is_err());
    }
}
