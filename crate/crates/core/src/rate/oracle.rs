//! Moment trajectories extracted from the exact Lindblad dynamics, for
//! side-by-side comparison with the closed rate equations.

use num_complex::Complex64;

use super::{CavityParams, RateStateAtom, RateStateCavity, SingleIonParams};
use crate::fock::{
    build_atom_phonon_model, build_phonon_photon_model, evolve_observed, expectation, DensityMatrix, EvolveOptions,
    FockError, FockSpace, OperatorMatrix,
};

/// Moments at each requested time plus the largest truncation tail seen.
#[derive(Debug, Clone)]
pub struct OracleTrajectory<S> {
    pub states: Vec<S>,
    pub max_tail: f64,
}

/// Single-ion moments from the atom–phonon master equation, starting in
/// the Fock state |x, m₀⟩ with x = e if `initial_excited`.
pub fn single_ion_moments(
    p: &SingleIonParams,
    initial_phonons: usize,
    initial_excited: bool,
    phonon_cutoff: usize,
    times: &[f64],
    options: &EvolveOptions,
) -> Result<OracleTrajectory<RateStateAtom>, FockError> {
    let space = FockSpace::atom_phonon(phonon_cutoff)?;
    let model = build_atom_phonon_model(p.g, p.gamma, space)?;
    let rho0 = DensityMatrix::basis(space, usize::from(initial_excited), initial_phonons, 0)?;

    let number = OperatorMatrix::phonon_number(space);
    let excited = OperatorMatrix::excited_projector(space)?;
    let sm = OperatorMatrix::sigma_minus(space)?;
    let sp = OperatorMatrix::sigma_plus(space)?;
    let bd = OperatorMatrix::phonon_creation(space);
    let b = OperatorMatrix::phonon_annihilation(space);
    // k₁ = i⟨σ⁻b† − σ⁺b⟩
    let coherence = sm.mul(&bd)?.sub(&sp.mul(&b)?)?.scale(Complex64::new(0.0, 1.0));

    let mut states = Vec::with_capacity(times.len());
    let mut max_tail: f64 = 0.0;
    evolve_observed(&model, &rho0, times, options, |_, rho| {
        max_tail = max_tail.max(rho.truncation_tail().1);
        states.push(RateStateAtom {
            m: expectation(&number, rho)?.re,
            s: expectation(&excited, rho)?.re,
            k1: expectation(&coherence, rho)?.re,
        });
        Ok(())
    })?;
    Ok(OracleTrajectory { states, max_tail })
}

/// Cavity moments from the phonon–photon master equation (collective mode
/// B when several atoms are present), starting in |m₀, n₀⟩.
pub fn cavity_moments(
    p: &CavityParams,
    initial_phonons: usize,
    initial_photons: usize,
    phonon_cutoff: usize,
    photon_cutoff: usize,
    times: &[f64],
    options: &EvolveOptions,
) -> Result<OracleTrajectory<RateStateCavity>, FockError> {
    let space = FockSpace::phonon_photon(phonon_cutoff, photon_cutoff)?;
    let model = build_phonon_photon_model(p.collective_coupling(), p.kappa, space)?;
    let rho0 = DensityMatrix::basis(space, 0, initial_phonons, initial_photons)?;

    let phonons = OperatorMatrix::phonon_number(space);
    let photons = OperatorMatrix::photon_number(space)?;
    let b = OperatorMatrix::phonon_annihilation(space);
    let bd = OperatorMatrix::phonon_creation(space);
    let c = OperatorMatrix::photon_annihilation(space)?;
    let cd = OperatorMatrix::photon_creation(space)?;
    // k₁ = i⟨b c† − b† c⟩
    let coherence = b.mul(&cd)?.sub(&bd.mul(&c)?)?.scale(Complex64::new(0.0, 1.0));

    let mut states = Vec::with_capacity(times.len());
    let mut max_tail: f64 = 0.0;
    evolve_observed(&model, &rho0, times, options, |_, rho| {
        max_tail = max_tail.max(rho.truncation_tail().1);
        states.push(RateStateCavity {
            m: expectation(&phonons, rho)?.re,
            n: expectation(&photons, rho)?.re,
            k1: expectation(&coherence, rho)?.re,
        });
        Ok(())
    })?;
    Ok(OracleTrajectory { states, max_tail })
}
