use nalgebra::Matrix3;
use num_complex::Complex64;
use proptest::prelude::*;

use phonox::fock::{
    build_atom_phonon_model, build_phonon_photon_model, evolve, expectation, DensityMatrix, FockError, FockSpace,
    OperatorMatrix, Snapshot, HERMITIAN_TOL, POSITIVITY_TOL, TRACE_TOL,
};
use phonox::rate::cavity_system_matrix;

fn assert_physical(snaps: &[Snapshot]) {
    for s in snaps {
        let rho = &s.rho;
        assert!((rho.trace() - 1.0).abs() < TRACE_TOL, "trace {} at t={}", rho.trace(), s.time);
        assert!(rho.hermiticity_deviation() < HERMITIAN_TOL, "hermiticity at t={}", s.time);
        assert!(rho.min_eigenvalue() > -POSITIVITY_TOL, "eigenvalue {} at t={}", rho.min_eigenvalue(), s.time);
    }
}

/// Linear-system oracle for (m, n, k₁).
fn exact_moments(g: f64, kappa: f64, m0: f64, n0: f64, t: f64) -> [f64; 3] {
    let a = Matrix3::from(cavity_system_matrix(g, kappa)).transpose();
    let x = (a * t).exp() * nalgebra::Vector3::new(m0, n0, 0.0);
    [x[0], x[1], x[2]]
}

#[test]
fn system_matrix_layout() {
    // row-major [[0,0,g],[0,−κ,−g],[−2g,2g,−κ/2]]
    let a = Matrix3::from(cavity_system_matrix(0.5, 2.0)).transpose();
    assert_eq!(a[(0, 2)], 0.5);
    assert_eq!(a[(1, 1)], -2.0);
    assert_eq!(a[(2, 0)], -1.0);
}

#[test]
fn phonon_photon_oracle_matches_exponential() {
    let space = FockSpace::phonon_photon(6, 6).unwrap();
    let model = build_phonon_photon_model(0.5, 2.0, space).unwrap();
    let rho0 = DensityMatrix::basis(space, 0, 1, 0).unwrap();
    let snaps = evolve(&model, &rho0, 4.0, 0.25).unwrap();
    assert_physical(&snaps);

    let m = OperatorMatrix::phonon_number(space);
    let n = OperatorMatrix::photon_number(space).unwrap();
    let b = OperatorMatrix::phonon_annihilation(space);
    let c = OperatorMatrix::photon_annihilation(space).unwrap();
    let k1 = b.mul(&c.adjoint()).unwrap().sub(&b.adjoint().mul(&c).unwrap()).unwrap().scale(Complex64::i());
    for s in &snaps {
        let want = exact_moments(0.5, 2.0, 1.0, 0.0, s.time);
        let got = [
            expectation(&m, &s.rho).unwrap().re,
            expectation(&n, &s.rho).unwrap().re,
            expectation(&k1, &s.rho).unwrap().re,
        ];
        let slack = 1e-6f64.max(s.rho.truncation_tail().1);
        for i in 0..3 {
            assert!((got[i] - want[i]).abs() < slack, "t={} moment {i}: {} vs {}", s.time, got[i], want[i]);
        }
    }
}

#[test]
fn decoupled_modes_keep_phonons() {
    let space = FockSpace::phonon_photon(4, 3).unwrap();
    let model = build_phonon_photon_model(0.0, 1.5, space).unwrap();
    let rho0 = DensityMatrix::basis(space, 0, 3, 2).unwrap();
    let m = OperatorMatrix::phonon_number(space);
    for s in evolve(&model, &rho0, 5.0, 1.0).unwrap() {
        assert!((expectation(&m, &s.rho).unwrap().re - 3.0).abs() < 1e-12);
    }
}

#[test]
fn stationary_state_is_vacuum() {
    let space = FockSpace::phonon_photon(4, 4).unwrap();
    let model = build_phonon_photon_model(0.7, 1.3, space).unwrap();
    let rho0 = DensityMatrix::basis(space, 0, 2, 1).unwrap();
    let last = evolve(&model, &rho0, 80.0, 20.0).unwrap().pop().unwrap();
    let vacuum = space.index(0, 0, 0);
    assert!((last.rho.entries()[(vacuum, vacuum)].re - 1.0).abs() < 1e-8);
}

#[test]
fn projector_on_ground_state_vanishes() {
    let space = FockSpace::atom_phonon(4).unwrap();
    let rho = DensityMatrix::basis(space, 0, 3, 0).unwrap();
    let p = OperatorMatrix::excited_projector(space).unwrap();
    assert_eq!(expectation(&p, &rho).unwrap(), Complex64::new(0.0, 0.0));
}

#[test]
fn overflow_when_started_at_cutoff() {
    let space = FockSpace::phonon_photon(5, 5).unwrap();
    let model = build_phonon_photon_model(0.3, 1.0, space).unwrap();
    let rho0 = DensityMatrix::basis(space, 0, 5, 0).unwrap();
    assert!(matches!(evolve(&model, &rho0, 1.0, 0.5), Err(FockError::TruncationOverflow { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cavity_evolution_stays_physical(g in 0.01f64..1.0, kappa in 0.05f64..2.0, m0 in 0usize..3, n0 in 0usize..2) {
        let space = FockSpace::phonon_photon(8, 8).unwrap();
        let model = build_phonon_photon_model(g, kappa, space).unwrap();
        let rho0 = DensityMatrix::basis(space, 0, m0, n0).unwrap();
        let t_final = 10.0 / kappa.max(g);
        let snaps = evolve(&model, &rho0, t_final, t_final / 8.0).unwrap();
        assert_physical(&snaps);
    }

    #[test]
    fn atom_phonon_evolution_stays_physical(g in 0.01f64..1.0, gamma in 0.05f64..2.0, m0 in 0usize..3, excited in any::<bool>()) {
        let space = FockSpace::atom_phonon(8).unwrap();
        let model = build_atom_phonon_model(g, gamma, space).unwrap();
        let rho0 = DensityMatrix::basis(space, usize::from(excited), m0, 0).unwrap();
        let t_final = 10.0 / gamma.max(g);
        let snaps = evolve(&model, &rho0, t_final, t_final / 8.0).unwrap();
        assert_physical(&snaps);
    }

    #[test]
    fn thermal_start_stays_physical(g in 0.05f64..1.0, kappa in 0.1f64..2.0, lambda in 2.5f64..6.0) {
        let space = FockSpace::phonon_photon(10, 6).unwrap();
        let model = build_phonon_photon_model(g, kappa, space).unwrap();
        let rho0 = DensityMatrix::thermal_phonons(space, lambda).unwrap();
        let snaps = evolve(&model, &rho0, 5.0 / kappa, 1.0 / kappa).unwrap();
        assert_physical(&snaps);
    }

    #[test]
    fn ladder_commutator_is_identity_below_cutoff(cutoff in 1usize..12) {
        let space = FockSpace::phonon_photon(cutoff, 1).unwrap();
        let b = OperatorMatrix::phonon_annihilation(space);
        let comm = b.commutator(&b.adjoint()).unwrap();
        for i in 0..space.dim() {
            let (_, m, _) = space.labels(i);
            if m == cutoff {
                continue;
            }
            for j in 0..space.dim() {
                let want = if i == j { 1.0 } else { 0.0 };
                // √m·√m rounds, so "exact" means to a few ulps
                prop_assert!((comm.entries()[(i, j)] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }
}
