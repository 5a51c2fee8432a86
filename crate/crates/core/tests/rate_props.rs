use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use phonox::rate::{
    cavity_system_matrix, cavity_trajectory, collective_coupling, cooling_rate_cavity, cooling_rate_collective,
    cooling_rate_single, fitted_decay_rate, single_ion_trajectory, step_cavity, step_single_ion,
    validate_cooling_conditions, CavityParams, DetuningSide, RateError, RateStateAtom, RateStateCavity,
    SingleIonParams,
};

fn expm_oracle(g: f64, kappa: f64, x0: [f64; 3], t: f64) -> Vector3<f64> {
    (Matrix3::from(cavity_system_matrix(g, kappa)).transpose() * t).exp() * Vector3::from(x0)
}

#[test]
fn cavity_step_matches_matrix_exponential() {
    let p = CavityParams::single(0.5, 2.0, 1.0, 1.0).unwrap();
    let got = step_cavity(RateStateCavity::new(1.0, 0.0, 0.0), &p, 1.0).unwrap();
    let want = expm_oracle(0.5, 2.0, [1.0, 0.0, 0.0], 1.0);
    assert!((got.m - want[0]).abs() < 1e-9, "{} vs {}", got.m, want[0]);
    assert!((got.n - want[1]).abs() < 1e-9);
    assert!((got.k1 - want[2]).abs() < 1e-9);
}

#[test]
fn zero_state_is_a_fixed_point() {
    let ion = SingleIonParams::new(0.3, 1.0, 2.0, 2.0).unwrap();
    assert_eq!(step_single_ion(RateStateAtom::new(0.0, 0.0, 0.0), &ion, 7.0).unwrap(), RateStateAtom::new(0.0, 0.0, 0.0));
    let cav = CavityParams::single(0.3, 1.0, 2.0, 2.0).unwrap();
    assert_eq!(step_cavity(RateStateCavity::new(0.0, 0.0, 0.0), &cav, 7.0).unwrap(), RateStateCavity::new(0.0, 0.0, 0.0));
}

#[test]
fn lossless_cavity_swaps_quanta() {
    let p = CavityParams::single(0.4, 0.0, 1.0, 1.0).unwrap();
    let times: Vec<f64> = (1..=40).map(|k| 0.25 * k as f64).collect();
    for s in cavity_trajectory(RateStateCavity::new(1.0, 0.0, 0.0), &p, &times).unwrap() {
        assert!((s.m + s.n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn decoupled_ion_decays_exponentially() {
    let p = SingleIonParams::new(0.0, 0.7, 1.0, 1.0).unwrap();
    let times = [0.5, 1.0, 3.0];
    let traj = single_ion_trajectory(RateStateAtom::new(1.5, 0.8, 0.0), &p, &times).unwrap();
    for (t, s) in times.iter().zip(&traj) {
        assert_eq!(s.m, 1.5);
        assert!((s.s - 0.8 * (-0.7 * t).exp()).abs() < 1e-9);
    }
}

#[test]
fn weak_coupling_cools_within_ten_lifetimes() {
    let p = SingleIonParams::new(0.05, 1.0, 10.0, 10.0).unwrap();
    let gamma = cooling_rate_single(&p).unwrap();
    let s = step_single_ion(RateStateAtom::new(2.0, 0.0, 0.0), &p, 10.0 / gamma).unwrap();
    assert!(s.m < 0.05, "{s:?}");
}

#[test]
fn rate_formula_examples() {
    assert_eq!(cooling_rate_single(&SingleIonParams::new(0.0, 1.0, 1.0, 1.0).unwrap()).unwrap(), 0.0);
    assert!((cooling_rate_single(&SingleIonParams::new(0.1, 1.0, 1.0, 1.0).unwrap()).unwrap() - 0.01).abs() < 1e-15);
    assert!(matches!(cooling_rate_single(&SingleIonParams::new(0.1, 0.0, 1.0, 1.0).unwrap()), Err(RateError::UndefinedRate(_))));
    let single = CavityParams::single(0.2, 0.5, 1.0, 1.0).unwrap();
    assert_eq!(cooling_rate_collective(&single).unwrap(), cooling_rate_cavity(0.2, 0.5).unwrap());
    let hundred = CavityParams::uniform(0.01, 1.0, 1.0, 1.0, 100).unwrap();
    assert!((cooling_rate_collective(&hundred).unwrap() - 0.01).abs() < 1e-15);
    assert_eq!(collective_coupling(&[3.0, 4.0]).unwrap(), 5.0);
    assert_eq!(collective_coupling(&[0.7]).unwrap(), 0.7);
    assert!(collective_coupling(&[]).is_err());
}

/// The adiabatic limit of Eq. (5) decays at 4g²/Γ, not the g²/Γ of Eq. (6).
#[test]
fn asymptotic_decay_rate_single_ion() {
    for g in [0.02, 0.05, 0.1] {
        let p = SingleIonParams::new(g, 1.0, 10.0, 10.0).unwrap();
        let eq6 = cooling_rate_single(&p).unwrap();
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.02 / eq6).collect();
        let m: Vec<f64> = single_ion_trajectory(RateStateAtom::new(0.01, 0.0, 0.0), &p, &times).unwrap().iter().map(|s| s.m).collect();
        let fit = fitted_decay_rate(&times, &m, 0.5 / eq6).unwrap();
        let ratio = fit / (4.0 * eq6);
        println!("g = {g}: fitted {fit:.6e}, g²/Γ = {eq6:.6e}, fit/(4g²/Γ) = {ratio:.4}");
        assert!((ratio - 1.0).abs() < 0.2);
    }
}

#[test]
fn asymptotic_decay_rate_cavity() {
    for g in [0.02, 0.05, 0.1] {
        let p = CavityParams::single(g, 1.0, 10.0, 10.0).unwrap();
        let eq12 = cooling_rate_cavity(g, 1.0).unwrap();
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.02 / eq12).collect();
        let m: Vec<f64> = cavity_trajectory(RateStateCavity::new(1.0, 0.0, 0.0), &p, &times).unwrap().iter().map(|s| s.m).collect();
        let fit = fitted_decay_rate(&times, &m, 0.5 / eq12).unwrap();
        assert!((fit / (4.0 * eq12) - 1.0).abs() < 0.2, "g = {g}: fit {fit}, eq12 {eq12}");
    }
}

#[test]
fn condition_examples() {
    let nu = 2.0;
    let ok = validate_cooling_conditions(&SingleIonParams::new(0.1, nu / 2.0, nu, nu).unwrap(), 0.5);
    assert!(ok.all_pass());
    let broad = validate_cooling_conditions(&SingleIonParams::new(0.1, 2.0 * nu, nu, nu).unwrap(), 0.5);
    assert!(!broad.check("nu >= gamma").unwrap().pass);
    let blue = validate_cooling_conditions(&CavityParams::single(0.1, 0.5, nu, -nu).unwrap(), 0.5);
    assert_eq!(blue.side, DetuningSide::Blue);
    assert!(!blue.all_pass());
}

#[test]
fn eigenvalues_are_stable_on_grid() {
    for i in 1..=20 {
        for j in 1..=20 {
            let g = 0.05 * i as f64;
            let kappa = 0.1 * j as f64;
            let a = Matrix3::from(cavity_system_matrix(g, kappa)).transpose();
            for ev in a.complex_eigenvalues().iter() {
                assert!(ev.re < 0.0, "g={g} κ={kappa}: {ev}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cavity_matches_exponential(g in 0.0f64..2.0, kappa in 0.0f64..3.0, m0 in 0.0f64..5.0, n0 in 0.0f64..5.0, k0 in -2.0f64..2.0, t in 0.01f64..10.0) {
        let p = CavityParams::single(g, kappa, 1.0, 1.0).unwrap();
        let got = step_cavity(RateStateCavity::new(m0, n0, k0), &p, t).unwrap();
        let want = expm_oracle(g, kappa, [m0, n0, k0], t);
        let scale = 1.0 + m0 + n0 + k0.abs();
        prop_assert!((got.m - want[0]).abs() < 1e-9 * scale);
        prop_assert!((got.n - want[1]).abs() < 1e-9 * scale);
        prop_assert!((got.k1 - want[2]).abs() < 1e-9 * scale);
    }

    #[test]
    fn cavity_is_linear(g in 0.01f64..1.0, kappa in 0.01f64..2.0, alpha in -3.0f64..3.0, t in 0.1f64..5.0) {
        let p = CavityParams::single(g, kappa, 1.0, 1.0).unwrap();
        let x = RateStateCavity::new(1.2, 0.4, -0.3);
        let a = step_cavity(x.scaled(alpha), &p, t).unwrap();
        let b = step_cavity(x, &p, t).unwrap().scaled(alpha);
        prop_assert!((a.m - b.m).abs() < 1e-9 && (a.n - b.n).abs() < 1e-9 && (a.k1 - b.k1).abs() < 1e-9);
    }

    #[test]
    fn collective_rate_scales_with_n(g in 0.001f64..1.0, kappa in 0.01f64..10.0, n in 1usize..500) {
        let one = cooling_rate_collective(&CavityParams::uniform(g, kappa, 1.0, 1.0, 1).unwrap()).unwrap();
        let many = cooling_rate_collective(&CavityParams::uniform(g, kappa, 1.0, 1.0, n).unwrap()).unwrap();
        prop_assert!((many / one - n as f64).abs() <= 1e-12 * n as f64);
        prop_assert_eq!(cooling_rate_collective(&CavityParams::uniform(g, kappa, 1.0, 1.0, 2 * n).unwrap()).unwrap(), 2.0 * many);
    }
}
