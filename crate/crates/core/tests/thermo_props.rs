use std::f64::consts::LN_2;

use phonox::constants::{HBAR, K_B};
use phonox::thermo::{
    bose_einstein, log_partition_function, temperature_from_mean_phonons, thermal_state, thermalise_gas, ThermalParams,
    LAMBDA_UNDERFLOW,
};

const NU: f64 = 1e8;

/// 50 log-spaced λ in [1e-3, 50].
fn lambda_grid() -> Vec<f64> {
    (0..50).map(|k| 10f64.powf(-3.0 + k as f64 * (50f64.log10() + 3.0) / 49.0)).collect()
}

/// −∂ ln Z/∂β by central differences in β at fixed ν.
fn energy_by_differences(lambda: f64) -> f64 {
    let beta = lambda / (HBAR * NU);
    let h = 1e-4 * beta;
    let ln_z = |b: f64| log_partition_function(b * HBAR * NU).unwrap();
    -(ln_z(beta + h) - ln_z(beta - h)) / (2.0 * h)
}

#[test]
fn energy_is_minus_dlnz_dbeta() {
    for lambda in lambda_grid() {
        let t = HBAR * NU / (K_B * lambda);
        let st = thermal_state(&ThermalParams::new(t, NU).unwrap()).unwrap();
        let fd = energy_by_differences(lambda);
        assert!((fd / st.mean_energy - 1.0).abs() < 1e-6, "λ={lambda}: {fd} vs {}", st.mean_energy);
    }
}

#[test]
fn occupation_at_ln2_is_one() {
    assert!((bose_einstein(LN_2).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn zero_temperature_limits() {
    assert_eq!(bose_einstein(LAMBDA_UNDERFLOW * 1.01).unwrap(), 0.0);
    let cold = thermal_state(&ThermalParams::new(1e-12, NU).unwrap()).unwrap();
    assert_eq!(cold.mean_phonons, 0.0);
    assert_eq!(cold.mean_energy, 0.5 * HBAR * NU);
}

#[test]
fn monotone_on_grid() {
    let grid = lambda_grid();
    let m: Vec<f64> = grid.iter().map(|&l| bose_einstein(l).unwrap()).collect();
    assert!(m.windows(2).all(|w| w[1] < w[0]));
    let temps: Vec<f64> = grid.iter().rev().map(|&l| HBAR * NU / (K_B * l)).collect();
    let states: Vec<_> = temps.iter().map(|&t| thermal_state(&ThermalParams::new(t, NU).unwrap()).unwrap()).collect();
    assert!(states.windows(2).all(|w| w[1].mean_energy >= w[0].mean_energy));
    // near λ = 50 the thermal part is 1e-22 of ħν/2 and vanishes in the sum,
    // so strictness is checked on the energy above the zero point
    let above_zero: Vec<f64> = states.iter().map(|s| s.mean_energy - 0.5 * HBAR * NU).collect();
    let thermal: Vec<f64> = states.iter().map(|s| HBAR * NU * s.mean_phonons).collect();
    assert!(thermal.windows(2).all(|w| w[1] > w[0]));
    assert!(above_zero.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn energy_minus_half_quantum_is_occupation() {
    for lambda in lambda_grid() {
        let t = HBAR * NU / (K_B * lambda);
        let st = thermal_state(&ThermalParams::new(t, NU).unwrap()).unwrap();
        let m = st.mean_energy / (HBAR * NU) - 0.5;
        assert!((m - st.mean_phonons).abs() <= 1e-12 * st.mean_phonons.max(1.0), "λ={lambda}");
    }
}

#[test]
fn temperature_round_trip() {
    for lambda in lambda_grid() {
        let t = HBAR * NU / (K_B * lambda);
        let m = thermal_state(&ThermalParams::new(t, NU).unwrap()).unwrap().mean_phonons;
        let back = temperature_from_mean_phonons(m, NU).unwrap();
        assert!((back / t - 1.0).abs() < 1e-10, "λ={lambda}");
    }
    let t1 = temperature_from_mean_phonons(1.0, NU).unwrap();
    assert!((t1 - HBAR * NU / (K_B * LN_2)).abs() <= 1e-15 * t1);
    let seq: Vec<f64> = [1e-1, 1e-3, 1e-6, 1e-12].iter().map(|&m| temperature_from_mean_phonons(m, NU).unwrap()).collect();
    assert!(seq.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
    assert!(temperature_from_mean_phonons(0.0, NU).is_err());
}

#[test]
fn product_state_energy_is_extensive() {
    let p = ThermalParams::new(0.01, NU).unwrap();
    let one = thermal_state(&p).unwrap();
    for n in [1u64, 5, 1000] {
        let gas = thermalise_gas(n, &p).unwrap();
        assert_eq!(gas.mean_phonons_per_atom, one.mean_phonons);
        assert!((gas.total_phonons() - n as f64 * one.mean_phonons).abs() <= 1e-12 * gas.total_phonons());
    }
}
