use std::fs;
use std::path::{Path, PathBuf};

use phonox::cli::{main_with_args, parse_config, EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK};
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(config: &Path, prefix: &Path) -> i32 {
    main_with_args(["phonox", "run", "--config", config.to_str().unwrap(), "--output-prefix", prefix.to_str().unwrap()])
}

fn csv_of(prefix: &Path) -> String {
    fs::read_to_string(format!("{}.timeseries.csv", prefix.display())).unwrap()
}

fn summary_of(prefix: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(format!("{}.summary.json", prefix.display())).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn shipped_configs_have_expected_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("single_ion.json", "time,m,s,k1,m_oracle,s_oracle,k1_oracle"),
        ("cavity_single.json", "time,m,n,k1,m_oracle,n_oracle,k1_oracle"),
        ("cavity_collective.json", "time,m,n,k1,m_oracle,n_oracle,k1_oracle"),
        (
            "thermal.json",
            "temperature,lambda,lambda_eff,partition_function,mean_energy,mean_phonons,b_mode_occupation,total_phonons",
        ),
        ("bubble_spectrum.json", "d_min,j,omega_cav,lambda_cav,delta_cav,label"),
        (
            "paper_exchanger.json",
            "time,stage,gas_temperature,reservoir_temperature,b_mode_occupation,cumulative_photons,cumulative_heat_removed",
        ),
        (
            "sweep.json",
            "index,n_atoms,nu_max,emission_rate,liquid_mass,photons_needed,cooling_time,rate,heat_removed,error",
        ),
        ("reference.json", "check,value,pass"),
    ];
    for (name, header) in cases {
        let prefix = dir.path().join(name.trim_end_matches(".json"));
        assert_eq!(run(&configs().join(name), &prefix), EXIT_OK, "{name}");
        assert_eq!(csv_of(&prefix).lines().next().unwrap(), header, "{name}");
        let summary = summary_of(&prefix);
        assert_eq!(summary["status"], "ok", "{name}");
        assert_eq!(summary["exit_code"], 0);
    }
}

#[test]
fn bubble_csv_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("b");
    assert_eq!(run(&configs().join("bubble_spectrum.json"), &prefix), EXIT_OK);
    // ω = πc/d and Δ = ω − 1.8e15, evaluated independently
    let golden = [
        ("4.9e-7", 1922093436029442.0, "9.8e-7", 122093436029442.0),
        ("5e-7", 1883651567308853.2, "1e-6", 83651567308853.25),
        ("5.1e-7", 1846717222851816.8, "1.02e-6", 46717222851816.75),
    ];
    let csv = csv_of(&prefix);
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), golden.len());
    for (row, (d, omega, lambda, delta)) in rows.iter().zip(golden) {
        assert_eq!(row[0], d);
        assert_eq!(row[1], "1");
        assert!((row[2].parse::<f64>().unwrap() / omega - 1.0).abs() < 1e-12);
        assert_eq!(row[3], lambda);
        assert!((row[4].parse::<f64>().unwrap() / delta - 1.0).abs() < 1e-12);
        assert_eq!(row[5], "OFF_RESONANT_COOLING");
    }
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        r#"{"scenario": "warp-drive", "parameters": {}}"#,
        r#"{"scenario": "thermal", "parameters": {"temperatures": [1.0], "nu": -1e8}}"#,
        r#"{"scenario": "thermal", "parameters": {"temperatures": [1.0], "nu": 1e8, "nu_typo": 1}}"#,
        "{ not json",
    ];
    for (i, text) in bad.iter().enumerate() {
        let config = write_config(dir.path(), &format!("bad{i}.json"), text);
        let prefix = dir.path().join(format!("out{i}"));
        assert_eq!(run(&config, &prefix), EXIT_INVALID, "{text}");
        assert!(!Path::new(&format!("{}.summary.json", prefix.display())).exists());
        assert!(!Path::new(&format!("{}.timeseries.csv", prefix.display())).exists());
    }
    let missing = dir.path().join("absent.json");
    assert_eq!(run(&missing, &dir.path().join("x")), EXIT_INVALID);
}

#[test]
fn truncation_overflow_exits_3_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"scenario": "cavity-single", "parameters": {"g_eff": 0.3, "kappa": 1.0, "nu": 1.0, "delta_cav": 1.0,
        "initial_phonons": 5, "phonon_cutoff": 5, "photon_cutoff": 5, "t_final": 2.0}}"#;
    let config = write_config(dir.path(), "overflow.json", text);
    let prefix = dir.path().join("overflow");
    assert_eq!(run(&config, &prefix), EXIT_NUMERICAL);
    let summary = summary_of(&prefix);
    assert_eq!(summary["status"], "numerical_failure");
    assert_eq!(summary["exit_code"], 3);
    assert!(summary["error"].as_str().unwrap().to_lowercase().contains("truncation"));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["paper_exchanger.json", "cavity_single.json", "bubble_spectrum.json", "sweep.json"] {
        let a = dir.path().join(format!("a_{name}"));
        let b = dir.path().join(format!("b_{name}"));
        assert_eq!(run(&configs().join(name), &a), EXIT_OK);
        assert_eq!(run(&configs().join(name), &b), EXIT_OK);
        assert_eq!(csv_of(&a), csv_of(&b), "{name}");
        assert_eq!(
            fs::read(format!("{}.summary.json", a.display())).unwrap(),
            fs::read(format!("{}.summary.json", b.display())).unwrap()
        );
    }
}

#[test]
fn sampled_bubbles_depend_only_on_seed() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"scenario": "bubble-spectrum", "seed": 7, "parameters": {"diameter_mean": 5e-7, "diameter_spread": 2e-8,
        "count": 16, "kappa": 5e12, "nu_max": 1e13, "laser_frequency": 1.8e15}}"#;
    let config = write_config(dir.path(), "sampled.json", text);
    let [a, b, c] = ["a", "b", "c"].map(|s| dir.path().join(s));
    assert_eq!(run(&config, &a), EXIT_OK);
    assert_eq!(run(&config, &b), EXIT_OK);
    let seeded = ["phonox", "run", "--config", config.to_str().unwrap(), "--output-prefix", c.to_str().unwrap(), "--seed", "8"];
    assert_eq!(main_with_args(seeded), EXIT_OK);
    assert_eq!(csv_of(&a), csv_of(&b));
    assert_ne!(csv_of(&a), csv_of(&c));
    assert_eq!(csv_of(&a).lines().count(), 17);
}

#[test]
fn summary_config_reloads_to_same_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["paper_exchanger.json", "thermal.json", "cavity_collective.json", "reference.json"] {
        let first = dir.path().join(format!("first_{name}"));
        assert_eq!(run(&configs().join(name), &first), EXIT_OK);
        let echoed = summary_of(&first)["config"].clone();
        let reloaded = parse_config(&echoed.to_string()).unwrap();
        let original = parse_config(&fs::read_to_string(configs().join(name)).unwrap()).unwrap();
        assert_eq!(reloaded.params, original.params, "{name}");
        let config = write_config(dir.path(), &format!("echo_{name}"), &echoed.to_string());
        let second = dir.path().join(format!("second_{name}"));
        assert_eq!(run(&config, &second), EXIT_OK);
        assert_eq!(csv_of(&first), csv_of(&second), "{name}");
    }
}

#[test]
fn paper_summary_records_recomputed_rate() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("paper");
    assert_eq!(run(&configs().join("paper_exchanger.json"), &prefix), EXIT_OK);
    let s = summary_of(&prefix);
    let rate = s["headline"]["gamma_cool"]["value"].as_f64().unwrap();
    assert!((rate / 3.9636940155399585e-3 - 1.0).abs() < 1e-12, "{rate}");
    assert_eq!(s["headline"]["gamma_cool"]["unit"], "s/K");
    assert!(s["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("3.81")));
}

#[test]
fn validate_subcommand_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("single_ion.json")).unwrap();
    let config = write_config(dir.path(), "single_ion.json", &text);
    assert_eq!(main_with_args(["phonox", "validate", "--config", config.to_str().unwrap()]), EXIT_OK);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    let bad = write_config(dir.path(), "bad.json", r#"{"scenario": "single-ion", "parameters": {"g": 0.1}}"#);
    assert_eq!(main_with_args(["phonox", "validate", "--config", bad.to_str().unwrap()]), EXIT_INVALID);
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(main_with_args(["phonox", "--version"]), EXIT_OK);
    assert_eq!(main_with_args(["phonox", "--help"]), EXIT_OK);
    assert_eq!(main_with_args(["phonox", "run"]), EXIT_INVALID);
}
