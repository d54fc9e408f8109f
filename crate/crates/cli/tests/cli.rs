use std::path::Path;
use std::process::{Command, Output};

use fluxnv::io::{read_envelope, DeviceConfig, Payload};

fn fluxnv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluxnv"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn fluxnv")
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<_> = stderr.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {stderr}");
    lines[0].to_string()
}

#[test]
fn spectrum_reports_default_gap() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("spectrum.json");
    let out = fluxnv(&["spectrum", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let env = read_envelope(&path).unwrap();
    let Payload::Spectrum(s) = env.payload else {
        panic!("wrong payload kind");
    };
    let gap = s.splitting.unwrap().gap_ghz;
    assert!((gap - 0.0704).abs() < 1e-6, "{gap}");
    assert_eq!(s.spectrum.points.len(), 81);
}

#[test]
fn spectrum_csv_header() {
    let out = fluxnv(&["spectrum", "--grid", "bias_points=5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bias_mphi0,epsilon_ghz,frequency_ghz,weight");
}

#[test]
fn estimate_n_summary() {
    let out = fluxnv(&["estimate-n"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("N from coupling: 3.16e7"), "{stderr}");
    assert!(stderr.contains("N from density:  3.08e7"), "{stderr}");
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("quantity,value"), "{csv}");
}

#[test]
fn config_errors_exit_2() {
    let out = fluxnv(&["spectrum", "--grid", "bias_points=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error code=2 kind=config message=\""));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[qubit]\ndelta = 2.878\n").unwrap();
    let out = fluxnv(&["spectrum", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let line = error_line(&out);
    assert!(line.contains("line 2"), "{line}");
    assert!(line.contains("qubit.delta_ghz"), "{line}");

    let out = fluxnv(&["spectrum", "--format", "xlsx"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.csv");
    let mut text = String::from("time_ns,p_qubit_excited\n");
    for k in 0..101 {
        text.push_str(&format!("{},0.25\n", k as f64));
    }
    std::fs::write(&input, text).unwrap();
    let out = fluxnv(&["fit-rabi", "--input", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out).starts_with("error code=3 "));
}

#[test]
fn io_failure_exits_4() {
    let out = fluxnv(&["spectrum", "--out", "/nonexistent-dir/spectrum.csv"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(error_line(&out).starts_with("error code=4 kind=io "));

    let out = fluxnv(&["spectrum", "--config", "/nonexistent-dir/device.toml"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn envelope_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("n.json");
    let out = fluxnv(&["estimate-n", "--grid", "ensemble.n_spins=1e6", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let env = read_envelope(&path).unwrap();
    assert_eq!(env.config.ensemble.n_spins, 1e6);

    let toml = env.config.to_toml_string().unwrap();
    let cfg = dir.path().join("dump.toml");
    std::fs::write(&cfg, &toml).unwrap();
    assert_eq!(DeviceConfig::from_toml_str(&toml).unwrap(), env.config);

    let again = dir.path().join("again.json");
    let out = fluxnv(&["estimate-n", "--config", cfg.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn rabi_trace_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let out = fluxnv(&["rabi", "--grid", "dissipation.gamma_ens_ghz=0.0876", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        p
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_fit_matches(&a);
}

fn assert_fit_matches(trace: &Path) {
    let out = fluxnv(&["fit-rabi", "--input", trace.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f = v["payload"]["data"]["fit"]["frequency_ghz"].as_f64().unwrap();
    assert!((f - 0.0704).abs() / 0.0704 < 0.02, "{f}");
}
