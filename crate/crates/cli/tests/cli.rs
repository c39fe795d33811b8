use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use usc_lindblad::io;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_usc-lindblad"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.json");
    std::fs::write(&p, body).unwrap();
    p
}

const LORENTZIAN: &str = r#"{
    "units": "meV",
    "target": {"type": "lorentzian", "omega_c": 0.58, "g": 0.25, "kappa": 0.1},
    "emitter": {"omega_e": 0.58},
    "fit": {"n_modes": 1, "neg_threshold": 1e-8, "pos_window": [0.029, 2.9], "constrain_negative": false, "n_restarts": 2},
    "basis": {"max_total_excitations": 3},
    "dynamics": {"t_max": 20.0, "n_outputs": 41},
    "oracle": {"omega_min": -3.42, "omega_max": 4.58, "n_points": 24, "max_total_excitations": 3}
}"#;

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn lorentzian_self_fit_exits_zero_with_tiny_residual() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LORENTZIAN);
    let out = dir.path().join("out");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: usc_lindblad::spectral::ModelDocument =
        serde_json::from_str(&std::fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(doc.n_modes, 1);
    let (table, rows) = io::read_fit_report(std::fs::File::open(out.join("fit_report.csv")).unwrap(), Path::new("r")).unwrap();
    let res: f64 = table.meta("pos_residual").unwrap().parse().unwrap();
    assert!(res < 1e-6, "{res}");
    assert_eq!(rows.len(), 2000);
}

#[test]
fn violated_constraint_exits_two() {
    // a zero penalty leaves the negative-frequency tail unchecked during the fit
    let dir = tempfile::tempdir().unwrap();
    let body = LORENTZIAN.replace("\"constrain_negative\": false,", "\"penalty_schedule\": [0.0],");
    let cfg = write_config(dir.path(), &body);
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("negative-frequency"), "{}", stderr(&o));
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn malformed_tabulated_density_exits_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sd.csv"), "omega,j\n0.1,0.2\n0.05,0.3\n").unwrap();
    let body = LORENTZIAN.replace(
        r#"{"type": "lorentzian", "omega_c": 0.58, "g": 0.25, "kappa": 0.1}"#,
        r#"{"type": "tabulated", "path": "sd.csv"}"#,
    );
    let cfg = write_config(dir.path(), &body);
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("sd.csv:3"), "{}", stderr(&o));
}

#[test]
fn unknown_config_field_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LORENTZIAN.replace("\"units\"", "\"unit\": 1, \"units\""));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unit"), "{}", stderr(&o));
}

#[test]
fn dimension_cap_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &LORENTZIAN.replace("\"max_total_excitations\": 3}", "\"max_total_excitations\": 3, \"cap\": 5}"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn simulate_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LORENTZIAN);
    let mut texts = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("o{k}"));
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        texts.push(std::fs::read_to_string(out.join("trajectory.csv")).unwrap());
        assert!(out.join("trajectory.svg").exists());
    }
    assert_eq!(io::strip_timestamp(&texts[0]), io::strip_timestamp(&texts[1]));
    let traj = io::read_trajectory(texts[0].as_bytes(), Path::new("t")).unwrap();
    assert_eq!(traj.len(), 41);
    assert_eq!(traj.n_modes(), 1);
    let mut again = Vec::new();
    io::write_trajectory(&traj, &[], &mut again).unwrap();
    let back = io::read_trajectory(again.as_slice(), Path::new("t")).unwrap();
    assert_eq!(back, traj);
}

#[test]
fn oracle_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), LORENTZIAN);
    let d = dir.path().to_str().unwrap();
    let o = run(&["oracle", "--config", cfg.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let oracle = dir.path().join("oracle.csv");
    let t = io::read_trajectory_path(&oracle).unwrap();
    assert!(t.oracle);
    assert!(t.recurrence_time.is_some());

    let o = run(&["compare", oracle.to_str().unwrap(), oracle.to_str().unwrap(), "--out", d]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = io::read_error_report(std::fs::File::open(dir.path().join("error.csv")).unwrap(), Path::new("e")).unwrap();
    assert_eq!(r.avg_rel_error, 0.0);
    assert_eq!(r.times.len(), 41);
}

#[test]
fn compare_reports_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    std::fs::write(&a, "t,t_fs,P_e,P_bath,purity,trace_defect,error_bound\n0,0,1,0,1,0,0\n1,658,0.5\n").unwrap();
    let o = run(&["compare", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("a.csv:3"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_a_readable_table() {
    let dir = tempfile::tempdir().unwrap();
    let body = LORENTZIAN.replace(
        "\"dynamics\"",
        "\"sweep\": {\"n_modes\": [1], \"thresholds\": [1.0, 0.5]}, \"dynamics\"",
    );
    let cfg = write_config(dir.path(), &body);
    let o = run(&["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = io::read_sweep(std::fs::File::open(dir.path().join("sweep.csv")).unwrap(), Path::new("s")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.n_modes == 1 && r.avg_rel_error.is_finite()));
}

#[test]
fn presets_parse() {
    for name in ["ohmic-cavity.json", "tabulated-narrow.json", "tabulated-broad.json"] {
        let c = usc_lindblad::config::RunConfig::load(presets().join(name));
        assert!(c.is_ok(), "{name}: {:?}", c.err());
    }
}

#[test]
fn ohmic_preset_fit_meets_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = presets().join("ohmic-cavity.json");
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--seed", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, rows) = io::read_fit_report(std::fs::File::open(dir.path().join("fit_report.csv")).unwrap(), Path::new("r")).unwrap();
    let worst = rows
        .iter()
        .filter(|r| r.region != usc_lindblad::fit::Region::Positive)
        .map(|r| r.model)
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8, "{worst}");
    let doc = usc_lindblad::spectral::ModelDocument::read(dir.path().join("model.json")).unwrap();
    assert_eq!(doc.n_modes, 10);
}
