use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const QUBIT: &str = r#"
[system]
levels = 2
qubit_frequency_ghz = 5.0
frame = "rotating"
initial_state = "excited"

[pulse]
kind = "rabi"
omega_x_wq = 0.05

[[noise]]
label = "relaxation"
operator = "sigma_x"
spectrum = "ohmic"
coupling = 1e-3
cutoff_wq = 5.0
beta_wq = 50.0

[solver]
modes = ["redfield", "full_tcl"]
step_wq = 0.25
final_time_wq = 200.0
record_stride = 4
"#;

const GATE: &str = r#"
[system]
levels = 3
qubit_frequency_ghz = 5.0
anharmonicity_wq = -0.2
frame = "full"

[pulse]
kind = "drag"
theta = 1.5707963267948966
gate_time_wq = 40.0
xi = 0.5

[[noise]]
label = "relaxation"
operator = "charge"
spectrum = "ohmic"
coupling = 1e-4
cutoff_wq = 10.0
beta_wq = 24.0

[[noise]]
label = "dephasing"
operator = "number"
spectrum = "one_over_f"
coupling = 1e-5
ir_cutoff_wq = 5e-5

[solver]
step_wq = 0.15
"#;

fn tclsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tclsim"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(format!("{name}.toml"));
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| !n.ends_with(".toml"))
        .collect();
    v.sort();
    v
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_writes_one_trajectory_per_mode() {
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "q", QUBIT);
    let out = dir.path().join("out");
    let o = tclsim(&["simulate", file.to_str().unwrap()], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_files(&out), ["q_full_tcl.csv", "q_redfield.csv"]);
    let (header, rows) = read_csv(&out.join("q_full_tcl.csv"));
    assert_eq!(&header[..3], ["t", "re_rho00", "im_rho00"]);
    assert!(header.iter().any(|h| h == "re_relaxation:rate(1,0)"));
    assert_eq!(header.last().unwrap(), "min_eigenvalue");
    assert_eq!(rows.len(), 201);
    assert_eq!(rows.last().unwrap()[0].parse::<f64>().unwrap(), 200.0);
    // 17 significant digits
    let x = &rows[1][1];
    assert_eq!(x.trim_start_matches('-').replace('.', "").split('e').next().unwrap().len(), 17, "{x}");
}

#[test]
fn runs_are_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "q", QUBIT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&tclsim(&["simulate", file.to_str().unwrap()], &a)), 0);
    assert_eq!(code(&tclsim(&["simulate", file.to_str().unwrap(), "--threads", "1"], &b)), 0);
    for name in csv_files(&a) {
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name}");
    }
}

#[test]
fn configuration_errors_exit_2_without_outputs() {
    let dir = TempDir::new().unwrap();
    let cases = [
        QUBIT.replace("step_wq = 0.25", "step_wq = 0.25\nbogus = 1"),
        QUBIT.replace("levels = 2", "levels = 1"),
        QUBIT.replace("coupling = 1e-3", "coupling = -1e-3"),
        QUBIT.replace("frame = \"rotating\"", "frame = \"lab\""),
        GATE.replace("anharmonicity_wq = -0.2", "anharmonicity_wq = 0.0"),
    ];
    for (i, text) in cases.iter().enumerate() {
        let file = scenario(&dir, &format!("bad{i}"), text);
        let out = dir.path().join(format!("out{i}"));
        let o = tclsim(&["simulate", file.to_str().unwrap()], &out);
        assert_eq!(code(&o), 2, "case {i}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists() || csv_files(&out).is_empty(), "case {i}");
    }
    let file = scenario(&dir, "q", QUBIT);
    let out = dir.path().join("flags");
    for args in [
        vec!["simulate", file.to_str().unwrap(), "--mode", "lindblad"],
        vec!["simulate", file.to_str().unwrap(), "--step", "5"],
        vec!["simulate", file.to_str().unwrap(), "--threads", "0"],
        vec!["simulate", dir.path().join("missing.toml").to_str().unwrap()],
        vec!["sweep", file.to_str().unwrap(), "--tg", "3:8"],
    ] {
        let o = tclsim(&args, &out);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.exists() || csv_files(&out).is_empty());
}

#[test]
fn numerical_abort_exits_3_without_outputs() {
    // an absurdly strong bath makes the explicit integrator blow up
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "q", &QUBIT.replace("coupling = 1e-3", "coupling = 1e3"));
    let out = dir.path().join("out");
    let o = tclsim(&["simulate", file.to_str().unwrap()], &out);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("numerical abort"));
    assert!(!out.exists() || csv_files(&out).is_empty());
}

#[test]
fn table1_rows_sum_to_total() {
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "gate", GATE);
    let o = tclsim(&["table1", file.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("gate_table1.csv"));
    assert_eq!(header, ["row", "gate_error", "leakage", "xi"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["unitary", "uncorrelated", "correlated", "total"]);
    for col in [1, 2] {
        let v: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
        assert_eq!(v[0] + v[1] + v[2], v[3]);
        assert!(v[1] > 0.0);
    }
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.5);
}

#[test]
fn metrics_and_sweep_tables() {
    let dir = TempDir::new().unwrap();
    let text = GATE.replace("[solver]", "[output]\ntrajectory = false\nmetrics = true\n\n[solver]\nmodes = [\"redfield\"]");
    let file = scenario(&dir, "gate", &text);
    let o = tclsim(&["simulate", file.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&dir.path().join("gate_metrics.csv"));
    assert_eq!(
        header,
        ["t_g_ns", "xi", "mode", "fidelity", "infidelity", "leakage", "unitary_fidelity", "unitary_leakage"]
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "closed");
    assert_eq!(rows[1][2], "redfield");
    let f: f64 = rows[1][3].parse().unwrap();
    assert!(f < rows[1][6].parse::<f64>().unwrap() && f > 0.9);

    let o = tclsim(&["sweep", file.to_str().unwrap(), "--tg", "1.2:1.4:0.2", "--mode", "closed"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&dir.path().join("gate_sweep.csv"));
    let tgs: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(tgs.len(), 2);
    assert!((tgs[1] - 1.4).abs() < 1e-12);
    for r in &rows {
        let xi: f64 = r[1].parse().unwrap();
        assert!((0.0..=1.5).contains(&xi));
    }
}

#[test]
fn optimize_drag_reports_grid() {
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "gate", &GATE.replace("xi = 0.5\n", ""));
    let o = tclsim(&["optimize-drag", file.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("xi* = "));
    let (_, grid) = read_csv(&dir.path().join("gate_xi_grid.csv"));
    assert_eq!(grid.len(), 31);
    let (_, best) = read_csv(&dir.path().join("gate_xi.csv"));
    let f: f64 = best[0][2].parse().unwrap();
    assert!(grid.iter().all(|r| r[1].parse::<f64>().unwrap() <= f));
}

#[test]
fn spectra_dump_is_consistent() {
    let dir = TempDir::new().unwrap();
    let file = scenario(&dir, "gate", GATE);
    let o = tclsim(&["spectra", file.to_str().unwrap(), "--points", "41"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        csv_files(dir.path()),
        [
            "gate_correlation_dephasing.csv",
            "gate_correlation_relaxation.csv",
            "gate_spectrum_dephasing.csv",
            "gate_spectrum_relaxation.csv"
        ]
    );
    let (header, rows) = read_csv(&dir.path().join("gate_spectrum_relaxation.csv"));
    assert_eq!(header, ["omega", "s", "s_bar", "j"]);
    assert_eq!(rows.len(), 41);
    for r in &rows {
        let v: Vec<f64> = r.iter().map(|x| x.parse().unwrap()).collect();
        assert!((v[1] - v[2] - v[3]).abs() <= 1e-15 * v[1].abs().max(1e-300));
    }
    let (_, rows) = read_csv(&dir.path().join("gate_correlation_dephasing.csv"));
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn shipped_scenarios_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        tclsim::Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}
