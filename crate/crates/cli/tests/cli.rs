use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use heatsource::experiments::{run_scenario, EocRow, EocTable, ErrorNorms, Scenario};
use heatsource_cli::config::{parse_config, ExperimentSpec};
use heatsource_cli::report::read_table;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_heatsource"))
}

fn configs() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn scenario_run_writes_report_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let out = bin().args(["scenario", "space_dependent", "--levels", "2", "--jobs", "2", "--out"]).arg(dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run(&a);
    run(&b);
    for f in ["table.csv", "eoc.csv", "probes.csv", "trace_1.csv", "trace_2.csv", "manifest.json"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    for f in ["table.csv", "eoc.csv", "probes.csv", "trace_1.csv", "trace_2.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
    let table = fs::read_to_string(a.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["couplings"]["tau_factor"], 0.25);
    assert_eq!(manifest["couplings"]["rho_factor"], 0.01);
    assert_eq!(manifest["couplings"]["delta_factor"], 0.5);
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["levels"][1]["seed"], 3);
    assert_eq!(manifest["levels"][1]["steps"], 10);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    // the echoed spec reproduces the run
    let echoed = parse_config(manifest["spec"].as_str().unwrap()).unwrap();
    assert_eq!(echoed.numerics.levels, vec![1, 2]);

    let out = bin().arg("eoc").arg(a.join("table.csv")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), fs::read_to_string(a.join("eoc.csv")).unwrap());
}

#[test]
fn gradient_check_exit_codes() {
    let out = bin().args(["gradient-check", "--h", "0.5", "--M", "4", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error"));
    let out = bin().args(["gradient-check", "--h", "1.5", "--tolerance", "1e-30"]).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "scenario = \"general\"\n[numerics]\nrho_factor = -1\n").unwrap();
    let out = bin().args(["scenario", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numerics.rho_factor"));

    let out = bin().args(["scenario", "nonexistent"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    // declared bound above the actual smallest eigenvalue
    fs::write(&path, "[problem]\nsource = \"1\"\ndiffusion = [[0.1, 0], [0, 0.1]]\nellipticity = 0.5\n").unwrap();
    let out = bin().args(["solve", "--h", "0.8", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, "").unwrap();
    let out = bin().args(["scenario", "general", "--levels", "1", "--out"]).arg(file.join("sub")).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("plain"));
}

#[test]
fn solve_and_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().args(["solve", "time_dependent/step", "--h", "0.4", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["table.csv", "source.csv", "state_exact.csv", "state_recovered.csv", "probes.csv", "manifest.json"] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let out = bin().args(["probe", "time_dependent/step", "--h", "0.4", "--point", "-0.1,-0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("coordinate,exact,recovered"));
    assert_eq!(text.lines().count(), 1 + 10);
    let out = bin().args(["probe", "general", "--h", "0.4", "--node", "0", "--slice", "x", "--field", "state"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 9);
}

#[test]
fn bundled_configs_round_trip_and_run() {
    let paths = configs();
    assert_eq!(paths.len(), 4);
    for path in paths {
        let spec = parse_config(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(parse_config(&spec.emit()).unwrap(), spec, "{}", path.display());
        let mut quick = spec.clone();
        quick.numerics.levels = vec![1];
        quick.numerics.h = None;
        let run = run_scenario(&quick.scenario(), &[1], 1).unwrap();
        assert!(run.outcomes[0].is_ok(), "{}", path.display());
    }
    for name in Scenario::NAMES {
        let spec = ExperimentSpec::builtin(name).unwrap();
        assert_eq!(parse_config(&spec.emit()).unwrap(), spec);
    }
}

#[test]
fn bundled_configs_match_the_builtin_scenarios() {
    for name in ["space_dependent", "general", "source_condition"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"));
        let spec = parse_config(&fs::read_to_string(path).unwrap()).unwrap();
        let from_config = run_scenario(&spec.scenario(), &[1, 2], 2).unwrap();
        let builtin = run_scenario(&Scenario::by_name(name).unwrap(), &[1, 2], 2).unwrap();
        for (a, b) in from_config.table.rows.iter().zip(&builtin.table.rows) {
            let (a, b) = (a.errors.unwrap(), b.errors.unwrap());
            for (x, y) in [(a.state_l2, b.state_l2), (a.state_sigma, b.state_sigma), (a.source_l2, b.source_l2)] {
                assert!((x - y).abs() <= 1e-10 * y.abs(), "{name}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn table_values_round_trip() {
    // shaped like the space-dependent error table
    let errors = [(0.2160, 0.29, 0.58), (0.0534, 0.071, 0.21), (0.0132, 0.018, 0.07), (0.0029, 0.0045, 0.026)];
    let rows = errors
        .iter()
        .enumerate()
        .map(|(i, &(a, b, c))| {
            let h = 0.8 / 2f64.powi(i as i32);
            EocRow {
                level: i + 1,
                h,
                delta: 0.5 * h * h,
                rho: 0.01 * h,
                errors: Some(ErrorNorms { state_l2: a, state_sigma: b, source_l2: c / 3.0 }),
                iterations: Some(20 + i),
                failure: None,
            }
        })
        .collect();
    let table = EocTable::from_rows(rows);
    let mut buf = Vec::new();
    table.write_table_csv(&mut buf).unwrap();
    let back = read_table(buf.as_slice()).unwrap();
    assert_eq!(back.rows.len(), 4);
    for (a, b) in table.rows.iter().zip(&back.rows) {
        assert_eq!((a.level, a.h, a.delta, a.rho, a.iterations), (b.level, b.h, b.delta, b.rho, b.iterations));
        assert_eq!(a.errors, b.errors);
    }
    assert_eq!(table.means, back.means);
}
