//! End-to-end tests of the `degel` binary: exit codes, emitted files, and
//! flag handling.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use degel_core::grid::{make_grid, ScalarField};
use degel_core::manufactured::ManufacturedCase;
use tempfile::TempDir;

fn degel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_degel"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Case {
    _tmp: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Case {
    fn new(config_text: &str) -> Case {
        let tmp = TempDir::new().unwrap();
        let config = tmp.path().join("case.toml");
        std::fs::write(&config, config_text).unwrap();
        let out = tmp.path().join("out");
        Case {
            _tmp: tmp,
            config,
            out,
        }
    }

    fn run(&self, subcommand: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            subcommand,
            "--config",
            self.config.to_str().unwrap(),
            "--out",
            self.out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        degel(&args)
    }

    fn json(&self, name: &str) -> serde_json::Value {
        let text = std::fs::read_to_string(self.out.join(name)).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    fn field(&self, name: &str, dim: usize, n: usize, m: usize, gamma: f64) -> ScalarField {
        let grid = std::sync::Arc::new(make_grid(dim, n, m, gamma).unwrap());
        let text = std::fs::read_to_string(self.out.join(name)).unwrap();
        ScalarField::from_csv(grid, &text).unwrap()
    }
}

const POWER_SMALL: &str = r#"
[grid]
dim = 2
n = 8
m = 16
gamma = 2.0

[manufactured]
case = "pure_power"
a = 1.0
b = 0.0
s = 1.5
"#;

const CONSTANT_PROBLEM: &str = r#"
[grid]
dim = 2
n = 16
m = 32
gamma = 2.0

[coefficients]
a = [["1", "0"], ["0", "1"]]
b = ["0", "0"]
c = "-1"

[rhs]
expression = "-1"

[boundary]
expression = "1"
"#;

#[test]
fn indicial_reports_exact_roots() {
    let case = Case::new(POWER_SMALL);
    let out = case.run("indicial", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("conditions PASS"));

    let report = case.json("indicial.json");
    let roots = &report["roots_at_anchor"];
    assert!((roots["mu_minus"].as_f64().unwrap() - (-0.5)).abs() <= 1e-12);
    assert!((roots["mu_plus"].as_f64().unwrap() - 1.5).abs() <= 1e-12);
    assert_eq!(report["report"]["passed"], serde_json::json!(true));
}

#[test]
fn config_errors_exit_with_code_two() {
    // Config file that does not exist.
    let out = degel(&["indicial", "--config", "/nonexistent/case.toml"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error:"));

    // Missing --config entirely.
    let out = degel(&["indicial"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--config"));

    // Both problem sections at once.
    let both = format!(
        "{POWER_SMALL}\n[coefficients]\na = [[\"1\",\"0\"],[\"0\",\"1\"]]\nb = [\"0\",\"0\"]\nc = \"-1\"\n\n[rhs]\nexpression = \"0\"\n"
    );
    let case = Case::new(&both);
    let out = case.run("indicial", &[]);
    assert_eq!(code(&out), 2);

    // Coefficient mode without a right-hand side.
    let no_rhs = r#"
[grid]
dim = 2
n = 8
m = 16
gamma = 2.0

[coefficients]
a = [["1", "0"], ["0", "1"]]
b = ["0", "0"]
c = "-1"
"#;
    let case = Case::new(no_rhs);
    let out = case.run("indicial", &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("rhs"));
}

#[test]
fn manufacture_round_trips_the_exact_fields() {
    let text = POWER_SMALL.replace("s = 1.5", "s = 1.5\npsi = \"1 + 0.25*x1^2\"");
    let case = Case::new(&text);
    let out = case.run("manufacture", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let grid = std::sync::Arc::new(make_grid(2, 8, 16, 2.0).unwrap());
    let reference = ManufacturedCase::pure_power(2, 1.0, 0.0, 1.5, "1 + 0.25*x1^2").unwrap();
    let u = case.field("u.csv", 2, 8, 16, 2.0);
    let f = case.field("f.csv", 2, 8, 16, 2.0);
    // 17 fractional digits in the CSV reproduce every f64 bit for bit.
    assert_eq!(
        u.sup_distance(&reference.exact_field(&grid).unwrap()).unwrap(),
        0.0
    );
    assert_eq!(
        f.sup_distance(&reference.rhs_field(&grid).unwrap()).unwrap(),
        0.0
    );
    assert!(case.out.join("case.json").exists());
    assert!(case.out.join("grid.json").exists());
}

#[test]
fn solve_recovers_the_constant_solution_in_both_modes() {
    let case = Case::new(CONSTANT_PROBLEM);
    let out = case.run("solve", &["--mode", "both"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let grid = std::sync::Arc::new(make_grid(2, 16, 32, 2.0).unwrap());
    let one = ScalarField::from_fn(grid, |_| 1.0).unwrap();
    for name in ["solution_direct.csv", "solution_continuation.csv"] {
        let u = case.field(name, 2, 16, 32, 2.0);
        assert!(
            u.sup_distance(&one).unwrap() <= 1e-9,
            "{name}: {:e}",
            u.sup_distance(&one).unwrap()
        );
    }

    let report = case.json("solve_report.json");
    assert_eq!(report["mode"], serde_json::json!("both"));
    assert_eq!(report["primary"]["mode"], serde_json::json!("Direct"));
    assert!(report["agreement_gap"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn analyze_fits_decay_and_repeats_bit_for_bit() {
    let text = r#"
[grid]
dim = 2
n = 24
m = 48
gamma = 2.0

[manufactured]
case = "pure_power"
a = 1.0
b = 0.0
s = 1.5

[[analyze]]
op = "fit_boundary_decay"
anchor = [0.0]

[[analyze]]
op = "holder_seminorm"
alpha = 0.5
sample_pairs = 500

[analyze.region]
kind = "ball"
center = [0.0, 0.5]
radius = 0.3
"#;
    let case = Case::new(text);
    let out = case.run("analyze", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));

    let records = case.json("analysis.json");
    let fit = &records[0]["result"];
    assert_eq!(records[0]["op"], serde_json::json!("fit_boundary_decay"));
    assert!((fit["exponent"].as_f64().unwrap() - 1.5).abs() <= 0.05);
    assert!(fit["r_squared"].as_f64().unwrap() >= 0.999);
    assert!(records[1]["result"]["seminorm"].as_f64().unwrap() > 0.0);

    // Same config and seed must reproduce the sampled results exactly.
    let first = std::fs::read(case.out.join("analysis.json")).unwrap();
    let rerun = Case::new(text);
    let out = rerun.run("analyze", &[]);
    assert_eq!(code(&out), 0);
    let second = std::fs::read(rerun.out.join("analysis.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn barrier_certificates_pass_and_fail_by_admissibility() {
    let admissible = r#"
[grid]
dim = 2
n = 8
m = 16
gamma = 2.0

[coefficients]
a = [["1", "0"], ["0", "1"]]
b = ["0", "0"]
c = "-1"

[rhs]
expression = "0"

[barrier]
sigma = 0.5
mu = 1.0
extra_samples = 20000
"#;
    let case = Case::new(admissible);
    let out = case.run("barrier", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = case.json("barrier.json");
    assert_eq!(report["report"]["passed"], serde_json::json!(true));
    assert_eq!(report["parameters"]["mu"].as_f64().unwrap(), 1.0);

    // mu = 2 lies beyond the positive characteristic root of mu^2 - mu - 1,
    // so the structural margin check must reject the certificate.
    let case = Case::new(&admissible.replace("mu = 1.0", "mu = 2.0"));
    let out = case.run("barrier", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("structural conditions fail"));
}

#[test]
fn full_verify_passes_then_fails_on_an_absurd_tolerance() {
    let text = r#"
[grid]
dim = 2
n = 16
m = 32
gamma = 2.0

[manufactured]
case = "pure_power"
a = 1.0
b = 0.0
s = 1.5

[solve]
max_steps = 40
"#;
    let case = Case::new(text);
    let out = case.run("full-verify", &[]);
    assert_eq!(code(&out), 0, "stderr: {}\nstdout: {}", stderr(&out), stdout(&out));
    assert!(stdout(&out).contains("all stages passed"));
    let summary = case.json("verify_summary.json");
    assert_eq!(summary["failed"], serde_json::json!(0));

    let case = Case::new(&format!("{text}\n[verify]\nerror_tol = 1e-12\n"));
    let out = case.run("full-verify", &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("stage(s) failed"));
    let summary = case.json("verify_summary.json");
    assert!(summary["failed"].as_u64().unwrap() >= 1);
    let failed_exact_error = summary["stages"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| s["stage"] == "exact_error" && s["status"] == "FAIL");
    assert!(failed_exact_error, "summary: {summary}");
}

#[test]
fn quiet_suppresses_progress_output() {
    let case = Case::new(POWER_SMALL);
    let out = case.run("solve", &["--quiet"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty());
    assert!(case.out.join("solution_direct.csv").exists());
}

#[test]
fn mode_flag_overrides_the_config() {
    let case = Case::new(CONSTANT_PROBLEM);
    let out = case.run("solve", &["--mode", "continuation"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report = case.json("solve_report.json");
    assert_eq!(report["mode"], serde_json::json!("continuation"));
    assert_eq!(report["primary"]["mode"], serde_json::json!("Continuation"));
    assert!(case.out.join("solution_continuation.csv").exists());
    assert!(!case.out.join("solution_direct.csv").exists());
}

fn path_of(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analysis_input_files_round_trip_through_solve_outputs() {
    // Solve, then re-analyze the written field through the file loader.
    let base = r#"
[grid]
dim = 2
n = 16
m = 32
gamma = 2.0

[manufactured]
case = "pure_power"
a = 1.0
b = 0.0
s = 1.5
"#;
    let case = Case::new(base);
    let out = case.run("solve", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let solved = case.out.join("solution_direct.csv");

    let follow_up = format!(
        r#"{base}
[analyze_input]
source = "files"
u = "{}"

[[analyze]]
op = "weighted_trace"
"#,
        path_of(&solved)
    );
    let case2 = Case::new(&follow_up);
    let out = case2.run("analyze", &[]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let records = case2.json("analysis.json");
    assert_eq!(records[0]["op"], serde_json::json!("weighted_trace"));
    // t |Du| of a t^{3/2} profile vanishes toward the bottom.
    assert!(records[0]["result"]["sup_t_gradient"].as_f64().unwrap() <= 0.05);
}
