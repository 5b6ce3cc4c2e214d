use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cylint_cli::VerificationReport;

fn cylint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cylint"))
        .args(args)
        .env("CYLINT_WORKERS", "3")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn report(dir: &Path) -> VerificationReport {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

const ZERO: &str = r#"
name = "zero"
[noise]
dim = 3
cov = "identity"
[[process]]
name = "zero"
intervals = 2
op = "zero"
"#;

#[test]
fn zero_process_passes_trivially() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "zero.toml", ZERO);
    let out = tmp.path().join("out");
    let res = cylint(&["isometry-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rep = report(&out);
    assert_eq!(rep.schema, 1);
    assert!(rep.pass && rep.is_consistent());
    let iso = rep.checks.iter().find(|c| c.check_id == "zero/ito_isometry").unwrap();
    assert_eq!((iso.lhs_mean, iso.rhs), (0.0, 0.0));
}

#[test]
fn isotropic_gaussian_isometry_at_eight() {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/isometry_gauss8.toml");
    let tmp = tempfile::tempdir().unwrap();
    let res = cylint(&["isometry-check", "--config", scenario.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let rep = report(tmp.path());
    assert_eq!((rep.seed, rep.replicas), (42, 100_000));
    let iso = &rep.checks[0];
    assert_eq!(iso.rhs, 8.0);
    assert!((iso.lhs_mean - 8.0).abs() <= 3.0 * iso.lhs_se);
}

#[test]
fn rerun_is_identical_up_to_wall_clock() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "zero.toml", ZERO.replace("op = \"zero\"", "op = \"identity\"").as_str());
    let run = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        let res = cylint(&["isometry-check", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0));
        let mut rep = report(&out);
        rep.wall_clock_seconds = 0.0;
        rep
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("c", "5"), run("d", "6"));
}

#[test]
fn config_errors_exit_with_two_and_a_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "name = \"bad\"\n[noise]\ndim = 2\ncov = \"identity\"\nreplicas = \"many\"\n");
    let res = cylint(&["charfn-check", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 5"), "{err}");

    let cfg = write(tmp.path(), "shape.toml", "name = \"s\"\n[noise]\ndim = 2\ncov = { diag = [1.0, 2.0, 3.0] }\n");
    let res = cylint(&["charfn-check", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("noise.cov"));

    let res = cylint(&["charfn-check", "--config", "/nonexistent.toml"]);
    assert_eq!(res.status.code(), Some(2));
    let res = cylint(&["no-such-command"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failing_check_exits_with_one() {
    // A single Picard sweep cannot reach the fixed point, so the limits from
    // the two starting iterates still differ.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "picard.toml",
        r#"
name = "short-picard"
replicas = 50
[noise]
dim = 2
cov = "identity"
[spde]
F = { kind = "linear", c = -1.0 }
G = { kind = "constant", op = "identity" }
X0 = [1.0, 1.0]
dt = 0.125
scheme = "picard"
max_iter = 1
"#,
    );
    let out = tmp.path().join("out");
    let res = cylint(&["spde-solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("picard_uniqueness"));
    let rep = report(&out);
    assert!(!rep.pass && rep.is_consistent());
    assert!(out.join("picard.json").exists());
}

#[test]
fn spde_outputs_csv_time_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "heat.toml",
        r#"
name = "heat"
replicas = 400
[noise]
dim = 3
cov = "identity"
[spde]
F = { kind = "zero" }
G = { kind = "constant", op = { diag = [1.0, 0.5, 0.25] } }
dt = 0.0625
keep_paths = 2
"#,
    );
    let out = tmp.path().join("out");
    let res = cylint(&["spde-solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let moments = fs::read_to_string(out.join("moments.csv")).unwrap();
    assert_eq!(moments.lines().next(), Some("t,mean_sq,std_error"));
    assert_eq!(moments.lines().count(), 18);
    let path = fs::read_to_string(out.join("path_1.csv")).unwrap();
    assert_eq!(path.lines().next(), Some("t,coord_1,coord_2,coord_3"));
    assert!(report(&out).checks.iter().any(|c| c.check_id == "spde_linear_oracle"));
}

#[test]
fn simulate_without_process_dumps_increments() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sim.toml",
        "name = \"sim\"\n[noise]\ndim = 2\njumps = { rate = 1.0, dist = \"gaussian\", param = 1.0 }\n[simulate]\nsteps = 10\npaths = 3\n",
    );
    let out = tmp.path().join("out");
    let res = cylint(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    for r in 0..3 {
        let csv = fs::read_to_string(out.join(format!("increments_{r}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with("t_start,t_end,coord_1,coord_2"));
    }
}
