//! End-to-end checks of the `ula` binary: exit codes, file shapes, and
//! byte-level determinism of the outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

fn ula_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ula"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL_OU: &str = r#"
name = "small_ou"
seed = 7
n_chains = 64
x0 = [1.0]

[model]
drift = "ou"
dim = 1
rate = 1.0

[model.diffusion]
kind = "constant"
scale = 1.4142135623730951

[schedule]
kind = "polynomial"
theta = 2.0
a = 1.0

[checkpoints]
explicit = [16, 64, 256]
"#;

fn rates_section() -> &'static str {
    r#"
[reference]
method = "exact_gaussian"
n_samples = 1
mean = [0.0]
cov_diag = [1.0]

[[distances]]
estimator = "exact_ou_law"
p = 2.0

[rate]
theorem = "t21_w1w0"
alpha = 2.0
tol = 0.5
drop_fraction = 0.0
"#
}

#[test]
fn sample_writes_batches_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL_OU);
    let out = dir.path().join("out");
    let status = ula_bin()
        .args(["sample", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "checkpoint,t_n,file,diverged_count");
    assert!(lines[1].starts_with("16,"));
    assert!(lines[2].starts_with("64,"));
    assert!(lines[3].starts_with("256,"));
    for n in ["batch_00000016.csv", "batch_00000064.csv", "batch_00000256.csv"] {
        let text = std::fs::read_to_string(out.join(n)).unwrap();
        assert_eq!(text.lines().count(), 65, "{n}: header + 64 chains");
        assert_eq!(text.lines().next().unwrap(), "chain,x_1");
    }
}

#[test]
fn sample_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL_OU);
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&o1, &o2] {
        let status = ula_bin()
            .args(["sample", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    for name in ["manifest.csv", "batch_00000016.csv", "batch_00000256.csv"] {
        let a = std::fs::read(o1.join(name)).unwrap();
        let b = std::fs::read(o2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
    }
}

#[test]
fn sample_ulab_format_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.cfg",
        &SMALL_OU.replace("seed = 7", "seed = 7\nbatch_format = \"ulab1\""),
    );
    let out = dir.path().join("out");
    let status = ula_bin()
        .args(["sample", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let values = ula::io::read_batch_ulab(&out.join("batch_00000064.ulab")).unwrap();
    assert_eq!(values.nrows(), 64);
    assert_eq!(values.ncols(), 1);
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", SMALL_OU);
    let (o1, o2) = (dir.path().join("a"), dir.path().join("b"));
    ula_bin()
        .args(["sample", cfg.to_str().unwrap(), "--out", o1.to_str().unwrap()])
        .status()
        .unwrap();
    ula_bin()
        .args([
            "sample",
            cfg.to_str().unwrap(),
            "--seed",
            "8",
            "--out",
            o2.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    let a = std::fs::read(o1.join("batch_00000064.csv")).unwrap();
    let b = std::fs::read(o2.join("batch_00000064.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // increasing explicit schedule violates monotonicity
    let bad = SMALL_OU.replace(
        "kind = \"polynomial\"\ntheta = 2.0\na = 1.0",
        "kind = \"explicit\"\nsteps = [0.5, 0.6]",
    );
    let cfg = write(dir.path(), "bad.cfg", &bad);
    let out = ula_bin()
        .args(["sample", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("monotonicity"), "message names the clause: {text}");

    // unknown key
    let cfg = write(dir.path(), "bad2.cfg", &SMALL_OU.replace("seed = 7", "sed = 7"));
    let out = ula_bin()
        .args(["sample", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rate_pipeline_passes_on_ou() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "r.cfg", &format!("{SMALL_OU}{}", rates_section()));
    let out = dir.path().join("out");
    let status = ula_bin()
        .args(["rate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rates = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    assert_eq!(rates.lines().next().unwrap(), "n,t_n,estimator,p,value,stderr");
    assert_eq!(rates.lines().count(), 4);
    let verdict = std::fs::read_to_string(out.join("verdict.csv")).unwrap();
    assert_eq!(verdict.lines().next().unwrap(), "slope,predicted,tol,r2,pass");
    assert!(verdict.lines().nth(1).unwrap().ends_with(",true"));
}

#[test]
fn wrong_prediction_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let section = rates_section()
        .replace("alpha = 2.0", "alpha = 1.0")
        .replace("tol = 0.5", "tol = 0.05");
    let cfg = write(dir.path(), "r.cfg", &format!("{SMALL_OU}{section}"));
    let out = dir.path().join("out");
    let status = ula_bin()
        .args(["rate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
    let verdict = std::fs::read_to_string(out.join("verdict.csv")).unwrap();
    assert!(verdict.lines().nth(1).unwrap().ends_with(",false"));
}

#[test]
fn divergent_experiment_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // explicit giant steps blow up the OU chain: |1 - eta*a| = 999 amplifies
    // the state each step until it overflows to infinity
    let steps = vec!["1000.0"; 150].join(", ");
    let diverging = format!(
        r#"
name = "diverge"
seed = 1
n_chains = 4
x0 = [1.0]

[model]
drift = "ou"
dim = 1
rate = 1.0

[model.diffusion]
kind = "constant"
scale = 0.0

[schedule]
kind = "explicit"
steps = [{steps}]

[checkpoints]
explicit = [150]
"#
    );
    let cfg = write(dir.path(), "d.cfg", &diverging);
    let out = ula_bin()
        .args(["sample", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn check_reports_probes() {
    let dir = tempfile::tempdir().unwrap();
    let holder = SMALL_OU.replace(
        "drift = \"ou\"\ndim = 1\nrate = 1.0",
        "drift = \"holder\"\ndim = 1\nalpha = 0.5",
    );
    let cfg = write(dir.path(), "h.cfg", &holder);
    let out = ula_bin()
        .args(["check", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("K2_hat"), "{text}");
    assert!(text.contains("schedule: valid"), "{text}");
    assert!(text.contains("holder modulus"), "{text}");
}

#[test]
fn oracle_command_is_deterministic_and_green() {
    let o1 = ula_bin().arg("oracle").output().unwrap();
    let o2 = ula_bin().arg("oracle").output().unwrap();
    assert_eq!(o1.status.code(), Some(0));
    assert_eq!(o1.stdout, o2.stdout);
    assert_eq!(String::from_utf8_lossy(&o1.stdout).lines().count(), 3);
}

#[test]
fn bundled_configs_parse_and_validate() {
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for name in [
        "ou_exact.cfg",
        "holder_alpha05.cfg",
        "bridge_ridge.cfg",
        "bridge_gamma15.cfg",
    ] {
        let cfg = ula::config::ExperimentConfig::load(&base.join(name))
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!cfg.checkpoints.is_empty());
        assert!(!cfg.distances.is_empty());
        assert!(cfg.rate.is_some());
        if name.starts_with("bridge") {
            let b = cfg.bridge.expect("bridge config must carry a bridge run");
            assert_eq!(b.data.len(), 20);
            assert_eq!(b.data.dim(), 3);
        }
    }
}

#[test]
fn rate_missing_rate_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "r.cfg", SMALL_OU);
    let status = ula_bin()
        .args(["rate", cfg.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
