use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_levyheat"));
    c.env_remove("LEVYHEAT_OUT");
    c
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn levyheat")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `quick.toml` with `edit` applied to its text.
fn edited(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(config("quick.toml")).unwrap();
    let p = dir.join("edited.toml");
    std::fs::write(&p, edit(text)).unwrap();
    p
}

fn data_rows(text: &str) -> usize {
    text.lines().filter(|l| !l.starts_with('#')).count()
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), |t| {
        t.replace("beta = 0.5\n", "beta = 0.5\nbetta = 0.5\n")
    });
    for sub in ["describe", "solve", "strong-rates"] {
        let o = run(&[sub], &cfg, dir.path());
        assert_eq!(o.status.code(), Some(2), "{sub}: {}", stderr(&o));
        assert!(stderr(&o).contains("betta"), "{}", stderr(&o));
    }
}

#[test]
fn invalid_beta_exits_2_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), |t| t.replace("beta = 0.5", "beta = 1.5"));
    for sub in ["describe", "solve", "weak-rates", "malliavin-verify"] {
        let o = run(&[sub], &cfg, dir.path());
        assert_eq!(o.status.code(), Some(2), "{sub}: {}", stderr(&o));
        assert!(stderr(&o).contains("β"), "{}", stderr(&o));
    }
}

#[test]
fn asymmetric_amplitudes_and_thin_noise_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), |t| {
        t.replace(
            "amplitude = \"rademacher\"",
            "amplitude = \"atoms\"\namplitude_atoms = [[1.0, 0.7], [-1.0, 0.3]]",
        )
    });
    let o = run(&["describe"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("symmetric"), "{}", stderr(&o));

    let cfg = edited(dir.path(), |t| {
        t.replace("sizes = [2, 4, 8]", "sizes = [8, 16, 32]")
    });
    let o = run(&["describe"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("4/h_min"), "{}", stderr(&o));

    let cfg = edited(dir.path(), |t| t.replace("q = 2.0", "q = 4.5"));
    let o = run(&["describe"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("q = 4.5"), "{}", stderr(&o));
}

#[test]
fn solve_writes_m_plus_one_rows() {
    let dir = tempfile::tempdir().unwrap();
    for (cfg, steps) in [("quick.toml", 16), ("default.toml", 64)] {
        let o = run(&["solve"], &config(cfg), dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let text = std::fs::read_to_string(dir.path().join("trajectory.txt")).unwrap();
        assert_eq!(data_rows(&text), steps + 1, "{cfg}");
        assert!(text.starts_with("# config_hash="));
        assert!(text.contains("# seed="));
    }
}

#[test]
fn describe_lists_each_rung_once() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["describe"], &config("default.toml"), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for n in [2, 4, 8, 16] {
        assert_eq!(
            text.matches(&format!("spectral(N={n}) ")).count(),
            1,
            "N={n}\n{text}"
        );
    }
    assert_eq!(text.matches("spectral(N=512) k=").count(), 5);
    for m in [16, 32, 64, 128, 256] {
        assert_eq!(
            text.matches(&format!(" M={m}  ")).count(),
            1,
            "M={m}\n{text}"
        );
    }
    assert!(!dir.path().join("strong_rates.csv").exists());
}

#[test]
fn describe_diagonal_shows_k_equal_h_squared() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = edited(dir.path(), |t| {
        t.replace(
            "[discretization.time]",
            "[discretization.diagonal]\nsizes = [2, 4, 8]\n\n[discretization.time]",
        )
    });
    let o = run(&["describe"], &cfg, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().filter(|l| l.contains("(k = h²)")).collect();
    assert_eq!(lines.len(), 3);
    for (line, n) in lines.iter().zip([2.0f64, 4.0, 8.0]) {
        assert!(line.contains(&format!("k={:.6e}", 1.0 / (n * n))), "{line}");
    }
}

#[test]
fn rate_artifacts_are_deterministic_and_worker_invariant() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let cfg = config("quick.toml");
    let runs = [
        bin()
            .args(["ratio", "--workers", "1"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(a.path())
            .output()
            .unwrap(),
        bin()
            .args(["ratio", "--workers", "1"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(b.path())
            .output()
            .unwrap(),
        bin()
            .args(["ratio", "--workers", "3"])
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(c.path())
            .output()
            .unwrap(),
    ];
    for o in &runs {
        assert!(
            matches!(o.status.code(), Some(0) | Some(3)),
            "{}",
            stderr(o)
        );
    }
    for f in ["ratio.csv", "ratio.txt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(
            x,
            std::fs::read(b.path().join(f)).unwrap(),
            "{f} differs between runs"
        );
        assert_eq!(
            x,
            std::fs::read(c.path().join(f)).unwrap(),
            "{f} differs between worker counts"
        );
    }
    let csv = std::fs::read_to_string(a.path().join("ratio.csv")).unwrap();
    assert!(csv.starts_with("# config_hash="));
    assert!(csv.contains("# seed=1\n"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["solve", "--seed", "99"])
        .arg("--config")
        .arg(config("quick.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("trajectory.txt")).unwrap();
    assert!(text.contains("# seed=99\n"));
}

#[test]
fn output_env_var_is_used_without_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("solve")
        .arg("--config")
        .arg(config("quick.toml"))
        .env("LEVYHEAT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("trajectory.txt").exists());
}

#[test]
fn covariance_and_strong_rates_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, file) in [
        ("covariance", "covariance.csv"),
        ("strong-rates", "strong_rates.csv"),
        ("weak-rates", "weak_rates.csv"),
    ] {
        let o = run(&[sub], &config("quick.toml"), dir.path());
        assert!(
            matches!(o.status.code(), Some(0) | Some(3)),
            "{sub}: {}",
            stderr(&o)
        );
        let csv = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert!(csv.contains("sweep,h,k,estimator,estimate,se,n_samples,void\n"));
        assert_eq!(data_rows(&csv), 1 + 6, "{sub}:\n{csv}");
    }
}

#[test]
fn void_fit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // Two samples cannot resolve any rate.
    let cfg = edited(dir.path(), |t| t.replace("samples = 64", "samples = 2"));
    let o = run(&["strong-rates"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn identity_suites_pass_on_quick_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["operator-checks"], &config("quick.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = run(&["malliavin-verify"], &config("quick.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = std::fs::read_to_string(dir.path().join("malliavin_report.txt")).unwrap();
    assert!(report.starts_with("# config_hash="));
    assert!(report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .all(|l| l.ends_with("PASS")));
    assert!(report.contains("duality:linear rhs-closed-form"));
    assert!(report.contains("regularity-profile"));
}

#[test]
fn identity_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    // On a grid of T/2 the profile misses the short-time peak entirely.
    let cfg = edited(dir.path(), |t| {
        t.replace("profile_grids = [32, 64]", "profile_grids = [2, 64]")
    });
    let o = run(&["malliavin-verify"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(4), "{}{}", stdout(&o), stderr(&o));
    assert!(stderr(&o).contains("regularity-profile"));
}
