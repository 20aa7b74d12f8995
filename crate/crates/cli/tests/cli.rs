use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdo-lab"))
        .args(args)
        .output()
        .expect("spawn cdo-lab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn run_cfg(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Copies a fixture with some top-level or section keys replaced.
fn variant(dir: &TempDir, base: &str, edit: impl FnOnce(&mut toml::Table)) -> PathBuf {
    let mut t: toml::Table = fs::read_to_string(fixture(base)).unwrap().parse().unwrap();
    edit(&mut t);
    let p = dir.path().join(format!("variant_{base}"));
    fs::write(&p, toml::to_string(&t).unwrap()).unwrap();
    p
}

fn section<'a>(t: &'a mut toml::Table, name: &str) -> &'a mut toml::Table {
    t.entry(name)
        .or_insert_with(|| toml::Value::Table(Default::default()))
        .as_table_mut()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn example_family_is_certified() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("check", &fixture("example_family.cfg"), dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = json(&dir.path().join("check_report.json"));
    for c in ["P1", "P2", "M1", "M2", "derivative", "moments", "regularity"] {
        assert_eq!(rep["verdicts"][c], "pass", "{c}");
    }
    let meta = json(&dir.path().join("run_metadata.json"));
    assert_eq!(meta["exit_code"], 0);
    assert_eq!(meta["seed"], 42);
    // Defaults are spelled out.
    assert_eq!(meta["config"]["check"]["lhs_points"], 1000);
    assert_eq!(meta["config"]["verify"]["checkpoints"], 10);
    assert_eq!(meta["drift_convention"], "eq16");
}

#[test]
fn distinct_separable_volatilities_fail_m1_with_a_witness() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("check", &fixture("separable_distinct.cfg"), dir.path(), &[]);
    assert_eq!(code(&out), 1);
    let rep = json(&dir.path().join("check_report.json"));
    assert_eq!(rep["verdicts"]["M1"], "fail");
    let m1 = rep["certification"]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["condition"] == "M1")
        .unwrap();
    let w = &m1["witness"];
    assert!(w["violation"].as_f64().unwrap() > 0.0);
    assert_eq!(w["r"][0], w["r"][1]);
}

#[test]
fn big_negative_jump_fails_p2_with_a_witness() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("check", &fixture("negative_big_jump.cfg"), dir.path(), &[]);
    assert_eq!(code(&out), 1);
    let rep = json(&dir.path().join("check_report.json"));
    assert_eq!(rep["verdicts"]["P2"], "fail");
    let p2 = rep["certification"]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["condition"] == "P2")
        .unwrap();
    assert_eq!(p2["witness"]["u"], -2.0);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run_cfg("check", &fixture("malformed.cfg"), dir.path(), &[])), 2);
    assert_eq!(code(&run_cfg("check", &dir.path().join("missing.cfg"), dir.path(), &[])), 2);
    assert_eq!(code(&run(&["check"])), 2);

    let no_seed = variant(&dir, "zero_vol.cfg", |t| {
        t.remove("seed");
    });
    assert_eq!(code(&run_cfg("check", &no_seed, dir.path(), &[])), 2);
    assert_eq!(code(&run_cfg("check", &no_seed, dir.path(), &["--seed", "9"])), 0);

    let bad_dt = variant(&dir, "zero_vol.cfg", |t| {
        t.insert("dt".into(), 0.05.into());
    });
    assert_eq!(code(&run_cfg("simulate", &bad_dt, dir.path(), &[])), 2);

    let bad_condition = variant(&dir, "zero_vol.cfg", |t| {
        section(t, "check").insert("conditions".into(), toml::Value::Array(vec!["P3".into()]));
    });
    assert_eq!(code(&run_cfg("check", &bad_condition, dir.path(), &[])), 2);

    let wrong_ratings = variant(&dir, "zero_vol.cfg", |t| {
        section(t, "r0").insert("spreads".into(), toml::Value::Array(vec![0.0.into()]));
    });
    assert_eq!(code(&run_cfg("simulate", &wrong_ratings, dir.path(), &[])), 2);

    // Levy-only configs are fine for laplace but not for check.
    assert_eq!(code(&run_cfg("check", &fixture("atoms.cfg"), dir.path(), &[])), 2);
    let flag = run_cfg("laplace", &fixture("atoms.cfg"), dir.path(), &["--drift-convention", "eq99"]);
    assert_eq!(code(&flag), 2);
}

fn laplace_table(cfg: &Path, dir: &Path, extra: &[&str]) -> Vec<(f64, f64, f64, f64, String)> {
    let out = run_cfg("laplace", cfg, dir, extra);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    csv_rows(&dir.join("laplace.csv"))
        .into_iter()
        .map(|r| {
            let f = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
            (f(&r[0]), f(&r[1]), f(&r[2]), f(&r[3]), r[4].clone())
        })
        .collect()
}

#[test]
fn laplace_tables_match_closed_forms() {
    let dir = TempDir::new().unwrap();
    let wiener = variant(&dir, "atoms.cfg", |t| {
        *section(t, "levy") = [("q".to_string(), toml::Value::from(1.0))].into_iter().collect();
    });
    let rows = laplace_table(&wiener, dir.path(), &[]);
    assert_eq!(rows.len(), 51);
    for (z, j, dj, d2j, s) in &rows {
        assert_eq!(s, "ok");
        assert!((j - 0.5 * z * z).abs() <= 1e-12);
        assert!((dj - z).abs() <= 1e-12);
        assert!((d2j - 1.0).abs() <= 1e-12);
    }

    let drift = variant(&dir, "atoms.cfg", |t| {
        *section(t, "levy") = [("a".to_string(), toml::Value::from(1.0))].into_iter().collect();
    });
    for (z, j, ..) in laplace_table(&drift, dir.path(), &["--z-steps", "11"]) {
        assert_eq!(j, -z);
    }

    let atoms = [(0.5, 1.0), (-0.3, 2.0), (1.5, 0.7), (-2.0, 0.1)];
    let closed = |z: f64| {
        let mut j = -0.2 * z + 0.25 * z * z;
        for (y, m) in atoms {
            let comp = if f64::abs(y) < 1.0 { z * y } else { 0.0 };
            j += m * ((-z * y).exp() - 1.0 + comp);
        }
        j
    };
    let rows = laplace_table(&fixture("atoms.cfg"), dir.path(), &["--z-max", "5", "--z-steps", "101"]);
    for (z, j, ..) in rows {
        let want = closed(z);
        assert!((j - want).abs() <= 1e-9 * want.abs().max(1e-300), "z = {z}: {j} vs {want}");
    }
}

#[test]
fn laplace_marks_points_outside_the_domain() {
    let dir = TempDir::new().unwrap();
    // ∫ e^{-zy} 2 e^{-3y} dy diverges for z ≤ -3.
    let rows = laplace_table(&fixture("example_family.cfg"), dir.path(), &["--z-min=-4", "--z-max", "0", "--z-steps", "5"]);
    assert_eq!(rows[0].4, "domain");
    assert!(!rows[0].1.is_finite());
    assert_eq!(rows[4].4, "ok");
    assert_eq!(rows[4].1, 0.0);
}

#[test]
fn zero_volatility_simulation_transports_the_curve() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("simulate", &fixture("zero_vol.cfg"), dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ns = |z: f64, spread: f64| {
        let e = (-z / 0.5).exp();
        0.04 - 0.02 * e + 0.01 * (z / 0.5) * e + spread
    };
    for t in ["0.5", "1"] {
        let rows = csv_rows(&dir.path().join(format!("surface_p0_t{t}.csv")));
        let t: f64 = t.parse().unwrap();
        assert_eq!(rows.len(), 31);
        for r in &rows {
            let z: f64 = r[0].parse().unwrap();
            if z + t > 3.0 + 1e-9 {
                continue;
            }
            for (i, spread) in [0.01, 0.0].into_iter().enumerate() {
                let v: f64 = r[i + 1].parse().unwrap();
                assert!((v - ns(z + t, spread)).abs() < 1e-14, "t = {t}, z = {z}");
            }
        }
    }
    for name in ["short_end_p0.csv", "loss_p0.csv", "prices_p0_t0.csv", "prices_p0_t1.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn simulation_outputs_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let cfg = fixture("example_family.cfg");
    assert_eq!(code(&run_cfg("simulate", &cfg, a.path(), &[])), 0);
    assert_eq!(code(&run_cfg("simulate", &cfg, b.path(), &[])), 0);
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() > 10);
    for n in names {
        let (x, y) = (fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        assert!(x == y, "{n:?} differs");
    }
    // Paths without a jump are deterministic here, so look across seeds.
    let base = fs::read(a.path().join("short_end_p0.csv")).unwrap();
    let differs = (43..53).any(|s| {
        let c = TempDir::new().unwrap();
        let seed = s.to_string();
        assert_eq!(code(&run_cfg("simulate", &cfg, c.path(), &["--seed", &seed, "--force"])), 0);
        fs::read(c.path().join("short_end_p0.csv")).unwrap() != base
    });
    assert!(differs);
}

#[test]
fn maturity_beyond_the_grid_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(&dir, "zero_vol.cfg", |t| {
        section(t, "simulate").insert("maturities".into(), toml::Value::Array(vec![5.0.into()]));
    });
    let out = run_cfg("simulate", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 4);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("beyond the surface grid"), "{err}");
}

#[test]
fn uncertified_configs_need_force() {
    let dir = TempDir::new().unwrap();
    let cfg = fixture("m2_violating.cfg");
    assert_eq!(code(&run_cfg("simulate", &cfg, dir.path(), &[])), 1);
    assert!(!dir.path().join("surface_p0_t1.csv").exists());
    // A jump inverts the short end, which aborts the coupled loss simulation.
    let many = variant(&dir, "m2_violating.cfg", |t| {
        section(t, "simulate").insert("paths".into(), 20.into());
    });
    let out = run_cfg("simulate", &many, dir.path(), &["--force"]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model inconsistency"));
}

#[test]
fn m2_violation_fails_the_monotonicity_audit() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("verify", &fixture("m2_violating.cfg"), dir.path(), &["--force"]);
    assert_eq!(code(&out), 1);
    let rep = json(&dir.path().join("verify_report.json"));
    assert_eq!(rep["verdicts"]["monotonicity"], "fail");
    assert_eq!(rep["verdicts"]["positivity"], "pass");
    let gap = rep["surface_audit"]["min_gap"]["value"].as_f64().unwrap();
    let tol = rep["surface_audit"]["tolerance"].as_f64().unwrap();
    assert!(gap < -10.0 * tol);
}

#[test]
fn verify_passes_with_drift_and_fails_without() {
    let dir = TempDir::new().unwrap();
    // A louder, coarser copy of the Wiener acceptance config.
    let cfg = variant(&dir, "wiener.cfg", |t| {
        t.insert("n_paths".into(), 2000.into());
        t.insert("dt".into(), 0.02.into());
        section(t, "grid").insert("dz".into(), 0.02.into());
        section(t, "volatility").insert("sigma".into(), 0.2.into());
        t.insert("seed".into(), 11.into());
    });
    let ok = dir.path().join("ok");
    let out = run_cfg("verify", &cfg, &ok, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rows = csv_rows(&ok.join("martingale.csv"));
    assert_eq!(rows.len(), 10 * 3);

    let bad = dir.path().join("bad");
    let out = run_cfg("verify", &cfg, &bad, &["--no-drift"]);
    assert_eq!(code(&out), 1);
    let rep = json(&bad.join("verify_report.json"));
    assert_eq!(rep["verdicts"]["martingale"], "fail");
    assert_eq!(rep["no_drift"], true);
    assert!(rep["martingale"]["max_normalized"].as_f64().unwrap() > 3.0);
}

#[test]
fn drift_convention_flag_is_recorded() {
    let dir = TempDir::new().unwrap();
    let out = run_cfg("check", &fixture("zero_vol.cfg"), dir.path(), &["--drift-convention", "eq34"]);
    assert_eq!(code(&out), 0);
    let meta = json(&dir.path().join("run_metadata.json"));
    assert_eq!(meta["drift_convention"], "eq34");
    assert_eq!(meta["config"]["drift_convention"], "eq34");
}

#[test]
fn zero_volatility_verification_passes() {
    let dir = TempDir::new().unwrap();
    // Equal curves: λ ≡ 0, so every path is the same deterministic one.
    let cfg = variant(&dir, "zero_vol.cfg", |t| {
        t.insert("n_paths".into(), 50.into());
        section(t, "r0").insert("spreads".into(), toml::Value::Array(vec![0.0.into(), 0.0.into()]));
        section(t, "verify").insert("audit_paths".into(), 5.into());
    });
    let out = run_cfg("verify", &cfg, dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}
