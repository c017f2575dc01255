use std::path::Path;
use std::process::{Command, Output};

use squeezesim::cli::output::{SimulateDocument, CSV_SCHEMAS};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_squeezesim"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "schema_version = 1\n[run]\ntrials = 40\nbootstrap_resamples = 300\n[spin]\natoms = 20000\n";

#[test]
fn config_errors_exit_with_status_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let missing = write(tmp.path(), "missing.toml", "[run]\ntrials = 10\n");
    let o = run(&["simulate", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema_version"));

    let unknown = write(tmp.path(), "unknown.toml", "schema_version = 1\n[trap]\ndepth = 3.0\n");
    let o = run(&["simulate", "--config", &unknown, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("depth") && err.contains("line 3"), "{err}");

    let invalid = write(
        tmp.path(),
        "invalid.toml",
        "schema_version = 1\n[spin]\ncoherence = 1.5\n",
    );
    assert_eq!(
        run(&["simulate", "--config", &invalid, "--out", out]).status.code(),
        Some(2)
    );

    let empty = write(
        tmp.path(),
        "empty.toml",
        "schema_version = 1\n[sweep]\nfree_fall_ms = []\n",
    );
    assert_eq!(run(&["sweep", "--config", &empty, "--out", out]).status.code(), Some(2));

    assert_eq!(run(&["simulate", "--trials", "1", "--out", out]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn simulate_result_reloads_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        &format!("{SMALL}[protocol]\nfree_fall_ms = 0.7\nepsilon = 0.001\n"),
    );
    let out = tmp.path().join("out");
    let o = run(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("delta_theta") && stdout.contains("p_eff") && stdout.contains("dB"));

    let text = std::fs::read_to_string(out.join("result.json")).unwrap();
    let doc: SimulateDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(doc.config.run.seed, 5);
    assert_eq!(doc.software.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(serde_json::to_string_pretty(&doc).unwrap() + "\n", text);

    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    let mut lines = trials.lines();
    assert_eq!(lines.next().unwrap(), CSV_SCHEMAS[0].header);
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(first[1].to_bits(), doc.result.trials[0].theta1.to_bits());
    assert_eq!(first[2].to_bits(), doc.result.trials[0].theta2.to_bits());
    assert_eq!(trials.lines().count(), 41);
}

#[test]
fn sweep_writes_every_figure_with_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "sweep.toml",
        &format!(
            "{SMALL}[sweep]\nfree_fall_ms = [0.0, 1.0, 2.0]\nepsilons = [-0.002, 0.0, 0.002]\nangle_atoms = 5000\n\
             angle_trials = 20\ncss_estimate = {{ n_atoms = 5000, n_trials = 120 }}\n"
        ),
    );
    let out = tmp.path().join("out");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in CSV_SCHEMAS.iter().filter(|s| s.name.starts_with("fig")) {
        let text = std::fs::read_to_string(out.join(format!("{}.csv", s.name))).unwrap();
        assert_eq!(text.lines().next().unwrap(), s.header);
        assert!(!text.contains('\r'));
        let rows = text.lines().count() - 1;
        let expected = match s.name {
            "fig2" => 9,
            _ => 3,
        };
        assert_eq!(rows, expected, "{}", s.name);
    }
    // the analytic column is the reference curve at N = 5×10⁵, σ = 298 μrad
    let fig3b = std::fs::read_to_string(out.join("fig3b.csv")).unwrap();
    for line in fig3b.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let curve = f[1] / (5e5 * (1.0 - f[1])) + 298e-6f64.powi(2);
        assert!((f[4] - curve).abs() <= 1e-15 * curve.max(1.0));
    }
    let fig3a = std::fs::read_to_string(out.join("fig3a.csv")).unwrap();
    let css: Vec<f64> = fig3a
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(
        css[0] > css[2],
        "fluctuation-based 1 − p_eff should fall with free fall: {css:?}"
    );
}

#[test]
fn calibrate_hits_target_and_forced_uniform_mode_gives_unit_coupling() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "schema_version = 1\n[run]\ntrials = 2\n[spin]\natoms = 20000\n[sweep]\nfree_fall_ms = [0.0, 1.0]\n";
    let cfg = write(tmp.path(), "cal.toml", base);
    let out = tmp.path().join("cal");
    let o = run(&["calibrate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("calibration.json")).unwrap()).unwrap();
    let achieved = doc["geometry"]["achieved_mean_eta"].as_f64().unwrap();
    assert!((achieved - 0.9254).abs() < 1e-4);
    let direct = doc["table"][0]["mean_eta_direct"].as_f64().unwrap();
    assert!((direct - 0.9254).abs() < 2e-3, "{direct}");

    let uniform = write(
        tmp.path(),
        "uniform.toml",
        &format!("{base}[cavity]\nwaist_um = inf\ncommensurability_detuning = 0.0\n"),
    );
    let out = tmp.path().join("uniform");
    assert!(
        run(&["calibrate", "--config", &uniform, "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(doc["table"][0]["mean_eta_direct"].as_f64().unwrap(), 1.0);
    assert_eq!(doc["table"][1]["mean_eta_direct"].as_f64().unwrap(), 1.0);
}

#[test]
fn verify_passes_and_a_corrupted_tolerance_fails_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--suite", "oracle"]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines.len() >= 6 && lines.iter().all(|c| c["pass"] == true));

    let tol = write(
        tmp.path(),
        "tol.toml",
        "surrogate_sigma = 1e-9\nsurrogate_draws = 5000\n",
    );
    let o = run(&["verify", "--suite", "oracle", "--tolerances", &tol]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout
            .lines()
            .any(|l| l.contains("\"pass\":false") && l.contains("surrogate_")),
        "{stdout}"
    );

    let bad = write(tmp.path(), "bad.toml", "surrogate_sigmaa = 1.0\n");
    assert_eq!(run(&["verify", "--tolerances", &bad]).status.code(), Some(2));

    let o = run(&["verify", "--suite", "schema"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), CSV_SCHEMAS.len());
}

#[test]
fn back_to_back_demo_config_reaches_about_13_db() {
    let demo = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/demo_dt0.toml");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let o = run(&[
        "simulate",
        "--config",
        demo,
        "--trials",
        "150",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: SimulateDocument = serde_json::from_slice(&std::fs::read(out.join("result.json")).unwrap()).unwrap();
    let s = doc.result.squeezing;
    assert!(s.xi_db < -12.0 && s.xi_db > -14.0, "{}", s.xi_db);
    assert!(s.xi_sq_ci68_low < s.xi_sq && s.xi_sq < s.xi_sq_ci68_high);
    assert!(doc.result.p_eff < 0.01);
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".toml") && name != "verify_tolerances.toml" {
            let cfg = squeezesim::cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            let physics = cfg.physics().unwrap();
            for &dt in &cfg.sweep.free_fall_ms {
                cfg.protocol_choice()
                    .build(dt, 0.0, cfg.probes().unwrap(), cfg.protocol.hold, &physics)
                    .unwrap_or_else(|e| panic!("{name} dt={dt}: {e}"));
            }
            n += 1;
        }
    }
    assert!(n >= 6);
}
