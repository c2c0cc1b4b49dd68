use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eigenpert::sampling::{sample_gaussian, BasisSpec, ModelSpec};
use serde_json::Value;
use tempfile::TempDir;

fn eigenpert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigenpert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_CLT: &str = r#"{
    "command": "verify-clt",
    "model": {"kind": "spiked", "spikes": [2.0], "sigma": 1.0, "dim": 10},
    "n": 400,
    "replicates": 3000,
    "directions": [{"u": "theta", "v": {"basis": 4}}]
}"#;

#[test]
fn exit_code_matrix() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let ok = write(d, "ok.json", SMALL_CLT);
    let n0 = write(d, "n0.json", r#"{"n": 0}"#);
    let unknown = write(
        d,
        "unknown.json",
        r#"{"model": {"kind": "spiked", "spikes": [2.0], "sigma2": 1.0, "dim": 10}}"#,
    );
    let bad_type = write(d, "bad_type.json", "{\n  \"replicates\": \"many\"\n}");
    let mismatch = write(d, "mismatch.json", r#"{"command": "verify-risk"}"#);
    let bad_dir = write(
        d,
        "bad_dir.json",
        r#"{"directions": [{"u": "theta", "v": {"coords": [1.0, 0.0]}}], "n": 100, "replicates": 10}"#,
    );
    let missing_file = write(
        d,
        "missing.json",
        r#"{"directions": [{"u": "theta", "v": {"file": "nowhere.csv"}}]}"#,
    );
    let no_shrink = write(
        d,
        "no_shrink.json",
        r#"{"model": {"kind": "spiked", "spikes": [2.0], "sigma": 1.0, "dim": 10}, "ns": [500, 500], "replicates": 100}"#,
    );
    let blocker = write(d, "blocker", "a file, not a directory");
    let flat = write(d, "flat.csv", "1,0\n0,1\n1,0\n0,1\n-1,0\n0,-1\n");
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();

    let cases: Vec<(Vec<String>, i32, &str)> = vec![
        (vec![], 2, "missing subcommand"),
        (vec!["verify-everything".into()], 2, "unknown subcommand"),
        (
            vec!["verify-clt".into(), "--seed".into(), "minus-one".into()],
            2,
            "bad seed",
        ),
        (vec!["verify-clt".into(), "--config".into(), s(&ok)], 0, "passing run"),
        (vec!["verify-clt".into(), "--config".into(), s(&n0)], 2, "n = 0"),
        (
            vec!["verify-clt".into(), "--config".into(), s(&unknown)],
            2,
            "unknown key",
        ),
        (
            vec!["verify-clt".into(), "--config".into(), s(&bad_type)],
            2,
            "type mismatch",
        ),
        (
            vec!["verify-clt".into(), "--config".into(), s(&d.join("absent.json"))],
            2,
            "missing config",
        ),
        (
            vec!["verify-clt".into(), "--config".into(), s(&mismatch)],
            2,
            "command mismatch",
        ),
        (
            vec!["verify-clt".into(), "--config".into(), s(&bad_dir)],
            2,
            "direction dimension",
        ),
        (
            vec!["verify-clt".into(), "--config".into(), s(&missing_file)],
            2,
            "missing direction file",
        ),
        (
            vec!["verify-remainder".into(), "--config".into(), s(&no_shrink)],
            1,
            "failed verdict",
        ),
        (
            vec![
                "verify-clt".into(),
                "--config".into(),
                s(&ok),
                "--out".into(),
                s(&blocker),
            ],
            2,
            "unwritable output",
        ),
        (vec!["estimate".into()], 2, "estimate without data"),
        (vec!["estimate".into(), s(&d.join("absent.csv"))], 2, "missing data"),
        (vec!["estimate".into(), s(&flat)], 1, "no isolated eigenvalue"),
        (vec!["decompose".into(), s(&flat)], 2, "non-square matrix"),
    ];
    for (args, want, what) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = eigenpert(&args);
        assert_eq!(code(&out), want, "{what}: stderr {}", stderr(&out));
    }
}

#[test]
fn unknown_key_is_named_on_stderr() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": {"kind": "spiked", "spikes": [2.0], "sigma2": 1.0, "dim": 10}}"#,
    );
    let out = eigenpert(&["verify-clt", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sigma2"), "{}", stderr(&out));
}

#[test]
fn reports_are_reproducible_and_echo_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "clt.json", SMALL_CLT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = eigenpert(&[
            "verify-clt",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "17",
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(code(&run), 0, "{}", stderr(&run));
        assert!(run.stdout.is_empty());
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    assert_eq!(
        fs::read(a.join("cells.csv")).unwrap(),
        fs::read(b.join("cells.csv")).unwrap()
    );

    let report = json(&a.join("report.json"));
    assert_eq!(report["seed"], 17);
    assert_eq!(report["config"]["seed"], 17);
    assert_eq!(report["config"]["command"], "verify-clt");
    assert_eq!(report["config"]["nodes"], 64);
    assert_eq!(report["config"]["cluster_tol"], 1e-8);
    assert!(report.get("wall_clock").is_none());
    let ks = report["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == "projector_ks theta,e4")
        .unwrap();
    assert!(ks["observed"].as_f64().unwrap() <= 0.05);
    assert!(json(&a.join("metadata.json"))["wall_clock_seconds"].as_f64().unwrap() >= 0.0);

    // the emitted effective config reproduces the run
    let c = dir.path().join("c");
    let rerun = eigenpert(&[
        "verify-clt",
        "--config",
        a.join("config.json").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&rerun), 0, "{}", stderr(&rerun));
    assert_eq!(ra, fs::read(c.join("report.json")).unwrap());
}

#[test]
fn summary_goes_to_stdout_and_progress_to_stderr() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "clt.json", SMALL_CLT);
    let out = eigenpert(&["verify-clt", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("projector_variance"), "{}", stdout(&out));
    assert!(stderr(&out).contains("finished"));
}

#[test]
fn decompose_prints_cluster_table() {
    let dir = TempDir::new().unwrap();
    let m = write(dir.path(), "m.csv", "3,0,0\n0,3,0\n0,0,1\n");
    let out_dir = dir.path().join("out");
    let out = eigenpert(&["decompose", m.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("effective rank 2.333333"), "{text}");
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..4], ["1", "3.000000e0", "2", "2.000000e0"]);
    assert_eq!(rows[1][..4], ["2", "1.000000e0", "1", "1.000000e0"]);

    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["clusters"][0]["multiplicity"], 2);
    assert!(report["clusters"][0]["riesz_error"].as_f64().unwrap() < 1e-10);
}

#[test]
fn decompose_without_data_uses_the_model() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"model": {"kind": "explicit_spectrum", "values": [4.0, 2.0, 1.0], "multiplicities": [1, 2, 3]}}"#,
    );
    let out = eigenpert(&["decompose", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("dim 6"));
}

#[test]
fn estimate_on_rank_one_data() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "x.csv", "3,0,4\n3,0,4\n");
    let out_dir = dir.path().join("out");
    let out = eigenpert(&["estimate", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["separated"], true);
    assert!(report["b_hat"].as_f64().unwrap().abs() < 1e-14);
    let theta: Vec<f64> = report["theta_hat"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    for (got, want) in theta.iter().zip([0.6, 0.0, 0.8]) {
        assert!((got.abs() - want).abs() < 1e-12, "{theta:?}");
    }
    assert!(theta[0] * theta[2] > 0.0);
}

#[test]
fn estimate_drops_an_odd_last_row() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "x.csv", "3,0,4\n3,0,4\n100,0,0\n");
    let out_dir = dir.path().join("out");
    let out = eigenpert(&["estimate", data.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("dropping the last"));
    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["dropped_last_row"], true);
    assert_eq!(report["rows_used"], 2);
}

#[test]
fn estimate_reports_non_separation() {
    let model = ModelSpec::Spiked {
        spikes: vec![],
        sigma: 1.0,
        dim: 20,
        basis: BasisSpec::Identity,
    }
    .build()
    .unwrap();
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("white.csv");
    sample_gaussian(&model, 400, 3).unwrap().write_csv(&data).unwrap();
    let out_dir = dir.path().join("out");
    let out = eigenpert(&[
        "estimate",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("not separated"), "{}", stderr(&out));
    let report = json(&out_dir.join("report.json"));
    assert_eq!(report["separated"], false);
    assert!(report["theta_tilde"].is_null());
}

/// Calibrates the threshold constant by simulation, then recovers the
/// support of a sparse spike from a synthetic data file.
#[test]
fn estimate_recovers_synthetic_support() {
    let dir = TempDir::new().unwrap();
    let model_json =
        r#"{"kind": "spiked", "spikes": [2.0], "sigma": 1.0, "dim": 200, "basis": {"type": "sparse", "support": 5}}"#;
    let cfg = write(
        dir.path(),
        "recover.json",
        &format!(r#"{{"model": {model_json}, "ns": [1600], "replicates": 40, "calibration_replicates": 40}}"#),
    );
    let cal = dir.path().join("cal");
    let out = eigenpert(&[
        "recover",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        cal.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(code(&out) <= 1, "{}", stderr(&out));
    let report = json(&cal.join("report.json"));
    let c_gamma = report["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find_map(|c| c["values"]["c_gamma"].as_f64())
        .unwrap();

    let model: ModelSpec = serde_json::from_str(model_json).unwrap();
    let data = dir.path().join("sparse.csv");
    sample_gaussian(&model.build().unwrap(), 3200, 99)
        .unwrap()
        .write_csv(&data)
        .unwrap();
    let est_cfg = write(dir.path(), "est.json", &format!(r#"{{"c_gamma": {c_gamma}}}"#));
    let est = dir.path().join("est");
    let out = eigenpert(&[
        "estimate",
        data.to_str().unwrap(),
        "--config",
        est_cfg.to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&est.join("report.json"));
    let support: Vec<u64> = report["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(support, vec![0, 1, 2, 3, 4]);
    assert_eq!(report["half_n"], 1600);
    let b_hat = report["b_hat"].as_f64().unwrap();
    assert!((-0.1..=0.0).contains(&b_hat), "{b_hat}");
}
