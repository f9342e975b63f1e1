use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk-influence"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn list_experiments_names_all_nine() {
    let o = cli(&["list-experiments"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 9);
    assert!(text.contains("fig2_lambda_sweep") && text.contains("thm4_bound"));
}

#[test]
fn validate_echoes_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# sweep\nexperiment = fig2_lambda_sweep\nn_train=120\n").unwrap();
    let o = cli(&["validate", path.to_str().unwrap(), "--set", "lambda=2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("ok\n"));
    assert!(text.contains("n_train = 120\n") && text.contains("lambda = 2\n"));
}

#[test]
fn config_errors_exit_one_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "experiment = fig1_scatter\nwidths = -5\n").unwrap();
    let o = cli(&["validate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.cfg:2: field `widths`"), "{}", stderr(&o));

    let o = cli(&["run", "--set", "experiment=fig42", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fig7_label_noise"), "{}", stderr(&o));

    let o = cli(&["validate", "--set", "experiment=fig2_lambda_sweep", "--set", "images=missing/images.idx"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("field `images`") && msg.contains("file not found"), "{msg}");

    let o = cli(&["run", "--config", "does/not/exist.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runs_are_reproducible_and_write_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = cli(&[
            "run",
            "--set",
            "experiment=fig3_density",
            "--set",
            "n_train=80",
            "--set",
            "n_test=20",
            "--seed",
            "3",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let csv_a = std::fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("results.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("seed,i,group_id,density,error_rate\n"));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "fig3_density");
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
    assert_eq!(manifest["config"]["n_train"], "80");
    assert_eq!(manifest["threads"], 1);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert!(manifest["versions"]["ntk-influence"].is_string());
}

#[test]
fn lambda_sweep_bound_sits_below_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = cli(&[
        "run",
        "--set",
        "experiment=fig2_lambda_sweep",
        "--set",
        "n_train=150",
        "--set",
        "n_test=30",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (lb, err) = (col("lower_bound"), col("mean_error_rate"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        assert!(r[lb] <= r[err], "{r:?}");
    }
}

#[test]
fn divergence_exits_two_naming_the_module() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&[
        "run",
        "--set",
        "experiment=fig1_scatter",
        "--set",
        "n_train=20",
        "--set",
        "n_test=2",
        "--set",
        "widths=64",
        "--set",
        "epochs=200",
        "--set",
        "learning_rate=1e6",
        "--set",
        "top_k=3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("module `network`"), "{}", stderr(&o));
}
