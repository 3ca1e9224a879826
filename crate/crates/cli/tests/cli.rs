use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn minidl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minidl"))
        .args(args)
        .output()
        .expect("spawn minidl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn blobs() -> Value {
    json!({
        "name": "cli-blobs",
        "seed": 3,
        "data": { "source": "generator", "name": "two_blobs", "count": 120 },
        "model": { "layers": [
            { "type": "dense", "units": 4 }, { "type": "tanh" },
            { "type": "dense", "units": 1 }, { "type": "sigmoid" } ] },
        "train": { "epochs": 10, "loss": "binary_cross_entropy", "optimizer": "adaptive",
                   "learning_rate": 0.05, "batch_size": 8 }
    })
}

fn write(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("run.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    minidl(&args)
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!stdout(&o).is_empty());
    for f in ["model.sgm", "history.csv", "report.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let o = run("eval", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("eval_report.json").exists());
}

#[test]
fn quiet_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let o = run("train", &cfg, &dir.path().join("out"), &["--quiet"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn invalid_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs();
    v["train"]["learning_rate"] = json!(-1.0);
    let cfg = write(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("train: learning rate"),
        "{}",
        stderr(&o)
    );
    assert!(!out.exists());
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs();
    v["train"]["learnin_rate"] = json!(0.1);
    let cfg = write(dir.path(), &v);
    let o = run("train", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_config_flag_exits_2() {
    let o = minidl(&["train"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_config_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        "train",
        &dir.path().join("nope.json"),
        &dir.path().join("out"),
        &[],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn eval_without_model_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let o = run("eval", &cfg, &dir.path().join("empty"), &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let o = run("gradcheck", &cfg, &dir.path().join("ok"), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let mut v = blobs();
    v["gradcheck"] = json!({ "epsilon": 1e-6, "tolerance": 1e-300, "examples": 2 });
    let cfg = write(dir.path(), &v);
    let out = dir.path().join("bad");
    let o = run("gradcheck", &cfg, &out, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("gradcheck_report.json").exists());
}

#[test]
fn divergence_exits_3_with_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = blobs();
    v["train"]["learning_rate"] = json!(1e300);
    v["train"]["optimizer"] = json!("gradient_descent");
    let cfg = write(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run("train", &cfg, &out, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("history.csv").exists());
    assert!(!out.join("model.sgm").exists());
}

#[test]
fn check_prints_shape_table_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let out = dir.path().join("out");
    let o = run("check", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("params"), "{text}");
    assert!(text.contains("dense"), "{text}");
    assert!(!out.exists());
}

#[test]
fn seed_flag_is_deterministic_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &blobs());
    let model = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = run("train", &cfg, &out, &["--quiet", "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        (
            fs::read(out.join("model.sgm")).unwrap(),
            fs::read(out.join("history.csv")).unwrap(),
        )
    };
    let a = model("a", "11");
    let b = model("b", "11");
    let c = model("c", "12");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn shipped_configs_pass_check() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let dir = tempfile::tempdir().unwrap();
        let o = run("check", &path, &dir.path().join("out"), &[]);
        assert_eq!(code(&o), 0, "{}: {}", path.display(), stderr(&o));
        seen += 1;
    }
    assert!(seen >= 5);
}
