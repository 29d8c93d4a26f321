use std::path::Path;
use std::process::Command;

fn kid(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_kid")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "kid {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    let text = format!(
        r#"image_size = 32
patch_size = 8
embed_dim = 16
num_layers = 4
num_heads = 2
mlp_ratio = 2.0
lr_init = 1e-2
lr_min = 1e-5
batch_size = 4
max_epochs = 2
dataset_size = 10
test_size = 4
video_frames = 2
pretrain_epochs = 1
pretrain_corpus_size = 6
output_dir = "{}"
"#,
        dir.join("runs").display()
    );
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn run_dir(root: &Path) -> std::path::PathBuf {
    let runs: Vec<_> = std::fs::read_dir(root.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().ends_with("-s3"))
        .collect();
    assert_eq!(runs.len(), 1, "{runs:?}");
    runs[0].clone()
}

#[test]
fn every_verb_runs_on_a_tiny_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let common = ["--config", cfg.as_str(), "--seed", "3"];
    let with = |verb: &str, extra: &[&str]| {
        let mut args = vec![verb];
        args.extend(common);
        args.extend(extra);
        kid(&args)
    };

    assert!(with("train", &[]).contains("test AUC"));
    let dir = run_dir(tmp.path());
    let metrics = std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["train"]["total"].as_f64().unwrap().is_finite());
    }
    assert!(dir.join("model.kid").exists());
    assert!(std::fs::read_to_string(dir.join("summary.csv")).unwrap().contains("test_frame_auc"));

    assert!(with("eval", &[]).contains("frame AUC"));
    assert_eq!(std::fs::read_to_string(dir.join("eval.jsonl")).unwrap().lines().count(), 8);

    with("visualize", &["--count", "1"]);
    let pca = std::fs::read_to_string(dir.join("viz/pca.csv")).unwrap();
    assert!(pca.starts_with("id,label,group,x,y"));
    assert_eq!(pca.lines().count(), 9);

    assert_eq!(with("report-activations", &[]).lines().count(), 4);
    assert!(dir.join("activations.csv").exists());

    with("robustness", &[]);
    assert_eq!(std::fs::read_to_string(dir.join("robustness.csv")).unwrap().lines().count(), 6);

    let out = tmp.path().join("synth");
    with("synthesize", &["--out", out.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(out.join("manifest.jsonl")).unwrap().lines().count(), 20);

    let report: serde_json::Value = serde_json::from_str(with("convergence-compare", &["--threshold", "100"]).trim()).unwrap();
    assert_eq!(report["report"]["status"], "reached");
    assert_eq!(report["report"]["ratio"], 1.0);
}

#[test]
fn missing_checkpoint_is_a_clear_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_kid")).args(["eval", "--config", &cfg, "--seed", "1"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train first"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "learning_rate = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kid"))
        .args(["train", "--config", path.to_str().unwrap(), "--seed", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn shipped_toy_config_matches_the_library_preset() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    assert_eq!(kid_core::ConfigFile::load(&path).unwrap(), kid_core::ConfigFile::toy());
}
