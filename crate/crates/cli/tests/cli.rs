use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
transcribed = 14
untranscribed = 6
dev = 4
eval = 4
written_sentences = 20

[model]
num_blocks = 2
hidden_per_direction = 8

[train]
epochs = 1

[augmentation]
transcribed = "2x SP"
untranscribed = "-"

[biapc]
epochs = 1

[ssl]
iterations = [
  { threshold = 0.35, transcribed_augmentation = "-", untranscribed_augmentation = "3x SP" },
  { threshold = 0.3, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
  { threshold = 0.28, transcribed_augmentation = "-", untranscribed_augmentation = "-" },
]

[rnnlm]
embedding = 8
hidden = 8
epochs = 1

[decode]
nbest = 4
"#;

fn asrlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asrlab"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(["--config", "lab.toml"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = asrlab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn new_lab() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lab.toml"), TINY).unwrap();
    dir
}

fn full_run(dir: &Path) -> String {
    ok(dir, &["synth"]);
    ok(dir, &["prepare"]);
    ok(dir, &["pretrain"]);
    ok(dir, &["train", "--loss", "ce"]);
    ok(dir, &["train", "--loss", "nsdl"]);
    ok(dir, &["train", "--loss", "nsdl", "--init", "biapc:work/models/biapc.ckpt"]);
    ok(dir, &["ssl", "--init", "work/models/nsdl+biapc.ckpt"]);
    ok(dir, &["rescore-grid", "--checkpoint", "work/models/ssl.ckpt"]);
    ok(
        dir,
        &["evaluate", "--checkpoint", "work/models/ssl.ckpt", "--split", "eval", "--rescore", "work/lm/rnnlm.ckpt"],
    );
    std::fs::read_to_string(dir.join("work/reports/metrics.csv")).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let lab = new_lab();
    let dir = lab.path();
    let metrics = full_run(dir);

    assert_eq!(ok(dir, &["synth"]).trim(), "skipped, up to date");
    let ssl_log = std::fs::read_to_string(dir.join("work/logs/ssl.csv")).unwrap();
    let thresholds: Vec<&str> = ssl_log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(thresholds, ["0.35", "0.3", "0.28"]);
    for stage in ["ce,dev", "nsdl,dev", "nsdl+biapc,dev", "ssl,dev", "ssl,eval", "ssl+rescored,eval"] {
        assert!(metrics.lines().any(|l| l.starts_with(stage)), "no `{stage}` row in\n{metrics}");
    }
    let grid = std::fs::read_to_string(dir.join("work/reports/ssl.grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 4);
    let ck = std::fs::read(dir.join("work/models/biapc.ckpt")).unwrap();
    assert_eq!(&ck[..4], b"ALCK");

    let report = ok(dir, &["report"]);
    let stages: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        stages,
        ["ce", "nsdl", "nsdl+biapc", "ssl-iter1", "ssl-iter2", "ssl-iter3", "ssl", "ssl", "ssl+rescored"]
    );

    // a second lab with the same config reproduces the report byte for byte
    let again = new_lab();
    assert_eq!(full_run(again.path()), metrics);
}

#[test]
fn usage_and_input_errors() {
    let lab = new_lab();
    let dir = lab.path();
    let code = |args: &[&str]| asrlab(dir, args).status.code().unwrap();
    assert_eq!(code(&["prepare"]), 3);
    assert_eq!(code(&["evaluate", "--checkpoint", "x.ckpt", "--split", "nonsense"]), 2);
    assert_eq!(code(&["train", "--loss", "mmi"]), 2);
    assert_eq!(code(&["--seed-override", "colour=3", "synth"]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    ok(dir, &["synth"]);
    ok(dir, &["prepare"]);
    assert_eq!(code(&["train", "--init", "biapc:missing.ckpt"]), 3);
    assert_eq!(code(&["evaluate", "--checkpoint", "missing.ckpt", "--split", "dev"]), 3);
    ok(dir, &["pretrain"]);
    assert_eq!(code(&["pretrain"]), 3);
    ok(dir, &["--force", "pretrain"]);
    // a different seed invalidates the corpus
    assert_eq!(code(&["--seed-override", "corpus=99", "prepare"]), 2);
    let out = asrlab(dir, &["--seed-override", "corpus=99", "synth"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("corpus written"));
    let missing = Command::new(env!("CARGO_BIN_EXE_asrlab"))
        .current_dir(dir)
        .args(["--config", "absent.toml", "synth"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
}
