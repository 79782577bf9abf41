use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_rsdqn");

const CONFIG: &str = r#"
env = "catch"
seeds = [5]
algorithm = "rsdqn"
defense = "provable"
eval_attacks = [{ kind = "none" }, { kind = "pgd", epsilon = 0.004, steps = 4 }]
output_dir = "out"

[train]
frames = 700
warmup = 200
hidden = [8]
validation_interval = 2

[evaluation]
episodes = 2
certify_episodes = 1
certify_stride = 9
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).env_remove("RSDQN_OUTPUT_ROOT").output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Trains, evaluates and certifies in a fresh directory; returns every
/// artifact's bytes by name.
fn pipeline(extra_train: &[&str]) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let mut args = vec!["train", "--config", "exp.toml"];
    args.extend_from_slice(extra_train);
    ok(dir.path(), &args);
    ok(dir.path(), &["evaluate", "--config", "exp.toml"]);
    ok(dir.path(), &["certify", "--config", "exp.toml"]);
    let seed_dir = dir.path().join("out/seed-5");
    ok(dir.path(), &["report", "out/seed-5/eval.json", "out/seed-5/cert.json", "--json", "report.json"]);
    let mut files: Vec<(String, Vec<u8>)> = ["config.toml", "checkpoint.bin", "final.bin", "metrics.jsonl", "eval.json", "eval.txt", "cert.json", "cert.txt"]
        .iter()
        .map(|n| (n.to_string(), read(seed_dir.join(n))))
        .collect();
    files.push(("report.json".into(), read(dir.path().join("report.json"))));
    files
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let a = pipeline(&[]);
    let b = pipeline(&[]);
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{name} differs between runs");
    }
    let metrics = String::from_utf8(a[3].1.clone()).unwrap();
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(first["lambda"].is_number() && first["box_epsilon"].is_number());
}

#[test]
fn invalid_configs_exit_nonzero_before_training() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("noenv.toml"), "algorithm = \"dqn\"\n").unwrap();
    let out = run(dir.path(), &["train", "--config", "noenv.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing environment"));
    std::fs::write(dir.path().join("typo.toml"), "env = \"catch\"\nalgorithm = \"dqn\"\nfrmes = 3\n").unwrap();
    let out = run(dir.path(), &["train", "--config", "typo.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("frmes"));
    assert!(!dir.path().join("runs").exists());
    let out = run(dir.path(), &["report"]);
    assert!(!out.status.success());
}

#[test]
fn flags_override_the_config_and_output_root_relocates() {
    let dir = tempfile::tempdir().unwrap();
    let root = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), CONFIG).unwrap();
    let out = Command::new(BIN)
        .args(["train", "--config", "exp.toml", "--seed", "2", "--frames", "400", "--attack", "training_pgd", "--eps", "0.01", "--k", "2"])
        .current_dir(dir.path())
        .env("RSDQN_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let seed_dir = root.path().join("out/seed-2");
    let saved = rsdqn::harness::ExperimentConfig::load(seed_dir.join("config.toml")).unwrap();
    assert_eq!(saved.seeds, vec![2]);
    assert_eq!(saved.train.frames, 400);
    assert_eq!(saved.train_attack, rsdqn::attacks::AttackSpec::training_pgd(0.01, 2));
    assert!(!dir.path().join("out").exists());

    // Test-phase flags replace the evaluation attacks.
    let out = Command::new(BIN)
        .args(["evaluate", "--config", "exp.toml", "--seed", "2", "--attack", "fgsm", "--eps", "0.02", "--episodes", "1"])
        .current_dir(dir.path())
        .env("RSDQN_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = rsdqn::harness::ResultFile::load(seed_dir.join("eval.json")).unwrap();
    let rsdqn::harness::ResultFile::Evaluation { rows, .. } = result else { panic!("not an evaluation") };
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].attack, rsdqn::attacks::AttackSpec::new(rsdqn::attacks::AttackKind::Fgsm, 0.02, 1));
    assert_eq!(rows[0].n, 1);
}
