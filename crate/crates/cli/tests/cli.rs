use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[model]
layers = 1
d_model = 16
heads = 2
ffn_dim = 32

[data]
base_in = 36
base_ood = 36
bridge_repeats = 1
tts_pretrain = 36
finetune = 36
test_in = 4
test_ood = 4
text_eval = 4

[phases.base_text]
epochs = 1
batch_size = 8

[phases.tts_pretrain]
epochs = 1
batch_size = 8

[phases.description_finetune]
epochs = 1
batch_size = 8

[eval]
max_len = 32
"#;

fn voxmoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxmoe")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = voxmoe(args);
    assert!(
        out.status.success(),
        "voxmoe {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) -> (String, String) {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (cfg.to_str().unwrap().to_owned(), dir.join("run").to_str().unwrap().to_owned())
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(voxmoe(&["pipeline", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(voxmoe(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(voxmoe(&["train-tts", "--ablation", "half"]).status.code(), Some(2));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nd_model = 15\nheads = 2\n").unwrap();
    let out = voxmoe(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxmoe(&["finetune", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stages_verify_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, run) = setup(dir.path());
    let common = ["--config", cfg.as_str(), "--out", run.as_str()];
    for stage in ["gen-data", "train-base", "convert"] {
        ok(&[&[stage][..], &common].concat());
    }

    let verify = ok(&[&["verify", "--samples", "20"][..], &common].concat());
    assert!(verify.lines().all(|l| l.starts_with("PASS ")), "{verify}");
    assert!(verify.contains("frozen"), "{verify}");

    for stage in ["train-tts", "finetune"] {
        ok(&[&[stage][..], &common].concat());
    }
    let report: serde_json::Value = serde_json::from_str(&ok(&[&["eval"][..], &common].concat())).unwrap();
    assert_eq!(report["frozen_digest_match"], serde_json::Value::Bool(true));
    assert_eq!(report["max_text_logit_delta"].as_f64(), Some(0.0));
    assert!(Path::new(&run).join("report.json").exists());

    let infer = |extra: &[&str]| -> serde_json::Value {
        let args = [
            &["infer", "--description", "a deep low voice.", "--transcript", "hello"][..],
            extra,
            &common,
        ]
        .concat();
        serde_json::from_str(&ok(&args)).unwrap()
    };
    let greedy = infer(&[]);
    let tokens = greedy["tokens"].as_array().unwrap();
    assert!(!tokens.is_empty() && tokens.len() <= 32);
    assert!(greedy["well_formed"].is_boolean());
    assert_eq!(greedy, infer(&[]));
    let sampled = infer(&["--sampling", "topk", "--top-k", "3", "--temperature", "0.7", "--max-len", "12"]);
    assert!(sampled["tokens"].as_array().unwrap().len() <= 12);
}
