use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_ontogan");

fn ontogan(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("OZSL_CONFIG")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const QUICK: &str = "seed = 3
[encoder]
dim = 8
epochs = 20
[gan]
generator_hidden = 16
critic_hidden = 16
noise_dim = 4
iterations = 10
classifier_epochs = 5
[eval]
n_syn = 10
[kge]
dim = 8
epochs = 5
[extractor]
entity_hidden = 8
neighbor_hidden = 4
epochs = 2
references = 10
";

fn synth(dir: &Path, spec: &str, name: &str) -> String {
    let spec_path = dir.join(format!("{name}.toml"));
    write(&spec_path, spec);
    let out = dir.join(name);
    json(&ontogan(&[
        "synth",
        spec_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    out.to_str().unwrap().to_string()
}

#[test]
fn missing_spec_is_a_usage_error() {
    let o = ontogan(&["synth", "/no/such/spec.toml", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/spec.toml"));
}

#[test]
fn unknown_subcommand_and_key_are_usage_errors() {
    assert_eq!(ontogan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        ontogan(&["train-onto", "--gan.nope=1"]).status.code(),
        Some(2)
    );
}

#[test]
fn seed_flag_changes_fixture_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("s.toml");
    write(&spec, "task = \"imgc\"\n");
    let feat = |out: &str, seed: Option<&str>| {
        let out = dir.path().join(out);
        let mut args = vec![
            "synth",
            spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        json(&ontogan(&args));
        std::fs::read(out.join("features/train.feat")).unwrap()
    };
    let a = feat("a", None);
    assert_eq!(a, feat("b", None));
    assert_ne!(a, feat("c", Some("9")));
}

#[test]
fn train_gan_needs_an_embedding_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "task = \"imgc\"\n", "fx");
    let o = ontogan(&[
        "train-gan",
        &format!("--paths.data={data}"),
        "--paths.out=\"/tmp/ontogan-empty-run\"",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("missing embedding table"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn imgc_reports_have_stable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "task = \"imgc\"\n", "fx");
    let cfg = dir.path().join("quick.toml");
    write(&cfg, QUICK);
    let out = dir.path().join("run");
    let paths = [
        format!("--paths.data={data}"),
        format!("--paths.out={}", out.display()),
    ];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec!["--config", cfg.to_str().unwrap(), cmd, &paths[0], &paths[1]];
        args.extend(extra);
        json(&ontogan(&args))
    };
    let onto = run("train-onto", &["--ablate=[\"attribute\"]"]);
    assert_eq!(onto["ablation"], "-att");
    assert_eq!(onto["config"]["seed"], 3);
    assert!(onto["meta"]["timestamp_unix"].is_u64());
    run("train-gan", &["--ablate=[\"attribute\"]"]);

    let std_report = run("eval", &["--ablate=[\"attribute\"]"]);
    assert_eq!(std_report["ablation"], "-att");
    let m = &std_report["metrics"];
    assert!(m["acc"].is_f64());
    assert!(m.get("acc_s").is_none() && m.get("H").is_none());
    assert!(m["per_class"].is_object());

    let gen = run("eval", &["--mode=generalized"]);
    assert_eq!(gen["ablation"], "all");
    for k in ["acc_s", "acc_u", "H"] {
        assert!(gen["metrics"][k].is_f64(), "{k}");
    }
    assert!(out.join("eval_standard.json").exists() && out.join("eval_generalized.json").exists());
}

#[test]
fn kgc_report_has_ranking_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(
        dir.path(),
        "task = \"kgc\"\nentities = 60\nrelations = 6\ntriples_per_relation = 40\n",
        "kg",
    );
    let cfg = dir.path().join("quick.toml");
    write(&cfg, &format!("task = \"kgc\"\n{QUICK}"));
    let out = dir.path().join("run");
    let paths = [
        format!("--paths.data={data}"),
        format!("--paths.out={}", out.display()),
    ];
    let mut last = Value::Null;
    for cmd in [
        "pretrain-kge",
        "train-extractor",
        "train-onto",
        "train-gan",
        "eval",
    ] {
        let o = Command::new(BIN)
            .args([cmd, &paths[0], &paths[1]])
            .env("OZSL_CONFIG", &cfg)
            .output()
            .unwrap();
        last = json(&o);
    }
    for k in ["MRR", "Hit@10", "Hit@5", "Hit@1"] {
        assert!(last["metrics"][k].is_f64(), "{k}");
    }
    assert!(last["random_mrr"].is_f64());
}
