use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unicorn::model::checkpoint::encode_checkpoint;
use unicorn::model::{AnyModel, ModelConfig, ModelKind};
use unicorn::train::TrainConfig;

fn unicorn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unicorn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = unicorn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_DATA: [&str; 8] = [
    "--set",
    "n_individuals=10",
    "--set",
    "feat_dim=6",
    "--set",
    "patches_min=2",
    "--set",
    "patches_max=4",
];

/// Tiny synthetic set plus splits; returns (manifest, splits).
fn tiny_dataset(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let mut args = vec!["synth", "--out", s(&data)];
    args.extend(TINY_DATA);
    ok(&args);
    let manifest = data.join("manifest.csv");
    let splits = dir.join("splits.tsv");
    ok(&["split", "--manifest", s(&manifest), "--out", s(&splits)]);
    (manifest, splits)
}

fn write_config(dir: &Path, manifest: &Path, splits: &Path, epochs: usize) -> PathBuf {
    let cfg = dir.join("run.cfg");
    let text = format!(
        "# tiny run\nmanifest = {}\nsplits = {}\nfeat_dim = 6\nmodel_dim = 8\nn_heads = 2\nblocks_per_expert = 1\nblocks_aggregator = 1\nepochs = {epochs}\naccum_steps = 4\nlr = 1e-3\n",
        s(manifest),
        s(splits)
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn help_lists_every_flag() {
    let expected: [(&str, &[&str]); 8] = [
        ("synth", &["--spec", "--task", "--set", "--out"]),
        ("split", &["--manifest", "--seed", "--out"]),
        ("train", &["--config", "--set", "--fold", "--out"]),
        ("eval", &["--checkpoint", "--manifest", "--splits", "--fold", "--part", "--out"]),
        ("ablate", &["--checkpoint", "--manifest", "--splits", "--fold", "--part", "--out"]),
        ("explain", &["--checkpoint", "--manifest", "--sample-id", "--bag-set", "--rollout", "--out"]),
        ("export", &["--checkpoint", "--manifest", "--variants", "--out"]),
        ("cv", &["--config", "--set", "--out"]),
    ];
    for (cmd, flags) in expected {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
        assert!(!unicorn(&[cmd, "--no-such-flag"]).status.success());
    }
}

#[test]
fn zero_epoch_train_writes_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, splits) = tiny_dataset(dir.path());
    let cfg = write_config(dir.path(), &manifest, &splits, 0);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let written = std::fs::read(out.join("checkpoint.unickpt")).unwrap();
    let mc = ModelConfig {
        feat_dim: 6,
        model_dim: 8,
        n_heads: 2,
        blocks_per_expert: 1,
        blocks_aggregator: 1,
        ..ModelConfig::default()
    };
    let init = AnyModel::init(ModelKind::Unicorn, &mc, TrainConfig::default().seed).unwrap();
    assert_eq!(written, encode_checkpoint(&init).unwrap());
    let run = std::fs::read_to_string(out.join("run.txt")).unwrap();
    assert!(run.contains("best_epoch=none"), "{run}");
}

#[test]
fn pipeline_runs_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, splits) = tiny_dataset(dir.path());
    let cfg = write_config(dir.path(), &manifest, &splits, 2);
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["train", "--config", s(&cfg), "--fold", "1", "--out", s(&out)]);
        let ckpt = out.join("checkpoint.unickpt");
        let common = ["--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--splits", s(&splits), "--fold", "1"];
        let eval_out = out.join("eval");
        let mut args = vec!["eval"];
        args.extend(common);
        args.extend(["--out", s(&eval_out)]);
        let printed = ok(&args);
        assert!(printed.contains("accuracy"), "{printed}");
        let mut args = vec!["ablate"];
        args.extend(common);
        args.extend(["--part", "val", "--out", s(&eval_out)]);
        ok(&args);
        ok(&[
            "explain",
            "--checkpoint",
            s(&ckpt),
            "--manifest",
            s(&manifest),
            "--sample-id",
            "ind000_seg0",
            "--out",
            s(&out.join("explain")),
        ]);
        ok(&[
            "export",
            "--checkpoint",
            s(&ckpt),
            "--manifest",
            s(&manifest),
            "--variants",
            "all",
            "--out",
            s(&out.join("features.tsv")),
        ]);
        ckpts.push(out);
    }
    for file in [
        "checkpoint.unickpt",
        "history.tsv",
        "run.txt",
        "eval/metrics.tsv",
        "eval/metrics.json",
        "eval/ablation.tsv",
        "eval/ablation.json",
        "explain/scores.tsv",
        "features.tsv",
    ] {
        let a = std::fs::read(ckpts[0].join(file)).unwrap();
        let b = std::fs::read(ckpts[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    let cv = dir.path().join("cv");
    ok(&["cv", "--config", s(&cfg), "--set", "epochs=1", "--out", s(&cv)]);
    assert!(cv.join("cv.json").exists() && cv.join("history_fold4.tsv").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, splits) = tiny_dataset(dir.path());
    let cfg = write_config(dir.path(), &manifest, &splits, 0);
    let out = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);
    let ckpt = out.join("checkpoint.unickpt");

    // Checkpoint trained for width 6 against width-5 bags.
    let other = dir.path().join("wide");
    ok(&["synth", "--out", s(&other), "--set", "n_individuals=5", "--set", "feat_dim=5"]);
    let res = unicorn(&["eval", "--checkpoint", s(&ckpt), "--manifest", s(&other.join("manifest.csv"))]);
    assert_eq!(res.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error[config-mismatch]"));

    let res = unicorn(&["train", "--config", s(&cfg), "--set", "lerning_rate=1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error[config]"));

    let bad = dir.path().join("bad.unickpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&bad, bytes).unwrap();
    let res = unicorn(&["eval", "--checkpoint", s(&bad), "--manifest", s(&manifest)]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("error[format]") && err.contains("truncated"), "{err}");

    let res = unicorn(&["eval", "--checkpoint", s(&dir.path().join("missing")), "--manifest", s(&manifest)]);
    assert_eq!(res.status.code(), Some(3));
}
