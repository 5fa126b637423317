use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurogpt::config::RunConfig;
use neurogpt::signal::{eegbin, Recording};
use neurogpt::train::{Checkpoint, MetricsLog};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neurogpt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Desk preset trimmed so every command finishes in about a second.
fn small_config(dir: &Path) -> PathBuf {
    let mut c = RunConfig::desk();
    c.out_dir = "out".into();
    c.pretrain.epochs = 3;
    c.corpus.n_recordings = 4;
    c.trials.n_subjects = 2;
    c.trials.trials_per_class = 2;
    c.finetune.epochs = 2;
    c.sweep.values = vec![4.0, 8.0, 8.0];
    let p = dir.join("run.toml");
    std::fs::write(&p, c.to_toml()).unwrap();
    p
}

fn sine_recording(fs: f64, seconds: f64) -> Recording {
    let labels = neurogpt::synth::channel_labels(22);
    let n = (fs * seconds) as usize;
    let rows = (0..22)
        .map(|c| (0..n).map(|t| ((t as f64 / fs) * 10.0 * std::f64::consts::TAU + c as f64).sin()).collect())
        .collect();
    Recording::new(labels, rows, fs).unwrap()
}

#[test]
fn preprocess_empty_dir_warns_and_succeeds() {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir(d.path().join("in")).unwrap();
    let o = run(d.path(), &["preprocess", "in", "pp"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("0 files"));
}

#[test]
fn preprocess_resamples_and_reports_bad_files() {
    let d = tempfile::tempdir().unwrap();
    let inp = d.path().join("in");
    std::fs::create_dir(&inp).unwrap();
    eegbin::save(&sine_recording(500.0, 4.0), &inp.join("a.eegbin")).unwrap();
    let mut bytes = eegbin::to_bytes(&sine_recording(250.0, 2.0));
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(inp.join("b.eegbin"), bytes).unwrap();

    let o = run(d.path(), &["preprocess", "in", "pp"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("b.eegbin"));
    let out = eegbin::load(&d.path().join("pp/a.eegbin")).unwrap();
    assert_eq!(out.sample_rate_hz, 250.0);
    assert_eq!(out.n_samples(), 1000);
    assert!(!d.path().join("pp/b.eegbin").exists());
    let report = std::fs::read_to_string(d.path().join("pp/report.tsv")).unwrap();
    assert!(report.contains("a.eegbin\tok\t500\t250"));
    assert!(report.lines().any(|l| l.starts_with("b.eegbin\terror")));
}

#[test]
fn bad_config_fails_before_writing() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "out_dir = \"out\"\nseeed = 1\n").unwrap();
    let o = run(d.path(), &["--config", "bad.toml", "gen"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seeed"));

    std::fs::write(d.path().join("bad2.toml"), "out_dir = \"out\"\n[pretrain]\nval_fraction = 2.0\n").unwrap();
    let o = run(d.path(), &["--config", "bad2.toml", "pretrain"]);
    assert_eq!(code(&o), 2);
    assert!(!d.path().join("out").exists());
}

#[test]
fn pretrain_finetune_eval_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let cfg = cfg.to_str().unwrap();

    let o = run(d.path(), &["--config", cfg, "pretrain"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck_path = d.path().join("out/pretrain/checkpoint.ngck");
    let ck = Checkpoint::load(&ck_path).unwrap();
    assert_eq!(ck.arch, RunConfig::desk().arch);
    let resolved = RunConfig::load(&d.path().join("out/pretrain/config.toml")).unwrap();
    assert_eq!(resolved.pretrain.epochs, 3);

    // finetune/eval need an explicit model source
    let o = run(d.path(), &["--config", cfg, "finetune"]);
    assert_eq!(code(&o), 2);

    let ck_arg = ck_path.to_str().unwrap();
    let o = run(d.path(), &["--config", cfg, "finetune", "--strategy", "linear", "--checkpoint", ck_arg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("encoder frozen"));
    let log = MetricsLog::read(&d.path().join("out/finetune_linear_pretrained/metrics.jsonl")).unwrap();
    let digests: Vec<_> = log.records.iter().filter_map(|r| r.frozen_digest.clone()).collect();
    assert_eq!(digests.len(), 2);
    assert!(digests.iter().all(|x| *x == digests[0]));
    let tuned = Checkpoint::load(&d.path().join("out/finetune_linear_pretrained/classifier.ngck")).unwrap();
    for (name, p) in ck.params.iter().filter(|(n, _)| n.starts_with("encoder.")) {
        assert_eq!(tuned.params.get(name).unwrap().value, p.value, "{name}");
    }

    let o = run(d.path(), &["--config", cfg, "eval", "--checkpoint", ck_arg]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table: Vec<_> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(table.len(), 3);
    assert!(table[2].starts_with("mean"));
    let o = run(d.path(), &["--config", cfg, "eval", "--from-scratch"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    for (dir, prov) in [("eval_encoder_only_pretrained", "pretrained"), ("eval_encoder_only_from_scratch", "from_scratch")] {
        let tsv = std::fs::read_to_string(d.path().join("out").join(dir).join("results.tsv")).unwrap();
        let rows: Vec<&str> = tsv.lines().skip(1).collect();
        assert_eq!(rows.len(), 2 + 1);
        assert!(rows.iter().all(|r| r.ends_with(&format!("\t{prov}"))));
        let folds: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.path().join("out").join(dir).join("folds.json")).unwrap())
                .unwrap();
        for f in folds.as_array().unwrap() {
            let test = f["test_subject"].as_str().unwrap();
            assert!(f["train_subjects"].as_array().unwrap().iter().all(|s| s != test));
        }
    }
}

#[test]
fn fingerprint_mismatch_is_refused() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&run(d.path(), &["--config", cfg, "pretrain"])), 0);
    let mut other = RunConfig::load(Path::new(cfg)).unwrap();
    other.arch.decoder.n_layers = 1;
    std::fs::write(d.path().join("other.toml"), other.to_toml()).unwrap();
    let args = ["--config", "other.toml", "eval", "--checkpoint", "out/pretrain/checkpoint.ngck"];
    let o = run(d.path(), &args);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("fingerprint mismatch"));
    assert!(stderr(&o).contains("different architecture"));
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn commands_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let cfg = cfg.to_str().unwrap();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(d.path().join("out"));
        for args in [vec!["gen"], vec!["pretrain"], vec!["eval", "--from-scratch"]] {
            let o = run(d.path(), &[&["--config", cfg][..], &args].concat());
            assert_eq!(code(&o), 0, "{}", stderr(&o));
        }
        snapshots.push(read_tree(&d.path().join("out")));
    }
    assert!(snapshots[0].len() > 10);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn sweep_writes_deduplicated_table() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small_config(d.path());
    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "sweep", "--axis", "n_chunks"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let tsv = std::fs::read_to_string(d.path().join("out/sweep/sweep.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("n_chunks\t") && !r.contains("NA")));
    assert!(stderr(&o).contains("duplicate"));

    let o = run(d.path(), &["--config", cfg.to_str().unwrap(), "sweep", "--axis", "width"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diverging_run_exits_numerical() {
    let d = tempfile::tempdir().unwrap();
    let mut c = RunConfig::desk();
    c.out_dir = "out".into();
    c.pretrain.epochs = 50;
    c.corpus.n_recordings = 4;
    c.pretrain.adam.lr = 1e30;
    std::fs::write(d.path().join("run.toml"), c.to_toml()).unwrap();
    let o = run(d.path(), &["--config", "run.toml", "pretrain"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
