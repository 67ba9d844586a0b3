use std::path::Path;
use std::process::{Command, Output};

fn mofusion(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mofusion"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = mofusion(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "scenario = 1\ntask = 1\nmodel_dim = 16\n\n[network]\nencoder_layers = 1\ndecoder_layers = 1\nattention_heads = 2\nffn_dim = 32\nnum_queries = 6\n\n[training]\nsteps = 4\nbatch_size = 2\n\n[protocol]\ngroup_size = 2\nmc_runs = 3\ntuning_runs = 2\n",
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let mut rows = vec![r.headers().unwrap().iter().map(String::from).collect()];
    rows.extend(r.records().map(|x| x.unwrap().iter().map(String::from).collect()));
    rows
}

#[test]
fn generate_train_evaluate_dump() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d);
    let data = d.join("train.bin");
    let data_s = data.to_str().unwrap();
    ok(&[
        "generate", "--config", &cfg, "--seed", "4", "--groups", "2", "--out", data_s,
    ]);
    let refused = mofusion(&[
        "generate", "--config", &cfg, "--seed", "4", "--groups", "2", "--out", data_s,
    ]);
    assert!(!refused.status.success());
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    ok(&[
        "generate", "--config", &cfg, "--seed", "4", "--groups", "3", "--out", data_s, "--resume",
    ]);

    let model = d.join("model");
    ok(&[
        "train",
        "--config",
        &cfg,
        "--dataset",
        data_s,
        "--out",
        model.to_str().unwrap(),
        "--checkpoint-every",
        "2",
    ]);
    let ckpt = model.join("model.ckpt");
    assert!(ckpt.exists() && model.join("trainer.ckpt").exists());
    assert_eq!(csv_rows(&model.join("loss.csv")).len(), 5);

    let eval = d.join("eval");
    let out = ok(&[
        "evaluate",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("transformer") && stdout.contains("bayesian"));
    let results = csv_rows(&eval.join("results.csv"));
    assert_eq!(results[0].len(), 15);
    assert_eq!(results.len(), 1 + 2 * 3);
    let summary = csv_rows(&eval.join("summary.csv"));
    assert_eq!(summary[0], ["metric", "transformer", "bayesian"]);
    assert_eq!(summary.len(), 9);

    let dump = d.join("dump");
    ok(&[
        "dump",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dump.to_str().unwrap(),
        "--dataset",
        data_s,
        "--run",
        "1",
    ]);
    for f in [
        "inputs.csv",
        "local_estimates.csv",
        "truth.csv",
        "fused.csv",
        "attention.csv",
    ] {
        assert!(dump.join(f).exists(), "{f} missing");
    }
    let fused = csv_rows(&dump.join("fused.csv"));
    assert_eq!(fused[0].len(), 21);
}

#[test]
fn filter_and_bayesian_fuse_need_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d);
    ok(&[
        "filter",
        "--config",
        &cfg,
        "--runs",
        "2",
        "--out",
        d.join("f").to_str().unwrap(),
    ]);
    assert!(d.join("f/local_estimates.csv").exists());
    ok(&[
        "fuse",
        "--config",
        &cfg,
        "--runs",
        "2",
        "--method",
        "bayesian",
        "--out",
        d.join("u").to_str().unwrap(),
    ]);
    let rows = csv_rows(&d.join("u/fused.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "bayesian"));
    let missing = mofusion(&[
        "fuse",
        "--config",
        &cfg,
        "--method",
        "transformer",
        "--out",
        d.join("v").to_str().unwrap(),
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("checkpoint"));
}

#[test]
fn bad_inputs_fail_with_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "scenario = 4\n").unwrap();
    let out = mofusion(&[
        "filter",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        d.join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));
    let out = mofusion(&[
        "filter",
        "--seed",
        "18446744073709551615",
        "--out",
        d.join("y").to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[argument]"));
    let junk = d.join("junk.bin");
    std::fs::write(&junk, b"not a dataset").unwrap();
    let out = mofusion(&[
        "train",
        "--dataset",
        junk.to_str().unwrap(),
        "--out",
        d.join("m").to_str().unwrap(),
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[format]"));
}
