use std::path::Path;
use std::process::{Command, Output};

fn pdrlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdrlm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn error_kind(o: &Output) -> String {
    assert!(!o.status.success());
    let line = String::from_utf8(o.stderr.clone()).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    v["error"].as_str().unwrap().to_string()
}

fn setup(dir: &Path) -> String {
    let text = "the cat sat on the mat . the dog sat on the log .\n".repeat(30);
    std::fs::write(dir.join("train.txt"), &text).unwrap();
    std::fs::write(dir.join("valid.txt"), "the cat sat on the log .\n".repeat(4)).unwrap();
    let config = dir.join("run.cfg");
    std::fs::write(
        &config,
        format!(
            "train = {d}/train.txt\nvalid = {d}/valid.txt\nlevel = word\nemb_dim = 8\nlayers = 10, 8\n\
             batch = 2\neval_batch = 2\nbptt = 8\nrandomize_bptt = true\nepochs = 2\nfinetune = true\n\
             finetune_epochs = 1\nmax_steps_per_epoch = 5\nlr = 5\ncache_size = 50\ncache_lambda = 0.2\n\
             out_dir = {d}/run\n",
            d = dir.display()
        ),
    )
    .unwrap();
    config.display().to_string()
}

#[test]
fn train_eval_strip_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = setup(dir);

    let out = pdrlm(&["train", "--config", &config, "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["epochs"], 3);
    let metrics = std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(header["config"].as_str().unwrap().contains("seed = 7"));

    let ckpt = dir.join("run/best.ckpt").display().to_string();
    let valid = dir.join("valid.txt").display().to_string();
    let hist = dir.join("hist").display().to_string();
    let out = pdrlm(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &valid,
        "--cache",
        "--hist-entropy",
        "--hist-context-nll",
        "--out-dir",
        &hist,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    let report: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(report.as_object().unwrap().len(), 4);
    assert!(report["ppl"].as_f64().unwrap() >= 1.0);
    let cache: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert!(cache["cache"]["ppl"].as_f64().is_some());
    for name in ["hist_entropy.csv", "hist_context_nll.csv"] {
        let csv = std::fs::read_to_string(dir.join("hist").join(name)).unwrap();
        assert!(csv.starts_with("bin_center,value\n"));
        assert_eq!(csv.lines().count(), 16);
    }

    let stripped = dir.join("run/stripped.ckpt").display().to_string();
    let out = pdrlm(&["strip", "--ckpt", &ckpt, "--out", &stripped]);
    assert!(out.status.success());
    let info: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    // d·d + d + |W| with d = 8 and 8 words plus <eos> and <unk>
    assert_eq!(info["removed_params"], 8 * 8 + 8 + 10);
    assert!(info["bytes_after"].as_u64() < info["bytes_before"].as_u64());

    let a = pdrlm(&["eval", "--ckpt", &ckpt, "--data", &valid]);
    let b = pdrlm(&["eval", "--ckpt", &stripped, "--data", &valid]);
    assert_eq!(stdout(&a), stdout(&b));

    let out = pdrlm(&["eval", "--ckpt", &stripped, "--data", &valid, "--hist-context-nll"]);
    assert_eq!(error_kind(&out), "head_absent");
}

#[test]
fn errors_are_one_json_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = setup(dir);

    let out = pdrlm(&["ablate", "--config", &config, "--arms", "p_out,bogus"]);
    assert_eq!(error_kind(&out), "unknown_arm");
    assert!(!dir.join("run").exists(), "no run may start before arms are checked");

    let bad = dir.join("bad.cfg");
    std::fs::write(&bad, "seed = 1\nwhat = 2\n").unwrap();
    assert_eq!(
        error_kind(&pdrlm(&["train", "--config", bad.to_str().unwrap()])),
        "config"
    );

    assert_eq!(error_kind(&pdrlm(&["train", "--config", "/nonexistent.cfg"])), "io");

    let junk = dir.join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let valid = dir.join("valid.txt");
    let out = pdrlm(&[
        "eval",
        "--ckpt",
        junk.to_str().unwrap(),
        "--data",
        valid.to_str().unwrap(),
    ]);
    assert_eq!(error_kind(&out), "checkpoint");
}

#[test]
fn ablate_and_sweep_emit_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = setup(dir);

    let out = pdrlm(&["ablate", "--config", &config, "--arms", "lambda_pdr"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("lambda_pdr: 0.001 -> 0"));
    assert!(dir.join("run/ablation.json").exists());
    assert!(dir.join("run/lambda_pdr/best.ckpt").exists());

    let ranges = dir.join("ranges.txt");
    std::fs::write(&ranges, "lambda_pdr = 0.0005, 0.002\n").unwrap();
    let out = pdrlm(&[
        "sweep",
        "--config",
        &config,
        "--n",
        "2",
        "--ranges",
        ranges.to_str().unwrap(),
        "--paired",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert!(row["valid_ppl"].as_f64().is_some());
        assert!(row["paired_valid_ppl"].as_f64().is_some());
    }
}
