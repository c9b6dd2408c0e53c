use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn l2s(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_l2s")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = l2s(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("l2s-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let d = workdir("usage");
    let missing = d.join("nope.jsonl");
    let out = d.join("x.csv");
    for args in [
        vec!["frobnicate"],
        vec!["train"],
        vec!["eval", "--hyp", s(&missing), "--reference", s(&missing), "--out", s(&out)],
        vec!["generate", "--model", s(&missing), "--input", s(&missing), "--out", s(&out)],
        vec!["--config", s(&missing), "data", "--out", s(&d)],
        vec!["data", "--task", "no_such_task", "--out", s(&d)],
        vec!["ablate", "--out", s(&out)],
    ] {
        assert_eq!(l2s(&args).status.code(), Some(2), "{args:?}");
    }
    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"unknown_section": 1}"#).unwrap();
    assert_eq!(l2s(&["--config", s(&bad), "data", "--out", s(&d)]).status.code(), Some(2));
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn identical_files_score_bleu_100() {
    let d = workdir("eval");
    let a = d.join("a.txt");
    fs::write(&a, "the cat sat\non the mat\n").unwrap();
    let out = d.join("m.csv");
    ok(&["eval", "--hyp", s(&a), "--reference", s(&a), "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("bleu,100")), "{csv}");
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn pipeline_from_data_to_speculative_decoding() {
    let d = workdir("pipeline");
    let data = d.join("data");
    ok(&[
        "--seed",
        "3",
        "data",
        "--task",
        "reversal_translation",
        "--out",
        s(&data),
        "--train-size",
        "64",
        "--test-size",
        "8",
    ]);
    let (train, test) = (data.join("train.jsonl"), data.join("test.jsonl"));
    assert_eq!(fs::read_to_string(&test).unwrap().lines().count(), 8);

    // Same seed, same bytes.
    let again = d.join("again");
    ok(&[
        "--seed",
        "3",
        "data",
        "--task",
        "reversal_translation",
        "--out",
        s(&again),
        "--train-size",
        "64",
        "--test-size",
        "8",
    ]);
    assert_eq!(fs::read(&train).unwrap(), fs::read(again.join("train.jsonl")).unwrap());

    let llm = d.join("llm.ckpt");
    let slm = d.join("slm.ckpt");
    let loss = d.join("loss.csv");
    ok(&[
        "train",
        "--data",
        s(&train),
        "--out",
        s(&llm),
        "--role",
        "llm",
        "--arch",
        "encoder_decoder",
        "--d-model",
        "32",
        "--layers",
        "1",
        "--steps",
        "5",
        "--loss",
        s(&loss),
    ]);
    assert_eq!(fs::read_to_string(&loss).unwrap().lines().count(), 6);
    ok(&[
        "train",
        "--data",
        s(&train),
        "--out",
        s(&slm),
        "--d-model",
        "16",
        "--layers",
        "1",
        "--steps",
        "5",
    ]);
    let bundle = d.join("bundle");
    ok(&[
        "train",
        "--data",
        s(&train),
        "--out",
        s(&bundle),
        "--mode",
        "llm2slm_full",
        "--llm",
        s(&llm),
        "--slm",
        s(&slm),
        "--steps",
        "5",
    ]);
    let tuned = d.join("tuned");
    ok(&[
        "train",
        "--data",
        s(&train),
        "--out",
        s(&tuned),
        "--mode",
        "prompt_tuning_baseline",
        "--slm",
        s(&slm),
        "--prompt-len",
        "3",
        "--steps",
        "5",
    ]);

    for model in [&llm, &slm, &bundle, &tuned] {
        let preds = d.join("preds.jsonl");
        ok(&[
            "generate",
            "--model",
            s(model),
            "--input",
            s(&test),
            "--out",
            s(&preds),
            "--strategy",
            "beam",
            "--beam-width",
            "2",
            "--max-new-tokens",
            "6",
        ]);
        assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 8);
        let metrics = d.join("metrics.csv");
        ok(&[
            "eval",
            "--hyp",
            s(&preds),
            "--reference",
            s(&test),
            "--out",
            s(&metrics),
            "--tokenization",
            "chars",
        ]);
        assert_eq!(fs::read_to_string(&metrics).unwrap().lines().count(), 4);
    }

    let gamma = 4usize;
    for args in [
        vec!["specdec", "--draft", s(&bundle), "--input", s(&test), "--out"],
        vec!["specdec", "--target", s(&llm), "--draft", s(&slm), "--input", s(&test), "--out"],
    ] {
        let out = d.join("spec.jsonl");
        let mut args = args.clone();
        args.extend([s(&out), "--gamma", "4", "--max-new-tokens", "9"]);
        let summary: serde_json::Value = serde_json::from_str(ok(&args).trim()).unwrap();
        let rate = summary["acceptance_rate"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&rate));
        for line in fs::read_to_string(&out).unwrap().lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let calls = v["target_calls"].as_u64().unwrap() as usize;
            assert!((1..=9).contains(&calls));
            assert!(v["accepted"].as_u64().unwrap() <= v["proposed"].as_u64().unwrap());
        }
        let (calls, n) = (summary["target_calls"].as_u64().unwrap() as usize, summary["tokens"].as_u64().unwrap() as usize);
        assert!(calls >= n.div_ceil(gamma) && calls <= n, "{summary}");
    }

    let bench = d.join("bench.csv");
    ok(&[
        "bench",
        "--model",
        s(&bundle),
        "--out",
        s(&bench),
        "--m",
        "8",
        "--n",
        "8",
        "--reps",
        "5",
        "--warmup",
        "2",
    ]);
    assert_eq!(fs::read_to_string(&bench).unwrap().lines().count(), 2);
    let sweep = d.join("sweep.csv");
    ok(&[
        "sweep",
        "--model",
        s(&bundle),
        "--model",
        s(&slm),
        "--model",
        s(&llm),
        "--ns",
        "2,4",
        "--m",
        "8",
        "--reps",
        "5",
        "--warmup",
        "2",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(fs::read_to_string(&sweep).unwrap().lines().count(), 7);
    fs::remove_dir_all(d).unwrap();
}

#[test]
fn truncation_grid_has_three_rows() {
    let d = workdir("ablate");
    let config = d.join("config.json");
    fs::write(
        &config,
        r#"{"quality": {"task": {"kind": "keyed_substitution_translation", "train_size": 32, "test_size": 4},
                        "train": {"total_steps": 2, "micro_batch": 4, "accumulation": 1},
                        "generation": {"strategy": "greedy", "max_new_tokens": 4}}}"#,
    )
    .unwrap();
    let out = d.join("ablate.csv");
    ok(&["--config", s(&config), "ablate", "--truncate", "1,2,4", "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{csv}");
    assert!(rows[0].starts_with("truncate1,") && rows[2].starts_with("truncate4,"));
    fs::remove_dir_all(d).unwrap();
}
