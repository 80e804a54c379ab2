//! End-to-end pipeline through the command-line surface: synth, split,
//! train, eval, plot, and the snapshot reproducibility contract.

use std::path::Path;

use dialvar::cli::{main_from, EvalReportFile};

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["dialvar"];
    argv.extend(args);
    main_from(argv)
}

#[test]
fn full_pipeline_and_snapshot_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let d = |name: &str| tmp.path().join(name).display().to_string();

    // synth
    assert_eq!(
        run(&[
            "synth",
            "--out",
            &d("synth"),
            "--seed",
            "3",
            "--set",
            "generator.sessions=24",
            "--set",
            "generator.domains=1",
            "--set",
            "generator.values_per_slot=2",
            "--set",
            "generator.entities_per_domain=4",
        ]),
        0
    );
    assert!(tmp.path().join("synth/corpus.jsonl").exists());
    assert!(tmp.path().join("synth/world.json").exists());
    assert!(tmp.path().join("synth/config.json").exists());

    // split
    assert_eq!(
        run(&[
            "split",
            "--corpus",
            &d("synth/corpus.jsonl"),
            "--proportion",
            "0.5",
            "--out",
            &d("split"),
            "--seed",
            "3",
        ]),
        0
    );

    // supervised training (tiny settings)
    let train_args = |out: &str| {
        vec![
            "train-sup".to_string(),
            "--corpus".into(),
            d("split/split.jsonl"),
            "--world".into(),
            d("synth/world.json"),
            "--out".into(),
            d(out),
            "--seed".into(),
            "1".into(),
            "--set".into(),
            "train.epochs_sup=2".into(),
            "--set".into(),
            "model.hidden_dim=16".into(),
            "--set".into(),
            "model.layers=1".into(),
        ]
    };
    let args: Vec<String> = train_args("sup");
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(run(&argv), 0);
    assert!(tmp.path().join("sup/p.ckpt").exists());
    assert!(tmp.path().join("sup/q.ckpt").exists());
    assert!(tmp.path().join("sup/metrics.jsonl").exists());

    // reproduce from the snapshot alone: same seeds and knobs come from the
    // snapshotted config file
    assert_eq!(
        run(&[
            "train-sup",
            "--corpus",
            &d("split/split.jsonl"),
            "--world",
            &d("synth/world.json"),
            "--out",
            &d("sup2"),
            "--config",
            &d("sup/config.json"),
        ]),
        0
    );
    let a = std::fs::read_to_string(tmp.path().join("sup/metrics.jsonl")).unwrap();
    let b = std::fs::read_to_string(tmp.path().join("sup2/metrics.jsonl")).unwrap();
    assert_eq!(a, b, "snapshot replay must reproduce per-epoch losses");

    // semi-variational stage
    assert_eq!(
        run(&[
            "train-semi-vl",
            "--corpus",
            &d("split/split.jsonl"),
            "--world",
            &d("synth/world.json"),
            "--init",
            &d("sup"),
            "--out",
            &d("vl"),
            "--config",
            &d("sup/config.json"),
            "--set",
            "train.epochs_semi=1",
        ]),
        0
    );
    let log = std::fs::read_to_string(tmp.path().join("vl/batches.log")).unwrap();
    assert!(log.starts_with("LU"), "alternation starts labeled, got {log:?}");

    // self-training stage
    assert_eq!(
        run(&[
            "train-semi-st",
            "--corpus",
            &d("split/split.jsonl"),
            "--world",
            &d("synth/world.json"),
            "--init",
            &d("sup"),
            "--scheme",
            "response_stt",
            "--out",
            &d("st"),
            "--config",
            &d("sup/config.json"),
            "--set",
            "train.epochs_semi=1",
        ]),
        0
    );
    assert!(tmp.path().join("st/p.ckpt").exists());
    assert!(!tmp.path().join("st/q.ckpt").exists(), "self-training holds no inference model");

    // eval both models and plot
    for (ckpt, label, out) in [("sup/p.ckpt", "SupOnly", "e1"), ("vl/p.ckpt", "Semi-VL", "e2")] {
        assert_eq!(
            run(&[
                "eval",
                "--corpus",
                &d("synth/corpus.jsonl"),
                "--world",
                &d("synth/world.json"),
                "--model",
                &d(ckpt),
                "--label",
                label,
                "--proportion",
                "0.5",
                "--out",
                &d(out),
            ]),
            0
        );
        let report: EvalReportFile = serde_json::from_str(
            &std::fs::read_to_string(tmp.path().join(out).join("report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report.label, label);
        assert!(report.report.inform >= report.report.success);
    }
    assert_eq!(
        run(&["plot", "--reports", &d("e1"), &d("e2"), "--out", &d("plots")]),
        0
    );
    let svg = std::fs::read_to_string(tmp.path().join("plots/scores.svg")).unwrap();
    assert!(svg.contains("SupOnly") && svg.contains("Semi-VL"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["synth", "--bogus-flag"]), 2);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x").display().to_string();
    assert_eq!(run(&["synth", "--out", &out, "--set", "generator.nope=1"]), 2);
    assert_eq!(run(&["synth", "--out", &out, "--set", "seed=notanumber"]), 2);
}

#[test]
fn eval_on_missing_files_is_a_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x").display().to_string();
    assert_eq!(
        run(&[
            "eval",
            "--corpus",
            "/definitely/missing.jsonl",
            "--world",
            "/definitely/missing.json",
            "--model",
            "/definitely/missing.ckpt",
            "--out",
            &out,
        ]),
        1
    );
    let _ = Path::new(&out);
}

#[test]
fn verify_subcommand_writes_probe_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify").display().to_string();
    assert_eq!(
        run(&["verify", "--samples", "60", "--seeds", "1", "--out", &out]),
        0
    );
    let report = std::fs::read_to_string(tmp.path().join("verify/probe_report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(parsed["all_pass"], serde_json::Value::Bool(true));
}
