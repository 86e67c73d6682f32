use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn ressl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ressl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_config_prints_resolved_document() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = ressl(&["validate-config", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# config hash "));
    assert!(text.contains("queue_capacity = 128"));

    // the printed document is itself a valid config with the same hash
    let echoed = dir.path().join("echo.toml");
    std::fs::write(&echoed, &text).unwrap();
    let again = ressl(&["validate-config", "--config", echoed.to_str().unwrap()], dir.path());
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(text.lines().next(), stdout(&again).lines().next());
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[run]\ndataset = \"cifar10\"\nbogus = 1\n[loss]\ntau_s = 0.05\ntau_t = 0.1\n[train]\nbatch_size = 0\n",
    )
    .unwrap();
    let o = ressl(&["validate-config", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("run.bogus"), "{err}");
    assert!(err.contains("tau_t"), "{err}");
    assert!(err.contains("batch_size"), "{err}");
}

#[test]
fn train_evaluate_export_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = ressl(&["train", "--config", cfg, "--out", out_s, "--deterministic"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let final_ckpt = out.join("final.ckpt");
    assert_eq!(stdout(&o).trim(), final_ckpt.to_str().unwrap());
    assert!(out.join("metrics.jsonl").exists());
    let ck = final_ckpt.to_str().unwrap();

    let o = ressl(&["knn", "--config", cfg, "--out", out_s, "--checkpoint", ck, "--k", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["k"], 3);
    assert!((0.0..=1.0).contains(&v["knn_top1"].as_f64().unwrap()));

    let o = ressl(
        &["neighbors", "--config", cfg, "--out", out_s, "--checkpoint", ck, "--query", "2", "--n", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["neighbors"].as_array().unwrap().len(), 4);

    let csv = dir.path().join("emb.csv");
    let export = |file: &Path| {
        ressl(
            &[
                "export-embeddings",
                "--config",
                cfg,
                "--out",
                out_s,
                "--checkpoint",
                ck,
                "--file",
                file.to_str().unwrap(),
            ],
            dir.path(),
        )
    };
    let o = export(&csv);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("sample_id,label,f0,"));
    assert_eq!(text.lines().count(), 1 + 64);
    let csv2 = dir.path().join("emb2.csv");
    assert!(export(&csv2).status.success());
    assert_eq!(text, std::fs::read_to_string(&csv2).unwrap());

    // a checkpoint from this run is refused under a different seed
    let epoch1 = out.join("epoch_0001.ckpt");
    let other = dir.path().join("other");
    let args = [
        "train",
        "--config",
        cfg,
        "--out",
        other.to_str().unwrap(),
        "--seed",
        "99",
        "--resume",
        epoch1.to_str().unwrap(),
    ];
    let o = ressl(&args, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let mut forced = args.to_vec();
    forced.push("--force");
    let o = ressl(&forced, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    // resuming under the original config continues to the same end point
    let resumed = dir.path().join("resumed");
    let o = ressl(
        &[
            "train",
            "--config",
            cfg,
            "--out",
            resumed.to_str().unwrap(),
            "--deterministic",
            "--resume",
            epoch1.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(resumed.join("final.ckpt")).unwrap(),
        std::fs::read(&final_ckpt).unwrap()
    );
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let o = ressl(
        &["linear-probe", "--config", cfg.to_str().unwrap(), "--checkpoint", "nope.ckpt"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.ckpt"));
}
