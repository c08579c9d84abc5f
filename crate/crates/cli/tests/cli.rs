//! End-to-end runs of the `scan` binary on small synthetic datasets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scan_core::data::synthetic::{write_dataset, SyntheticConfig};
use scan_core::data::{load_gray_image, DatasetSplit};

fn scan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SCAN_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "command failed:\n{}", text(&o));
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// The single run directory a command created under `out`.
fn only_run(out: &Path, command: &str) -> PathBuf {
    let runs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|d| d.file_name().unwrap().to_string_lossy().contains(&format!("-{command}-")))
        .collect();
    assert_eq!(runs.len(), 1, "expected one {command} run in {}", out.display());
    runs.into_iter().next().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    manifest: PathBuf,
    split: PathBuf,
}

/// Twelve 32x32 scenes under a source named `jsrt`, plus a prepared split.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_dataset(&root.join("data"), "jsrt", 12, 1, SyntheticConfig { size: 32, ..Default::default() }, true).unwrap();
    let manifest = root.join("data/manifest.toml");
    let split = root.join("split.json");
    ok(scan(&["prepare", "--manifest", p(&manifest), "--split-file", p(&split), "--out-dir", p(&root.join("runs"))]));
    Fixture { _dir: dir, root, manifest, split }
}

fn train_args<'a>(f: &'a Fixture, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "train",
        "--manifest",
        p(&f.manifest),
        "--split-file",
        p(&f.split),
        "--out-dir",
        out,
        "--epochs",
        "2",
        "--pretrain-epochs",
        "1",
        "--batch-size",
        "5",
        "--deterministic",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn prepare_writes_reproducible_splits() {
    let f = fixture();
    let split = DatasetSplit::load(&f.split).unwrap();
    assert_eq!((split.development.len(), split.evaluation.len()), (10, 2));
    let first = std::fs::read(&f.split).unwrap();

    let again = f.root.join("again.json");
    let out = f.root.join("runs2");
    ok(scan(&["prepare", "--manifest", p(&f.manifest), "--split-file", p(&again), "--out-dir", p(&out)]));
    assert_eq!(first, std::fs::read(&again).unwrap());
    let report = std::fs::read_to_string(only_run(&out, "prepare").join("prepare_report.json")).unwrap();
    assert!(report.contains("\"loaded\": 12"), "{report}");

    let seeded = f.root.join("seeded.json");
    ok(scan(&["prepare", "--manifest", p(&f.manifest), "--split-file", p(&seeded), "--seed", "5", "--out-dir", p(&out)]));
    assert_ne!(first, std::fs::read(&seeded).unwrap());
}

#[test]
fn prepare_names_missing_directories() {
    let f = fixture();
    std::fs::remove_dir_all(f.root.join("data/jsrt/heart")).unwrap();
    let o = scan(&["prepare", "--manifest", p(&f.manifest), "--out-dir", p(&f.root.join("runs3"))]);
    assert!(!o.status.success());
    let msg = text(&o);
    assert!(msg.contains("missing dataset directories") && msg.contains("jsrt/heart"), "{msg}");
    assert!(!f.root.join("runs3").exists(), "nothing is created before the layout check");
}

#[test]
fn fcn_only_training_writes_no_critic() {
    let f = fixture();
    let out = f.root.join("fcn");
    ok(scan(&train_args(&f, p(&out), &["--mode", "fcn_only"])));
    let run = only_run(&out, "train");
    let ck: Vec<String> = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(ck.iter().any(|n| n.starts_with("segmentor_")), "{ck:?}");
    assert!(!ck.iter().any(|n| n.starts_with("critic_")), "{ck:?}");
    assert!(run.join("train_log.jsonl").is_file());
}

#[test]
fn manifest_records_merged_configuration() {
    let f = fixture();
    let cfg = f.root.join("run.toml");
    std::fs::write(&cfg, "[train]\nlambda = 0.5\nlr = 0.0005\n").unwrap();
    let out = f.root.join("scan");
    let out_s = p(&out).to_string();
    let mut args = train_args(&f, &out_s, &["--mode", "scan", "--lambda", "0.001"]);
    args.extend(["--config", p(&cfg)]);
    ok(scan(&args));
    let run = only_run(&out, "train");
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(m["settings"]["train"]["lambda"], 0.001);
    assert_eq!(m["settings"]["train"]["lr"], 0.0005);
    assert_eq!(m["settings"]["train"]["mode"], "scan");
    assert_eq!(m["seeds"]["run"], 0);
    assert!(run.join("checkpoints/critic_e0002.ckpt").is_file());
}

#[test]
fn interrupted_run_resumes_to_identical_parameters() {
    let f = fixture();
    let cfg = f.root.join("every2.toml");
    std::fs::write(&cfg, "[train]\ncheckpoint_every = 2\n").unwrap();
    let (a_out, b_out) = (f.root.join("a"), f.root.join("b"));
    let four = ["--epochs", "4", "--pretrain-epochs", "1", "--batch-size", "5", "--deterministic"];
    let base = ["train", "--manifest", p(&f.manifest), "--split-file", p(&f.split)];

    // reference run: checkpoints only at the end
    let mut a = base.to_vec();
    a.extend(["--out-dir", p(&a_out)]);
    a.extend(four);
    ok(scan(&a));
    let a = only_run(&a_out, "train");

    // checkpoints every 2 epochs, then the last epoch is lost
    let mut b = base.to_vec();
    b.extend(["--out-dir", p(&b_out), "--config", p(&cfg)]);
    b.extend(four);
    ok(scan(&b));
    let b = only_run(&b_out, "train");
    let ck = b.join("checkpoints");
    let uninterrupted = std::fs::read(ck.join("segmentor_e0004.ckpt")).unwrap();
    for name in ["segmentor_e0004.ckpt", "critic_e0004.ckpt", "trainer_e0004.state"] {
        std::fs::remove_file(ck.join(name)).unwrap();
    }
    let o = ok(scan(&["train", "--resume", p(&b), "--deterministic"]));
    assert!(text(&o).contains("resuming at epoch 2"), "{}", text(&o));
    let resumed = std::fs::read(ck.join("segmentor_e0004.ckpt")).unwrap();
    assert_eq!(resumed, uninterrupted, "resumed run diverged from the uninterrupted one");
    assert_eq!(resumed, std::fs::read(a.join("checkpoints/segmentor_e0004.ckpt")).unwrap(), "checkpoint cadence changed the trajectory");

    // the log carries exactly one record per step
    let log = std::fs::read_to_string(b.join("train_log.jsonl")).unwrap();
    let steps: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["kind"] == "step")
        .map(|v| v["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, (1..=steps.len() as u64).collect::<Vec<_>>());
}

#[test]
fn resume_refuses_foreign_fingerprint() {
    let f = fixture();
    let out = f.root.join("fp");
    let cfg = f.root.join("every1.toml");
    std::fs::write(&cfg, "[train]\ncheckpoint_every = 1\n").unwrap();
    ok(scan(&train_args(&f, p(&out), &["--mode", "fcn_only", "--config", p(&cfg)])));
    let run = only_run(&out, "train");
    let ck = run.join("checkpoints/segmentor_e0002.ckpt");
    let mut bytes = std::fs::read(&ck).unwrap();
    // the 16-character fingerprint follows the 8-byte magic and 4-byte version
    bytes[12..28].copy_from_slice(b"0123456789abcdef");
    std::fs::write(&ck, bytes).unwrap();
    let o = scan(&["train", "--resume", p(&run)]);
    assert!(!o.status.success());
    let msg = text(&o);
    assert!(msg.contains("0123456789abcdef") && msg.contains("fingerprint"), "{msg}");
}

#[test]
fn eval_reports_and_enforces_budget() {
    let f = fixture();
    let out = f.root.join("train");
    ok(scan(&train_args(&f, p(&out), &["--mode", "fcn_only"])));
    let run = only_run(&out, "train");
    let eval_out = f.root.join("eval");
    let args = |budget: &'static str| {
        vec![
            "eval".to_string(),
            "--manifest".into(),
            p(&f.manifest).into(),
            "--split-file".into(),
            p(&f.split).into(),
            "--checkpoint".into(),
            p(&run).into(),
            "--out-dir".into(),
            p(&eval_out).into(),
            "--latency-budget".into(),
            budget.into(),
        ]
    };
    let a: Vec<String> = args("5");
    ok(scan(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    let report = only_run(&eval_out, "eval");
    let table = std::fs::read_to_string(report.join("metrics.txt")).unwrap();
    assert!(table.contains("Both Lungs") && table.contains("Heart"), "{table}");
    let kv = std::fs::read_to_string(report.join("metrics.kv")).unwrap();
    assert!(kv.contains("samples=2"), "{kv}");
    let timing = std::fs::read_to_string(report.join("timing.kv")).unwrap();
    assert!(timing.contains("mean_seconds="));

    let b: Vec<String> = args("0");
    let o = scan(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!o.status.success(), "a zero budget must fail the run");
    assert!(text(&o).contains("exceeds the budget"));

    // a split drawn for another dataset is refused
    let mut c: Vec<String> = args("5");
    c.extend(["--dataset".into(), "montgomery".into()]);
    let o = scan(&c.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!o.status.success());
    assert!(text(&o).contains("validation error"), "{}", text(&o));
}

#[test]
fn cross_dataset_eval_scores_every_image_without_heart() {
    let f = fixture();
    let out = f.root.join("train");
    ok(scan(&train_args(&f, p(&out), &["--mode", "fcn_only"])));
    let run = only_run(&out, "train");
    let lungs = f.root.join("mc");
    write_dataset(&lungs, "montgomery", 5, 2, SyntheticConfig { size: 32, ..Default::default() }, false).unwrap();
    let eval_out = f.root.join("cross");
    ok(scan(&[
        "eval",
        "--manifest",
        p(&lungs.join("manifest.toml")),
        "--dataset",
        "montgomery",
        "--checkpoint",
        p(&run),
        "--out-dir",
        p(&eval_out),
    ]));
    let report = only_run(&eval_out, "eval");
    let kv = std::fs::read_to_string(report.join("metrics.kv")).unwrap();
    assert!(kv.contains("samples=5"), "{kv}");
    assert!(!kv.contains("heart."), "{kv}");
}

#[test]
fn predict_writes_binary_masks_and_isolates_failures() {
    let f = fixture();
    let out = f.root.join("train");
    ok(scan(&train_args(&f, p(&out), &["--mode", "fcn_only"])));
    let run = only_run(&out, "train");
    let img = f.root.join("data/jsrt/images/jsrt_0000.png");
    let bogus = f.root.join("broken.png");
    std::fs::write(&bogus, b"not an image").unwrap();

    let predict = |dest: &Path, extra: &[&str]| {
        let mut a = vec!["predict", "--checkpoint", p(&run), "--out-dir", p(dest), "--overlay"];
        a.extend_from_slice(extra);
        scan(&a)
    };
    let (d1, d2) = (f.root.join("p1"), f.root.join("p2"));
    ok(predict(&d1, &[p(&img)]));
    ok(predict(&d2, &[p(&img)]));
    let (r1, r2) = (only_run(&d1, "predict"), only_run(&d2, "predict"));
    for class in ["left_lung", "right_lung", "heart"] {
        let name = format!("jsrt_0000_{class}.png");
        let m = load_gray_image(&r1.join(&name)).unwrap();
        assert_eq!(m.shape(), &[400, 400, 1]);
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 255.0));
        assert_eq!(std::fs::read(r1.join(&name)).unwrap(), std::fs::read(r2.join(&name)).unwrap());
    }
    assert!(r1.join("jsrt_0000_overlay.png").is_file());

    let d3 = f.root.join("p3");
    let o = predict(&d3, &[p(&bogus), p(&img), "--no-postprocess"]);
    assert!(!o.status.success(), "a failed image must make the exit status nonzero");
    let r3 = only_run(&d3, "predict");
    assert!(r3.join("jsrt_0000_left_lung.png").is_file(), "the readable image is still processed");
    assert!(text(&o).contains("broken.png"));
}

#[test]
fn selftest_passes() {
    let o = ok(scan(&["selftest"]));
    let out = text(&o);
    assert!(out.contains("all") && !out.contains("FAIL"), "{out}");
}
