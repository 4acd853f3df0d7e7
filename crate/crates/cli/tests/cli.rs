use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainprint::data::{read_slice, write_slice, DatasetManifest, ScanRecord, Slice, Split};
use brainprint::eval::EvalReport;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brainprint"))
}

fn run<S: AsRef<OsStr>>(args: &[S]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok<S: AsRef<OsStr>>(args: &[S]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args.iter().map(|a| a.as_ref()).collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `dir` keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

const TINY: &str = r#"{
  "model": {"channels": [4, 8, 8, 8], "repr_dim": 8, "proj_dim": 16},
  "train": {"epochs": 3, "warmup_epochs": 1, "batch_size": 4, "delta": 1, "delta_t": 1}
}"#;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let f = Fixture { dir };
        ok(&[
            "gen-data", "--subjects", "12", "--scans-mean", "3", "--size", "64", "--seed", "3", "--out",
            p(&f.path("gen")),
        ]);
        fs::write(f.path("tiny.json"), TINY).unwrap();
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn data(&self) -> PathBuf {
        self.path("gen/adni-like")
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let mut args: Vec<PathBuf> = vec![
            "train".into(),
            "--config".into(),
            self.path("tiny.json"),
            "--data".into(),
            self.data(),
            "--out".into(),
            out.clone(),
        ];
        args.extend(extra.iter().map(PathBuf::from));
        ok(&args);
        out
    }

    fn log(&self, out: &Path) -> Vec<Value> {
        fs::read_to_string(out.join("train_log.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

fn steps(log: &[Value]) -> impl Iterator<Item = &Value> {
    log.iter().filter(|r| r.get("step").is_some())
}

#[test]
fn gen_data_writes_both_datasets_reproducibly() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        ok(&[
            "gen-data", "--subjects", "5", "--scans-mean", "2", "--size", "64", "--seed", "9",
            "--contrast-variants", "--out", p(&dir.path().join(name)),
        ]);
    }
    let a = tree(&dir.path().join("a"));
    assert!(a.contains_key(Path::new("adni-like/manifest.jsonl")));
    assert!(a.contains_key(Path::new("synt-contr/manifest.jsonl")));
    let images = a.iter().filter(|(_, b)| b.starts_with(b"DBPIMG1")).count();
    let manifest = DatasetManifest::read(&dir.path().join("a/adni-like")).unwrap();
    assert_eq!(images, 2 * manifest.records.len());
    assert_eq!(a, tree(&dir.path().join("b")));
}

#[test]
fn invalid_arguments_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&["gen-data", "--subjects", "2", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["gen-data", "--subjects", "many", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = run(&["init-checkpoint", "--config", p(&cfg), "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(&cfg, r#"{"train": {"temperature": 0}}"#).unwrap();
    let out = run(&["init-checkpoint", "--config", p(&cfg), "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_3() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "saliency", "--checkpoint", p(&dir.path().join("none")), "--scan", p(&dir.path().join("none")), "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn help_lists_flags_and_defaults() {
    let text = ok(&["gen-data", "--help"]);
    for needle in ["--subjects", "--scans-mean", "--size", "--seed", "--out", "--contrast-variants", "[default: 90]"] {
        assert!(text.contains(needle), "missing {needle}");
    }
    let text = ok(&["query", "--help"]);
    for needle in ["--index", "--query-scan", "--k", "--ivf", "--n-probe", "--include-self"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn training_is_deterministic_and_logs_its_config() {
    let f = Fixture::new();
    let a = f.train("run-a", &["--beta", "linear"]);
    let b = f.train("run-b", &["--beta", "linear"]);
    let ckpt_a = fs::read(a.join("checkpoint.dbpckpt")).unwrap();
    assert_eq!(ckpt_a, fs::read(b.join("checkpoint.dbpckpt")).unwrap());
    assert_eq!(
        fs::read(a.join("train_log.jsonl")).unwrap(),
        fs::read(b.join("train_log.jsonl")).unwrap()
    );

    let log = f.log(&a);
    let cfg = &log[0]["config"];
    assert_eq!(cfg["train"]["beta_schedule"], "linear");
    assert_eq!(cfg["train"]["epochs"], 3);
    assert_eq!(cfg["model"]["channels"], serde_json::json!([4, 8, 8, 8]));

    let ckpt = brainprint::nn::ParamStore::from_bytes(&ckpt_a).unwrap();
    let embedded: Value = serde_json::from_str(ckpt.comment().unwrap()).unwrap();
    assert_eq!(&embedded, cfg);

    let h = 3.0;
    for r in steps(&log) {
        let t = r["epoch"].as_f64().unwrap();
        assert_eq!(r["beta"].as_f64().unwrap(), 1.0 - t / h);
    }
    assert_eq!(log.iter().filter(|r| r.get("val_map_at_3").is_some()).count(), 3);
}

#[test]
fn pure_losses_zero_the_other_term() {
    let f = Fixture::new();
    let bt = f.log(&f.train("bt", &["--loss", "bt"]));
    assert_eq!(bt[0]["config"]["train"]["loss"], "bt");
    for r in steps(&bt) {
        assert_eq!(r["beta"].as_f64().unwrap(), 1.0);
        assert_eq!(r["l_bp"], r["l_bt"]);
    }
    let nce = f.log(&f.train("nce", &["--loss", "infonce"]));
    for r in steps(&nce) {
        assert_eq!(r["beta"].as_f64().unwrap(), 0.0);
        assert_eq!(r["l_bp"], r["l_c"]);
    }
}

#[test]
fn non_finite_loss_exits_with_4_and_dumps_diagnostics() {
    let f = Fixture::new();
    let cfg = f.path("huge.json");
    fs::write(
        &cfg,
        r#"{"model": {"channels": [4, 8, 8, 8], "repr_dim": 8, "proj_dim": 16},
            "train": {"epochs": 2, "warmup_epochs": 1, "batch_size": 4, "lambda": 1e308}}"#,
    )
    .unwrap();
    let out_dir = f.path("diverged");
    let out = run(&["train", "--config", p(&cfg), "--data", p(&f.data()), "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let dump: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("nonfinite_dump.json")).unwrap()).unwrap();
    assert!(dump["error"].as_str().unwrap().contains("non-finite loss"));
    assert_eq!(dump["config"]["train"]["lambda"], 1e308);
    assert!(!out_dir.join("checkpoint.dbpckpt").exists());
}

#[test]
fn index_and_query_listings() {
    let f = Fixture::new();
    let ckpt = f.train("run", &[]).join("checkpoint.dbpckpt");
    let manifest = DatasetManifest::read(&f.data()).unwrap();
    let n = manifest.records.len();
    let exact = f.path("exact.idx");
    let ivf = f.path("ivf.idx");
    let data = f.data();
    for (path, extra) in [(&exact, None), (&ivf, Some("--ivf"))] {
        let mut args = vec!["index", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(path)];
        args.extend(extra);
        ok(&args);
    }
    let target = &manifest.records[4];
    let listing = ok(&["query", "--index", p(&exact), "--query-scan", &target.scan_id, "--include-self"]);
    let first: Vec<&str> = listing.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(first, ["1", target.scan_id.as_str(), target.subject_id.as_str(), "1.000000", "correct"]);

    let k = (n + 5).to_string();
    let full = ok(&["query", "--index", p(&exact), "--query-scan", &target.scan_id, "--k", &k]);
    assert_eq!(full.lines().count(), n);
    assert!(!full.contains(&format!("\t{}\t", target.scan_id)));

    let probed = ok(&[
        "query", "--index", p(&ivf), "--query-scan", &target.scan_id, "--k", &k, "--ivf", "--n-probe", "max",
    ]);
    assert_eq!(probed, full);

    // Re-embedding from the dataset gives the same listing as the stored vector.
    let embedded = ok(&[
        "query", "--index", p(&exact), "--query-scan", &target.scan_id, "--k", "5", "--checkpoint", p(&ckpt),
        "--data", p(&f.data()),
    ]);
    let stored = ok(&["query", "--index", p(&exact), "--query-scan", &target.scan_id, "--k", "5"]);
    assert_eq!(embedded, stored);

    let out = run(&["query", "--index", p(&exact), "--query-scan", "no-such-scan"]);
    assert_eq!(out.status.code(), Some(5));
    let out = run(&["query", "--index", p(&exact), "--query-scan", &target.scan_id, "--ivf"]);
    assert_eq!(out.status.code(), Some(2));

    let again = f.path("exact2.idx");
    ok(&["index", "--checkpoint", p(&ckpt), "--data", p(&f.data()), "--out", p(&again)]);
    assert_eq!(fs::read(&exact).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn embed_writes_unit_fingerprints_for_the_split() {
    let f = Fixture::new();
    let ckpt = f.path("init.dbpckpt");
    ok(&["init-checkpoint", "--config", p(&f.path("tiny.json")), "--out", p(&ckpt)]);
    let out = f.path("fp.jsonl");
    ok(&[
        "embed", "--checkpoint", p(&ckpt), "--data", p(&f.data()), "--split", "val", "--out", p(&out),
    ]);
    let manifest = DatasetManifest::read(&f.data()).unwrap();
    let lines: Vec<Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), manifest.records_in(Split::Val).count());
    for l in &lines {
        let v: Vec<f64> = serde_json::from_value(l["vector"].clone()).unwrap();
        assert_eq!(v.len(), 8);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
}

#[test]
fn eval_report_and_self_comparison() {
    let f = Fixture::new();
    let ckpt = f.train("run", &[]).join("checkpoint.dbpckpt");
    let report_path = f.path("report.json");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&f.data()), "--out", p(&report_path)]);
    let report = EvalReport::from_json(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.split.as_deref(), Some("test"));
    assert_eq!(report.k, 3);
    assert_eq!(report.config.as_ref().unwrap()["train"]["epochs"], 3);
    let aps = report.ap_values();
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    assert!((report.map_at_k - mean).abs() < 1e-12);
    let hits = report.per_query.iter().filter(|q| q.hit_at_k).count() as f64;
    assert!((report.recall_at_k - hits / aps.len() as f64).abs() < 1e-12);

    let again = f.path("again.json");
    let text = ok(&[
        "eval", "--checkpoint", p(&ckpt), "--data", p(&f.data()), "--out", p(&again), "--compare",
        p(&report_path),
    ]);
    assert_eq!(fs::read(&report_path).unwrap(), fs::read(&again).unwrap());
    assert!(text.contains("t=0.0000 p=1.000000"), "{text}");
}

/// Three subjects, two identical scans each: every query retrieves its twin.
#[test]
fn eval_on_a_perfectly_separable_dataset() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("toy");
    let mut manifest = DatasetManifest::default();
    for s in 0..3 {
        let img = Slice::from_fn(40, 40, |r, c| ((r * (s + 1) + c * (3 - s)) % 7) as f32);
        for j in 0..2 {
            let scan_id = format!("s{s}-{j}");
            let rel = format!("{scan_id}.dbpimg");
            write_slice(&data.join(&rel), &img).unwrap();
            manifest.records.push(ScanRecord {
                scan_id: scan_id.clone(),
                subject_id: format!("s{s}"),
                acquisition_day: 200 * j as i64,
                slice_path: rel,
            });
            manifest.split.insert(scan_id, Split::Test);
        }
    }
    manifest.write(&data).unwrap();
    let ckpt = dir.path().join("init.dbpckpt");
    ok(&["init-checkpoint", "--out", p(&ckpt)]);
    let out = dir.path().join("r.json");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&out), "--k", "1"]);
    let report = EvalReport::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report.n_queries, 6);
    assert_eq!(report.map_at_k, 1.0);
    assert_eq!(report.recall_at_k, 1.0);
}

#[test]
fn saliency_maps_are_bounded_and_reproducible() {
    let f = Fixture::new();
    let ckpt = f.train("run", &[]).join("checkpoint.dbpckpt");
    let manifest = DatasetManifest::read(&f.data()).unwrap();
    let scan = f.data().join(&manifest.records[0].slice_path);
    let (a, b) = (f.path("a.dbpimg"), f.path("b.dbpimg"));
    for out in [&a, &b] {
        ok(&["saliency", "--checkpoint", p(&ckpt), "--scan", p(&scan), "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let map = read_slice(&a).unwrap();
    assert_eq!((map.height(), map.width()), (64, 64));
    assert!(map.values().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(map.values().iter().any(|&v| v > 0.0));

    let init = f.path("init.dbpckpt");
    ok(&["init-checkpoint", "--config", p(&f.path("tiny.json")), "--out", p(&init)]);
    let zero = f.path("zero.dbpimg");
    write_slice(&zero, &Slice::zeros(64, 64)).unwrap();
    let z = f.path("z.dbpimg");
    ok(&["saliency", "--checkpoint", p(&init), "--scan", p(&zero), "--out", p(&z)]);
    assert!(read_slice(&z).unwrap().values().iter().all(|&v| v == 0.0));
}
