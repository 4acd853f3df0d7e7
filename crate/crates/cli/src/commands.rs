use std::fs;
use std::io::Write;
use std::path::Path;

use brainprint::bench::{self, BenchConfig, Variant};
use brainprint::data::{
    derive_synt_contr, generate_dataset, read_slice, write_slice, DatasetManifest, DatasetSpec, Split,
};
use brainprint::eval::{evaluate, paired_t_test, summary_table, EvalReport};
use brainprint::nn::{gradcam, init_params, ParamStore};
use brainprint::retrieval::{fingerprints, save_index, load_index, Fingerprint, FingerprintIndex, Hit};
use brainprint::training::{train_observed, BetaSchedule, LogRecord, LossMode, TrainData};
use brainprint::transforms::{load_split, preprocess, LoadedScan, PreprocConfig};
use brainprint::{seed, Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::{
    AblateArgs, DataArgs, EmbedArgs, EvalArgs, GenDataArgs, IndexArgs, InitArgs, Probe, QueryArgs, SaliencyArgs,
    TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.dbpckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const DUMP_FILE: &str = "nonfinite_dump.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = DatasetSpec::new(a.subjects, a.scans_mean, a.size, a.seed);
    spec.validate()?;
    let base = a.out.join("adni-like");
    let manifest = generate_dataset(&spec, &base)?;
    eprintln!("wrote {} scans to {}", manifest.records.len(), base.display());
    if a.contrast_variants {
        let contrast = a.out.join("synt-contr");
        derive_synt_contr(&manifest, &base, seed::derive(&[a.seed, 1]), &contrast)?;
        eprintln!("wrote contrast variants to {}", contrast.display());
    }
    Ok(())
}

/// The `--config` file if given, else the config embedded in the
/// checkpoint, else the defaults.
fn config_for(path: Option<&Path>, store: &ParamStore) -> Result<RunConfig> {
    if path.is_some() {
        return RunConfig::load(path);
    }
    match store.comment().map(serde_json::from_str::<RunConfig>) {
        Some(Ok(cfg)) => {
            cfg.validate()?;
            Ok(cfg)
        }
        _ => RunConfig::load(None),
    }
}

fn checkpoint_with_config(store: &mut ParamStore, cfg: &RunConfig) {
    store.set_comment(Some(cfg.to_compact()));
}

pub fn init_checkpoint(a: &InitArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let mut store = init_params(&cfg.model, cfg.train.seed)?;
    checkpoint_with_config(&mut store, &cfg);
    store.save(&a.out)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?;
    if let Some(b) = a.beta {
        cfg.train.beta_schedule = b;
    }
    if let Some(l) = a.loss {
        cfg.train.loss = l;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let manifest = DatasetManifest::read(&a.data)?;
    let data = TrainData {
        train: load_split(&a.data, &manifest, Split::Train, &cfg.data.preproc)?,
        val: load_split(&a.data, &manifest, Split::Val, &cfg.data.preproc)?,
    };
    let params = init_params(&cfg.model, cfg.train.seed)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let mut log = vec![serde_json::to_string(&json!({ "config": cfg.to_value() }))?];
    let mut records: Vec<LogRecord> = Vec::new();
    let result = train_observed(&cfg.train, params, &data, |r| {
        if let LogRecord::Epoch(e) = r {
            eprintln!(
                "epoch {:>3}  val mAP@3 {:.4}  R@3 {:.4}",
                e.epoch, e.val_map_at_3, e.val_recall_at_3
            );
        }
        records.push(r.clone());
    });
    for r in &records {
        log.push(serde_json::to_string(r)?);
    }
    write_text(&a.out.join(LOG_FILE), &(log.join("\n") + "\n"))?;

    let outcome = match result {
        Ok(o) => o,
        Err(e @ Error::NonFiniteLoss { .. }) => {
            let recent = &records[records.len().saturating_sub(20)..];
            let dump = json!({
                "error": e.to_string(),
                "config": cfg.to_value(),
                "recent_log": recent,
            });
            write_text(&a.out.join(DUMP_FILE), &serde_json::to_string_pretty(&dump)?)?;
            eprintln!("diagnostics written to {}", a.out.join(DUMP_FILE).display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let mut params = outcome.params;
    checkpoint_with_config(&mut params, &cfg);
    params.save(&a.out.join(CHECKPOINT_FILE))?;
    eprintln!(
        "best epoch {} (val mAP@3 {:.4}) after {} epochs",
        outcome.best_epoch, outcome.best_val_map, outcome.epochs_run
    );
    Ok(())
}

/// Preprocessed scans of `split` (or every scan) in manifest order.
fn load_scans(dir: &Path, split: Option<Split>, preproc: &PreprocConfig) -> Result<Vec<LoadedScan>> {
    let manifest = DatasetManifest::read(dir)?;
    manifest
        .records
        .iter()
        .filter(|r| split.is_none_or(|s| manifest.split_of(&r.scan_id) == Some(s)))
        .map(|r| {
            Ok(LoadedScan {
                record: r.clone(),
                slice: preprocess(&read_slice(&dir.join(&r.slice_path))?, preproc)?,
            })
        })
        .collect()
}

fn fingerprint_scans(store: &ParamStore, scans: &[LoadedScan]) -> Result<Vec<Fingerprint>> {
    if scans.is_empty() {
        return Err(Error::InvalidArgument("no scans selected".into()));
    }
    fingerprints(
        store,
        scans
            .iter()
            .map(|s| (s.record.scan_id.as_str(), s.record.subject_id.as_str(), &s.slice)),
    )
}

fn source_fingerprints(a: &DataArgs) -> Result<(RunConfig, Vec<Fingerprint>)> {
    let store = ParamStore::load(&a.checkpoint)?;
    let cfg = config_for(a.config.config.as_deref(), &store)?;
    let scans = load_scans(&a.data, a.split, &cfg.data.preproc)?;
    let fps = fingerprint_scans(&store, &scans)?;
    Ok((cfg, fps))
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let (_, fps) = source_fingerprints(&a.source)?;
    let mut text = String::new();
    for f in &fps {
        text.push_str(&serde_json::to_string(f)?);
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    eprintln!("wrote {} fingerprints", fps.len());
    Ok(())
}

pub fn index(a: &IndexArgs) -> Result<()> {
    let (cfg, fps) = source_fingerprints(&a.source)?;
    let n = fps.len();
    let index = if a.ivf {
        let cells = a.n_cells.or(cfg.retrieval.n_cells);
        FingerprintIndex::build_ivf(fps, cells, cfg.retrieval.kmeans_iters, cfg.train.seed)?
    } else {
        FingerprintIndex::build_exact(fps)?
    };
    save_index(&index, &a.out)?;
    match &index.ivf {
        Some(ivf) => eprintln!("indexed {n} fingerprints in {} cells", ivf.n_cells()),
        None => eprintln!("indexed {n} fingerprints"),
    }
    Ok(())
}

/// Formats a ranked listing, marking each hit against the query's subject.
pub fn format_hits(query_subject: &str, hits: &[Hit]) -> String {
    let mut out = String::from("rank\tscan_id\tsubject_id\tsimilarity\tmatch\n");
    for (i, h) in hits.iter().enumerate() {
        let mark = if h.subject_id == query_subject { "correct" } else { "incorrect" };
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{}\n",
            i + 1,
            h.scan_id,
            h.subject_id,
            h.similarity,
            mark
        ));
    }
    out
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let index = load_index(&a.index)?;
    let store = a.checkpoint.as_deref().map(ParamStore::load).transpose()?;
    let cfg = match &store {
        Some(st) => config_for(a.config.config.as_deref(), st)?,
        None => RunConfig::load(a.config.config.as_deref())?,
    };
    let (subject, vector) = match (&a.data, &store) {
        (Some(data), Some(store)) => {
            let scans = load_scans(data, None, &cfg.data.preproc)?;
            let scan = scans
                .iter()
                .find(|s| s.record.scan_id == a.query_scan)
                .ok_or_else(|| Error::NotFound(format!("scan {:?} in {}", a.query_scan, data.display())))?;
            let fp = fingerprint_scans(store, std::slice::from_ref(scan))?.remove(0);
            (fp.subject_id, fp.vector)
        }
        _ => {
            let pos = index
                .position(&a.query_scan)
                .ok_or_else(|| Error::NotFound(format!("scan {:?} in {}", a.query_scan, a.index.display())))?;
            let e = &index.entries[pos];
            (e.subject_id.clone(), e.vector.clone())
        }
    };
    let k = a.k.unwrap_or(cfg.eval.k);
    let exclude = (!a.include_self).then_some(a.query_scan.as_str());
    let hits = if a.ivf {
        let n_cells = index
            .ivf
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("index has no inverted file; rebuild with --ivf".into()))?
            .n_cells();
        let n_probe = match a.n_probe {
            Some(Probe::All) => n_cells,
            Some(Probe::Cells(n)) => n,
            None => cfg.retrieval.n_probe,
        };
        index.query_ivf(&vector, k, n_probe, exclude)?
    } else {
        index.query(&vector, k, exclude)?
    };
    print!("{}", format_hits(&subject, &hits));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let store = ParamStore::load(&a.checkpoint)?;
    let mut cfg = config_for(a.config.config.as_deref(), &store)?;
    if let Some(k) = a.k {
        cfg.eval.k = k;
    }
    cfg.validate()?;
    let scans = load_scans(&a.data, Some(a.split), &cfg.data.preproc)?;
    let mut report = evaluate(&store, &scans, cfg.eval.k, a.timed)?;
    report.split = Some(a.split.as_str().to_string());
    report.config = Some(cfg.to_value());
    write_text(&a.out, &report.to_json()?)?;
    print!("{}", summary_table(&[("this", &report)]));

    if let Some(other_path) = &a.compare {
        let text = fs::read_to_string(other_path).map_err(io_err(other_path))?;
        let other = EvalReport::from_json(&text)?;
        let (mine, theirs) = paired_ap(&report, &other)?;
        let t = paired_t_test(&mine, &theirs)?;
        let t_str = t.t.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        println!(
            "paired t-test vs {}: n={} mean AP difference={:.6} t={} p={:.6}",
            other_path.display(),
            t.n,
            t.mean_difference,
            t_str,
            t.p
        );
    }
    Ok(())
}

/// Per-query AP lists of two reports aligned by scan id.
fn paired_ap(a: &EvalReport, b: &EvalReport) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.k != b.k {
        return Err(Error::InvalidArgument(format!("reports use k={} and k={}", a.k, b.k)));
    }
    let by_id: std::collections::HashMap<&str, f64> =
        b.per_query.iter().map(|q| (q.scan_id.as_str(), q.ap_at_k)).collect();
    if by_id.len() != a.per_query.len() {
        return Err(Error::InvalidArgument("reports cover different queries".into()));
    }
    let mut theirs = Vec::with_capacity(a.per_query.len());
    for q in &a.per_query {
        match by_id.get(q.scan_id.as_str()) {
            Some(&v) => theirs.push(v),
            None => return Err(Error::InvalidArgument(format!("query {} missing from comparison", q.scan_id))),
        }
    }
    Ok((a.ap_values(), theirs))
}

pub fn saliency(a: &SaliencyArgs) -> Result<()> {
    let store = ParamStore::load(&a.checkpoint)?;
    let cfg = config_for(a.config.config.as_deref(), &store)?;
    let raw = read_slice(&a.scan)?;
    let slice = if a.raw { raw } else { preprocess(&raw, &cfg.data.preproc)? };
    let map = gradcam(&store, &slice)?;
    write_slice(&a.out, &map.into_slice())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg: BenchConfig = match &a.config {
        None => BenchConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?
        }
    };
    let variants = [
        Variant::combined(BetaSchedule::Linear),
        Variant::pure(LossMode::Bt),
        Variant::pure(LossMode::Infonce),
        Variant::combined(BetaSchedule::Constant),
        Variant::combined(BetaSchedule::Step),
        Variant::combined(BetaSchedule::IterativeStep),
    ];
    let config_value = serde_json::to_value(&cfg)?;
    let mut all = Vec::new();
    for &s in &a.seeds {
        let dir = a.out.join(format!("seed{s}"));
        let data = bench::prepare(&cfg, s, &dir.join("data"))?;
        let mut rows = Vec::new();
        for &v in &variants {
            eprintln!("seed {s}: training {}", v.label());
            let mut r = bench::run_variant(&cfg, &data, s, v)?;
            r.test.split = Some("test".into());
            r.test_contrast.split = Some("test-contrast".into());
            r.test.config = Some(config_value.clone());
            r.test_contrast.config = Some(config_value.clone());
            rows.push(r);
        }
        let labels: Vec<String> = rows.iter().map(|r| r.variant.label()).collect();
        let table = |pick: fn(&bench::VariantResult) -> &EvalReport| {
            let refs: Vec<(&str, &EvalReport)> = labels.iter().map(String::as_str).zip(rows.iter().map(pick)).collect();
            summary_table(&refs)
        };
        let mut out = std::io::stdout().lock();
        writeln!(out, "seed {s}, same-contrast test").ok();
        write!(out, "{}", table(|r| &r.test)).ok();
        writeln!(out, "seed {s}, contrast-variant test").ok();
        write!(out, "{}", table(|r| &r.test_contrast)).ok();
        all.extend(rows);
    }
    let doc = json!({ "config": config_value, "results": all });
    write_text(&a.out.join("ablation.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
}
