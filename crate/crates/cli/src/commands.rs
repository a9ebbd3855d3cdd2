use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use streambench::analysis::{
    aggregate, forward_transfer, mean_std, plot_fwt, plot_pareto, plot_regret, plot_transfer, regret_curve,
    report_rows, run_label, transfer_matrix, transfer_rows, write_csv, ParetoPoint, Slice, TransferConfig,
    TransferMatrix,
};
use streambench::metalearner::StrategyLearner;
use streambench::protocol::{read_records, resume, run_meta_test, run_meta_train, PhaseResult, RunOptions, RunRecord};
use streambench::registry::{fetch, load_descriptors, prepare, tasks_dir};
use streambench::stream::{
    apply_variant, load_prepared, load_stream, make_class_partition_stream, make_synthetic_stream, parse_manifest,
    Stream,
};
use streambench::{Error, Result};

use crate::config::{load_config, Phase, RunConfig, StreamSource};
use crate::lock::DirLock;

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "records.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    streambench::codec::write_atomic(path, bytes)
}

fn json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

pub fn build_stream(cfg: &RunConfig, cache: &Path) -> Result<Stream> {
    let mut stream = match &cfg.stream {
        StreamSource::Manifest { path, data_root } => {
            let root = data_root.clone().unwrap_or_else(|| tasks_dir(cache));
            load_stream(path, Some(&root))?
        }
        StreamSource::Synthetic(spec) => make_synthetic_stream(spec)?,
        StreamSource::ClassPartition { task, partitions, seed, boundary, data_root } => {
            let root = data_root.clone().unwrap_or_else(|| tasks_dir(cache));
            let s = make_class_partition_stream(&load_prepared(&root, task)?, *partitions, *seed)?;
            s.with_boundary(boundary.unwrap_or(partitions.saturating_sub(1)))?
        }
    };
    for v in &cfg.variants {
        stream = apply_variant(&stream, v)?;
    }
    Ok(stream)
}

fn print_summary(out: &Path, result: &PhaseResult) -> Result<()> {
    match &result.summary {
        Some(s) => {
            write_file(&out.join(SUMMARY_FILE), &json(s))?;
            println!(
                "{} {}: E={:.4} cFLOP={:.4e} tasks={} scored={}",
                s.phase.name(),
                s.strategy.get("label").and_then(|l| l.as_str()).unwrap_or("?"),
                s.error,
                s.cflop as f64,
                s.num_tasks,
                s.num_scored
            );
        }
        None => println!(
            "stopped after {} tasks; continue with `streambench resume {}`",
            result.records.len(),
            out.display()
        ),
    }
    Ok(())
}

fn execute(cfg: &RunConfig, stream: &Stream, out: &Path, resuming: bool, stop_after: Option<usize>) -> Result<()> {
    let options = RunOptions { log: Some(out.join(LOG_FILE)), checkpoint: Some(out.join(CHECKPOINT_FILE)), stop_after };
    let phase = cfg.phase;
    if phase == Phase::TransferMatrix {
        if resuming {
            return Err(Error::Config("transfer-matrix runs are not checkpointed; start a new run".into()));
        }
        let tc = TransferConfig {
            predictor: cfg.predictor.clone(),
            space: cfg.space()?,
            engine: cfg.search.engine,
            n_trials: cfg.search.n_trials,
            seed: cfg.seed,
        };
        let m = transfer_matrix(stream, &tc)?;
        write_file(&out.join("transfer.json"), &json(&m))?;
        let path = out.join("transfer.csv");
        let f = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
        write_csv(&transfer_rows(&m), f)?;
        println!("transfer matrix over {} tasks: {} runs", m.task_ids.len(), m.runs);
        return Ok(());
    }
    let mut learner = StrategyLearner::new(cfg.learner_config()?)?;
    let cp = out.join(CHECKPOINT_FILE);
    let result = if resuming && cp.exists() {
        resume(stream, &mut learner, &cp, &options)?
    } else if phase == Phase::MetaTrain {
        run_meta_train(stream, &mut learner, &options)?
    } else {
        run_meta_test(stream, &mut learner, &options)?
    };
    print_summary(out, &result)
}

pub fn cmd_run(
    config: &Path,
    overrides: &[String],
    output: Option<PathBuf>,
    cache: &Path,
    stop_after: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config, overrides)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    let out = cfg.output.clone();
    let _lock = DirLock::acquire(&out)?;
    if out.join(LOG_FILE).exists() || out.join(CHECKPOINT_FILE).exists() {
        return Err(Error::Config(format!(
            "{} already holds a run; use `streambench resume` or choose another output",
            out.display()
        )));
    }
    write_file(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    let stream = build_stream(&cfg, cache)?;
    execute(&cfg, &stream, &out, false, stop_after)
}

pub fn cmd_resume(out: &Path, cache: &Path) -> Result<()> {
    let cfg = load_config(&out.join(CONFIG_FILE), &[])?;
    let _lock = DirLock::acquire(out)?;
    let stream = build_stream(&cfg, cache)?;
    execute(&cfg, &stream, out, true, None)
}

pub fn cmd_fetch(descriptors: &Path, ids: &[String], cache: &Path, do_prepare: bool) -> Result<()> {
    let all = load_descriptors(descriptors)?;
    let selected: Vec<_> = if ids.is_empty() {
        all.iter().collect()
    } else {
        ids.iter()
            .map(|id| all.iter().find(|d| &d.id == id).ok_or_else(|| Error::Config(format!("no descriptor `{id}`"))))
            .collect::<Result<_>>()?
    };
    let results: Vec<(String, Result<String>)> = selected
        .par_iter()
        .map(|d| {
            let r = fetch(d, cache).and_then(|files| {
                if !do_prepare {
                    return Ok(format!("{} file(s) cached", files.len()));
                }
                let (task, rep) = prepare(d, cache)?;
                Ok(format!(
                    "train/val/test = {}/{}/{}, {} duplicates removed, {} classes",
                    rep.sizes[0], rep.sizes[1], rep.sizes[2], rep.duplicates, task.num_classes
                ))
            });
            (d.id.clone(), r)
        })
        .collect();
    let mut first_err = None;
    for (id, r) in results {
        match r {
            Ok(msg) => println!("{id}: {msg}"),
            Err(e) => {
                eprintln!("{id}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

pub fn cmd_stream_info_config(config: &Path, overrides: &[String], cache: &Path) -> Result<()> {
    let cfg = load_config(config, overrides)?;
    let stream = build_stream(&cfg, cache)?;
    let stats = stream.stats();
    let mut out = String::new();
    writeln!(
        out,
        "{} tasks, boundary {}, years {}-{}, {} training examples",
        stats.num_tasks, stats.boundary, stats.years.0, stats.years.1, stats.total_train
    )
    .unwrap();
    writeln!(
        out,
        "{:>3}  {:<28} {:>5} {:<10} {:<13} {:>7} {:>8} {:>6} {:>6}  resolution",
        "#", "id", "year", "domain", "kind", "classes", "train", "val", "test"
    )
    .unwrap();
    for (i, t) in stream.tasks().iter().enumerate() {
        if i == stream.boundary() {
            writeln!(out, "---- meta-test ----").unwrap();
        }
        writeln!(
            out,
            "{i:>3}  {:<28} {:>5} {:<10} {:<13} {:>7} {:>8} {:>6} {:>6}  {}x{}",
            t.id,
            t.year,
            t.domain,
            t.kind.to_string(),
            t.num_classes,
            t.train().len(),
            t.val().len(),
            t.test().len(),
            t.avg_resolution.0,
            t.avg_resolution.1
        )
        .unwrap();
    }
    emit(&out)
}

pub fn cmd_stream_info_manifest(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let m = parse_manifest(&text, path)?;
    let mut out = String::new();
    writeln!(out, "manifest `{}`: {} rows, boundary {}", m.header.manifest, m.entries.len(), m.header.boundary)
        .unwrap();
    for (i, e) in m.entries.iter().enumerate() {
        if i == m.header.boundary {
            writeln!(out, "---- meta-test ----").unwrap();
        }
        let size = e.size.map_or("?".to_string(), |s| s.to_string());
        writeln!(out, "{i:>3}  {:<36} {:>5} {:<10} {:<13} {:>8}", e.id, e.year, e.domain, e.kind.to_string(), size)
            .unwrap();
    }
    emit(&out)
}

/// Prints to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io(Path::new("<stdout>"), e)),
        _ => Ok(()),
    }
}

fn load_logs(paths: &[PathBuf]) -> Result<Vec<(String, Vec<RunRecord>)>> {
    paths
        .iter()
        .map(|p| {
            let records = read_records(p)?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((run_label(&records, &stem), records))
        })
        .collect()
}

pub fn cmd_report(logs: &[PathBuf], slices: &[Slice], out_dir: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for (label, records) in load_logs(logs)? {
        rows.extend(report_rows(&label, &records, slices)?);
    }
    match out_dir {
        None => write_csv(&rows, std::io::stdout().lock()),
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            let overall: Vec<_> = rows.iter().filter(|r| r.slice == "overall").cloned().collect();
            for (name, rows) in [("report.csv", &rows), ("comparison.csv", &overall)] {
                let path = dir.join(name);
                let f = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
                write_csv(rows, f)?;
            }
            println!("wrote {} rows to {}", rows.len(), dir.display());
            Ok(())
        }
    }
}

fn pareto_point(path: &Path) -> Result<ParetoPoint> {
    if path.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        let s: streambench::protocol::PhaseSummary =
            serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        let label = s.strategy.get("label").and_then(|l| l.as_str()).unwrap_or("?").to_string();
        return Ok(ParetoPoint { label, error: s.error, flops: s.cflop });
    }
    let records = read_records(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let a = aggregate(&records, |r| r.scored)?;
    let cflop = records.iter().map(|r| r.flops).sum();
    Ok(ParetoPoint { label: run_label(&records, &stem), error: a.error, flops: cflop })
}

/// Pairs `(first, repeat)` of task ids: explicit `a=b` pairs, otherwise every
/// `<id>_rep<k>` with `<id>` present in the log.
fn repeat_pairs(records: &[RunRecord], explicit: &[String]) -> Result<Vec<(String, String)>> {
    if !explicit.is_empty() {
        return explicit
            .iter()
            .map(|p| {
                p.split_once('=')
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .ok_or_else(|| Error::Config(format!("pair `{p}` is not first=repeat")))
            })
            .collect();
    }
    let ids: Vec<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
    Ok(ids
        .iter()
        .filter_map(|id| {
            let (base, k) = id.rsplit_once("_rep")?;
            (k.parse::<usize>().is_ok() && ids.contains(&base)).then(|| (base.to_string(), id.to_string()))
        })
        .collect())
}

pub enum PlotKind {
    Pareto,
    Regret { reference: Option<PathBuf> },
    Fwt { pairs: Vec<String> },
    Transfer,
}

pub fn cmd_plot(kind: PlotKind, inputs: &[PathBuf], out: &Path) -> Result<()> {
    if inputs.is_empty() {
        return Err(Error::Config("no inputs to plot".into()));
    }
    match kind {
        PlotKind::Pareto => {
            let points = inputs.iter().map(|p| pareto_point(p)).collect::<Result<Vec<_>>>()?;
            let front = plot_pareto(&points, out)?;
            let labels: Vec<&str> = front.iter().map(|p| p.label.as_str()).collect();
            println!("front: {}", labels.join(", "));
        }
        PlotKind::Regret { reference } => {
            let reference = reference.ok_or_else(|| Error::Config("regret needs --reference <log>".into()))?;
            let reference = read_records(&reference)?;
            let series = load_logs(inputs)?
                .into_iter()
                .map(|(label, records)| Ok((label, regret_curve(&records, &reference)?)))
                .collect::<Result<Vec<_>>>()?;
            for (label, s) in &series {
                println!("{label}: final regret {:+.4}", s.last().copied().unwrap_or(0.0));
            }
            plot_regret(&series, out)?;
        }
        PlotKind::Fwt { pairs } => {
            let mut values = Vec::new();
            for (label, records) in load_logs(inputs)? {
                let by_id: BTreeMap<&str, &RunRecord> = records.iter().map(|r| (r.task_id.as_str(), r)).collect();
                let mut fwts = Vec::new();
                for (a, b) in repeat_pairs(&records, &pairs)? {
                    let (Some(ra), Some(rb)) = (by_id.get(a.as_str()), by_id.get(b.as_str())) else {
                        return Err(Error::Config(format!("{label}: pair {a}={b} not in log")));
                    };
                    fwts.push(forward_transfer(&ra.learning_curve, &rb.learning_curve)?);
                }
                if fwts.is_empty() {
                    return Err(Error::Config(format!("{label}: no repeated tasks found; pass --pair first=repeat")));
                }
                let (mean, _) = mean_std(&fwts);
                println!("{label}: FWT {mean:+.4} over {} pair(s)", fwts.len());
                values.push((label, mean));
            }
            plot_fwt(&values, out)?;
        }
        PlotKind::Transfer => {
            let text = std::fs::read_to_string(&inputs[0]).map_err(|e| io(&inputs[0], e))?;
            let m: TransferMatrix =
                serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", inputs[0].display())))?;
            let cells = plot_transfer(&m, out)?;
            println!("{cells} cells");
        }
    }
    std::io::stdout().flush().map_err(|e| io(out, e))
}
