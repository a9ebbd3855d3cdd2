use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"
seed = 3
output = "OUT"

[stream]
source = "synthetic"
num_tasks = 5
num_classes = [3]
input_dim = 16
sizes = [{ train = 80, val = 30, test = 30 }]
relations = [{ kind = "related", source = 0, target = 3, perturbation = 0.1 }]
boundary = 3
seed = 1

[strategy]
family = "indep"

[search]
space = "small"
n_trials = 2
tier = "cheap"

[predictor]
num_updates = 500
max_batch = 32
batch_fraction = 0.05
arch = { name = "mlp-32", layers = [{ layer = "flatten" }, { layer = "dense", units = 32 }, { layer = "relu" }] }
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_streambench"));
    c.env_remove("STREAMBENCH_CACHE");
    c
}

fn config(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let out = dir.join(name);
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, CONFIG.replace("OUT", &out.display().to_string())).unwrap();
    (path, out)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn without_wall_time(log: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_time");
            v
        })
        .collect()
}

#[test]
fn run_writes_records_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = config(dir.path(), "a");
    let start = std::time::Instant::now();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let first = without_wall_time(&out.join("records.jsonl"));
    assert_eq!(first.len(), 5);
    assert!(out.join("config.toml").exists());
    assert!(out.join("summary.json").exists());
    assert!(!out.join(".lock").exists());

    let o = run(&["run", cfg.to_str().unwrap(), "--output", dir.path().join("b").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(without_wall_time(&dir.path().join("b/records.jsonl")), first);

    // The echoed config reproduces the run.
    let o =
        run(&["run", out.join("config.toml").to_str().unwrap(), "--output", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(without_wall_time(&dir.path().join("c/records.jsonl")), first);

    // Existing runs are not overwritten.
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 2);

    let o = run(&[
        "report",
        out.join("records.jsonl").to_str().unwrap(),
        dir.path().join("b/records.jsonl").to_str().unwrap(),
        "--slice",
        "domain",
    ]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",overall,")).count(), 2);

    let svg = dir.path().join("regret.svg");
    let log = out.join("records.jsonl");
    let o = run(&[
        "plot",
        "regret",
        log.to_str().unwrap(),
        "--reference",
        log.to_str().unwrap(),
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("final regret +0.0000"));
    let o = run(&["plot", "regret", log.to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);

    let o = run(&[
        "plot",
        "pareto",
        out.join("summary.json").to_str().unwrap(),
        "--out",
        dir.path().join("p.svg").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("p.svg").exists());
}

#[test]
fn budget_floor_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = config(dir.path(), "a");
    let o = run(&["run", cfg.to_str().unwrap(), "--set", "search.n_trials=1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("search.n_trials"));
    assert!(!out.join("records.jsonl").exists());
}

#[test]
fn interrupted_run_resumes_to_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = config(dir.path(), "full");
    assert_eq!(code(&run(&["run", cfg.to_str().unwrap()])), 0);
    let part = dir.path().join("part");
    let o = run(&["run", cfg.to_str().unwrap(), "--output", part.to_str().unwrap(), "--stop-after", "2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(without_wall_time(&part.join("records.jsonl")).len(), 2);
    let o = run(&["resume", part.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(without_wall_time(&part.join("records.jsonl")), without_wall_time(&out.join("records.jsonl")));
}

#[test]
fn locked_output_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, out) = config(dir.path(), "a");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".lock"), std::process::id().to_string()).unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("locked"));
}

#[test]
fn fetch_uses_cache_env_and_reports_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("blob.bin");
    std::fs::write(&src, b"not what was promised").unwrap();
    let descriptors = dir.path().join("d.json");
    std::fs::write(
        &descriptors,
        format!(
            r#"[{{"id": "blob", "name": "Blob", "year": 2000, "domain": "ocr",
                "files": [{{"name": "blob.bin", "source_urls": ["file://{}"],
                            "checksum": "md5:d41d8cd98f00b204e9800998ecf8427e"}}],
                "extraction_recipe": {{"recipe": "image_folder", "root": "blob"}},
                "label_map": {{"a": 0, "b": 1}}}}]"#,
            src.display()
        ),
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let o = bin()
        .env("STREAMBENCH_CACHE", &cache)
        .args(["fetch", "--descriptors", descriptors.to_str().unwrap(), "--no-prepare"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 4);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blob") && err.contains("d41d8cd98f00b204e9800998ecf8427e"), "{err}");

    let o = run(&["fetch", "nope", "--descriptors", descriptors.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn manifest_info_lists_rows() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/short_stream.jsonl");
    let o = run(&["stream", "info", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("29 rows, boundary 16"));
    assert!(text.contains("mnist_2004"));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/short_stream.jsonl");
    let (cfg, _) = config(dir.path(), "a");
    let o = bin()
        .env("STREAMBENCH_CACHE", dir.path().join("empty"))
        .args([
            "stream",
            "info",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            &format!("stream={{source=\"manifest\", path=\"{}\"}}", manifest.display()),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}
