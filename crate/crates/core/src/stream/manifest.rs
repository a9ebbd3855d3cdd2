//! Line-delimited JSON stream manifests.
//!
//! The first record is a header carrying the meta-train/meta-test boundary;
//! every following line describes one task in stream order:
//!
//! ```text
//! {"manifest": "short", "version": 1, "boundary": 16}
//! {"id": "mnist_2004", "name": "MNIST", "year": 2004, "kind": "C", "domain": "ocr", "size": 51000, ...}
//! ```
//!
//! Split files default to `<data_root>/<id>/{train,val,test}.sbx`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{read_examples, Splits, Stream, Task, TaskKind};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestHeader {
    pub manifest: String,
    pub version: u32,
    pub boundary: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct SplitFiles {
    pub train: Option<String>,
    pub val: Option<String>,
    pub test: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub name: String,
    pub year: i32,
    #[serde(with = "kind_code")]
    pub kind: TaskKind,
    pub domain: String,
    /// Declared training-split size.
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub avg_resolution: Option<(u32, u32)>,
    #[serde(default)]
    pub data: SplitFiles,
    #[serde(default)]
    pub checksums: SplitFiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
}

/// Sidecar metadata written next to prepared split files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskMeta {
    pub id: String,
    pub name: String,
    pub year: i32,
    pub domain: String,
    pub kind: TaskKind,
    pub num_classes: usize,
    pub avg_resolution: (u32, u32),
    pub sizes: [usize; 3],
    pub checksums: [String; 3],
    #[serde(default)]
    pub class_names: Vec<String>,
}

mod kind_code {
    use super::TaskKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &TaskKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match k {
            TaskKind::SingleLabel => "C",
            TaskKind::MultiLabel => "M",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TaskKind, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "C" | "single_label" => Ok(TaskKind::SingleLabel),
            "M" | "multi_label" => Ok(TaskKind::MultiLabel),
            other => Err(serde::de::Error::custom(format!("unknown task kind `{other}`"))),
        }
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let err = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, htext) = lines.next().ok_or_else(|| err(0, "empty manifest".into()))?;
    let header: ManifestHeader = serde_json::from_str(htext).map_err(|e| err(hline, format!("bad header: {e}")))?;
    if header.version != MANIFEST_VERSION {
        return Err(err(hline, format!("unsupported manifest version {}", header.version)));
    }

    let mut entries = Vec::new();
    let mut last_year = i32::MIN;
    for (line, text) in lines {
        let entry: ManifestEntry = serde_json::from_str(text).map_err(|e| err(line, e.to_string()))?;
        if entry.year < last_year {
            return Err(err(line, format!("year {} precedes previous year {last_year}", entry.year)));
        }
        last_year = entry.year;
        if entries.iter().any(|e: &ManifestEntry| e.id == entry.id) {
            return Err(err(line, format!("duplicate id `{}`", entry.id)));
        }
        entries.push(entry);
    }
    if header.boundary == 0 || header.boundary > entries.len() {
        return Err(err(1, format!("boundary {} outside 1..={} (row count)", header.boundary, entries.len())));
    }
    Ok(Manifest { header, entries })
}

fn split_path(root: &Path, entry: &ManifestEntry, file: &Option<String>, role: &str) -> PathBuf {
    match file {
        Some(f) => root.join(f),
        None => root.join(&entry.id).join(format!("{role}.sbx")),
    }
}

fn load_task(root: &Path, entry: &ManifestEntry) -> Result<Task> {
    let missing = |msg: String| Error::MissingTaskData { task: entry.id.clone(), msg };
    let meta_path = root.join(&entry.id).join("meta.json");
    let meta: Option<TaskMeta> = match std::fs::read_to_string(&meta_path) {
        Ok(s) => Some(serde_json::from_str(&s).map_err(|e| missing(format!("{}: {e}", meta_path.display())))?),
        Err(_) => None,
    };

    let load = |role: &str, file: &Option<String>, sum: &Option<String>, meta_sum: Option<&String>| {
        let p = split_path(root, entry, file, role);
        if !p.exists() {
            return Err(missing(format!("{} not found", p.display())));
        }
        let checksum = sum.as_deref().or(meta_sum.map(|s| s.as_str()));
        read_examples(&p, checksum).map_err(|e| match e {
            Error::Checksum { expected, actual, .. } => Error::Checksum { id: entry.id.clone(), expected, actual },
            other => missing(other.to_string()),
        })
    };
    let msum = |i: usize| meta.as_ref().map(|m| &m.checksums[i]);
    let splits = Splits {
        train: load("train", &entry.data.train, &entry.checksums.train, msum(0))?,
        val: load("val", &entry.data.val, &entry.checksums.val, msum(1))?,
        test: load("test", &entry.data.test, &entry.checksums.test, msum(2))?,
    };

    let num_classes = entry
        .num_classes
        .or(meta.as_ref().map(|m| m.num_classes))
        .ok_or_else(|| missing("num_classes given neither in manifest nor in meta.json".into()))?;
    if let (Some(declared), Some(m)) = (entry.num_classes, meta.as_ref()) {
        if declared != m.num_classes {
            return Err(missing(format!("manifest declares {declared} classes, prepared data has {}", m.num_classes)));
        }
    }
    if let Some(size) = entry.size {
        if size != splits.train.len() {
            log::warn!(
                "task `{}`: manifest size {size} differs from prepared train split {}",
                entry.id,
                splits.train.len()
            );
        }
    }
    let avg_resolution = entry.avg_resolution.or(meta.as_ref().map(|m| m.avg_resolution)).unwrap_or((0, 0));
    Task::new(
        entry.id.clone(),
        entry.name.clone(),
        entry.year,
        entry.domain.clone(),
        entry.kind,
        num_classes,
        avg_resolution,
        splits,
    )
    .map_err(|e| missing(e.to_string()))
}

/// Loads one prepared task from `<root>/<id>/` using its `meta.json`.
pub fn load_prepared(root: &Path, id: &str) -> Result<Task> {
    let meta_path = root.join(id).join("meta.json");
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::MissingTaskData { task: id.to_string(), msg: format!("{}: {e}", meta_path.display()) })?;
    let meta: TaskMeta = serde_json::from_str(&text)
        .map_err(|e| Error::MissingTaskData { task: id.to_string(), msg: format!("{}: {e}", meta_path.display()) })?;
    let entry = ManifestEntry {
        id: meta.id,
        name: meta.name,
        year: meta.year,
        kind: meta.kind,
        domain: meta.domain,
        size: None,
        num_classes: Some(meta.num_classes),
        avg_resolution: Some(meta.avg_resolution),
        data: SplitFiles::default(),
        checksums: SplitFiles::default(),
    };
    if entry.id != id {
        return Err(Error::MissingTaskData {
            task: id.to_string(),
            msg: format!("meta.json describes `{}`", entry.id),
        });
    }
    load_task(root, &entry)
}

/// Loads a manifest stream. Split files are resolved against `data_root`,
/// defaulting to the manifest's directory.
pub fn load_stream(manifest_path: &Path, data_root: Option<&Path>) -> Result<Stream> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = parse_manifest(&text, manifest_path)?;
    let root = match data_root {
        Some(r) => r.to_path_buf(),
        None => manifest_path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let tasks = manifest.entries.iter().map(|e| load_task(&root, e).map(Arc::new)).collect::<Result<Vec<_>>>()?;
    Stream::new(tasks, manifest.header.boundary)
}
