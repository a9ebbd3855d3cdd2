//! Tasks, streams, and the stream builders: manifests, synthetic generators,
//! class-partition streams, and ablation variants.

mod container;
mod manifest;
mod partition;
mod synthetic;
mod variant;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_examples, write_examples};
pub use manifest::{load_prepared, load_stream, parse_manifest, Manifest, ManifestEntry, SplitFiles, TaskMeta};
pub use partition::make_class_partition_stream;
pub use synthetic::{make_synthetic_stream, Relation, SplitSizes, SyntheticSpec};
pub use variant::{apply_variant, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SingleLabel,
    MultiLabel,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::SingleLabel => "single_label",
            TaskKind::MultiLabel => "multi_label",
        })
    }
}

/// Raw image, row-major HWC with `u8` samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: u32,
    pub width: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: u32, width: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        let expected = height as usize * width as usize * channels as usize;
        if height == 0 || width == 0 || channels == 0 || pixels.len() != expected {
            return Err(Error::InvalidTask(format!("image {height}x{width}x{channels} with {} samples", pixels.len())));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn at(&self, y: u32, x: u32, c: u8) -> u8 {
        self.pixels[((y * self.width + x) as usize) * self.channels as usize + c as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Image(Image),
    Features(Vec<f32>),
}

impl Input {
    /// Canonical byte representation used for duplicate detection.
    pub fn content_bytes(&self) -> Vec<u8> {
        match self {
            Input::Image(img) => {
                let mut b = Vec::with_capacity(9 + img.pixels.len());
                b.push(0);
                b.extend_from_slice(&img.height.to_le_bytes());
                b.extend_from_slice(&img.width.to_le_bytes());
                b.push(img.channels);
                b.extend_from_slice(&img.pixels);
                b
            }
            Input::Features(v) => {
                let mut b = Vec::with_capacity(1 + 4 * v.len());
                b.push(1);
                for x in v {
                    b.extend_from_slice(&x.to_le_bytes());
                }
                b
            }
        }
    }

    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.content_bytes()).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    Class(u32),
    Multi(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Input,
    pub label: Label,
}

impl Example {
    pub fn new(input: Input, label: Label) -> Self {
        Self { input, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub const ALL: [SplitRole; 3] = [SplitRole::Train, SplitRole::Val, SplitRole::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn get(&self, role: SplitRole) -> &[Example] {
        match role {
            SplitRole::Train => &self.train,
            SplitRole::Val => &self.val,
            SplitRole::Test => &self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }
}

/// One classification problem. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub year: i32,
    pub domain: String,
    pub kind: TaskKind,
    pub num_classes: usize,
    pub avg_resolution: (u32, u32),
    splits: Splits,
}

impl Task {
    /// Validates labels, non-empty splits, and pairwise split disjointness
    /// under exact content equality.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        name: impl Into<String>,
        year: i32,
        domain: impl Into<String>,
        kind: TaskKind,
        num_classes: usize,
        avg_resolution: (u32, u32),
        splits: Splits,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::InvalidTask("empty task id".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidTask(format!("task `{id}`: num_classes {num_classes} < 2")));
        }
        for role in SplitRole::ALL {
            let split = splits.get(role);
            if split.is_empty() {
                return Err(Error::InvalidTask(format!("task `{id}`: empty {} split", role.name())));
            }
            for (i, ex) in split.iter().enumerate() {
                check_label(&ex.label, kind, num_classes)
                    .map_err(|msg| Error::InvalidTask(format!("task `{id}`: {} example {i}: {msg}", role.name())))?;
            }
        }
        check_disjoint(&id, &splits)?;
        Ok(Self { id, name: name.into(), year, domain: domain.into(), kind, num_classes, avg_resolution, splits })
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn split(&self, role: SplitRole) -> &[Example] {
        self.splits.get(role)
    }

    pub fn train(&self) -> &[Example] {
        &self.splits.train
    }

    pub fn val(&self) -> &[Example] {
        &self.splits.val
    }

    pub fn test(&self) -> &[Example] {
        &self.splits.test
    }

    /// Same data under a new id (used for repeated tasks and re-labelled copies).
    pub fn with_id(&self, id: impl Into<String>) -> Self {
        Self { id: id.into(), ..self.clone() }
    }
}

fn check_label(label: &Label, kind: TaskKind, num_classes: usize) -> std::result::Result<(), String> {
    match (kind, label) {
        (TaskKind::SingleLabel, Label::Class(c)) if (*c as usize) < num_classes => Ok(()),
        (TaskKind::SingleLabel, Label::Class(c)) => Err(format!("class {c} out of range")),
        (TaskKind::MultiLabel, Label::Multi(v)) if v.len() == num_classes => Ok(()),
        (TaskKind::MultiLabel, Label::Multi(v)) => {
            Err(format!("label vector of length {} for {num_classes} classes", v.len()))
        }
        (k, _) => Err(format!("label type does not match task kind {k}")),
    }
}

fn check_disjoint(id: &str, splits: &Splits) -> Result<()> {
    let mut seen: HashMap<[u8; 32], SplitRole> = HashMap::new();
    for role in SplitRole::ALL {
        for ex in splits.get(role) {
            if let Some(prev) = seen.insert(ex.input.content_hash(), role) {
                if prev != role {
                    return Err(Error::InvalidTask(format!(
                        "task `{id}`: example shared between {} and {} splits",
                        prev.name(),
                        role.name()
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Ordered task sequence; the first `boundary` tasks form the meta-train
/// stream, the rest the meta-test stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    tasks: Vec<Arc<Task>>,
    boundary: usize,
}

impl Stream {
    pub fn new(tasks: Vec<Arc<Task>>, boundary: usize) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidStream("stream has no tasks".into()));
        }
        if boundary == 0 || boundary > tasks.len() {
            return Err(Error::InvalidStream(format!("boundary {boundary} outside 1..={}", tasks.len())));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &tasks {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::InvalidStream(format!("duplicate task id `{}`", t.id)));
            }
        }
        Ok(Self { tasks, boundary })
    }

    pub fn tasks(&self) -> &[Arc<Task>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn task(&self, i: usize) -> Option<&Arc<Task>> {
        self.tasks.get(i)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.id == id)
    }

    pub fn with_boundary(&self, boundary: usize) -> Result<Self> {
        Self::new(self.tasks.clone(), boundary)
    }

    /// Splits the stream at its boundary into meta-train and meta-test views.
    pub fn split_boundary(&self) -> (&[Arc<Task>], &[Arc<Task>]) {
        self.tasks.split_at(self.boundary)
    }

    pub fn meta_train(&self) -> &[Arc<Task>] {
        self.split_boundary().0
    }

    pub fn meta_test(&self) -> &[Arc<Task>] {
        self.split_boundary().1
    }

    pub fn stats(&self) -> StreamStats {
        let mut by_domain = std::collections::BTreeMap::new();
        for t in &self.tasks {
            *by_domain.entry(t.domain.clone()).or_insert(0usize) += 1;
        }
        StreamStats {
            num_tasks: self.len(),
            boundary: self.boundary,
            total_train: self.tasks.iter().map(|t| t.train().len()).sum(),
            tasks_by_domain: by_domain,
            years: match (self.tasks.iter().map(|t| t.year).min(), self.tasks.iter().map(|t| t.year).max()) {
                (Some(a), Some(b)) => (a, b),
                _ => (0, 0),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamStats {
    pub num_tasks: usize,
    pub boundary: usize,
    pub total_train: usize,
    pub tasks_by_domain: std::collections::BTreeMap<String, usize>,
    pub years: (i32, i32),
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn feature_task(id: &str, year: i32, domain: &str, n: usize) -> Task {
        let mk = |offset: usize| -> Vec<Example> {
            (0..n)
                .map(|i| {
                    let v = (offset + i) as f32;
                    Example::new(Input::Features(vec![v, -v]), Label::Class((i % 2) as u32))
                })
                .collect()
        };
        Task::new(
            id,
            id,
            year,
            domain,
            TaskKind::SingleLabel,
            2,
            (1, 2),
            Splits { train: mk(0), val: mk(10_000), test: mk(20_000) },
        )
        .unwrap()
    }

    pub fn stream_of(specs: &[(&str, i32, &str)], boundary: usize) -> Stream {
        let tasks = specs.iter().map(|(id, y, d)| Arc::new(feature_task(id, *y, d, 4))).collect();
        Stream::new(tasks, boundary).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn duplicate_across_splits_rejected() {
        let ex = |v: f32, c: u32| Example::new(Input::Features(vec![v]), Label::Class(c));
        let splits = Splits { train: vec![ex(1.0, 0), ex(2.0, 1)], val: vec![ex(3.0, 0)], test: vec![ex(1.0, 0)] };
        let err = Task::new("t", "t", 2000, "x", TaskKind::SingleLabel, 2, (1, 1), splits).unwrap_err();
        assert!(err.to_string().contains("shared between train and test"), "{err}");
    }

    #[test]
    fn label_validation() {
        let ex = |v: f32, c: u32| Example::new(Input::Features(vec![v]), Label::Class(c));
        let splits = Splits { train: vec![ex(1.0, 2)], val: vec![ex(3.0, 0)], test: vec![ex(4.0, 0)] };
        assert!(Task::new("t", "t", 2000, "x", TaskKind::SingleLabel, 2, (1, 1), splits).is_err());
        let multi = Splits {
            train: vec![Example::new(Input::Features(vec![1.0]), Label::Multi(vec![true]))],
            val: vec![Example::new(Input::Features(vec![2.0]), Label::Multi(vec![true, false]))],
            test: vec![Example::new(Input::Features(vec![3.0]), Label::Multi(vec![true, false]))],
        };
        assert!(Task::new("m", "m", 2000, "x", TaskKind::MultiLabel, 2, (1, 1), multi).is_err());
    }

    #[test]
    fn empty_split_rejected() {
        let ex = |v: f32| Example::new(Input::Features(vec![v]), Label::Class(0));
        let splits = Splits { train: vec![ex(1.0)], val: vec![], test: vec![ex(2.0)] };
        assert!(Task::new("t", "t", 2000, "x", TaskKind::SingleLabel, 2, (1, 1), splits).is_err());
    }

    #[test]
    fn boundary_validation() {
        let s = stream_of(&[("a", 2000, "x"), ("b", 2001, "x")], 2);
        assert!(s.with_boundary(0).is_err());
        assert!(s.with_boundary(3).is_err());
        let dup = vec![Arc::new(feature_task("a", 1, "x", 2)), Arc::new(feature_task("a", 1, "x", 2))];
        assert!(Stream::new(dup, 1).is_err());
    }

    #[test]
    fn split_boundary_views() {
        let s = stream_of(&[("a", 1, "x"), ("b", 2, "x"), ("c", 3, "x"), ("d", 4, "x"), ("e", 5, "x")], 3);
        let (tr, ts) = s.split_boundary();
        assert_eq!((tr.len(), ts.len()), (3, 2));
        let joined: Vec<_> = tr.iter().chain(ts).map(|t| t.id.clone()).collect();
        assert_eq!(joined, ["a", "b", "c", "d", "e"]);

        let full = s.with_boundary(5).unwrap();
        assert!(full.split_boundary().1.is_empty());
    }

    #[test]
    fn split_boundary_at_full_scale() {
        let specs: Vec<(String, i32, &str)> = (0..106).map(|i| (format!("t{i}"), 1990 + i / 4, "x")).collect();
        let refs: Vec<(&str, i32, &str)> = specs.iter().map(|(a, b, c)| (a.as_str(), *b, *c)).collect();
        let s = stream_of(&refs, 79);
        let (tr, ts) = s.split_boundary();
        assert_eq!((tr.len(), ts.len()), (79, 27));
    }
}
