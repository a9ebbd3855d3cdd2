use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use md5::Md5;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stream::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestAlgo {
    Md5,
    Sha256,
}

/// Content digest written as `md5:<hex>` or `sha256:<hex>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checksum {
    pub algo: DigestAlgo,
    pub hex: String,
}

impl Checksum {
    pub fn sha256_of(bytes: &[u8]) -> Self {
        Self { algo: DigestAlgo::Sha256, hex: hex::encode(Sha256::digest(bytes)) }
    }

    pub fn digest(&self, bytes: &[u8]) -> String {
        match self.algo {
            DigestAlgo::Md5 => hex::encode(Md5::digest(bytes)),
            DigestAlgo::Sha256 => hex::encode(Sha256::digest(bytes)),
        }
    }

    pub fn matches(&self, bytes: &[u8]) -> bool {
        self.digest(bytes).eq_ignore_ascii_case(&self.hex)
    }
}

impl fmt::Display for Checksum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let algo = match self.algo {
            DigestAlgo::Md5 => "md5",
            DigestAlgo::Sha256 => "sha256",
        };
        write!(f, "{algo}:{}", self.hex)
    }
}

impl FromStr for Checksum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (algo, hex) =
            s.split_once(':').ok_or_else(|| Error::Config(format!("checksum `{s}` lacks an algorithm")))?;
        let (algo, len) = match algo {
            "md5" => (DigestAlgo::Md5, 32),
            "sha256" => (DigestAlgo::Sha256, 64),
            other => return Err(Error::Config(format!("unknown digest `{other}`"))),
        };
        if hex.len() != len || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
            return Err(Error::Config(format!("malformed checksum `{s}`")));
        }
        Ok(Self { algo, hex: hex.to_ascii_lowercase() })
    }
}

impl Serialize for Checksum {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Checksum {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One downloadable file, mirrored at each of `source_urls`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFile {
    pub name: String,
    pub source_urls: Vec<String>,
    pub checksum: Checksum,
}

/// How raw files become labelled examples. Member names refer to fetched
/// files (with a `.gz` suffix dropped) or to paths inside fetched tarballs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum ExtractionRecipe {
    /// IDX image and label files.
    Idx { train_images: String, train_labels: String, test_images: String, test_labels: String },
    /// Fixed-size records: label bytes, then a channel-planar image.
    CifarBinary {
        train: Vec<String>,
        test: Vec<String>,
        #[serde(default = "one")]
        label_bytes: usize,
        #[serde(default)]
        label_index: usize,
        height: u32,
        width: u32,
        channels: u8,
    },
    /// `<root>/<class>/<image>`, or `<root>/<split>/<class>/<image>` with
    /// `split_dirs`.
    ImageFolder {
        root: String,
        #[serde(default)]
        split_dirs: bool,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitRecipe {
    /// Pool every example and split per class by these fractions.
    Fractions { train: f64, val: f64, test: f64, seed: u64 },
    /// Keep the source train/val/test assignment; when the source has no
    /// val split, carve `val_fraction` of train per class.
    Source { val_fraction: f64, seed: u64 },
}

impl Default for SplitRecipe {
    fn default() -> Self {
        SplitRecipe::Fractions { train: 0.7, val: 0.15, test: 0.15, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub name: String,
    pub year: i32,
    pub domain: String,
    #[serde(default = "single_label")]
    pub kind: TaskKind,
    pub files: Vec<SourceFile>,
    #[serde(default)]
    pub license_note: String,
    pub extraction_recipe: ExtractionRecipe,
    #[serde(default)]
    pub split_recipe: SplitRecipe,
    pub label_map: BTreeMap<String, u32>,
}

fn single_label() -> TaskKind {
    TaskKind::SingleLabel
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("descriptor `{}`: {msg}", self.id)));
        if self.id.is_empty() {
            return Err(Error::Config("descriptor with empty id".into()));
        }
        if self.kind != TaskKind::SingleLabel {
            return bad("only single-label datasets can be prepared".into());
        }
        if self.files.is_empty() {
            return bad("no source files".into());
        }
        for f in &self.files {
            if f.source_urls.is_empty() {
                return bad(format!("file `{}` has no source URL", f.name));
            }
            if f.name.is_empty() || f.name.contains(['/', '\\']) || f.name.starts_with('.') {
                return bad(format!("file name `{}` is not a plain name", f.name));
            }
        }
        match self.split_recipe {
            SplitRecipe::Fractions { train, val, test, .. } => {
                if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
                    || (train + val + test - 1.0).abs() > 1e-9
                {
                    return bad(format!("split fractions {train}/{val}/{test} do not sum to 1"));
                }
            }
            SplitRecipe::Source { val_fraction, .. } => {
                if !(0.0..1.0).contains(&val_fraction) {
                    return bad(format!("val_fraction {val_fraction} outside [0, 1)"));
                }
            }
        }
        if self.label_map.len() < 2 {
            return bad("label_map needs at least two classes".into());
        }
        let indices: HashSet<u32> = self.label_map.values().copied().collect();
        if indices.len() != self.label_map.len() || (0..self.label_map.len() as u32).any(|i| !indices.contains(&i)) {
            return bad("label_map indices are not contiguous from 0".into());
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Class names ordered by index.
    pub fn class_names(&self) -> Vec<String> {
        let mut v: Vec<(&u32, &String)> = self.label_map.iter().map(|(k, v)| (v, k)).collect();
        v.sort();
        v.into_iter().map(|(_, k)| k.clone()).collect()
    }
}

pub fn parse_descriptors(text: &str) -> Result<Vec<DatasetDescriptor>> {
    let list: Vec<DatasetDescriptor> =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("descriptor list: {e}")))?;
    let mut ids = HashSet::new();
    for d in &list {
        d.validate()?;
        if !ids.insert(d.id.as_str()) {
            return Err(Error::Config(format!("duplicate descriptor id `{}`", d.id)));
        }
    }
    Ok(list)
}

pub fn load_descriptors(path: &Path) -> Result<Vec<DatasetDescriptor>> {
    parse_descriptors(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHECKED_IN: &str = include_str!("../../../../data/descriptors.json");

    #[test]
    fn checked_in_list_is_valid() {
        let list = parse_descriptors(CHECKED_IN).unwrap();
        let mnist = list.iter().find(|d| d.id == "mnist_2004").unwrap();
        assert_eq!(mnist.num_classes(), 10);
        assert_eq!(mnist.files.len(), 4);
        assert_eq!(mnist.class_names()[3], "3");
    }

    #[test]
    fn checksum_round_trip() {
        let c: Checksum = "md5:D41D8CD98F00B204E9800998ECF8427E".parse().unwrap();
        assert!(c.matches(b""));
        assert_eq!(c.to_string(), "md5:d41d8cd98f00b204e9800998ecf8427e");
        assert!("sha256:abc".parse::<Checksum>().is_err());
        assert!("crc:00".parse::<Checksum>().is_err());
        assert!("".parse::<Checksum>().is_err());
    }

    fn minimal(split: &str, labels: &str) -> String {
        format!(
            r#"[{{"id": "x", "name": "X", "year": 2000, "domain": "ocr",
                "files": [{{"name": "a.tar", "source_urls": ["file:///nowhere"], "checksum": "md5:d41d8cd98f00b204e9800998ecf8427e"}}],
                "extraction_recipe": {{"recipe": "image_folder", "root": "x"}},
                {split} "label_map": {labels}}}]"#
        )
    }

    #[test]
    fn invariants_enforced() {
        let ok = parse_descriptors(&minimal("", r#"{"a": 0, "b": 1}"#)).unwrap();
        assert_eq!(ok[0].split_recipe, SplitRecipe::default());
        assert!(parse_descriptors(&minimal("", r#"{"a": 0, "b": 2}"#)).is_err());
        let split = r#""split_recipe": {"kind": "fractions", "train": 0.7, "val": 0.2, "test": 0.2, "seed": 1},"#;
        assert!(parse_descriptors(&minimal(split, r#"{"a": 0, "b": 1}"#)).is_err());
    }
}
