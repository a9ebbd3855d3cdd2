use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::stream::{write_examples, Example, Image, Input, Label, Splits, Task, TaskMeta};

use super::descriptor::{DatasetDescriptor, ExtractionRecipe, SplitRecipe};
use super::fetch::archive_dir;

/// Directory that prepared tasks are written to; pass it as the data root
/// when loading a manifest.
pub fn tasks_dir(cache_dir: &Path) -> PathBuf {
    cache_dir.join("tasks")
}

/// Where an example came from in the raw distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Origin {
    Test,
    Val,
    Train,
    Unassigned,
}

/// Counts from one preparation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepareReport {
    pub raw: usize,
    pub duplicates: usize,
    pub sizes: [usize; 3],
}

fn is_gzip(b: &[u8]) -> bool {
    b.len() > 2 && b[0] == 0x1f && b[1] == 0x8b
}

fn is_tar(b: &[u8]) -> bool {
    b.len() >= 512 && &b[257..262] == b"ustar"
}

/// Every readable payload of the fetched files, keyed by name: plain files
/// under their descriptor name without `.gz`, tarball members by path.
pub fn read_members(id: &str, files: &[(String, PathBuf)]) -> Result<BTreeMap<String, Vec<u8>>> {
    let ext = |msg: String| Error::Extraction { id: id.to_string(), msg };
    let mut out = BTreeMap::new();
    for (name, path) in files {
        let mut bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut name = name.clone();
        if is_gzip(&bytes) {
            let mut plain = Vec::new();
            flate2::read::GzDecoder::new(&bytes[..])
                .read_to_end(&mut plain)
                .map_err(|e| ext(format!("{name}: {e}")))?;
            bytes = plain;
            if let Some(stem) = name.strip_suffix(".gz") {
                name = stem.to_string();
            }
        }
        if !is_tar(&bytes) {
            out.insert(name, bytes);
            continue;
        }
        let mut archive = tar::Archive::new(&bytes[..]);
        for entry in archive.entries().map_err(|e| ext(format!("{name}: {e}")))? {
            let mut entry = entry.map_err(|e| ext(format!("{name}: {e}")))?;
            if !entry.header().entry_type().is_file() {
                continue;
            }
            let member = entry.path().map_err(|e| ext(format!("{name}: {e}")))?.to_string_lossy().into_owned();
            let member = member.trim_start_matches("./").to_string();
            let mut data = Vec::new();
            entry.read_to_end(&mut data).map_err(|e| ext(format!("{member}: {e}")))?;
            out.insert(member, data);
        }
    }
    Ok(out)
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

fn idx_images(b: &[u8]) -> std::result::Result<Vec<Image>, String> {
    if b.len() < 16 || be_u32(b, 0) != 0x0803 {
        return Err("not an idx image file".into());
    }
    let (n, h, w) = (be_u32(b, 4) as usize, be_u32(b, 8), be_u32(b, 12));
    let px = (h * w) as usize;
    if b.len() != 16 + n * px {
        return Err(format!("idx image file holds {} bytes for {n} images of {h}x{w}", b.len()));
    }
    b[16..].chunks(px.max(1)).map(|c| Image::new(h, w, 1, c.to_vec()).map_err(|e| e.to_string())).collect()
}

fn idx_labels(b: &[u8]) -> std::result::Result<Vec<u32>, String> {
    if b.len() < 8 || be_u32(b, 0) != 0x0801 {
        return Err("not an idx label file".into());
    }
    let n = be_u32(b, 4) as usize;
    if b.len() != 8 + n {
        return Err(format!("idx label file holds {} bytes for {n} labels", b.len()));
    }
    Ok(b[8..].iter().map(|&l| l as u32).collect())
}

fn planar_to_hwc(plane: &[u8], h: u32, w: u32, c: u8) -> Vec<u8> {
    let n = (h * w) as usize;
    let mut out = vec![0; plane.len()];
    for p in 0..n {
        for ch in 0..c as usize {
            out[p * c as usize + ch] = plane[ch * n + p];
        }
    }
    out
}

fn decode_image(bytes: &[u8]) -> std::result::Result<Image, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let (w, h) = (img.width(), img.height());
    if img.color().channel_count() <= 2 {
        Image::new(h, w, 1, img.into_luma8().into_raw()).map_err(|e| e.to_string())
    } else {
        Image::new(h, w, 3, img.into_rgb8().into_raw()).map_err(|e| e.to_string())
    }
}

fn member<'a>(m: &'a BTreeMap<String, Vec<u8>>, name: &str) -> std::result::Result<&'a [u8], String> {
    m.get(name).map(Vec::as_slice).ok_or_else(|| format!("member `{name}` not found"))
}

/// Raw labelled examples in a deterministic order.
pub fn extract(d: &DatasetDescriptor, members: &BTreeMap<String, Vec<u8>>) -> Result<Vec<(Origin, Example)>> {
    let ext = |msg: String| Error::Extraction { id: d.id.clone(), msg };
    let mut out = Vec::new();
    match &d.extraction_recipe {
        ExtractionRecipe::Idx { train_images, train_labels, test_images, test_labels } => {
            for (origin, imgs, labels) in
                [(Origin::Train, train_images, train_labels), (Origin::Test, test_images, test_labels)]
            {
                let imgs = idx_images(member(members, imgs).map_err(ext)?).map_err(|e| ext(format!("{imgs}: {e}")))?;
                let labels = idx_labels(member(members, labels).map_err(ext)?).map_err(ext)?;
                if imgs.len() != labels.len() {
                    return Err(ext(format!("{} images but {} labels", imgs.len(), labels.len())));
                }
                out.extend(
                    imgs.into_iter().zip(labels).map(|(i, l)| (origin, Example::new(Input::Image(i), Label::Class(l)))),
                );
            }
        }
        ExtractionRecipe::CifarBinary { train, test, label_bytes, label_index, height, width, channels } => {
            if label_index >= label_bytes {
                return Err(ext(format!("label_index {label_index} not below label_bytes {label_bytes}")));
            }
            let rec = label_bytes + (*height * *width) as usize * *channels as usize;
            for (origin, names) in [(Origin::Train, train), (Origin::Test, test)] {
                for name in names {
                    let b = member(members, name).map_err(ext)?;
                    if b.len() % rec != 0 {
                        return Err(ext(format!(
                            "{name}: {} bytes is not a multiple of the record size {rec}",
                            b.len()
                        )));
                    }
                    for r in b.chunks(rec) {
                        let px = planar_to_hwc(&r[*label_bytes..], *height, *width, *channels);
                        let img = Image::new(*height, *width, *channels, px).map_err(|e| ext(e.to_string()))?;
                        out.push((origin, Example::new(Input::Image(img), Label::Class(r[*label_index] as u32))));
                    }
                }
            }
        }
        ExtractionRecipe::ImageFolder { root, split_dirs } => {
            let prefix = format!("{}/", root.trim_end_matches('/'));
            for (path, bytes) in members.range(prefix.clone()..) {
                let Some(rest) = path.strip_prefix(&prefix) else { break };
                let parts: Vec<&str> = rest.split('/').collect();
                if parts.last().is_some_and(|f| f.starts_with('.')) {
                    continue;
                }
                let (origin, class) = match (*split_dirs, parts.as_slice()) {
                    (false, [class, _]) => (Origin::Unassigned, *class),
                    (true, [split, class, _]) => {
                        let origin = match *split {
                            "train" => Origin::Train,
                            "val" => Origin::Val,
                            "test" => Origin::Test,
                            other => return Err(ext(format!("{path}: unknown split directory `{other}`"))),
                        };
                        (origin, *class)
                    }
                    _ => return Err(ext(format!("{path}: unexpected layout"))),
                };
                let label =
                    *d.label_map.get(class).ok_or_else(|| ext(format!("{path}: class `{class}` not in label_map")))?;
                let img = decode_image(bytes).map_err(|e| ext(format!("{path}: {e}")))?;
                out.push((origin, Example::new(Input::Image(img), Label::Class(label))));
            }
        }
    }
    let n = d.num_classes() as u32;
    if let Some((_, ex)) = out.iter().find(|(_, e)| !matches!(e.label, Label::Class(c) if c < n)) {
        return Err(ext(format!("label {:?} outside the {n} mapped classes", ex.label)));
    }
    if out.is_empty() {
        return Err(ext("no examples extracted".into()));
    }
    Ok(out)
}

/// Drops exact input duplicates, keeping the copy from the most
/// evaluation-side origin (test, then val, then train) and otherwise the
/// first. Returns the survivors in their original order.
pub fn dedup(raw: Vec<(Origin, Example)>) -> (Vec<(Origin, Example)>, usize) {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| raw[i].0);
    let mut seen = HashSet::new();
    let mut keep = vec![false; raw.len()];
    for i in order {
        keep[i] = seen.insert(raw[i].1.input.content_hash());
    }
    let removed = keep.iter().filter(|k| !**k).count();
    let kept = raw.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    (kept, removed)
}

fn take_fraction(idx: &mut Vec<usize>, frac: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    idx.shuffle(rng);
    let n = (frac * idx.len() as f64).round() as usize;
    let mut taken = idx.split_off(idx.len() - n);
    idx.sort_unstable();
    taken.sort_unstable();
    taken
}

/// Assigns deduplicated examples to train/val/test.
pub fn split(id: &str, examples: Vec<(Origin, Example)>, recipe: &SplitRecipe) -> Result<Splits> {
    let by = |o: Origin| -> Vec<usize> { (0..examples.len()).filter(|&i| examples[i].0 == o).collect() };
    let (train, val, test) = match *recipe {
        SplitRecipe::Fractions { val, test, seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[id, "split"]));
            let mut all: Vec<usize> = (0..examples.len()).collect();
            let n = all.len() as f64;
            let test_idx = take_fraction(&mut all, test, &mut rng);
            let rest = all.len().max(1) as f64;
            let val_idx = take_fraction(&mut all, val * n / rest, &mut rng);
            (all, val_idx, test_idx)
        }
        SplitRecipe::Source { val_fraction, seed } => {
            if !by(Origin::Unassigned).is_empty() {
                return Err(Error::Extraction {
                    id: id.to_string(),
                    msg: "split recipe `source` needs examples with a source split".into(),
                });
            }
            let mut train = by(Origin::Train);
            let mut val = by(Origin::Val);
            if val.is_empty() {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[id, "split"]));
                val = take_fraction(&mut train, val_fraction, &mut rng);
            }
            (train, val, by(Origin::Test))
        }
    };
    let mut slots: Vec<Option<Example>> = examples.into_iter().map(|(_, e)| Some(e)).collect();
    let mut take = |idx: Vec<usize>| -> Vec<Example> { idx.into_iter().map(|i| slots[i].take().unwrap()).collect() };
    Ok(Splits { train: take(train), val: take(val), test: take(test) })
}

fn avg_resolution(splits: &Splits) -> (u32, u32) {
    let all = splits.train.iter().chain(&splits.val).chain(&splits.test);
    let (mut h, mut w, mut n) = (0.0, 0.0, 0usize);
    for ex in all {
        if let Input::Image(img) = &ex.input {
            h += img.height as f64;
            w += img.width as f64;
            n += 1;
        }
    }
    if n == 0 {
        return (0, 0);
    }
    ((h / n as f64).round() as u32, (w / n as f64).round() as u32)
}

/// Extracts, deduplicates and splits a fetched dataset, writing the split
/// files and metadata under [`tasks_dir`].
pub fn prepare(d: &DatasetDescriptor, cache_dir: &Path) -> Result<(Task, PrepareReport)> {
    d.validate()?;
    let dir = archive_dir(cache_dir, &d.id);
    let files: Vec<(String, PathBuf)> = d.files.iter().map(|f| (f.name.clone(), dir.join(&f.name))).collect();
    for (_, p) in &files {
        if !p.exists() {
            return Err(Error::MissingTaskData { task: d.id.clone(), msg: format!("{} not fetched", p.display()) });
        }
    }
    let members = read_members(&d.id, &files)?;
    let raw = extract(d, &members)?;
    let raw_count = raw.len();
    let (kept, duplicates) = dedup(raw);
    if duplicates > 0 {
        log::info!("{}: removed {duplicates} duplicate examples", d.id);
    }
    let mut counts = vec![0usize; d.num_classes()];
    for (_, ex) in &kept {
        if let Label::Class(c) = ex.label {
            counts[c as usize] += 1;
        }
    }
    let names = d.class_names();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Extraction {
            id: d.id.clone(),
            msg: format!("class `{}` is empty after deduplication", names[c]),
        });
    }

    let splits = split(&d.id, kept, &d.split_recipe)?;
    let resolution = avg_resolution(&splits);
    let out = tasks_dir(cache_dir).join(&d.id);
    let checksums = [
        write_examples(&out.join("train.sbx"), &splits.train)?,
        write_examples(&out.join("val.sbx"), &splits.val)?,
        write_examples(&out.join("test.sbx"), &splits.test)?,
    ];
    let sizes = [splits.train.len(), splits.val.len(), splits.test.len()];
    let meta = TaskMeta {
        id: d.id.clone(),
        name: d.name.clone(),
        year: d.year,
        domain: d.domain.clone(),
        kind: d.kind,
        num_classes: d.num_classes(),
        avg_resolution: resolution,
        sizes,
        checksums,
        class_names: names,
    };
    let meta_json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::Invalid(e.to_string()))?;
    crate::codec::write_atomic(&out.join("meta.json"), &meta_json)?;
    let task = Task::new(&d.id, &d.name, d.year, &d.domain, d.kind, d.num_classes(), resolution, splits)?;
    Ok((task, PrepareReport { raw: raw_count, duplicates, sizes }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(v: f32, c: u32) -> Example {
        Example::new(Input::Features(vec![v]), Label::Class(c))
    }

    #[test]
    fn duplicate_kept_on_evaluation_side() {
        let raw = vec![(Origin::Train, ex(1.0, 0)), (Origin::Train, ex(2.0, 1)), (Origin::Test, ex(1.0, 0))];
        let (kept, removed) = dedup(raw);
        assert_eq!(removed, 1);
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![Origin::Train, Origin::Test]);
        assert_eq!(kept[0].1, ex(2.0, 1));
    }

    #[test]
    fn fraction_split_sizes_and_determinism() {
        let raw: Vec<_> = (0..100).map(|i| (Origin::Unassigned, ex(i as f32, i % 3))).collect();
        let recipe = SplitRecipe::default();
        let a = split("t", raw.clone(), &recipe).unwrap();
        let b = split("t", raw.clone(), &recipe).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (70, 15, 15));
        let c = split("other", raw, &recipe).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn source_split_carves_val_from_train() {
        let mut raw: Vec<_> = (0..60).map(|i| (Origin::Train, ex(i as f32, i % 2))).collect();
        raw.extend((60..70).map(|i| (Origin::Test, ex(i as f32, i % 2))));
        let s = split("t", raw.clone(), &SplitRecipe::Source { val_fraction: 0.15, seed: 0 }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (51, 9, 10));
        raw.push((Origin::Unassigned, ex(99.0, 0)));
        assert!(split("t", raw, &SplitRecipe::Source { val_fraction: 0.15, seed: 0 }).is_err());
    }

    #[test]
    fn planar_layout_becomes_interleaved() {
        assert_eq!(planar_to_hwc(&[1, 2, 10, 20, 100, 200], 1, 2, 3), vec![1, 10, 100, 2, 20, 200]);
    }
}
