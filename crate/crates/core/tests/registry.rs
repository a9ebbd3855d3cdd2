use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use streambench::registry::{
    fetch, load_descriptors, prepare, tasks_dir, Checksum, DatasetDescriptor, ExtractionRecipe, SourceFile, SplitRecipe,
};
use streambench::stream::{load_stream, Input, TaskKind};

fn gz(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

fn idx_images(n: usize, offset: usize) -> Vec<u8> {
    let mut b = Vec::with_capacity(16 + n * 784);
    for v in [0x0803u32, n as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        let mut px = [0u8; 784];
        px[..8].copy_from_slice(&((i + offset) as u64).to_le_bytes());
        px[400] = (i % 251) as u8;
        b.extend_from_slice(&px);
    }
    b
}

fn idx_labels(n: usize) -> Vec<u8> {
    let mut b = Vec::with_capacity(8 + n);
    b.extend_from_slice(&0x0801u32.to_be_bytes());
    b.extend_from_slice(&(n as u32).to_be_bytes());
    b.extend((0..n).map(|i| (i % 10) as u8));
    b
}

/// Points every file of `d` at a local copy of `payload(name)`.
fn localize(d: &mut DatasetDescriptor, dir: &Path, payload: impl Fn(&str) -> Vec<u8>) {
    for f in &mut d.files {
        let bytes = payload(&f.name);
        let p = dir.join(&f.name);
        std::fs::write(&p, &bytes).unwrap();
        f.source_urls = vec![format!("file://{}", p.display())];
        f.checksum = Checksum::sha256_of(&bytes);
    }
}

#[test]
fn mnist_descriptor_yields_51000_training_examples() {
    let list = load_descriptors(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/descriptors.json")).unwrap();
    let mut d = list.into_iter().find(|d| d.id == "mnist_2004").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    localize(&mut d, &src, |name| {
        gz(&match name {
            "train-images-idx3-ubyte.gz" => idx_images(60000, 0),
            "train-labels-idx1-ubyte.gz" => idx_labels(60000),
            "t10k-images-idx3-ubyte.gz" => idx_images(10000, 60000),
            _ => idx_labels(10000),
        })
    });
    let cache = dir.path().join("cache");
    fetch(&d, &cache).unwrap();
    let (task, report) = prepare(&d, &cache).unwrap();
    assert_eq!(report.duplicates, 0);
    assert_eq!(task.kind, TaskKind::SingleLabel);
    assert_eq!(task.domain, "ocr");
    assert_eq!((task.train().len(), task.val().len(), task.test().len()), (51000, 9000, 10000));
    assert_eq!(task.avg_resolution, (28, 28));
}

fn png(seed: u8, gray: bool) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    if gray {
        let img =
            image::GrayImage::from_fn(6, 4, |x, y| image::Luma([seed.wrapping_mul(7).wrapping_add((x * y) as u8)]));
        img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    } else {
        let img = image::RgbImage::from_fn(5, 3, |x, y| image::Rgb([seed, x as u8, y as u8]));
        img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    }
    out.into_inner()
}

fn tarball(entries: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut b = tar::Builder::new(Vec::new());
    for (path, data) in entries {
        let mut h = tar::Header::new_gnu();
        h.set_size(data.len() as u64);
        h.set_mode(0o644);
        h.set_cksum();
        b.append_data(&mut h, path, &data[..]).unwrap();
    }
    gz(&b.into_inner().unwrap())
}

fn folder_descriptor(split_dirs: bool, split_recipe: SplitRecipe) -> DatasetDescriptor {
    DatasetDescriptor {
        id: "shapes".into(),
        name: "Shapes".into(),
        year: 2010,
        domain: "object".into(),
        kind: TaskKind::SingleLabel,
        files: vec![SourceFile {
            name: "shapes.tar.gz".into(),
            source_urls: vec![],
            checksum: Checksum::sha256_of(b""),
        }],
        license_note: "test fixture".into(),
        extraction_recipe: ExtractionRecipe::ImageFolder { root: "shapes".into(), split_dirs },
        split_recipe,
        label_map: [("circle".to_string(), 0), ("square".to_string(), 1)].into(),
    }
}

#[test]
fn image_appearing_in_two_source_splits_lands_in_one() {
    let mut entries = Vec::new();
    for i in 0..10u8 {
        entries.push((format!("shapes/train/circle/{i}.png"), png(i, false)));
        entries.push((format!("shapes/train/square/{i}.png"), png(100 + i, true)));
    }
    for i in 20..24u8 {
        entries.push((format!("shapes/test/circle/{i}.png"), png(i, false)));
        entries.push((format!("shapes/test/square/{i}.png"), png(100 + i, true)));
    }
    // Same pixels in train and test.
    entries.push(("shapes/test/circle/dup.png".into(), png(3, false)));
    let dir = tempfile::tempdir().unwrap();
    let mut d = folder_descriptor(true, SplitRecipe::Source { val_fraction: 0.2, seed: 4 });
    localize(&mut d, dir.path(), |_| tarball(&entries));
    let cache = dir.path().join("cache");
    fetch(&d, &cache).unwrap();
    let (task, report) = prepare(&d, &cache).unwrap();
    assert_eq!(report.raw, 29);
    assert_eq!(report.duplicates, 1);
    assert_eq!(report.sizes.iter().sum::<usize>(), 28);
    assert_eq!(task.test().len(), 9);
    let dup = match &task.test().iter().find(|e| matches!(&e.input, Input::Image(i) if i.at(0, 0, 0) == 3)) {
        Some(e) => e.input.content_hash(),
        None => panic!("duplicate dropped from the test split"),
    };
    let copies = task.train().iter().chain(task.val()).chain(task.test()).filter(|e| e.input.content_hash() == dup);
    assert_eq!(copies.count(), 1);
    let gray = task.train().iter().chain(task.test()).find_map(|e| match &e.input {
        Input::Image(i) if i.channels == 1 => Some((i.height, i.width)),
        _ => None,
    });
    assert_eq!(gray, Some((4, 6)));
}

#[test]
fn fixed_seed_gives_identical_splits_and_loads_as_stream() {
    let entries: Vec<_> = (0..40u8)
        .map(|i| (format!("shapes/{}/{i}.png", if i % 2 == 0 { "circle" } else { "square" }), png(i, i % 2 == 1)))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let mut d = folder_descriptor(false, SplitRecipe::default());
    localize(&mut d, dir.path(), |_| tarball(&entries));
    let run = |cache: &Path| {
        fetch(&d, cache).unwrap();
        prepare(&d, cache).unwrap();
        ["train.sbx", "val.sbx", "test.sbx", "meta.json"]
            .map(|f| std::fs::read(tasks_dir(cache).join("shapes").join(f)).unwrap())
    };
    let a = run(&dir.path().join("c1"));
    let b = run(&dir.path().join("c2"));
    assert_eq!(a, b);

    let manifest = dir.path().join("m.jsonl");
    std::fs::write(
        &manifest,
        "{\"manifest\":\"t\",\"version\":1,\"boundary\":1}\n\
         {\"id\":\"shapes\",\"name\":\"Shapes\",\"year\":2010,\"kind\":\"C\",\"domain\":\"object\",\"size\":28}\n",
    )
    .unwrap();
    let stream = load_stream(&manifest, Some(&tasks_dir(&dir.path().join("c1")))).unwrap();
    let t = stream.task(0).unwrap();
    assert_eq!((t.train().len(), t.val().len(), t.test().len()), (28, 6, 6));
    assert_eq!(t.num_classes, 2);
}

#[test]
fn class_emptied_by_dedup_is_an_error() {
    let entries = vec![
        ("shapes/circle/a.png".to_string(), png(1, false)),
        ("shapes/circle/b.png".to_string(), png(2, false)),
        ("shapes/square/c.png".to_string(), png(1, false)),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut d = folder_descriptor(false, SplitRecipe::default());
    localize(&mut d, dir.path(), |_| tarball(&entries));
    fetch(&d, dir.path()).unwrap();
    let err = prepare(&d, dir.path()).unwrap_err();
    assert!(err.to_string().contains("`square` is empty"), "{err}");
}
