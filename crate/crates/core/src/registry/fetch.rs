use std::path::{Path, PathBuf};

use crate::codec::write_atomic;
use crate::error::{Error, Result};

use super::descriptor::{DatasetDescriptor, SourceFile};

/// Directory holding the raw downloads of one dataset.
pub fn archive_dir(cache_dir: &Path, id: &str) -> PathBuf {
    cache_dir.join("archives").join(id)
}

fn download(url: &str) -> std::result::Result<Vec<u8>, String> {
    if let Some(path) = url.strip_prefix("file://") {
        return std::fs::read(path).map_err(|e| format!("{url}: {e}"));
    }
    if url.starts_with("http://") || url.starts_with("https://") {
        return http_get(url);
    }
    Err(format!("{url}: unsupported scheme"))
}

#[cfg(feature = "net")]
fn http_get(url: &str) -> std::result::Result<Vec<u8>, String> {
    use std::io::Read;
    let mut res = ureq::get(url).call().map_err(|e| format!("{url}: {e}"))?;
    let mut out = Vec::new();
    res.body_mut().as_reader().read_to_end(&mut out).map_err(|e| format!("{url}: {e}"))?;
    Ok(out)
}

#[cfg(not(feature = "net"))]
fn http_get(url: &str) -> std::result::Result<Vec<u8>, String> {
    Err(format!("{url}: built without network support"))
}

fn fetch_file(id: &str, file: &SourceFile, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(&file.name);
    if let Ok(bytes) = std::fs::read(&path) {
        if file.checksum.matches(&bytes) {
            return Ok(path);
        }
        log::warn!("{}: cached copy fails its checksum, fetching again", path.display());
    }
    let mut failures = Vec::new();
    for url in &file.source_urls {
        match download(url) {
            Ok(bytes) => {
                let actual = file.checksum.digest(&bytes);
                if !actual.eq_ignore_ascii_case(&file.checksum.hex) {
                    return Err(Error::Checksum { id: id.to_string(), expected: file.checksum.to_string(), actual });
                }
                write_atomic(&path, &bytes)?;
                return Ok(path);
            }
            Err(msg) => {
                log::warn!("{id}: {msg}");
                failures.push(msg);
            }
        }
    }
    Err(Error::Download { id: id.to_string(), msg: failures.join("; ") })
}

/// Makes every source file of `d` present in the cache with a matching
/// checksum. Files already cached and valid are not downloaded again; each
/// missing file is tried from its URLs in order.
pub fn fetch(d: &DatasetDescriptor, cache_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = archive_dir(cache_dir, &d.id);
    d.files.iter().map(|f| fetch_file(&d.id, f, &dir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::descriptor::{Checksum, ExtractionRecipe, SplitRecipe};
    use crate::stream::TaskKind;

    fn descriptor(urls: Vec<String>, checksum: Checksum) -> DatasetDescriptor {
        DatasetDescriptor {
            id: "toy".into(),
            name: "Toy".into(),
            year: 2000,
            domain: "ocr".into(),
            kind: TaskKind::SingleLabel,
            files: vec![SourceFile { name: "toy.bin".into(), source_urls: urls, checksum }],
            license_note: String::new(),
            extraction_recipe: ExtractionRecipe::ImageFolder { root: "toy".into(), split_dirs: false },
            split_recipe: SplitRecipe::default(),
            label_map: [("a".to_string(), 0), ("b".to_string(), 1)].into(),
        }
    }

    #[test]
    fn failover_then_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("mirror.bin");
        std::fs::write(&src, b"payload").unwrap();
        let urls =
            vec![format!("file://{}", dir.path().join("gone.bin").display()), format!("file://{}", src.display())];
        let d = descriptor(urls, Checksum::sha256_of(b"payload"));
        let cache = dir.path().join("cache");
        let got = fetch(&d, &cache).unwrap();
        assert_eq!(std::fs::read(&got[0]).unwrap(), b"payload");

        // No source reachable any more: the cached copy is enough.
        std::fs::remove_file(&src).unwrap();
        assert_eq!(fetch(&d, &cache).unwrap(), got);
    }

    #[test]
    fn mismatch_names_descriptor() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("m.bin");
        std::fs::write(&src, b"tampered").unwrap();
        let want = Checksum::sha256_of(b"original");
        let d = descriptor(vec![format!("file://{}", src.display())], want.clone());
        match fetch(&d, dir.path()) {
            Err(Error::Checksum { id, expected, actual }) => {
                assert_eq!(id, "toy");
                assert_eq!(expected, want.to_string());
                assert_eq!(actual, Checksum::sha256_of(b"tampered").hex);
            }
            other => panic!("expected checksum error, got {other:?}"),
        }
        assert!(!archive_dir(dir.path(), "toy").join("toy.bin").exists());
    }

    #[test]
    fn all_sources_down_is_a_download_error() {
        let d = descriptor(vec!["file:///no/such/a".into(), "gopher://x".into()], Checksum::sha256_of(b""));
        let dir = tempfile::tempdir().unwrap();
        let err = fetch(&d, dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Download { id, msg } if id == "toy" && msg.contains("gopher")), "{err}");
    }
}
