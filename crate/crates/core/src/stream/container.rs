//! Prepared split files: a header followed by one length-prefixed record per
//! example (label, then input).

use std::path::Path;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

use super::{Example, Image, Input, Label};

const MAGIC: &[u8; 4] = b"SBX1";
const VERSION: u32 = 1;

fn encode_example(ex: &Example) -> Vec<u8> {
    let mut w = Writer::new();
    match &ex.label {
        Label::Class(c) => {
            w.u8(0);
            w.u32(*c);
        }
        Label::Multi(v) => {
            w.u8(1);
            w.bytes(&v.iter().map(|&b| b as u8).collect::<Vec<_>>());
        }
    }
    match &ex.input {
        Input::Image(img) => {
            w.u8(0);
            w.u32(img.height);
            w.u32(img.width);
            w.u8(img.channels);
            w.bytes(&img.pixels);
        }
        Input::Features(v) => {
            w.u8(1);
            w.u64(v.len() as u64);
            for x in v {
                w.u32(x.to_bits());
            }
        }
    }
    w.into_bytes()
}

fn decode_example(bytes: &[u8]) -> Result<Example> {
    let mut r = Reader::new(bytes);
    let label = match r.u8()? {
        0 => Label::Class(r.u32()?),
        1 => Label::Multi(r.bytes()?.iter().map(|&b| b != 0).collect()),
        t => return Err(Error::Corrupt(format!("unknown label tag {t}"))),
    };
    let input = match r.u8()? {
        0 => {
            let h = r.u32()?;
            let w = r.u32()?;
            let c = r.u8()?;
            let px = r.bytes()?.to_vec();
            Input::Image(Image::new(h, w, c, px).map_err(|e| Error::Corrupt(e.to_string()))?)
        }
        1 => {
            let n = r.u64()? as usize;
            if n > bytes.len() {
                return Err(Error::Corrupt("feature length".into()));
            }
            Input::Features((0..n).map(|_| r.u32().map(f32::from_bits)).collect::<Result<_>>()?)
        }
        t => return Err(Error::Corrupt(format!("unknown input tag {t}"))),
    };
    if !r.is_empty() {
        return Err(Error::Corrupt("trailing bytes in record".into()));
    }
    Ok(Example { input, label })
}

pub fn encode_examples(examples: &[Example]) -> Vec<u8> {
    let mut w = Writer::with_header(MAGIC, VERSION);
    w.u64(examples.len() as u64);
    for ex in examples {
        w.bytes(&encode_example(ex));
    }
    w.into_bytes()
}

pub fn decode_examples(bytes: &[u8]) -> Result<Vec<Example>> {
    let (mut r, version) = Reader::header(bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("split container version {version}")));
    }
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push(decode_example(r.bytes()?)?);
    }
    if !r.is_empty() {
        return Err(Error::Corrupt("trailing bytes after records".into()));
    }
    Ok(out)
}

/// Writes a split file atomically and returns the SHA-256 of its bytes.
pub fn write_examples(path: &Path, examples: &[Example]) -> Result<String> {
    let bytes = encode_examples(examples);
    crate::codec::write_atomic(path, &bytes)?;
    Ok(crate::codec::sha256_hex(&bytes))
}

/// Reads a split file, verifying its SHA-256 when `checksum` is given.
pub fn read_examples(path: &Path, checksum: Option<&str>) -> Result<Vec<Example>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if let Some(expected) = checksum {
        let actual = crate::codec::sha256_hex(&bytes);
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(Error::Checksum { id: path.display().to_string(), expected: expected.to_string(), actual });
        }
    }
    decode_examples(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_example() -> impl Strategy<Value = Example> {
        let input = prop_oneof![
            (1u32..4, 1u32..4, 1u8..4).prop_flat_map(|(h, w, c)| {
                proptest::collection::vec(any::<u8>(), (h * w * c as u32) as usize)
                    .prop_map(move |px| Input::Image(Image::new(h, w, c, px).unwrap()))
            }),
            proptest::collection::vec(-1e3f32..1e3, 0..8).prop_map(Input::Features),
        ];
        let label = prop_oneof![
            (0u32..100).prop_map(Label::Class),
            proptest::collection::vec(any::<bool>(), 1..6).prop_map(Label::Multi),
        ];
        (input, label).prop_map(|(input, label)| Example { input, label })
    }

    proptest! {
        #[test]
        fn container_round_trip(exs in proptest::collection::vec(arb_example(), 0..10)) {
            let bytes = encode_examples(&exs);
            prop_assert_eq!(decode_examples(&bytes).unwrap(), exs);
        }
    }

    #[test]
    fn checksum_verified() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.sbx");
        let exs = vec![Example::new(Input::Features(vec![1.0]), Label::Class(0))];
        let sum = write_examples(&p, &exs).unwrap();
        assert_eq!(read_examples(&p, Some(&sum)).unwrap(), exs);
        assert!(matches!(read_examples(&p, Some("00")), Err(Error::Checksum { .. })));
    }
}
