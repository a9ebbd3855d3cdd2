use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::predictor::PredictorState;

/// Where a predictor's initial parameters came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Scratch,
    Pretrained,
    Task(String),
}

impl Provenance {
    pub fn as_str(&self) -> &str {
        match self {
            Provenance::Scratch => "scratch",
            Provenance::Pretrained => "pretrained",
            Provenance::Task(id) => id,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "scratch" => Provenance::Scratch,
            "pretrained" => Provenance::Pretrained,
            id => Provenance::Task(id.to_string()),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Provenance::parse(&String::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub model: PredictorState,
    pub val_error: f64,
    pub provenance: Provenance,
}

/// Knowledge carried from task to task.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaLearnerState {
    /// Chosen model per completed task.
    pub bank: BTreeMap<String, BankEntry>,
    /// Completed task ids in stream order.
    pub dataset_refs: Vec<String>,
    pub pretrained: Option<PredictorState>,
    /// Scratch models used as frozen feature extractors.
    pub frozen: BTreeMap<String, PredictorState>,
}

const MAGIC: &[u8; 4] = b"SBML";
const VERSION: u32 = 1;

impl MetaLearnerState {
    pub fn with_pretrained(pretrained: Option<PredictorState>) -> Self {
        Self { pretrained, ..Self::default() }
    }

    /// Bank entries in stream order.
    pub fn bank_in_order(&self) -> impl Iterator<Item = (&str, &BankEntry)> {
        self.dataset_refs.iter().filter_map(|id| self.bank.get(id).map(|e| (id.as_str(), e)))
    }

    pub fn frozen_in_order(&self) -> impl Iterator<Item = (&str, &PredictorState)> {
        self.dataset_refs.iter().filter_map(|id| self.frozen.get(id).map(|m| (id.as_str(), m)))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.dataset_refs.iter().position(|r| r == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(MAGIC, VERSION);
        w.u64(self.dataset_refs.len() as u64);
        for id in &self.dataset_refs {
            w.str(id);
        }
        w.u64(self.bank.len() as u64);
        for (id, e) in &self.bank {
            w.str(id);
            w.f64(e.val_error);
            w.str(e.provenance.as_str());
            w.bytes(&e.model.to_bytes());
        }
        match &self.pretrained {
            Some(p) => {
                w.u8(1);
                w.bytes(&p.to_bytes());
            }
            None => w.u8(0),
        }
        w.u64(self.frozen.len() as u64);
        for (id, m) in &self.frozen {
            w.str(id);
            w.bytes(&m.to_bytes());
        }
        w.into_bytes()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::header(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::Schema { found: version.to_string(), supported: VERSION });
        }
        let mut s = Self::default();
        for _ in 0..r.u64()? {
            s.dataset_refs.push(r.str()?);
        }
        for _ in 0..r.u64()? {
            let id = r.str()?;
            let val_error = r.f64()?;
            let provenance = Provenance::parse(&r.str()?);
            let model = PredictorState::from_bytes(r.bytes()?)?;
            s.bank.insert(id, BankEntry { model, val_error, provenance });
        }
        s.pretrained = match r.u8()? {
            0 => None,
            1 => Some(PredictorState::from_bytes(r.bytes()?)?),
            t => return Err(Error::Corrupt(format!("bad pretrained flag {t}"))),
        };
        for _ in 0..r.u64()? {
            let id = r.str()?;
            s.frozen.insert(id, PredictorState::from_bytes(r.bytes()?)?);
        }
        if !r.is_empty() {
            return Err(Error::Corrupt("trailing bytes after learner state".into()));
        }
        if let Some(k) = s.bank.keys().find(|k| !s.dataset_refs.contains(k)) {
            return Err(Error::Corrupt(format!("bank entry `{k}` not among the dataset references")));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{ArchSpec, Shape};

    #[test]
    fn provenance_strings() {
        for p in [Provenance::Scratch, Provenance::Pretrained, Provenance::Task("mnist".into())] {
            assert_eq!(Provenance::parse(p.as_str()), p);
            let j = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<Provenance>(&j).unwrap(), p);
        }
    }

    #[test]
    fn bytes_round_trip() {
        let m = PredictorState::random(&ArchSpec::mlp(&[3]), Shape::flat(2), 1).unwrap();
        let mut s = MetaLearnerState::with_pretrained(Some(m.clone()));
        s.dataset_refs = vec!["a".into(), "b".into()];
        s.bank.insert(
            "b".into(),
            BankEntry { model: m.clone(), val_error: 0.25, provenance: Provenance::Task("a".into()) },
        );
        s.frozen.insert("a".into(), m);
        let back = MetaLearnerState::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(
            MetaLearnerState::from_bytes(&MetaLearnerState::default().to_bytes()).unwrap(),
            MetaLearnerState::default()
        );
    }
}
