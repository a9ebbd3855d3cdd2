//! Stream variants for ordering and crippled-stream ablations. Removals and
//! filters act on the meta-train portion only; the meta-test tasks are kept
//! as they are.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Stream, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    WithinYearShuffle { seed: u64 },
    FullShuffle { seed: u64 },
    RemoveFirst { k: usize },
    RemoveLast { k: usize },
    RemoveRandom { k: usize, seed: u64 },
    KeepLargest { k: usize },
    FilterDomains { domains: BTreeSet<String> },
    ExcludeNamed { names: BTreeSet<String> },
}

fn rebuild(train: Vec<Arc<Task>>, test: &[Arc<Task>]) -> Result<Stream> {
    let boundary = train.len();
    if boundary == 0 {
        return Err(Error::InvalidStream("variant leaves the meta-train stream empty".into()));
    }
    let mut tasks = train;
    tasks.extend(test.iter().cloned());
    Stream::new(tasks, boundary)
}

fn check_k(k: usize, boundary: usize) -> Result<()> {
    if k >= boundary {
        return Err(Error::InvalidStream(format!("cannot remove {k} of {boundary} meta-train tasks")));
    }
    Ok(())
}

pub fn apply_variant(stream: &Stream, variant: &Variant) -> Result<Stream> {
    let (train, test) = stream.split_boundary();
    match variant {
        Variant::WithinYearShuffle { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut slots: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
            for (i, t) in stream.tasks().iter().enumerate() {
                slots.entry(t.year).or_default().push(i);
            }
            let mut tasks = stream.tasks().to_vec();
            for positions in slots.values() {
                let mut perm = positions.clone();
                perm.shuffle(&mut rng);
                for (&dst, &src) in positions.iter().zip(&perm) {
                    tasks[dst] = stream.tasks()[src].clone();
                }
            }
            Stream::new(tasks, stream.boundary())
        }
        Variant::FullShuffle { seed } => {
            let mut tasks = stream.tasks().to_vec();
            tasks.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            Stream::new(tasks, stream.boundary())
        }
        Variant::RemoveFirst { k } => {
            check_k(*k, train.len())?;
            rebuild(train[*k..].to_vec(), test)
        }
        Variant::RemoveLast { k } => {
            check_k(*k, train.len())?;
            rebuild(train[..train.len() - k].to_vec(), test)
        }
        Variant::RemoveRandom { k, seed } => {
            check_k(*k, train.len())?;
            let idx: Vec<usize> = (0..train.len()).collect();
            let drop: BTreeSet<usize> =
                idx.choose_multiple(&mut ChaCha8Rng::seed_from_u64(*seed), *k).copied().collect();
            rebuild(train.iter().enumerate().filter(|(i, _)| !drop.contains(i)).map(|(_, t)| t.clone()).collect(), test)
        }
        Variant::KeepLargest { k } => {
            if *k == 0 || *k > train.len() {
                return Err(Error::InvalidStream(format!("cannot keep {k} of {} meta-train tasks", train.len())));
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            // stable: ties keep stream order
            order.sort_by_key(|&i| std::cmp::Reverse(train[i].train().len()));
            let keep: BTreeSet<usize> = order[..*k].iter().copied().collect();
            rebuild(keep.iter().map(|&i| train[i].clone()).collect(), test)
        }
        Variant::FilterDomains { domains } => {
            let known: BTreeSet<&str> = stream.tasks().iter().map(|t| t.domain.as_str()).collect();
            if let Some(d) = domains.iter().find(|d| !known.contains(d.as_str())) {
                return Err(Error::InvalidStream(format!("unknown domain tag `{d}`")));
            }
            rebuild(train.iter().filter(|t| domains.contains(&t.domain)).cloned().collect(), test)
        }
        Variant::ExcludeNamed { names } => {
            let hit = |t: &Task| names.contains(&t.id) || names.contains(&t.name);
            if let Some(n) = names.iter().find(|n| !train.iter().any(|t| &t.id == *n || &t.name == *n)) {
                return Err(Error::InvalidStream(format!("no meta-train task named `{n}`")));
            }
            rebuild(train.iter().filter(|t| !hit(t)).cloned().collect(), test)
        }
    }
}
