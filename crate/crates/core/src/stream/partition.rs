use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{Example, Label, Splits, Stream, Task, TaskKind};

/// Splits a single-label task into `num_partitions` tasks over disjoint class
/// groups. Classes are assigned to groups by a seeded permutation; within a
/// group, labels are re-indexed from 0 in ascending original-class order.
/// The returned stream has every task in meta-train.
pub fn make_class_partition_stream(base: &Task, num_partitions: usize, seed: u64) -> Result<Stream> {
    if base.kind != TaskKind::SingleLabel {
        return Err(Error::InvalidTask(format!("task `{}`: class partitioning needs a single-label task", base.id)));
    }
    if num_partitions == 0 || base.num_classes % num_partitions != 0 {
        return Err(Error::InvalidTask(format!(
            "task `{}`: {} classes not divisible into {num_partitions} partitions",
            base.id, base.num_classes
        )));
    }
    let per = base.num_classes / num_partitions;
    let mut classes: Vec<usize> = (0..base.num_classes).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // original class -> (partition, new label)
    let mut route = vec![(0usize, 0u32); base.num_classes];
    for (p, group) in classes.chunks(per).enumerate() {
        let mut g = group.to_vec();
        g.sort_unstable();
        for (new, &orig) in g.iter().enumerate() {
            route[orig] = (p, new as u32);
        }
    }

    let route_split = |split: &[Example]| -> Vec<Vec<Example>> {
        let mut out = vec![Vec::new(); num_partitions];
        for ex in split {
            let Label::Class(c) = ex.label else { unreachable!("single-label task") };
            let (p, new) = route[c as usize];
            out[p].push(Example { input: ex.input.clone(), label: Label::Class(new) });
        }
        out
    };
    let mut train = route_split(base.train()).into_iter();
    let mut val = route_split(base.val()).into_iter();
    let mut test = route_split(base.test()).into_iter();

    let width = num_partitions.to_string().len().max(2);
    let tasks = (0..num_partitions)
        .map(|p| {
            let id = format!("{}_part{p:0width$}", base.id);
            Task::new(
                id.clone(),
                format!("{} part {p}", base.name),
                base.year,
                base.domain.clone(),
                TaskKind::SingleLabel,
                per,
                base.avg_resolution,
                Splits { train: train.next().unwrap(), val: val.next().unwrap(), test: test.next().unwrap() },
            )
            .map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    Stream::new(tasks, num_partitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Input;
    use proptest::prelude::*;

    fn base_task(classes: usize, per_class: usize) -> Task {
        let mk = |off: usize| -> Vec<Example> {
            (0..classes * per_class)
                .map(|i| Example::new(Input::Features(vec![(off + i) as f32]), Label::Class((i % classes) as u32)))
                .collect()
        };
        Task::new(
            "base",
            "Base",
            2014,
            "object",
            TaskKind::SingleLabel,
            classes,
            (32, 32),
            Splits { train: mk(0), val: mk(1_000_000), test: mk(2_000_000) },
        )
        .unwrap()
    }

    #[test]
    fn thousand_classes_hundred_partitions() {
        let s = make_class_partition_stream(&base_task(1000, 1), 100, 0).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.tasks().iter().all(|t| t.num_classes == 10));
    }

    #[test]
    fn single_partition_is_identity_up_to_relabel() {
        let base = base_task(10, 3);
        let s = make_class_partition_stream(&base, 1, 5).unwrap();
        let t = s.task(0).unwrap();
        assert_eq!(t.num_classes, 10);
        assert_eq!(t.train(), base.train());
    }

    #[test]
    fn indivisible_rejected() {
        assert!(make_class_partition_stream(&base_task(10, 2), 3, 0).is_err());
    }

    #[test]
    fn classes_disjoint_across_partitions() {
        let base = base_task(12, 2);
        let s = make_class_partition_stream(&base, 4, 9).unwrap();
        let mut seen = std::collections::HashSet::new();
        for t in s.tasks() {
            for ex in t.train() {
                let Input::Features(v) = &ex.input else { unreachable!() };
                seen.insert((v[0] as usize % 12, t.id.clone()));
            }
            let origs: std::collections::BTreeSet<usize> = t
                .train()
                .iter()
                .map(|ex| match &ex.input {
                    Input::Features(v) => v[0] as usize % 12,
                    _ => unreachable!(),
                })
                .collect();
            assert_eq!(origs.len(), 3);
        }
        let all: std::collections::BTreeSet<usize> = seen.iter().map(|(c, _)| *c).collect();
        assert_eq!(all.len(), 12);
        let owners: std::collections::BTreeSet<(usize, String)> = seen.into_iter().collect();
        assert_eq!(owners.len(), 12, "each original class lives in exactly one partition");
    }

    proptest! {
        #[test]
        fn preserves_example_count(parts in prop::sample::select(vec![1usize, 2, 3]), per in 1usize..4, seed in 0u64..100) {
            let base = base_task(6, per);
            let s = make_class_partition_stream(&base, parts, seed).unwrap();
            let total: usize = s.tasks().iter().map(|t| t.splits().total()).sum();
            prop_assert_eq!(total, base.splits().total());
        }
    }
}
