mod common;

use std::sync::Arc;

use common::*;
use ndarray::{Array1, Array2};
use streambench::hpo::Hparams;
use streambench::metalearner::{Family, MetaLearner, Provenance, TaskModel, TaskOutcome};
use streambench::predictor::{ArchSpec, Head, PredictorState, Shape};
use streambench::protocol::{
    read_records, resume, run_meta_test, run_meta_train, CausalView, Checkpoint, RunOptions, RunRecord,
};
use streambench::stream::{Example, Input, Label, Splits, Stream, SyntheticSpec, Task, TaskKind};
use streambench::Error;

/// Two-class feature task whose test split has `wrong` of 10 examples in
/// class 1, so always predicting class 0 errs at `wrong / 10`.
fn scripted_task(id: &str, wrong: usize) -> Task {
    let ex = |i: usize, c: u32| Example::new(Input::Features(vec![i as f32, c as f32 + 0.5]), Label::Class(c));
    let train = (0..4).map(|i| ex(i, (i % 2) as u32)).collect();
    let val = (10..14).map(|i| ex(i, (i % 2) as u32)).collect();
    let test = (20..30).map(|i| ex(i, ((i - 20) < wrong) as u32)).collect();
    Task::new(id, id, 2000, "x", TaskKind::SingleLabel, 2, (1, 2), Splits { train, val, test }).unwrap()
}

fn scripted_stream(wrong: &[usize], boundary: usize) -> Stream {
    let tasks = wrong.iter().enumerate().map(|(i, &w)| Arc::new(scripted_task(&format!("t{i}"), w))).collect();
    Stream::new(tasks, boundary).unwrap()
}

/// Reports fixed validation errors and FLOPs; its models always say class 0.
struct Scripted {
    script: Vec<(f64, u64)>,
    seen: usize,
    peek_ahead: bool,
}

impl MetaLearner for Scripted {
    fn describe(&self) -> serde_json::Value {
        serde_json::json!({"family": "scripted", "seed": 7})
    }

    fn train_task(&mut self, view: &CausalView<'_>) -> streambench::Result<TaskOutcome> {
        if self.peek_ahead {
            view.task(view.cursor() + 1)?;
        }
        let data = view.current();
        let mut m = PredictorState::random(&ArchSpec::mlp(&[3]), Shape::flat(2), 0)?;
        let head = Head { w: Array2::zeros((m.feature_dim(), 2)), b: Array1::from(vec![1.0, 0.0]) };
        m.insert_head(data.id, head)?;
        let (val_error, flops) = self.script[view.cursor()];
        self.seen += 1;
        Ok(TaskOutcome {
            model: TaskModel::Single(m),
            val_error,
            flops,
            hparams: Hparams::new(),
            provenance: Provenance::Scratch,
            learning_curve: Vec::new(),
            trials: Vec::new(),
            relatedness: Vec::new(),
            aux_tasks: Vec::new(),
        })
    }

    fn snapshot(&self) -> Vec<u8> {
        vec![self.seen as u8]
    }

    fn restore(&mut self, bytes: &[u8]) -> streambench::Result<()> {
        self.seen = bytes[0] as usize;
        Ok(())
    }

    fn reset(&mut self) {
        self.seen = 0;
    }
}

fn scripted(script: &[(f64, u64)]) -> Scripted {
    Scripted { script: script.to_vec(), seen: 0, peek_ahead: false }
}

#[test]
fn future_access_names_both_tasks() {
    let stream = scripted_stream(&[1, 2, 3], 3);
    let mut l = Scripted { peek_ahead: true, ..scripted(&[(0.1, 1); 3]) };
    match run_meta_train(&stream, &mut l, &RunOptions::default()) {
        Err(Error::Causality { cursor, requested }) => assert_eq!((cursor, requested), (0, 1)),
        other => panic!("expected a causality violation, got {other:?}"),
    }
}

#[test]
fn meta_train_hand_sums() {
    let stream = scripted_stream(&[1, 2, 3], 3);
    let mut l = scripted(&[(0.1, 5), (0.2, 7), (0.3, 9)]);
    let res = run_meta_train(&stream, &mut l, &RunOptions::default()).unwrap();
    let s = res.summary.unwrap();
    assert!((s.error - 0.2).abs() < 1e-15);
    assert_eq!(s.cflop, 21);
    assert_eq!(res.records.len(), 3);
}

#[test]
fn meta_test_scores_suffix_and_charges_everything() {
    let stream = scripted_stream(&[4, 2, 1], 2);
    let mut l = scripted(&[(0.9, 3), (0.9, 4), (0.9, 5)]);
    let res = run_meta_test(&stream, &mut l, &RunOptions::default()).unwrap();
    let errors: Vec<f64> = res.records.iter().map(|r| r.error).collect();
    for (e, want) in errors.iter().zip([0.4, 0.2, 0.1]) {
        assert!((e - want).abs() < 1e-12);
    }
    let s = res.summary.unwrap();
    assert!((s.error - 0.1).abs() < 1e-12);
    assert_eq!(s.cflop, 12);
    let direct: u64 = res.records.iter().map(|r| r.flops).sum();
    assert_eq!(direct, s.cflop);
}

#[test]
fn boundary_edges() {
    let stream = scripted_stream(&[1, 2], 2);
    let mut l = scripted(&[(0.1, 1), (0.2, 1)]);
    assert_eq!(run_meta_train(&stream, &mut l, &RunOptions::default()).unwrap().records.len(), 2);
    assert!(run_meta_test(&stream, &mut l, &RunOptions::default()).is_err());
    assert!(Stream::new(stream.tasks().to_vec(), 0).is_err());
}

fn timing_free(rs: &[RunRecord]) -> Vec<RunRecord> {
    rs.iter().map(RunRecord::without_timing).collect()
}

fn small_stream(seed: u64) -> Stream {
    let mut spec = SyntheticSpec::new(4, 3, 16, sizes(60, 30, 30), seed);
    spec.relations = vec![streambench::stream::Relation::Related { source: 0, target: 2, perturbation: 0.1 }];
    spec.boundary = Some(2);
    synthetic(&spec)
}

#[test]
fn reruns_are_identical() {
    let stream = small_stream(3);
    let run = || {
        let mut l = learner(Family::FtD, predictor(30, 1), streambench::hpo::SearchSpace::small(), 2, 11);
        run_meta_test(&stream, &mut l, &RunOptions::default()).unwrap().records
    };
    assert_eq!(timing_free(&run()), timing_free(&run()));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let stream = small_stream(4);
    let dir = tempfile::tempdir().unwrap();
    let make = || learner(Family::FtD, predictor(30, 2), streambench::hpo::SearchSpace::small(), 2, 5);
    let full = run_meta_test(&stream, &mut make(), &RunOptions::default()).unwrap();

    for k in 0..=4 {
        let cp = dir.path().join(format!("cp{k}"));
        let log = dir.path().join(format!("log{k}.jsonl"));
        let opts = RunOptions { log: Some(log.clone()), checkpoint: Some(cp.clone()), stop_after: Some(k) };
        let part = run_meta_test(&stream, &mut make(), &opts).unwrap();
        assert_eq!(part.records.len(), k);
        assert_eq!(part.is_complete(), k == 4);
        assert_eq!(Checkpoint::load(&cp).unwrap().next_task(), k);
        let opts = RunOptions { stop_after: None, ..opts };
        let rest = resume(&stream, &mut make(), &cp, &opts).unwrap();
        assert_eq!(timing_free(&rest.records), timing_free(&full.records), "resumed after {k}");
        assert_eq!(timing_free(&read_records(&log).unwrap()), timing_free(&full.records));
        assert_eq!(rest.summary, full.summary);
    }
}

#[test]
fn corrupt_checkpoint_rejected() {
    let stream = small_stream(5);
    let dir = tempfile::tempdir().unwrap();
    let cp = dir.path().join("cp");
    std::fs::write(&cp, b"not a checkpoint").unwrap();
    let mut l = learner(Family::Indep, predictor(5, 0), streambench::hpo::SearchSpace::small(), 2, 0);
    assert!(matches!(resume(&stream, &mut l, &cp, &RunOptions::default()), Err(Error::Corrupt(_))));
}

proptest::proptest! {
    #[test]
    fn suffix_order_does_not_change_aggregation(
        wrong in proptest::collection::vec(0usize..=10, 3..7),
        flops in proptest::collection::vec(0u64..1_000_000_000, 7),
        rot in 0usize..7,
    ) {
        let n = wrong.len();
        let boundary = 1 + rot % (n - 1);
        let mut suffix: Vec<usize> = wrong[boundary..].to_vec();
        let r = rot % suffix.len();
        suffix.rotate_left(r);
        let permuted: Vec<usize> = wrong[..boundary].iter().chain(&suffix).copied().collect();
        let script: Vec<(f64, u64)> = flops[..n].iter().map(|&f| (0.5, f)).collect();
        let mut results = Vec::new();
        for w in [&wrong, &permuted] {
            let stream = scripted_stream(w, boundary);
            let res = run_meta_test(&stream, &mut scripted(&script), &RunOptions::default()).unwrap();
            let s = res.summary.unwrap();
            let scored: Vec<f64> = res.records[boundary..].iter().map(|r| r.error).collect();
            proptest::prop_assert!((s.error - scored.iter().sum::<f64>() / scored.len() as f64).abs() < 1e-15);
            proptest::prop_assert_eq!(s.cflop, flops[..n].iter().sum::<u64>());
            results.push(s.error);
        }
        proptest::prop_assert!((results[0] - results[1]).abs() < 1e-12);
    }
}
