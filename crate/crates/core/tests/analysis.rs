mod common;

use common::*;
use streambench::analysis::{plot_transfer, transfer_matrix, transfer_rows, TransferConfig, TransferMatrix};
use streambench::hpo::Engine;
use streambench::stream::SyntheticSpec;

fn small_matrix(seed: u64) -> TransferMatrix {
    let spec = SyntheticSpec::new(3, 3, 16, sizes(30, 20, 20), seed);
    let config = TransferConfig {
        predictor: predictor(10, seed),
        space: fixed_space(0.05),
        engine: Engine::Random,
        n_trials: 1,
        seed,
    };
    transfer_matrix(&synthetic(&spec), &config).unwrap()
}

#[test]
fn three_tasks_need_six_runs() {
    let m = small_matrix(3);
    assert_eq!(m.runs, 6);
    assert_eq!(m.entries.keys().copied().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    assert!(m.get(1, 0).is_none() && m.get(1, 1).is_none());
    assert_eq!(m.reference_errors.len(), 3);
    assert!(m.reference_errors.iter().all(|e| (0.0..=1.0).contains(e)));
}

#[test]
fn matrix_is_reproducible_and_serializable() {
    let a = small_matrix(5);
    assert_eq!(a, small_matrix(5));
    let back: TransferMatrix = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(a, back);
}

#[test]
fn rows_and_heatmap_cover_every_pair() {
    let m = small_matrix(7);
    let rows = transfer_rows(&m);
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].source.as_str(), rows[0].target.as_str()), ("syn00", "syn01"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transfer.svg");
    assert_eq!(plot_transfer(&m, &path).unwrap(), 3);
    assert!(std::fs::read_to_string(&path).unwrap().contains("<svg"));
}
