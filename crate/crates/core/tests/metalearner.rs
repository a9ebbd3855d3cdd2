mod common;

use common::*;
use streambench::metalearner::{relatedness_scores, Family, KnnConfig};
use streambench::predictor::{train, PredictorState, Shape, TaskData};
use streambench::stream::{Example, Input, Label, Relation, Splits, SyntheticSpec, Task, TaskKind};

#[test]
fn duplicate_task_scores_highest() {
    let mut hits = 0;
    for seed in 0..20 {
        let mut spec = SyntheticSpec::new(4, 4, 64, sizes(300, 100, 50), seed);
        spec.class_separation = 3.0;
        spec.repeat = vec![1];
        let stream = synthetic(&spec);
        let cfg = predictor(150, seed);
        let models: Vec<PredictorState> = (0..4)
            .map(|i| {
                let mut c = cfg.clone();
                c.learning_rate = 0.05;
                train(TaskData::of(&stream.tasks()[i]), &c, None).unwrap().final_state
            })
            .collect();
        let ids: Vec<String> = (0..4).map(|i| stream.tasks()[i].id.clone()).collect();
        let candidates: Vec<(&str, &PredictorState)> = ids.iter().map(|s| s.as_str()).zip(&models).collect();
        let scores =
            relatedness_scores(&TaskData::of(&stream.tasks()[4]), &candidates, &KnnConfig::default(), seed).unwrap();
        let max = scores.iter().map(|s| s.score).fold(f64::MIN, f64::max);
        if scores[1].score >= max {
            hits += 1;
        }
    }
    println!("duplicate task ranked first in {hits}/20 seeds");
    assert!(hits >= 16);
}

fn noise_task(seed: u64, classes: usize, n: usize) -> Task {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut split = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..8).map(|_| rng.random::<f32>() - 0.5).collect();
                Example::new(Input::Features(v), Label::Class((i % classes) as u32))
            })
            .collect()
    };
    let splits = Splits { train: split(n), val: split(n), test: split(classes * 2) };
    Task::new("noise", "noise", 2000, "synthetic", TaskKind::SingleLabel, classes, (1, 8), splits).unwrap()
}

#[test]
fn uninformative_features_score_chance() {
    let (c, n, seeds) = (4, 400, 20);
    let mut total = 0.0;
    for seed in 0..seeds {
        let task = noise_task(seed, c, n);
        let model =
            PredictorState::random(&streambench::predictor::ArchSpec::mlp(&[32]), Shape::flat(8), seed).unwrap();
        let s = relatedness_scores(&TaskData::of(&task), &[("m", &model)], &KnnConfig::default(), seed).unwrap();
        assert_eq!(s[0].embed_flops, model_forward(&model) * 2 * n as u64);
        total += s[0].score;
    }
    let p = 1.0 / c as f64;
    let mean = total / seeds as f64;
    let sigma = (p * (1.0 - p) / (n as f64 * seeds as f64)).sqrt();
    println!("mean kNN score {mean:.4}, chance {p}, 3 sigma {:.4}", 3.0 * sigma);
    assert!((mean - p).abs() <= 3.0 * sigma);
}

fn model_forward(m: &PredictorState) -> u64 {
    streambench::predictor::FlopModel::new(m.arch(), m.input_shape(), 1).unwrap().backbone_forward
}

#[test]
fn finetuning_from_related_task_beats_scratch() {
    let mut wins = 0;
    for seed in 0..20 {
        let mut spec = SyntheticSpec::new(3, 4, 64, sizes(400, 200, 50), 100 + seed);
        spec.class_separation = 3.0;
        spec.sizes = vec![sizes(400, 200, 50), sizes(400, 200, 50), sizes(24, 200, 50)];
        spec.relations = vec![Relation::Related { source: 0, target: 2, perturbation: 0.05 }];
        let stream = synthetic(&spec);
        let cfg = predictor(150, seed);
        let errs: Vec<f64> = [Family::FtD, Family::Indep]
            .into_iter()
            .map(|f| {
                let mut l = learner(f, cfg.clone(), fixed_space(0.05), 1, seed);
                let out = walk(&mut l, &stream, 3);
                out[2].val_error
            })
            .collect();
        if errs[0] < errs[1] {
            wins += 1;
        }
    }
    println!("finetuning beat scratch in {wins}/20 seeds");
    assert!(wins >= 16);
}

#[test]
fn multitask_top1_uses_init_task() {
    let mut spec = SyntheticSpec::new(3, 3, 12, sizes(90, 30, 30), 5);
    spec.relations = vec![Relation::Related { source: 0, target: 2, perturbation: 0.05 }];
    spec.class_separation = 3.0;
    let stream = synthetic(&spec);
    let mut l = learner(Family::Mt, predictor(40, 1), fixed_space(0.05), 2, 1);
    let out = walk(&mut l, &stream, 3);
    assert!(out[0].aux_tasks.is_empty());
    assert_eq!(out[2].aux_tasks, vec![out[2].provenance.as_str().to_string()]);
    assert!(out[2].hparams.contains_key("mt_lambda"));
}

#[test]
fn ensemble_outcome_uses_weighted_members() {
    let spec = SyntheticSpec::new(1, 3, 12, sizes(90, 60, 30), 9);
    let stream = synthetic(&spec);
    let mut cfg = streambench::metalearner::LearnerConfig::new(
        streambench::metalearner::Strategy { ensemble: true, ..streambench::metalearner::Strategy::new(Family::Indep) },
        predictor(30, 2),
        streambench::hpo::SearchSpace::small(),
        4,
        2,
    );
    cfg.knn = KnnConfig::default();
    let mut l = streambench::metalearner::StrategyLearner::new(cfg).unwrap();
    let out = walk(&mut l, &stream, 1);
    match &out[0].model {
        streambench::metalearner::TaskModel::Ensemble { members, weights } => {
            assert_eq!(members.len(), 4);
            assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        _ => panic!("expected an ensemble"),
    }
}
