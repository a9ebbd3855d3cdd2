use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::predictor::{FlopModel, PredictorState, TaskData};
use crate::stream::{Example, Label};

use super::strategy::KnnConfig;

/// Source id under which the pretrained model is scored.
pub const PRETRAINED_SOURCE: &str = "pretrained";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessScore {
    pub source: String,
    /// kNN accuracy in the source model's feature space.
    pub score: f64,
    pub embed_flops: u64,
}

/// Probe subsets of the current task: up to `max_train` training examples
/// as kNN references and up to `max_val` validation examples as queries.
pub fn probe_split<'a>(
    train: &'a [Example],
    val: &'a [Example],
    knn: &KnnConfig,
    seed: u64,
) -> (Vec<&'a Example>, Vec<&'a Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |xs: &'a [Example], cap: usize| -> Vec<&'a Example> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        if xs.len() > cap {
            idx.shuffle(&mut rng);
            idx.truncate(cap);
            idx.sort_unstable();
        }
        idx.into_iter().map(|i| &xs[i]).collect()
    };
    let refs = pick(train, knn.max_train);
    let queries = pick(val, knn.max_val);
    (refs, queries)
}

fn normalize_rows(mut f: Array2<f64>) -> Array2<f64> {
    for mut row in f.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
    f
}

fn label_agreement(a: &Label, b: &Label) -> f64 {
    match (a, b) {
        (Label::Class(x), Label::Class(y)) => (x == y) as u8 as f64,
        (Label::Multi(x), Label::Multi(y)) => {
            let inter = x.iter().zip(y).filter(|(p, q)| **p && **q).count();
            let union = x.iter().zip(y).filter(|(p, q)| **p || **q).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        }
        _ => 0.0,
    }
}

/// Cosine kNN score of queries against references. Single-label scores are
/// accuracies of the majority vote (ties go to the nearest neighbour's
/// class); multi-label scores are the mean Jaccard overlap with the nearest
/// neighbour's label set.
pub fn knn_score(
    refs: &Array2<f64>,
    ref_labels: &[&Label],
    queries: &Array2<f64>,
    query_labels: &[&Label],
    k: usize,
) -> f64 {
    if query_labels.is_empty() || ref_labels.is_empty() {
        return 0.0;
    }
    let r = normalize_rows(refs.clone());
    let q = normalize_rows(queries.clone());
    let sims = q.dot(&r.t());
    let k = k.min(ref_labels.len());
    let mut total = 0.0;
    for (qi, row) in sims.axis_iter(Axis(0)).enumerate() {
        let mut order: Vec<usize> = (0..row.len()).collect();
        // stable: equal similarities keep the earlier reference
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        let nearest = &order[..k];
        let predicted = match query_labels[qi] {
            Label::Class(_) if k > 1 => {
                let mut votes: Vec<(u32, usize, usize)> = Vec::new();
                for (rank, &j) in nearest.iter().enumerate() {
                    if let Label::Class(c) = ref_labels[j] {
                        match votes.iter_mut().find(|v| v.0 == *c) {
                            Some(v) => v.1 += 1,
                            None => votes.push((*c, 1, rank)),
                        }
                    }
                }
                votes.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
                Label::Class(votes[0].0)
            }
            _ => ref_labels[nearest[0]].clone(),
        };
        total += label_agreement(&predicted, query_labels[qi]);
    }
    total / query_labels.len() as f64
}

/// Scores every candidate model by kNN accuracy of the current task's probe
/// queries against its probe references in that model's feature space.
/// Candidates whose input shape does not fit the task score 0 at no cost.
pub fn relatedness_scores(
    current: &TaskData<'_>,
    candidates: &[(&str, &PredictorState)],
    knn: &KnnConfig,
    seed: u64,
) -> Result<Vec<RelatednessScore>> {
    let (refs, queries) = probe_split(current.train, current.val, knn, seed);
    let ref_labels: Vec<&Label> = refs.iter().map(|e| &e.label).collect();
    let query_labels: Vec<&Label> = queries.iter().map(|e| &e.label).collect();
    let ref_owned: Vec<Example> = refs.iter().map(|&e| e.clone()).collect();
    let query_owned: Vec<Example> = queries.iter().map(|&e| e.clone()).collect();
    let mut out = Vec::with_capacity(candidates.len());
    for (source, model) in candidates {
        let fits = current
            .train
            .first()
            .map(|e| crate::predictor::input_shape(&e.input, model.input_shape().h) == model.input_shape())
            .unwrap_or(false);
        if !fits {
            out.push(RelatednessScore { source: source.to_string(), score: 0.0, embed_flops: 0 });
            continue;
        }
        let fr = model.extract_features(&ref_owned)?;
        let fq = model.extract_features(&query_owned)?;
        let per_example = FlopModel::new(model.arch(), model.input_shape(), 1)?.backbone_forward;
        out.push(RelatednessScore {
            source: source.to_string(),
            score: knn_score(&fr, &ref_labels, &fq, &query_labels, knn.k),
            embed_flops: per_example * (refs.len() + queries.len()) as u64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::Input;
    use ndarray::array;

    fn ex(v: f32, c: u32) -> Example {
        Example::new(Input::Features(vec![v]), Label::Class(c))
    }

    #[test]
    fn caps_respected() {
        let train: Vec<Example> = (0..50_000).map(|i| ex(i as f32, 0)).collect();
        let val: Vec<Example> = (0..8_000).map(|i| ex(i as f32, 0)).collect();
        let (r, q) = probe_split(&train, &val, &KnnConfig::default(), 0);
        assert_eq!((r.len(), q.len()), (10_000, 5_000));
        let (r, q) = probe_split(&train[..30], &val[..10], &KnnConfig::default(), 0);
        assert_eq!((r.len(), q.len()), (30, 10));
    }

    #[test]
    fn nearest_neighbour_by_angle() {
        let refs = array![[1.0, 0.0], [0.0, 1.0]];
        let queries = array![[10.0, 1.0], [0.2, 3.0], [-1.0, 0.1]];
        let (a, b) = (Label::Class(0), Label::Class(1));
        let score = knn_score(&refs, &[&a, &b], &queries, &[&a, &b, &b], 1);
        // the third query points away from both; nearest by cosine is [0, 1]
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn majority_vote() {
        let refs = array![[1.0, 0.0], [1.0, 0.1], [1.0, -0.1], [0.0, 1.0]];
        let (a, b) = (Label::Class(0), Label::Class(1));
        let queries = array![[2.0, 0.0]];
        assert_eq!(knn_score(&refs, &[&b, &a, &a, &b], &queries, &[&a], 3), 1.0);
        assert_eq!(knn_score(&refs, &[&b, &a, &a, &b], &queries, &[&a], 1), 0.0);
    }
}
