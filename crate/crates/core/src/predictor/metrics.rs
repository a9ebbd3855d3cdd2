use ndarray::{Array2, ArrayView1, Axis};

use crate::stream::{Label, TaskKind};

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose highest score is the labelled class.
pub fn accuracy(scores: &Array2<f64>, labels: &[Label]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = scores
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, l)| matches!(l, Label::Class(c) if argmax(*row) == *c as usize))
        .count();
    hits as f64 / labels.len() as f64
}

/// Continuous average precision of one class over the full score ranking.
/// Items with equal scores share a rank. Returns `None` without positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let total_pos = positives.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            group_pos += positives[order[j]] as usize;
            j += 1;
        }
        seen += j - i;
        tp += group_pos;
        ap += group_pos as f64 * tp as f64 / seen as f64;
        i = j;
    }
    Some(ap / total_pos as f64)
}

/// Mean of per-class AP over classes with at least one positive; 0 when no
/// class has a positive.
pub fn mean_average_precision(scores: &Array2<f64>, labels: &[Label]) -> f64 {
    let mut aps = Vec::new();
    for (c, col) in scores.axis_iter(Axis(1)).enumerate() {
        let pos: Vec<bool> =
            labels.iter().map(|l| matches!(l, Label::Multi(v) if v.get(c).copied().unwrap_or(false))).collect();
        if let Some(ap) = average_precision(&col.to_vec(), &pos) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Task error: `1 - accuracy` for single-label tasks, `1 - mAP` for
/// multi-label tasks.
pub fn task_error(scores: &Array2<f64>, labels: &[Label], kind: TaskKind) -> f64 {
    let e = match kind {
        TaskKind::SingleLabel => 1.0 - accuracy(scores, labels),
        TaskKind::MultiLabel => 1.0 - mean_average_precision(scores, labels),
    };
    e.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Precision at each positive, counting every item scored at least as
    /// high as it.
    fn pairwise_ap(scores: &[f64], pos: &[bool]) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for i in 0..scores.len() {
            if !pos[i] {
                continue;
            }
            let above = (0..scores.len()).filter(|&j| scores[j] >= scores[i]).count();
            let above_pos = (0..scores.len()).filter(|&j| pos[j] && scores[j] >= scores[i]).count();
            total += above_pos as f64 / above as f64;
            n += 1;
        }
        (n > 0).then(|| total / n as f64)
    }

    #[test]
    fn map_worked_example() {
        let scores = array![[0.9, 0.8], [0.2, 0.6], [0.7, 0.3]];
        let labels =
            vec![Label::Multi(vec![true, false]), Label::Multi(vec![false, true]), Label::Multi(vec![true, false])];
        assert_eq!(average_precision(&[0.9, 0.2, 0.7], &[true, false, true]), Some(1.0));
        assert_eq!(average_precision(&[0.8, 0.6, 0.3], &[false, true, false]), Some(0.5));
        assert_eq!(task_error(&scores, &labels, TaskKind::MultiLabel), 0.25);
    }

    #[test]
    fn single_label_counts() {
        let scores = array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]];
        let labels: Vec<Label> = [0, 1, 0, 0].iter().map(|&c| Label::Class(c)).collect();
        assert_eq!(task_error(&scores, &labels, TaskKind::SingleLabel), 0.25);
        let all: Vec<Label> = [0, 1, 0, 1].iter().map(|&c| Label::Class(c)).collect();
        assert_eq!(task_error(&scores, &all, TaskKind::SingleLabel), 0.0);
    }

    #[test]
    fn ties_share_rank() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(average_precision(&[0.1, 0.2], &[false, false]), None);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1000.0, -1000.0, 3.0], [0.0, 0.0, 0.0]]);
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ap_matches_pairwise(items in prop::collection::vec((0u8..5, any::<bool>()), 1..10)) {
            let scores: Vec<f64> = items.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let pos: Vec<bool> = items.iter().map(|(_, p)| *p).collect();
            match (average_precision(&scores, &pos), pairwise_ap(&scores, &pos)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "{other:?}"),
            }
        }
    }
}
