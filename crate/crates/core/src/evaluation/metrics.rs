//! Ranking and classification metrics over documents x labels.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Area under the ROC curve as the Mann-Whitney statistic
/// `P(s+ > s-) + 0.5 P(s+ = s-)`, via average ranks.
///
/// `None` when the labels are all positive or all negative.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(
        scores.len(),
        labels.len(),
        "scores and labels differ in length"
    );
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg_rank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i]).count();
        pos_rank_sum += avg_rank * pos_in_group as f64;
        start = end;
    }
    let n_pos = n_pos as f64;
    let u = pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0;
    Some(u / (n_pos * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_label: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// `2TP / (2TP + FP + FN)`, zero when there is nothing to score.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn check_shapes<T, U>(a: &[Vec<T>], b: &[Vec<U>]) -> Result<usize, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Dimension(format!(
            "{} prediction rows vs {} gold rows",
            a.len(),
            b.len()
        )));
    }
    let width = b.first().map_or(0, Vec::len);
    if a.iter().any(|r| r.len() != width) || b.iter().any(|r| r.len() != width) {
        return Err(EvalError::Dimension("rows differ in label count".into()));
    }
    Ok(width)
}

/// Micro F1 pools TP/FP/FN over every cell; macro F1 averages per-label F1
/// over all labels, a label with no gold positives and no predictions
/// counting as zero.
pub fn f1_scores(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> Result<F1Scores, EvalError> {
    let n_labels = check_shapes(pred, gold)?;
    let mut per = vec![Confusion::default(); n_labels];
    for (p_row, g_row) in pred.iter().zip(gold) {
        for (c, (&p, &g)) in per.iter_mut().zip(p_row.iter().zip(g_row)) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let pooled = per.iter().fold(Confusion::default(), |acc, c| Confusion {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let per_label: Vec<f64> = per.iter().map(Confusion::f1).collect();
    let macro_f1 = if n_labels == 0 {
        0.0
    } else {
        per_label.iter().sum::<f64>() / n_labels as f64
    };
    Ok(F1Scores {
        macro_f1,
        micro_f1: pooled.f1(),
        per_label,
    })
}

/// Label indices ordered by descending score, ties by ascending index.
pub fn ranked_labels(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps lower indices first among equal scores
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mean over documents of `|top-k ∩ gold| / k`.
pub fn precision_at_k(scores: &[Vec<f64>], gold: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    let n_labels = check_shapes(scores, gold)?;
    if k == 0 {
        return Err(EvalError::Argument("k must be positive".into()));
    }
    if k > n_labels {
        return Err(EvalError::Argument(format!(
            "k = {k} exceeds the {n_labels} labels"
        )));
    }
    if scores.is_empty() {
        return Err(EvalError::Argument("no documents".into()));
    }
    // integer hit counts keep the mean independent of document order
    let hits: usize = scores
        .iter()
        .zip(gold)
        .map(|(s, g)| ranked_labels(s)[..k].iter().filter(|&&l| g[l]).count())
        .sum();
    Ok(hits as f64 / (k * scores.len()) as f64)
}
