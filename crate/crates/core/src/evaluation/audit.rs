//! False-positive-rate disparity on the confounded label.
//!
//! Group A holds the confound attribute, group B does not. Two operating
//! points are reported:
//!
//! * matched rate (`gap`): the `n` highest-scored documents are flagged,
//!   `n` being the number of gold positives for the label. Because DECI,
//!   WO_ZD and WO_ZE make the same 0.5-threshold decisions as
//!   KNOWLEDGE_ONLY, this is the point at which their rankings differ.
//! * fixed threshold (`threshold_gap`): score > 0.5.

use serde::{Deserialize, Serialize};

use super::{final_scores, score_documents, EvalError, InferenceMode, THRESHOLD};
use crate::corpus::{ConfoundAttribute, EncodedDoc};
use crate::model::{ModelParams, PathwayScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub label: usize,
    pub attribute: ConfoundAttribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disparity {
    pub label: usize,
    pub mode: InferenceMode,
    pub group_a_fpr: Option<f64>,
    pub group_b_fpr: Option<f64>,
    /// `|FPR_A - FPR_B|` at the matched-rate point. `None` when either
    /// group has no negatives.
    pub gap: Option<f64>,
    /// Lowest flagged score at the matched-rate point; `None` when the label
    /// has no gold positives and nothing is flagged.
    pub cutoff: Option<f64>,
    pub threshold_group_a_fpr: Option<f64>,
    pub threshold_group_b_fpr: Option<f64>,
    pub threshold_gap: Option<f64>,
    pub group_a_negatives: usize,
    pub group_b_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    pub deci: Disparity,
    pub naive: Disparity,
}

fn fpr(flags: &[bool], gold: &[bool], in_group: &[bool], want: bool) -> (Option<f64>, usize) {
    let mut neg = 0usize;
    let mut fp = 0usize;
    for ((&f, &g), &a) in flags.iter().zip(gold).zip(in_group) {
        if a == want && !g {
            neg += 1;
            fp += usize::from(f);
        }
    }
    let rate = (neg > 0).then(|| fp as f64 / neg as f64);
    (rate, neg)
}

fn abs_gap(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? - b?).abs())
}

/// Score at or above which the top `n` documents lie.
fn matched_cutoff(scores: &[f64], n: usize) -> Option<f64> {
    if n == 0 || scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Some(sorted[n.min(sorted.len()) - 1])
}

/// Disparity for one label's scores. The three slices are indexed by
/// document.
pub fn label_disparity(
    scores: &[f64],
    gold: &[bool],
    in_group_a: &[bool],
    label: usize,
    mode: InferenceMode,
) -> Disparity {
    let n_pos = gold.iter().filter(|&&g| g).count();
    let cutoff = matched_cutoff(scores, n_pos);
    let matched: Vec<bool> = scores
        .iter()
        .map(|&s| cutoff.is_some_and(|c| s >= c))
        .collect();
    let fixed: Vec<bool> = scores.iter().map(|&s| s > THRESHOLD).collect();

    let (a, a_neg) = fpr(&matched, gold, in_group_a, true);
    let (b, b_neg) = fpr(&matched, gold, in_group_a, false);
    let (ta, _) = fpr(&fixed, gold, in_group_a, true);
    let (tb, _) = fpr(&fixed, gold, in_group_a, false);
    Disparity {
        label,
        mode,
        group_a_fpr: a,
        group_b_fpr: b,
        gap: abs_gap(a, b),
        cutoff,
        threshold_group_a_fpr: ta,
        threshold_group_b_fpr: tb,
        threshold_gap: abs_gap(ta, tb),
        group_a_negatives: a_neg,
        group_b_negatives: b_neg,
    }
}

/// Disparity of `mode` on precomputed pathway scores.
pub fn disparity(
    docs: &[EncodedDoc],
    pathway: &[PathwayScores],
    spec: &AuditSpec,
    mode: InferenceMode,
) -> Result<Disparity, EvalError> {
    if docs.len() != pathway.len() {
        return Err(EvalError::Dimension(format!(
            "{} documents vs {} score rows",
            docs.len(),
            pathway.len()
        )));
    }
    if let Some(d) = docs.iter().find(|d| spec.label >= d.target.len()) {
        return Err(EvalError::Argument(format!(
            "audit label {} outside the {} labels of document {}",
            spec.label,
            d.target.len(),
            d.id
        )));
    }
    let scores: Vec<f64> = pathway
        .iter()
        .map(|s| final_scores(s, mode)[spec.label])
        .collect();
    let gold: Vec<bool> = docs.iter().map(|d| d.target[spec.label] > 0.5).collect();
    let group: Vec<bool> = docs
        .iter()
        .map(|d| spec.attribute.holds(d.age, d.gender))
        .collect();
    Ok(label_disparity(&scores, &gold, &group, spec.label, mode))
}

/// DECI and NAIVE disparity on the confounded label.
pub fn bias_audit(
    docs: &[EncodedDoc],
    params: &ModelParams,
    spec: &AuditSpec,
) -> Result<BiasAudit, EvalError> {
    let pathway = score_documents(params, docs)?;
    Ok(BiasAudit {
        deci: disparity(docs, &pathway, spec, InferenceMode::Deci)?,
        naive: disparity(docs, &pathway, spec, InferenceMode::Naive)?,
    })
}
