//! Inference rules, the metric suite, and the demographic bias audit.
//!
//! Every [`InferenceMode`] maps pathway scores to a per-label score in
//! (0, 1) that is thresholded at 0.5. The subtraction modes produce a
//! difference of sigmoids in (-1, 1), which is passed through one more
//! sigmoid so that 0.5 still means "difference is zero".

mod audit;
mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EncodedDoc;
use crate::model::{forward_tokens, ModelError, ModelParams, PathwayScores};
use crate::numerics::sigmoid_scalar;

pub use audit::{bias_audit, disparity, label_disparity, AuditSpec, BiasAudit, Disparity};
pub use metrics::{f1_scores, precision_at_k, ranked_labels, roc_auc, Confusion, F1Scores};

/// Decision threshold on final scores.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("undefined metric: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    /// `sigma(z_f)` with `z_f = sigma(z_k+z_d+z_e) - sigma(z_d+z_e)`.
    Deci,
    /// `sigma(z_k+z_d+z_e)`.
    Naive,
    /// `sigma(z_k)`.
    KnowledgeOnly,
    /// `sigma(sigma(z_k+z_e) - sigma(z_e))`.
    WoZd,
    /// `sigma(sigma(z_k+z_d) - sigma(z_d))`.
    WoZe,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 5] = [
        InferenceMode::Deci,
        InferenceMode::WoZd,
        InferenceMode::WoZe,
        InferenceMode::Naive,
        InferenceMode::KnowledgeOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::Deci => "deci",
            InferenceMode::Naive => "naive",
            InferenceMode::KnowledgeOnly => "knowledge-only",
            InferenceMode::WoZd => "wo-zd",
            InferenceMode::WoZe => "wo-ze",
        }
    }
}

impl fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InferenceMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown inference mode {s:?}"))
    }
}

fn subtract(with: f64, without: f64) -> f64 {
    sigmoid_scalar(sigmoid_scalar(with + without) - sigmoid_scalar(without))
}

/// Per-label final score in (0, 1) under `mode`.
pub fn final_scores(scores: &PathwayScores, mode: InferenceMode) -> Vec<f64> {
    let n = scores.n_labels();
    (0..n)
        .map(|l| {
            let (k, d, e) = (scores.z_k[l], scores.z_d[l], scores.z_e[l]);
            match mode {
                InferenceMode::Deci => sigmoid_scalar(scores.z_f[l]),
                InferenceMode::Naive => sigmoid_scalar(k + d + e),
                InferenceMode::KnowledgeOnly => sigmoid_scalar(k),
                InferenceMode::WoZd => subtract(k, e),
                InferenceMode::WoZe => subtract(k, d),
            }
        })
        .collect()
}

pub fn decisions(final_scores: &[f64]) -> Vec<bool> {
    final_scores.iter().map(|&s| s > THRESHOLD).collect()
}

/// Pathway scores for every document, in input order.
pub fn score_documents(
    params: &ModelParams,
    docs: &[EncodedDoc],
) -> Result<Vec<PathwayScores>, ModelError> {
    docs.par_iter()
        .map(|d| forward_tokens(params, &d.full, &d.demographic).map(|(s, _)| s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: InferenceMode,
    pub n_docs: usize,
    pub macro_auc: f64,
    pub micro_auc: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub p_at_k: BTreeMap<usize, f64>,
    pub per_label_f1: Vec<f64>,
    /// Labels left out of macro AUC because they had no positives or no
    /// negatives.
    pub skipped_auc_labels: Vec<usize>,
    pub disparity: Option<Disparity>,
}

/// Metric bundle from final scores and gold labels.
pub fn report_from_scores(
    mode: InferenceMode,
    scores: &[Vec<f64>],
    gold: &[Vec<bool>],
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Argument("no documents to evaluate".into()));
    }
    let preds: Vec<Vec<bool>> = scores.iter().map(|s| decisions(s)).collect();
    let f1 = f1_scores(&preds, gold)?;
    let n_labels = f1.per_label.len();

    let mut aucs = Vec::with_capacity(n_labels);
    let mut skipped = Vec::new();
    let mut column = Vec::with_capacity(scores.len());
    let mut column_gold = Vec::with_capacity(scores.len());
    for l in 0..n_labels {
        column.clear();
        column_gold.clear();
        column.extend(scores.iter().map(|s| s[l]));
        column_gold.extend(gold.iter().map(|g| g[l]));
        match roc_auc(&column, &column_gold) {
            Some(a) => aucs.push(a),
            None => skipped.push(l),
        }
    }
    if aucs.is_empty() {
        return Err(EvalError::Degenerate(
            "every label lacks positives or negatives; AUC is undefined".into(),
        ));
    }
    let macro_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_gold: Vec<bool> = gold.iter().flatten().copied().collect();
    let micro_auc = roc_auc(&flat_scores, &flat_gold)
        .ok_or_else(|| EvalError::Degenerate("pooled cells are single-class".into()))?;

    let mut p_at_k = BTreeMap::new();
    for &k in ks {
        p_at_k.insert(k, precision_at_k(scores, gold, k)?);
    }
    Ok(EvalReport {
        mode,
        n_docs: scores.len(),
        macro_auc,
        micro_auc,
        macro_f1: f1.macro_f1,
        micro_f1: f1.micro_f1,
        p_at_k,
        per_label_f1: f1.per_label,
        skipped_auc_labels: skipped,
        disparity: None,
    })
}

pub fn gold_matrix(docs: &[EncodedDoc]) -> Vec<Vec<bool>> {
    docs.iter().map(EncodedDoc::gold).collect()
}

/// Metric report from precomputed pathway scores.
pub fn evaluate_scores(
    docs: &[EncodedDoc],
    pathway: &[PathwayScores],
    mode: InferenceMode,
    ks: &[usize],
    audit: Option<&AuditSpec>,
) -> Result<EvalReport, EvalError> {
    if docs.len() != pathway.len() {
        return Err(EvalError::Dimension(format!(
            "{} documents vs {} score rows",
            docs.len(),
            pathway.len()
        )));
    }
    let scores: Vec<Vec<f64>> = pathway.iter().map(|s| final_scores(s, mode)).collect();
    let mut report = report_from_scores(mode, &scores, &gold_matrix(docs), ks)?;
    if let Some(spec) = audit {
        report.disparity = Some(disparity(docs, pathway, spec, mode)?);
    }
    Ok(report)
}

/// Runs the model on `docs` and reports metrics for one inference mode.
pub fn evaluate(
    docs: &[EncodedDoc],
    params: &ModelParams,
    mode: InferenceMode,
    ks: &[usize],
) -> Result<EvalReport, EvalError> {
    evaluate_with_audit(docs, params, mode, ks, None)
}

pub fn evaluate_with_audit(
    docs: &[EncodedDoc],
    params: &ModelParams,
    mode: InferenceMode,
    ks: &[usize],
    audit: Option<&AuditSpec>,
) -> Result<EvalReport, EvalError> {
    if docs.is_empty() {
        return Err(EvalError::Argument("no documents to evaluate".into()));
    }
    let pathway = score_documents(params, docs)?;
    evaluate_scores(docs, &pathway, mode, ks, audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Gender;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scores(k: f64, d: f64, e: f64) -> PathwayScores {
        PathwayScores::new(vec![k], vec![d], vec![e])
    }

    #[test]
    fn final_score_reference_cases() {
        let zero = scores(0.0, 1.7, -0.4);
        assert_eq!(final_scores(&zero, InferenceMode::Deci), vec![0.5]);
        assert_eq!(
            final_scores(&scores(0.0, 0.0, 0.0), InferenceMode::Naive),
            vec![0.5]
        );
        let s = scores(1.2, 0.0, -0.7);
        assert_eq!(
            final_scores(&s, InferenceMode::WoZd),
            final_scores(&s, InferenceMode::Deci)
        );
        assert_eq!(
            final_scores(&scores(0.9, 0.0, 0.0), InferenceMode::KnowledgeOnly),
            vec![sigmoid_scalar(0.9)]
        );
        let s = scores(-0.3, 0.8, 2.0);
        let expect = sigmoid_scalar(sigmoid_scalar(0.5) - sigmoid_scalar(0.8));
        assert_eq!(final_scores(&s, InferenceMode::WoZe), vec![expect]);
    }

    #[test]
    fn subtraction_modes_share_knowledge_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let s = scores(
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
                rng.random_range(-6.0..6.0),
            );
            let k = decisions(&final_scores(&s, InferenceMode::KnowledgeOnly));
            for mode in [
                InferenceMode::Deci,
                InferenceMode::WoZd,
                InferenceMode::WoZe,
            ] {
                assert_eq!(decisions(&final_scores(&s, mode)), k);
            }
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in InferenceMode::ALL {
            assert_eq!(m.as_str().parse::<InferenceMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("fancy".parse::<InferenceMode>().is_err());
    }

    #[test]
    fn perfect_scores_give_perfect_report() {
        let gold = vec![
            vec![true, false, false],
            vec![false, true, true],
            vec![true, true, false],
        ];
        let scores: Vec<Vec<f64>> = gold
            .iter()
            .map(|r| r.iter().map(|&g| if g { 0.9 } else { 0.1 }).collect())
            .collect();
        let r = report_from_scores(InferenceMode::Deci, &scores, &gold, &[1]).unwrap();
        assert_eq!(
            (r.macro_auc, r.micro_auc, r.macro_f1, r.micro_f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(r.p_at_k[&1], 1.0);
        assert!(r.skipped_auc_labels.is_empty());
    }

    #[test]
    fn degenerate_labels_are_skipped_or_rejected() {
        let gold = vec![vec![true, true], vec![false, true]];
        let scores = vec![vec![0.8, 0.4], vec![0.2, 0.6]];
        let r = report_from_scores(InferenceMode::Deci, &scores, &gold, &[]).unwrap();
        assert_eq!(r.skipped_auc_labels, vec![1]);
        assert_eq!(r.macro_auc, 1.0);

        let all_pos = vec![vec![true, true], vec![true, true]];
        assert!(matches!(
            report_from_scores(InferenceMode::Deci, &scores, &all_pos, &[]),
            Err(EvalError::Degenerate(_))
        ));
        assert!(report_from_scores(InferenceMode::Deci, &[], &[], &[]).is_err());
    }

    #[test]
    fn random_scores_give_chance_auc() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gold: Vec<Vec<bool>> = (0..400)
                .map(|_| (0..10).map(|_| rng.random_bool(0.5)).collect())
                .collect();
            let scores: Vec<Vec<f64>> = (0..400)
                .map(|_| (0..10).map(|_| rng.random::<f64>()).collect())
                .collect();
            let r = report_from_scores(InferenceMode::Deci, &scores, &gold, &[5]).unwrap();
            assert!((0.45..=0.55).contains(&r.micro_auc), "{}", r.micro_auc);
        }
    }

    fn encoded(id: usize, full: Vec<u32>, target: Vec<f64>) -> EncodedDoc {
        EncodedDoc {
            id: format!("d{id}"),
            age: 40,
            gender: Gender::Male,
            demographic: full[..2].to_vec(),
            full,
            target,
        }
    }

    #[test]
    fn evaluate_is_order_invariant() {
        use crate::model::{GateMode, ModelConfig};
        let cfg = ModelConfig {
            vocab_size: 20,
            embed_dim: 6,
            hidden_dim: 5,
            n_labels: 3,
            n_experts: 2,
            gate_mode: GateMode::PerLabel,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams::random(cfg, &mut rng, 1.0).unwrap();
        let docs: Vec<EncodedDoc> = (0..30)
            .map(|i| {
                let mut full = vec![2 + (i % 4) as u32, 6 + (i % 2) as u32];
                full.extend((0..5).map(|_| rng.random_range(8..20u32)));
                let target = (0..3).map(|_| f64::from(rng.random_bool(0.4))).collect();
                encoded(i, full, target)
            })
            .collect();
        let a = evaluate(&docs, &params, InferenceMode::Deci, &[1, 3]).unwrap();
        let mut rev = docs.clone();
        rev.reverse();
        let b = evaluate(&rev, &params, InferenceMode::Deci, &[1, 3]).unwrap();
        assert_eq!(a, b);
        assert!(evaluate(&[], &params, InferenceMode::Deci, &[1]).is_err());
    }
}
