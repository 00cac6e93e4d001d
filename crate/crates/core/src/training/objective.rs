//! The joint objective `L_K + alpha * L_D + beta * L_E` and its gradient.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::corpus::EncodedDoc;
use crate::evaluation::{decisions, final_scores, Confusion, InferenceMode};
use crate::model::{
    backward, forward_tokens, DocGradient, ModelParams, PathwayGrads, PathwayScores,
};
use crate::numerics::{bce_logit_grad, bce_term, sigmoid};

/// Sigmoid of each pathway: `(L_K, L_D, L_E)`.
pub fn pathway_predictions(scores: &PathwayScores) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        sigmoid(&scores.z_k),
        sigmoid(&scores.z_d),
        sigmoid(&scores.z_e),
    )
}

/// Batch-mean loss terms. `total = k + alpha * d + beta * e`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub k: f64,
    pub d: f64,
    pub e: f64,
}

impl LossBreakdown {
    fn combine(k: f64, d: f64, e: f64, alpha: f64, beta: f64) -> Self {
        Self {
            total: k + alpha * d + beta * e,
            k,
            d,
            e,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.k.is_finite() && self.d.is_finite() && self.e.is_finite()
    }
}

fn mean_bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(&p, &y)| bce_term(p, y)).sum::<f64>() / y.len() as f64
}

/// Per-document loss terms.
pub fn document_loss(
    scores: &PathwayScores,
    target: &[f64],
    alpha: f64,
    beta: f64,
) -> LossBreakdown {
    let (lk, ld, le) = pathway_predictions(scores);
    LossBreakdown::combine(
        mean_bce(&lk, target),
        mean_bce(&ld, target),
        mean_bce(&le, target),
        alpha,
        beta,
    )
}

fn check_batch(batch: &[EncodedDoc], params: &ModelParams) -> Result<(), TrainingError> {
    if batch.is_empty() {
        return Err(TrainingError::Argument("empty batch".into()));
    }
    let n = params.n_labels();
    if let Some(d) = batch.iter().find(|d| d.target.len() != n) {
        return Err(TrainingError::Argument(format!(
            "document {} has {} targets, model has {n} labels",
            d.id,
            d.target.len()
        )));
    }
    Ok(())
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let mut acc = LossBreakdown::default();
    for p in parts {
        acc.total += p.total;
        acc.k += p.k;
        acc.d += p.d;
        acc.e += p.e;
    }
    LossBreakdown {
        total: acc.total / n,
        k: acc.k / n,
        d: acc.d / n,
        e: acc.e / n,
    }
}

/// Batch-mean loss terms without gradients.
pub fn batch_loss(
    batch: &[EncodedDoc],
    params: &ModelParams,
    alpha: f64,
    beta: f64,
) -> Result<LossBreakdown, TrainingError> {
    check_batch(batch, params)?;
    let parts: Vec<LossBreakdown> = batch
        .par_iter()
        .map(|d| {
            let (s, _) = forward_tokens(params, &d.full, &d.demographic)?;
            Ok(document_loss(&s, &d.target, alpha, beta))
        })
        .collect::<Result<_, TrainingError>>()?;
    Ok(mean_breakdown(&parts))
}

/// Mean over the batch of `BCE(L_K) + alpha BCE(L_D) + beta BCE(L_E)`.
pub fn total_loss(
    batch: &[EncodedDoc],
    params: &ModelParams,
    alpha: f64,
    beta: f64,
) -> Result<f64, TrainingError> {
    batch_loss(batch, params, alpha, beta).map(|b| b.total)
}

fn logit_grads(p: &[f64], y: &[f64], weight: f64) -> Vec<f64> {
    p.iter()
        .zip(y)
        .map(|(&p, &y)| weight * bce_logit_grad(p, y))
        .collect()
}

/// Loss terms and the dense gradient of the batch-mean total loss.
///
/// Documents are processed in parallel; their gradients are summed in batch
/// order, so the result does not depend on thread scheduling.
pub fn loss_and_gradient(
    batch: &[EncodedDoc],
    params: &ModelParams,
    alpha: f64,
    beta: f64,
    stop_aux_gradient: bool,
) -> Result<(LossBreakdown, ModelParams), TrainingError> {
    let mut grad = params.zeros_like();
    let stats = accumulate_gradient(batch, params, alpha, beta, stop_aux_gradient, &mut grad)?;
    Ok((stats.loss, grad))
}

/// Loss terms plus pooled confusion counts of the DECI decisions made
/// before the update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss: LossBreakdown,
    pub confusion: Confusion,
}

fn confusion_of(scores: &PathwayScores, target: &[f64]) -> Confusion {
    let mut c = Confusion::default();
    for (p, &y) in decisions(&final_scores(scores, InferenceMode::Deci))
        .into_iter()
        .zip(target)
    {
        match (p, y > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// As [`loss_and_gradient`], writing into a caller-owned buffer which is
/// overwritten.
pub fn accumulate_gradient(
    batch: &[EncodedDoc],
    params: &ModelParams,
    alpha: f64,
    beta: f64,
    stop_aux_gradient: bool,
    grad: &mut ModelParams,
) -> Result<BatchStats, TrainingError> {
    check_batch(batch, params)?;
    // each label and each document carry weight 1 / (N_L * B)
    let scale = 1.0 / (params.n_labels() * batch.len()) as f64;
    let parts: Vec<(LossBreakdown, Confusion, DocGradient)> = batch
        .par_iter()
        .map(|d| {
            let (s, trace) = forward_tokens(params, &d.full, &d.demographic)?;
            let loss = document_loss(&s, &d.target, alpha, beta);
            let confusion = confusion_of(&s, &d.target);
            let (lk, ld, le) = pathway_predictions(&s);
            let gk = logit_grads(&lk, &d.target, scale);
            let gd = logit_grads(&ld, &d.target, alpha * scale);
            let ge = logit_grads(&le, &d.target, beta * scale);
            let g = backward(
                params,
                &trace,
                PathwayGrads {
                    z_k: &gk,
                    z_d: &gd,
                    z_e: &ge,
                },
                stop_aux_gradient,
            );
            Ok((loss, confusion, g))
        })
        .collect::<Result<_, TrainingError>>()?;

    for seg in grad.segments_mut() {
        seg.fill(0.0);
    }
    let mut losses = Vec::with_capacity(parts.len());
    let mut confusion = Confusion::default();
    for (loss, c, g) in &parts {
        g.accumulate_into(grad);
        losses.push(*loss);
        confusion.tp += c.tp;
        confusion.fp += c.fp;
        confusion.fn_ += c.fn_;
    }
    Ok(BatchStats {
        loss: mean_breakdown(&losses),
        confusion,
    })
}
