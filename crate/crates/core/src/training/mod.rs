//! Joint training of the three pathways with Adam, best-dev retention and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod objective;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EncodedDoc;
use crate::evaluation::{
    decisions, f1_scores, final_scores, gold_matrix, score_documents, Confusion, InferenceMode,
};
use crate::model::{ModelError, ModelParams};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use objective::{
    accumulate_gradient, batch_loss, document_loss, loss_and_gradient, pathway_predictions,
    total_loss, BatchStats, LossBreakdown,
};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: Option<f64>,
    /// Keep the demographic and uniform-expert losses from updating the
    /// encoder, attention and embeddings.
    pub stop_aux_gradient: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 8,
            seed: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: Some(5.0),
            stop_aux_gradient: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    /// Micro F1 of DECI decisions.
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches, weighted by batch size.
    pub train_loss: f64,
    pub train_loss_k: f64,
    pub train_loss_d: f64,
    pub train_loss_e: f64,
    /// Micro F1 of DECI decisions on each training batch, taken before that
    /// batch's update and pooled over the epoch.
    pub train_micro_f1: f64,
    pub dev_metrics: Option<DevMetrics>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best dev micro F1 (ties: lower dev loss, then the
    /// earlier epoch); the final parameters when there is no dev set.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// DECI-mode F1 and the training objective on `docs`.
pub fn dev_metrics(
    docs: &[EncodedDoc],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<DevMetrics, TrainingError> {
    let scores = score_documents(params, docs)?;
    let preds: Vec<Vec<bool>> = scores
        .iter()
        .map(|s| decisions(&final_scores(s, InferenceMode::Deci)))
        .collect();
    let f1 = f1_scores(&preds, &gold_matrix(docs))
        .map_err(|e| TrainingError::Argument(e.to_string()))?;
    let mut loss = 0.0;
    for (s, d) in scores.iter().zip(docs) {
        loss += document_loss(s, &d.target, cfg.alpha, cfg.beta).total;
    }
    Ok(DevMetrics {
        micro_f1: f1.micro_f1,
        macro_f1: f1.macro_f1,
        loss: loss / docs.len() as f64,
    })
}

fn better(candidate: &DevMetrics, best: &DevMetrics) -> bool {
    candidate.micro_f1 > best.micro_f1
        || (candidate.micro_f1 == best.micro_f1 && candidate.loss < best.loss)
}

pub fn train(
    train_docs: &[EncodedDoc],
    dev_docs: &[EncodedDoc],
    params: ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainingError> {
    train_with_observer(train_docs, dev_docs, params, cfg, |_| Ok(()))
}

/// Mini-batch Adam on the joint objective. `on_epoch` sees every record as
/// soon as it is complete.
pub fn train_with_observer<F>(
    train_docs: &[EncodedDoc],
    dev_docs: &[EncodedDoc],
    mut params: ModelParams,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome, TrainingError>
where
    F: FnMut(&EpochRecord) -> Result<(), TrainingError>,
{
    cfg.validate()?;
    params.validate()?;
    if train_docs.is_empty() {
        return Err(TrainingError::Argument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut grad = params.zeros_like();
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut batch: Vec<EncodedDoc> = Vec::with_capacity(cfg.batch_size);

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(DevMetrics, usize, ModelParams)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut confusion = Confusion::default();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_docs[i].clone()));
            let stats = accumulate_gradient(
                &batch,
                &params,
                cfg.alpha,
                cfg.beta,
                cfg.stop_aux_gradient,
                &mut grad,
            )?;
            let loss = stats.loss;
            if !loss.is_finite() {
                return Err(TrainingError::NonFinite {
                    what: "loss",
                    epoch,
                    batch: b,
                });
            }
            let norm = match cfg.grad_clip_norm {
                Some(c) => clip_global_norm(&mut grad, c),
                None => grad.squared_norm().sqrt(),
            };
            if !norm.is_finite() {
                return Err(TrainingError::NonFinite {
                    what: "gradient",
                    epoch,
                    batch: b,
                });
            }
            opt.step(&mut params, &grad, cfg.learning_rate);
            let n = chunk.len() as f64;
            sums.total += loss.total * n;
            sums.k += loss.k * n;
            sums.d += loss.d * n;
            sums.e += loss.e * n;
            confusion.tp += stats.confusion.tp;
            confusion.fp += stats.confusion.fp;
            confusion.fn_ += stats.confusion.fn_;
        }
        let n = train_docs.len() as f64;
        let dev = if dev_docs.is_empty() {
            None
        } else {
            Some(dev_metrics(dev_docs, &params, cfg)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: sums.total / n,
            train_loss_k: sums.k / n,
            train_loss_d: sums.d / n,
            train_loss_e: sums.e / n,
            train_micro_f1: confusion.f1(),
            dev_metrics: dev.clone(),
        };
        on_epoch(&record)?;
        log.push(record);
        if let Some(m) = dev {
            if best.as_ref().is_none_or(|(b, _, _)| better(&m, b)) {
                best = Some((m, epoch, params.clone()));
            }
        }
    }

    Ok(match best {
        Some((_, best_epoch, params)) => TrainOutcome {
            params,
            best_epoch,
            log,
        },
        None => TrainOutcome {
            params,
            best_epoch: cfg.epochs,
            log,
        },
    })
}
