//! Hand-derived reverse pass for the fixed architecture.
//!
//! Given d(loss)/d(z) for each pathway, [`backward`] returns the gradient of
//! every parameter touched by one document. Embedding gradients are kept
//! sparse (only rows of tokens that occur), everything else is dense.

use std::collections::HashMap;

use super::forward::{pooled_repr, BranchTrace, ForwardTrace};
use super::{GateMode, ModelParams};
use crate::corpus::TokenId;
use crate::numerics::{axpy, dot, softmax_backward, Matrix};

/// Upstream gradients with respect to the three pathway scores.
#[derive(Debug, Clone, Copy)]
pub struct PathwayGrads<'a> {
    pub z_k: &'a [f64],
    pub z_d: &'a [f64],
    pub z_e: &'a [f64],
}

/// Gradient contribution of a single document.
#[derive(Debug, Clone)]
pub struct DocGradient {
    /// Same shapes as the model except `embedding`, which is empty.
    heads: ModelParams,
    rows: Vec<(TokenId, Vec<f64>)>,
    row_index: HashMap<TokenId, usize>,
}

impl DocGradient {
    fn new(params: &ModelParams) -> Self {
        let mut cfg = params.config;
        cfg.vocab_size = 0;
        Self {
            heads: ModelParams::zeros(cfg),
            rows: Vec::new(),
            row_index: HashMap::new(),
        }
    }

    /// Adds this gradient into a dense buffer shaped like the model. Rows are
    /// added in first-occurrence order, so the result is deterministic.
    pub fn accumulate_into(&self, dense: &mut ModelParams) {
        for (id, row) in &self.rows {
            axpy(1.0, row, dense.embedding.row_mut(*id as usize));
        }
        let mut dst = dense.segments_mut().into_iter();
        let mut src = self.heads.segments().into_iter();
        // skip embedding
        dst.next();
        src.next();
        for (d, s) in dst.zip(src) {
            axpy(1.0, s, d);
        }
    }

    /// Dense copy, mainly for tests.
    pub fn to_dense(&self, params: &ModelParams) -> ModelParams {
        let mut dense = params.zeros_like();
        self.accumulate_into(&mut dense);
        dense
    }
}

/// Reverse pass for one document.
///
/// With `stop_aux_gradient`, the demographic-pathway and uniform-expert
/// gradients update only the expert and gate parameters and do not reach the
/// attention, encoder or embeddings.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grads: PathwayGrads<'_>,
    stop_aux_gradient: bool,
) -> DocGradient {
    let mut out = DocGradient::new(params);
    branch_backward(
        params,
        &trace.knowledge,
        grads.z_k,
        Some(grads.z_e),
        true,
        !stop_aux_gradient,
        &mut out,
    );
    branch_backward(
        params,
        &trace.demographic,
        grads.z_d,
        None,
        !stop_aux_gradient,
        false,
        &mut out,
    );
    out
}

fn branch_backward(
    params: &ModelParams,
    br: &BranchTrace,
    dz_gated: &[f64],
    dz_uniform: Option<&[f64]>,
    propagate_gated: bool,
    propagate_uniform: bool,
    out: &mut DocGradient,
) {
    let n_labels = params.n_labels();
    let n_experts = params.n_experts();
    let dh_dim = params.hidden_dim();
    let g = &mut out.heads;

    // Expert scores and gate outputs.
    let mut ds_gated = Matrix::zeros(n_experts, n_labels);
    let mut d_gate = Matrix::zeros(n_labels, n_experts);
    for (l, &dz) in dz_gated.iter().enumerate() {
        for i in 0..n_experts {
            ds_gated.set(i, l, dz * br.gates.get(l, i));
            d_gate.set(l, i, dz * br.expert_scores.get(i, l));
        }
    }
    let mut ds_uniform = Matrix::zeros(n_experts, n_labels);
    if let Some(dz) = dz_uniform {
        let w = 1.0 / n_experts as f64;
        for i in 0..n_experts {
            for (l, &d) in dz.iter().enumerate() {
                ds_uniform.set(i, l, d * w);
            }
        }
    }

    let propagate = propagate_gated || (dz_uniform.is_some() && propagate_uniform);
    let mut dh = Matrix::zeros(n_labels, dh_dim);

    for (i, expert) in params.experts.iter().enumerate() {
        let ge = &mut g.experts[i];
        for l in 0..n_labels {
            let dg = ds_gated.get(i, l);
            let du = ds_uniform.get(i, l);
            let total = dg + du;
            ge.bias[l] += total;
            axpy(total, br.repr.row(l), ge.weights.row_mut(l));
            let to_h = match (propagate_gated, propagate_uniform) {
                (true, true) => total,
                (true, false) => dg,
                (false, true) => du,
                (false, false) => 0.0,
            };
            if to_h != 0.0 {
                axpy(to_h, expert.weights.row(l), dh.row_mut(l));
            }
        }
    }

    let mut dlogit = vec![0.0; n_experts];
    match params.config.gate_mode {
        GateMode::PerLabel => {
            for l in 0..n_labels {
                softmax_backward(br.gates.row(l), d_gate.row(l), &mut dlogit);
                let h = br.repr.row(l);
                for (j, &hj) in h.iter().enumerate() {
                    axpy(hj, &dlogit, g.gate_w.row_mut(j));
                }
                axpy(1.0, &dlogit, &mut g.gate_bias);
                if propagate_gated {
                    let dh_l = dh.row_mut(l);
                    for (j, v) in dh_l.iter_mut().enumerate() {
                        *v += dot(params.gate_w.row(j), &dlogit);
                    }
                }
            }
        }
        GateMode::PerDocument => {
            let mut d_shared = vec![0.0; n_experts];
            for l in 0..n_labels {
                axpy(1.0, d_gate.row(l), &mut d_shared);
            }
            softmax_backward(br.gates.row(0), &d_shared, &mut dlogit);
            let pooled = pooled_repr(&br.repr);
            for (j, &pj) in pooled.iter().enumerate() {
                axpy(pj, &dlogit, g.gate_w.row_mut(j));
            }
            axpy(1.0, &dlogit, &mut g.gate_bias);
            if propagate_gated {
                let inv = 1.0 / n_labels as f64;
                let d_pooled: Vec<f64> = (0..dh_dim)
                    .map(|j| dot(params.gate_w.row(j), &dlogit) * inv)
                    .collect();
                for l in 0..n_labels {
                    axpy(1.0, &d_pooled, dh.row_mut(l));
                }
            }
        }
    }

    if !propagate || br.tokens.is_empty() {
        return;
    }

    // Attention.
    let n = br.tokens.len();
    let mut de = Matrix::zeros(n, dh_dim);
    let mut da = vec![0.0; n];
    let mut dscore = vec![0.0; n];
    for l in 0..n_labels {
        let dh_l = dh.row(l);
        let a = br.attention.row(l);
        for (pos, v) in da.iter_mut().enumerate() {
            *v = dot(dh_l, br.encoded.row(pos));
        }
        softmax_backward(a, &da, &mut dscore);
        let q = params.label_queries.row(l);
        for pos in 0..n {
            axpy(dscore[pos], br.encoded.row(pos), g.label_queries.row_mut(l));
            let de_n = de.row_mut(pos);
            axpy(a[pos], dh_l, de_n);
            axpy(dscore[pos], q, de_n);
        }
    }

    // Encoder: tanh, projection, embedding lookup.
    let embed_dim = params.config.embed_dim;
    let mut dpre = vec![0.0; dh_dim];
    for (pos, &tok) in br.tokens.iter().enumerate() {
        for ((d, &e), &up) in dpre.iter_mut().zip(br.encoded.row(pos)).zip(de.row(pos)) {
            *d = up * (1.0 - e * e);
        }
        axpy(1.0, &dpre, &mut g.enc_bias);
        let u = params.embedding.row(tok as usize);
        for (k, &uk) in u.iter().enumerate() {
            axpy(uk, &dpre, g.enc_proj.row_mut(k));
        }
        let du: Vec<f64> = (0..embed_dim)
            .map(|k| dot(params.enc_proj.row(k), &dpre))
            .collect();
        let idx = *out.row_index.entry(tok).or_insert_with(|| {
            out.rows.push((tok, vec![0.0; embed_dim]));
            out.rows.len() - 1
        });
        axpy(1.0, &du, &mut out.rows[idx].1);
    }
}
