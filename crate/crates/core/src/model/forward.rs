use super::{GateMode, ModelError, ModelParams};
use crate::corpus::{Document, InputMode, TokenId, Vocabulary, PAD};
use crate::numerics::{axpy, dot, sigmoid_scalar, softmax_in_place, Matrix};

/// Encoder output over a full (possibly padded) token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    /// `N x hidden_dim`; PAD rows are zero.
    pub rows: Matrix,
    /// `true` for real tokens, `false` for PAD.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    /// Label-specific representation, `n_labels x hidden_dim`.
    pub repr: Matrix,
    /// Attention over positions, `n_labels x N`; zero at PAD positions.
    pub weights: Matrix,
    /// Set when every position was PAD; `repr` is then zero.
    pub degenerate: bool,
}

/// Per-label scores along the three pathways and their counterfactual fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayScores {
    pub z_k: Vec<f64>,
    pub z_d: Vec<f64>,
    pub z_e: Vec<f64>,
    pub z_f: Vec<f64>,
}

impl PathwayScores {
    pub fn new(z_k: Vec<f64>, z_d: Vec<f64>, z_e: Vec<f64>) -> Self {
        let z_f = counterfactual(&z_k, &z_d, &z_e);
        Self { z_k, z_d, z_e, z_f }
    }

    pub fn n_labels(&self) -> usize {
        self.z_k.len()
    }
}

/// `sigmoid(z_k + z_d + z_e) - sigmoid(z_d + z_e)`, elementwise.
pub fn counterfactual(z_k: &[f64], z_d: &[f64], z_e: &[f64]) -> Vec<f64> {
    z_k.iter()
        .zip(z_d)
        .zip(z_e)
        .map(|((&k, &d), &e)| {
            let base = d + e;
            sigmoid_scalar(k + base) - sigmoid_scalar(base)
        })
        .collect()
}

/// Intermediate values of one encoder pass (full or demographics-only input),
/// restricted to the non-PAD positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTrace {
    /// Non-PAD token ids in input order.
    pub tokens: Vec<TokenId>,
    /// tanh outputs, `tokens.len() x hidden_dim`.
    pub encoded: Matrix,
    /// `n_labels x tokens.len()`
    pub attention: Matrix,
    /// `n_labels x hidden_dim`
    pub repr: Matrix,
    /// `n_experts x n_labels`
    pub expert_scores: Matrix,
    /// `n_labels x n_experts`
    pub gates: Matrix,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub knowledge: BranchTrace,
    pub demographic: BranchTrace,
}

fn check_token(params: &ModelParams, id: TokenId) -> Result<(), ModelError> {
    let vocab_size = params.embedding.rows();
    if id as usize >= vocab_size {
        return Err(ModelError::TokenOutOfRange { id, vocab_size });
    }
    Ok(())
}

fn encode_token(params: &ModelParams, id: TokenId, out: &mut [f64]) {
    out.copy_from_slice(&params.enc_bias);
    for (k, &u) in params.embedding.row(id as usize).iter().enumerate() {
        axpy(u, params.enc_proj.row(k), out);
    }
    for v in out.iter_mut() {
        *v = v.tanh();
    }
}

/// Embedding, projection and tanh for each token. PAD rows stay zero.
pub fn encode(params: &ModelParams, token_ids: &[TokenId]) -> Result<Encoded, ModelError> {
    let mut rows = Matrix::zeros(token_ids.len(), params.hidden_dim());
    let mut mask = Vec::with_capacity(token_ids.len());
    for (n, &id) in token_ids.iter().enumerate() {
        check_token(params, id)?;
        let real = id != PAD;
        if real {
            encode_token(params, id, rows.row_mut(n));
        }
        mask.push(real);
    }
    Ok(Encoded { rows, mask })
}

fn encode_compact(params: &ModelParams, tokens: &[TokenId]) -> Matrix {
    let mut rows = Matrix::zeros(tokens.len(), params.hidden_dim());
    for (n, &id) in tokens.iter().enumerate() {
        encode_token(params, id, rows.row_mut(n));
    }
    rows
}

/// Attention over compact (all real) rows. Returns `(weights, repr)`.
fn attend(params: &ModelParams, encoded: &Matrix) -> (Matrix, Matrix) {
    let n_labels = params.n_labels();
    let n = encoded.rows();
    let mut weights = Matrix::zeros(n_labels, n);
    let mut repr = Matrix::zeros(n_labels, params.hidden_dim());
    if n == 0 {
        return (weights, repr);
    }
    for l in 0..n_labels {
        let q = params.label_queries.row(l);
        let w = weights.row_mut(l);
        for (pos, wn) in w.iter_mut().enumerate() {
            *wn = dot(q, encoded.row(pos));
        }
        softmax_in_place(w);
        let h = repr.row_mut(l);
        for (pos, &a) in weights.row(l).iter().enumerate() {
            axpy(a, encoded.row(pos), h);
        }
    }
    (weights, repr)
}

/// Per-label softmax attention over the non-PAD positions of `encoded`.
pub fn label_attention(params: &ModelParams, encoded: &Encoded) -> Attended {
    let real: Vec<usize> = (0..encoded.mask.len())
        .filter(|&i| encoded.mask[i])
        .collect();
    let mut compact = Matrix::zeros(real.len(), encoded.rows.cols());
    for (c, &i) in real.iter().enumerate() {
        compact.row_mut(c).copy_from_slice(encoded.rows.row(i));
    }
    let (w, repr) = attend(params, &compact);
    let mut weights = Matrix::zeros(params.n_labels(), encoded.mask.len());
    for l in 0..params.n_labels() {
        for (c, &i) in real.iter().enumerate() {
            weights.set(l, i, w.get(l, c));
        }
    }
    Attended {
        repr,
        weights,
        degenerate: real.is_empty(),
    }
}

fn check_repr(params: &ModelParams, repr: &Matrix) -> Result<(), ModelError> {
    if repr.shape() != (params.n_labels(), params.hidden_dim()) {
        return Err(ModelError::Dimension(format!(
            "label representation is {}x{}, expected {}x{}",
            repr.rows(),
            repr.cols(),
            params.n_labels(),
            params.hidden_dim()
        )));
    }
    Ok(())
}

/// Entry `(i, l)` is expert `i`'s score for label `l`.
pub fn expert_scores(params: &ModelParams, repr: &Matrix) -> Result<Matrix, ModelError> {
    check_repr(params, repr)?;
    let n_labels = params.n_labels();
    let mut out = Matrix::zeros(params.n_experts(), n_labels);
    for (i, e) in params.experts.iter().enumerate() {
        let row = out.row_mut(i);
        for (l, s) in row.iter_mut().enumerate() {
            *s = dot(e.weights.row(l), repr.row(l)) + e.bias[l];
        }
    }
    Ok(out)
}

fn gate_logits(params: &ModelParams, h: &[f64]) -> Vec<f64> {
    let mut logits = params.gate_bias.clone();
    for (j, &hj) in h.iter().enumerate() {
        axpy(hj, params.gate_w.row(j), &mut logits);
    }
    logits
}

/// Mean of the label rows, the gate input in per-document mode.
pub(crate) fn pooled_repr(repr: &Matrix) -> Vec<f64> {
    let mut pooled = vec![0.0; repr.cols()];
    for l in 0..repr.rows() {
        axpy(1.0, repr.row(l), &mut pooled);
    }
    let inv = 1.0 / repr.rows() as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    pooled
}

/// Gate distribution over experts for each label, `n_labels x n_experts`.
pub fn gate_weights(params: &ModelParams, repr: &Matrix) -> Result<Matrix, ModelError> {
    check_repr(params, repr)?;
    let n_labels = params.n_labels();
    let mut out = Matrix::zeros(n_labels, params.n_experts());
    match params.config.gate_mode {
        GateMode::PerLabel => {
            for l in 0..n_labels {
                let mut g = gate_logits(params, repr.row(l));
                softmax_in_place(&mut g);
                out.row_mut(l).copy_from_slice(&g);
            }
        }
        GateMode::PerDocument => {
            let mut g = gate_logits(params, &pooled_repr(repr));
            softmax_in_place(&mut g);
            for l in 0..n_labels {
                out.row_mut(l).copy_from_slice(&g);
            }
        }
    }
    Ok(out)
}

/// Sum with the terms in ascending order, so the result does not depend on
/// the order in which experts are stored.
fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().fold(0.0, |acc, &t| acc + t)
}

/// `z[l] = sum_i gates[l, i] * scores[i, l]`
pub fn mix_experts(gates: &Matrix, scores: &Matrix) -> Vec<f64> {
    let mut terms = vec![0.0; scores.rows()];
    (0..gates.rows())
        .map(|l| {
            for (i, t) in terms.iter_mut().enumerate() {
                *t = gates.get(l, i) * scores.get(i, l);
            }
            canonical_sum(&mut terms)
        })
        .collect()
}

/// Uniform average of expert scores, computed as the same weighted sum as
/// [`mix_experts`] so that a uniform gate reproduces it bit for bit.
pub fn uniform_mix(scores: &Matrix) -> Vec<f64> {
    let w = 1.0 / scores.rows() as f64;
    let mut terms = vec![0.0; scores.rows()];
    (0..scores.cols())
        .map(|l| {
            for (i, t) in terms.iter_mut().enumerate() {
                *t = w * scores.get(i, l);
            }
            canonical_sum(&mut terms)
        })
        .collect()
}

/// Gated expert scores on the full-input representation.
pub fn pathway_zk(params: &ModelParams, h_k: &Matrix) -> Result<Vec<f64>, ModelError> {
    let scores = expert_scores(params, h_k)?;
    let gates = gate_weights(params, h_k)?;
    Ok(mix_experts(&gates, &scores))
}

/// Uniformly weighted expert scores on the full-input representation.
pub fn pathway_ze(params: &ModelParams, h_k: &Matrix) -> Result<Vec<f64>, ModelError> {
    Ok(uniform_mix(&expert_scores(params, h_k)?))
}

/// Gated expert scores on a representation built from the demographic
/// tokens alone.
pub fn pathway_zd(
    params: &ModelParams,
    vocab: &Vocabulary,
    doc: &Document,
) -> Result<Vec<f64>, ModelError> {
    let ids = vocab.build_model_input(
        doc,
        InputMode::DemographicOnly,
        crate::corpus::DEMOGRAPHIC_TOKEN_COUNT,
    );
    let branch = run_branch(params, &ids)?;
    Ok(mix_experts(&branch.gates, &branch.expert_scores))
}

pub(crate) fn run_branch(params: &ModelParams, ids: &[TokenId]) -> Result<BranchTrace, ModelError> {
    let mut tokens = Vec::with_capacity(ids.len());
    for &id in ids {
        check_token(params, id)?;
        if id != PAD {
            tokens.push(id);
        }
    }
    let encoded = encode_compact(params, &tokens);
    let (attention, repr) = attend(params, &encoded);
    let expert_scores = expert_scores(params, &repr)?;
    let gates = gate_weights(params, &repr)?;
    Ok(BranchTrace {
        degenerate: tokens.is_empty(),
        tokens,
        encoded,
        attention,
        repr,
        expert_scores,
        gates,
    })
}

/// Runs both branches on pre-tokenized inputs. PAD ids anywhere in either
/// input are ignored.
pub fn forward_tokens(
    params: &ModelParams,
    full: &[TokenId],
    demographic: &[TokenId],
) -> Result<(PathwayScores, ForwardTrace), ModelError> {
    let knowledge = run_branch(params, full)?;
    let demographic = run_branch(params, demographic)?;
    let z_k = mix_experts(&knowledge.gates, &knowledge.expert_scores);
    let z_e = uniform_mix(&knowledge.expert_scores);
    let z_d = mix_experts(&demographic.gates, &demographic.expert_scores);
    Ok((
        PathwayScores::new(z_k, z_d, z_e),
        ForwardTrace {
            knowledge,
            demographic,
        },
    ))
}

/// Full forward pass on a document.
pub fn forward(
    params: &ModelParams,
    vocab: &Vocabulary,
    doc: &Document,
    max_len: usize,
) -> Result<(PathwayScores, ForwardTrace), ModelError> {
    let full = vocab.build_model_input(doc, InputMode::Full, max_len);
    let demo = vocab.build_model_input(doc, InputMode::DemographicOnly, max_len);
    forward_tokens(params, &full, &demo)
}
