use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{Matrix, ParamVector};

/// How the gate sees the label-specific representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// One softmax over experts per label row.
    #[default]
    PerLabel,
    /// One softmax shared by all labels, computed from the mean label row.
    PerDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_labels: usize,
    pub n_experts: usize,
    pub gate_mode: GateMode,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_experts == 0 {
            return Err(ModelError::Config("at least one expert is required".into()));
        }
        if self.vocab_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.n_labels == 0
        {
            return Err(ModelError::Config(format!(
                "degenerate dimensions {self:?}"
            )));
        }
        Ok(())
    }
}

/// One expert head: a linear scorer per label.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    /// `n_labels x hidden_dim`
    pub weights: Matrix,
    /// `n_labels`
    pub bias: Vec<f64>,
}

/// All trainable arrays. The same shape doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `vocab_size x embed_dim`
    pub embedding: Matrix,
    /// `embed_dim x hidden_dim`
    pub enc_proj: Matrix,
    pub enc_bias: Vec<f64>,
    /// `n_labels x hidden_dim`
    pub label_queries: Matrix,
    pub experts: Vec<Expert>,
    /// `hidden_dim x n_experts`
    pub gate_w: Matrix,
    pub gate_bias: Vec<f64>,
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform<R: Rng + ?Sized>(rng: &mut R, data: &mut [f64], bound: f64) {
    for v in data {
        *v = rng.random_range(-bound..bound);
    }
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        let ModelConfig {
            vocab_size: v,
            embed_dim: de,
            hidden_dim: dh,
            n_labels: nl,
            n_experts: fe,
            ..
        } = config;
        Self {
            config,
            embedding: Matrix::zeros(v, de),
            enc_proj: Matrix::zeros(de, dh),
            enc_bias: vec![0.0; dh],
            label_queries: Matrix::zeros(nl, dh),
            experts: (0..fe)
                .map(|_| Expert {
                    weights: Matrix::zeros(nl, dh),
                    bias: vec![0.0; nl],
                })
                .collect(),
            gate_w: Matrix::zeros(dh, fe),
            gate_bias: vec![0.0; fe],
        }
    }

    /// Training initialisation: uniform(-0.1, 0.1) embeddings, Glorot-uniform
    /// projections, queries and experts, zero biases and a zero gate, so the
    /// gate starts out uniform.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let (de, dh, nl) = (config.embed_dim, config.hidden_dim, config.n_labels);
        fill_uniform(rng, p.embedding.data_mut(), 0.1);
        p.embedding.row_mut(crate::corpus::PAD as usize).fill(0.0);
        fill_uniform(rng, p.enc_proj.data_mut(), glorot(de, dh));
        fill_uniform(rng, p.label_queries.data_mut(), glorot(dh, nl));
        for e in &mut p.experts {
            fill_uniform(rng, e.weights.data_mut(), glorot(dh, nl));
        }
        Ok(p)
    }

    /// Every entry, biases and gate included, drawn from uniform(-scale, scale).
    pub fn random<R: Rng + ?Sized>(
        config: ModelConfig,
        rng: &mut R,
        scale: f64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::zeros(config);
        for seg in p.segments_mut() {
            fill_uniform(rng, seg, scale);
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn n_labels(&self) -> usize {
        self.label_queries.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.enc_proj.cols()
    }

    /// Segment names in storage order.
    pub fn segment_names(&self) -> Vec<String> {
        let mut names = vec![
            "embedding".to_string(),
            "enc_proj".into(),
            "enc_bias".into(),
            "label_queries".into(),
        ];
        names.extend((0..self.experts.len()).map(|i| format!("experts[{i}].weights")));
        names.extend((0..self.experts.len()).map(|i| format!("experts[{i}].bias")));
        names.push("gate_w".into());
        names.push("gate_bias".into());
        names
    }

    /// Parameter arrays in storage order: embedding, enc_proj, enc_bias,
    /// label_queries, expert weights 1..F, expert biases 1..F, gate_w,
    /// gate_bias.
    pub fn segments(&self) -> Vec<&[f64]> {
        let mut s: Vec<&[f64]> = vec![
            self.embedding.data(),
            self.enc_proj.data(),
            &self.enc_bias,
            self.label_queries.data(),
        ];
        s.extend(self.experts.iter().map(|e| e.weights.data()));
        s.extend(self.experts.iter().map(|e| e.bias.as_slice()));
        s.push(self.gate_w.data());
        s.push(&self.gate_bias);
        s
    }

    pub fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        let (weights, biases): (Vec<&mut [f64]>, Vec<&mut [f64]>) = self
            .experts
            .iter_mut()
            .map(|e| (e.weights.data_mut(), e.bias.as_mut_slice()))
            .unzip();
        let mut s: Vec<&mut [f64]> = vec![
            self.embedding.data_mut(),
            self.enc_proj.data_mut(),
            &mut self.enc_bias,
            self.label_queries.data_mut(),
        ];
        s.extend(weights);
        s.extend(biases);
        s.push(self.gate_w.data_mut());
        s.push(&mut self.gate_bias);
        s
    }

    /// Checks every array against `config` and for finiteness.
    pub fn validate(&self) -> Result<(), ModelError> {
        let c = &self.config;
        c.validate()?;
        let (v, de, dh, nl, fe) = (
            c.vocab_size,
            c.embed_dim,
            c.hidden_dim,
            c.n_labels,
            c.n_experts,
        );
        let shape_ok = self.embedding.shape() == (v, de)
            && self.enc_proj.shape() == (de, dh)
            && self.enc_bias.len() == dh
            && self.label_queries.shape() == (nl, dh)
            && self.experts.len() == fe
            && self
                .experts
                .iter()
                .all(|e| e.weights.shape() == (nl, dh) && e.bias.len() == nl)
            && self.gate_w.shape() == (dh, fe)
            && self.gate_bias.len() == fe;
        if !shape_ok {
            return Err(ModelError::Dimension(format!(
                "parameter arrays inconsistent with {c:?}"
            )));
        }
        let names = self.segment_names();
        for (name, seg) in names.iter().zip(self.segments()) {
            if seg.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name.clone()));
            }
        }
        Ok(())
    }

    /// Rounds every entry to single precision, the checkpoint storage format.
    pub fn round_to_storage(&mut self) {
        for seg in self.segments_mut() {
            for v in seg {
                *v = *v as f32 as f64;
            }
        }
    }

    /// `self += scale * other`, segment by segment.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.segments_mut().into_iter().zip(other.segments()) {
            crate::numerics::axpy(scale, src, dst);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.segments()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (k, seg) in self.segments().iter().enumerate() {
            if index < seg.len() {
                return (k, index);
            }
            index -= seg.len();
        }
        panic!("parameter index out of range");
    }
}

impl ParamVector for ModelParams {
    fn num_params(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    fn param(&self, index: usize) -> f64 {
        let (k, off) = self.locate(index);
        self.segments()[k][off]
    }

    fn set_param(&mut self, index: usize, value: f64) {
        let (k, off) = self.locate(index);
        self.segments_mut()[k][off] = value;
    }

    fn param_name(&self, index: usize) -> String {
        let (k, off) = self.locate(index);
        format!("{}[{off}]", self.segment_names()[k])
    }
}
