//! Dense double-precision arithmetic, activations, loss primitives and
//! finite-difference gradient verification.
//!
//! Everything here is a pure function of its inputs. Reductions run in a
//! fixed left-to-right order so a given input always produces the same bits.

use thiserror::Error;

/// Clamp applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite loss while perturbing {parameter}")]
    Evaluation { parameter: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                axpy(a, rhs.row(k), out_row);
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, NumericsError> {
        if self.shape() != rhs.shape() {
            return Err(NumericsError::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix { data, ..*self })
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Logistic function that never exponentiates a positive argument.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Softmax with max-subtraction.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if x.is_empty() {
        return Err(NumericsError::Dimension(
            "softmax of an empty vector".into(),
        ));
    }
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// In-place softmax; callers guarantee a nonempty slice.
pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}

/// Backpropagate through a softmax: returns d(loss)/d(logits) given the
/// softmax output `p` and d(loss)/d(p).
pub(crate) fn softmax_backward(p: &[f64], grad_p: &[f64], grad_logits: &mut [f64]) {
    let inner = dot(p, grad_p);
    for ((g, &pi), &gpi) in grad_logits.iter_mut().zip(p).zip(grad_p) {
        *g = pi * (gpi - inner);
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Per-element cross-entropy on a clamped probability.
#[inline]
pub(crate) fn bce_term(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d(bce_term)/d(logit) for `p = sigmoid(logit)`. Zero where the clamp is
/// active, which is the exact derivative of the clamped loss.
#[inline]
pub(crate) fn bce_logit_grad(p: f64, y: f64) -> f64 {
    if !(LOG_EPS..=1.0 - LOG_EPS).contains(&p) {
        return 0.0;
    }
    // dp/dz = p(1-p); dL/dp = -(y/p) + (1-y)/(1-p)
    p - y
}

/// Mean binary cross-entropy over labels.
pub fn binary_cross_entropy(p: &[f64], y: &[f64]) -> Result<f64, NumericsError> {
    if p.len() != y.len() {
        return Err(NumericsError::Dimension(format!(
            "{} probabilities vs {} targets",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p.iter().zip(y).map(|(&pi, &yi)| bce_term(pi, yi)).sum();
    Ok(total / p.len() as f64)
}

/// A flat view over a collection of trainable arrays, used for gradient
/// checking and optimizer updates.
pub trait ParamVector {
    fn num_params(&self) -> usize;
    fn param(&self, index: usize) -> f64;
    fn set_param(&mut self, index: usize, value: f64);
    /// Human-readable name of the entry at `index`, e.g. `gate_w[3]`.
    fn param_name(&self, index: usize) -> String;
}

impl ParamVector for Vec<f64> {
    fn num_params(&self) -> usize {
        self.len()
    }
    fn param(&self, index: usize) -> f64 {
        self[index]
    }
    fn set_param(&mut self, index: usize, value: f64) {
        self[index] = value;
    }
    fn param_name(&self, index: usize) -> String {
        format!("theta[{index}]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub passed: bool,
    pub checked: usize,
}

/// Compare an analytic gradient against central differences on every entry.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<P, F>(
    loss_fn: F,
    analytic: &P,
    params: &P,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, NumericsError>
where
    P: ParamVector + Clone,
    F: Fn(&P) -> f64,
{
    if !(1e-6..=1e-3).contains(&step) {
        return Err(NumericsError::Argument(format!(
            "finite-difference step {step} outside [1e-6, 1e-3]"
        )));
    }
    if analytic.num_params() != params.num_params() {
        return Err(NumericsError::Dimension(format!(
            "gradient has {} entries, parameters have {}",
            analytic.num_params(),
            params.num_params()
        )));
    }
    let mut probe = params.clone();
    let mut worst = (0.0_f64, String::new());
    for i in 0..params.num_params() {
        let orig = params.param(i);
        probe.set_param(i, orig + step);
        let plus = loss_fn(&probe);
        probe.set_param(i, orig - step);
        let minus = loss_fn(&probe);
        probe.set_param(i, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::Evaluation {
                parameter: params.param_name(i),
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.param(i);
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, params.param_name(i));
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        passed: worst.0 <= tol,
        checked: params.num_params(),
    })
}
