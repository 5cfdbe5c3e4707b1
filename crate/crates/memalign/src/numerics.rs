//! Dense 64-bit vector/matrix primitives and the elementary differentiable
//! operations every loss in this crate is built from: cosine similarity,
//! temperature softmax, KL divergence, mean-reduced MSE/L1, plus their
//! hand-derived gradients and a central finite-difference checker.

use crate::error::{Error, Result};

/// Norm floor shared by every cosine computation. Zero vectors never error,
/// they fall back to this denominator.
pub const NORM_EPSILON: f64 = 1e-8;

/// Row-major dense matrix of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    /// Validates the shape and that every entry is finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim_mismatch(
                "matrix values vs rows*cols",
                values.len(),
                rows * cols,
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite matrix entry at flat index {i}"
            )));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }
}

/// Attention weight vector: strictly positive entries summing to 1 within
/// 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("weight vector must be non-empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Validation(
                "weight vector entries must be finite and strictly positive".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "weight vector sums to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(WeightVector(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn ensure_same_len(context: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim_mismatch(context, a.len(), b.len()));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with both norms floored at NORM_EPSILON, so zero
/// vectors yield 0 instead of an error.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len("cosine_similarity operands", a, b)?;
    let na = l2_norm(a).max(NORM_EPSILON);
    let nb = l2_norm(b).max(NORM_EPSILON);
    Ok(dot(a, b) / (na * nb))
}

/// Cosine similarity plus its gradient with respect to the second argument.
/// Below the norm floor the denominator is a constant, so the quotient-rule
/// term vanishes there.
pub fn cosine_similarity_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_same_len("cosine_similarity operands", a, b)?;
    let na = l2_norm(a).max(NORM_EPSILON);
    let nb_raw = l2_norm(b);
    let nb = nb_raw.max(NORM_EPSILON);
    let cos = dot(a, b) / (na * nb);
    let mut grad = Vec::with_capacity(b.len());
    if nb_raw > NORM_EPSILON {
        for i in 0..b.len() {
            grad.push(a[i] / (na * nb) - cos * b[i] / (nb * nb));
        }
    } else {
        for i in 0..b.len() {
            grad.push(a[i] / (na * nb));
        }
    }
    Ok((cos, grad))
}

/// Temperature softmax with mandatory max subtraction. Exponentials are
/// floored at the smallest positive normal before normalization, so the
/// output is strictly positive for any finite input and temperature.
pub fn softmax(scores: &[f64], temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(
            "temperature",
            format!("must be a positive finite real, got {temperature}"),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Validation("softmax over an empty score list".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite softmax score at index {i}")));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = scores
        .iter()
        .map(|s| (((s - max) / temperature).exp()).max(f64::MIN_POSITIVE))
        .collect();
    let sum: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= sum;
    }
    Ok(WeightVector(exps))
}

/// Pulls an upstream gradient through softmax: given dL/dw and the weights,
/// returns dL/dscores with entries w_i (u_i - sum_j w_j u_j) / temperature.
pub fn softmax_backward(upstream: &[f64], weights: &WeightVector, temperature: f64) -> Vec<f64> {
    let w = weights.as_slice();
    let mean: f64 = w.iter().zip(upstream).map(|(wi, ui)| wi * ui).sum();
    w.iter()
        .zip(upstream)
        .map(|(wi, ui)| wi * (ui - mean) / temperature)
        .collect()
}

/// KL divergence sum_i p_i ln(p_i / q_i), evaluated as p_i (ln p_i - ln q_i)
/// so that extreme weight ratios stay finite.
pub fn kl_divergence(p: &WeightVector, q: &WeightVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim_mismatch("kl_divergence operands", p.len(), q.len()));
    }
    Ok(p.as_slice()
        .iter()
        .zip(q.as_slice())
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum())
}

/// Mean of squared differences.
pub fn mse_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len("mse_loss operands", a, b)?;
    let n = a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Mean of absolute differences.
pub fn l1_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len("l1_loss operands", a, b)?;
    let n = a.len() as f64;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Sign with sgn(0) = 0, the subgradient choice used by every L1 term.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Combined reconstruction penalty mse(a,b) + l1(a,b) and its gradient with
/// respect to a.
pub fn recon_loss_and_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    ensure_same_len("reconstruction operands", a, b)?;
    let n = a.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        loss += d * d + d.abs();
        grad.push((2.0 * d + sgn(d)) / n);
    }
    Ok((loss / n, grad))
}

/// Central finite differences (f(x + h e_i) - f(x - h e_i)) / 2h per
/// coordinate. Probes that evaluate to a non-finite value are reported with
/// their coordinate.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config("h", format!("step must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite probe while differencing coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Block-level relative error between an analytic gradient and a reference:
/// ||a - r||_2 / max(||r||_2, 1e-12).
pub fn l2_relative_error(approx: &[f64], reference: &[f64]) -> f64 {
    let diff: f64 = approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r) * (a - r))
        .sum::<f64>()
        .sqrt();
    diff / l2_norm(reference).max(1e-12)
}
