//! Toy frame decoder: a one-hidden-layer tanh network mapping per-frame
//! content, a speaker conditioning vector, and pitch to output frames.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};

/// Default hidden width for desk-scale runs.
pub const DEFAULT_HIDDEN_DIM: usize = 32;
/// Default output frame dimension for desk-scale runs.
pub const DEFAULT_OUTPUT_DIM: usize = 16;

/// Frame decoder. Each frame's input is the concatenation
/// `[content_t, cond, pitch_t]`; the output is
/// `w2 * tanh(w1 * input + b1) + b2`.
#[derive(Debug, Clone)]
pub struct ToyDecoder {
    content_dim: usize,
    cond_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

/// Per-frame activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct DecodeCache {
    /// T x (content_dim + cond_dim + 1) concatenated inputs.
    inputs: Matrix,
    /// T x hidden_dim post-tanh activations.
    hidden: Matrix,
}

/// Gradients of a scalar loss with respect to every decoder parameter and
/// to the conditioning vector shared across frames.
#[derive(Debug, Clone)]
pub struct DecoderGrads {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub cond: Vec<f64>,
}

impl DecoderGrads {
    pub fn zeros(decoder: &ToyDecoder) -> Self {
        DecoderGrads {
            w1: Matrix::zeros(decoder.hidden_dim, decoder.input_dim()),
            b1: vec![0.0; decoder.hidden_dim],
            w2: Matrix::zeros(decoder.output_dim, decoder.hidden_dim),
            b2: vec![0.0; decoder.output_dim],
            cond: vec![0.0; decoder.cond_dim],
        }
    }
}

impl ToyDecoder {
    pub fn new(
        content_dim: usize,
        cond_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if hidden_dim == 0 || output_dim == 0 {
            return Err(Error::Validation(
                "decoder hidden and output dimensions must be positive".into(),
            ));
        }
        let input_dim = content_dim + cond_dim + 1;
        if w1.rows() != hidden_dim || w1.cols() != input_dim {
            return Err(Error::dim_mismatch(
                "decoder w1 rows x cols",
                w1.rows() * w1.cols(),
                hidden_dim * input_dim,
            ));
        }
        if b1.len() != hidden_dim {
            return Err(Error::dim_mismatch("decoder b1", b1.len(), hidden_dim));
        }
        if w2.rows() != output_dim || w2.cols() != hidden_dim {
            return Err(Error::dim_mismatch(
                "decoder w2 rows x cols",
                w2.rows() * w2.cols(),
                output_dim * hidden_dim,
            ));
        }
        if b2.len() != output_dim {
            return Err(Error::dim_mismatch("decoder b2", b2.len(), output_dim));
        }
        Ok(ToyDecoder {
            content_dim,
            cond_dim,
            hidden_dim,
            output_dim,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Initializes weights from N(0, 1/fan_in) and biases to zero. Draw
    /// order: w1 row-major, then w2 row-major (biases consume no draws).
    pub fn init(
        content_dim: usize,
        cond_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if content_dim == 0 || cond_dim == 0 {
            return Err(Error::Validation(
                "decoder content and conditioning dimensions must be positive".into(),
            ));
        }
        if hidden_dim == 0 || output_dim == 0 {
            return Err(Error::Validation(
                "decoder hidden and output dimensions must be positive".into(),
            ));
        }
        let input_dim = content_dim + cond_dim + 1;
        let mut rng = SplitMix64::new(seed);
        let std1 = (1.0 / input_dim as f64).sqrt();
        let w1_values: Vec<f64> = (0..hidden_dim * input_dim)
            .map(|_| std1 * rng.next_normal())
            .collect();
        let std2 = (1.0 / hidden_dim as f64).sqrt();
        let w2_values: Vec<f64> = (0..output_dim * hidden_dim)
            .map(|_| std2 * rng.next_normal())
            .collect();
        ToyDecoder::new(
            content_dim,
            cond_dim,
            hidden_dim,
            output_dim,
            Matrix::new(hidden_dim, input_dim, w1_values)?,
            vec![0.0; hidden_dim],
            Matrix::new(output_dim, hidden_dim, w2_values)?,
            vec![0.0; output_dim],
        )
    }

    pub fn content_dim(&self) -> usize {
        self.content_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn input_dim(&self) -> usize {
        self.content_dim + self.cond_dim + 1
    }

    fn check_inputs(&self, content: &Matrix, cond: &[f64], pitch: &[f64]) -> Result<()> {
        if content.cols() != self.content_dim {
            return Err(Error::dim_mismatch(
                "decode content columns",
                content.cols(),
                self.content_dim,
            ));
        }
        if cond.len() != self.cond_dim {
            return Err(Error::dim_mismatch(
                "decode conditioning vector",
                cond.len(),
                self.cond_dim,
            ));
        }
        if pitch.len() != content.rows() {
            return Err(Error::dim_mismatch(
                "decode pitch frames",
                pitch.len(),
                content.rows(),
            ));
        }
        Ok(())
    }

    /// Decodes frames and keeps the activations needed for `backward`.
    pub fn decode_cached(
        &self,
        content: &Matrix,
        cond: &[f64],
        pitch: &[f64],
    ) -> Result<(Matrix, DecodeCache)> {
        self.check_inputs(content, cond, pitch)?;
        let frames = content.rows();
        let input_dim = self.input_dim();
        let mut inputs = Matrix::zeros(frames, input_dim);
        let mut hidden = Matrix::zeros(frames, self.hidden_dim);
        let mut output = Matrix::zeros(frames, self.output_dim);
        for t in 0..frames {
            let x = inputs.row_mut(t);
            x[..self.content_dim].copy_from_slice(content.row(t));
            x[self.content_dim..self.content_dim + self.cond_dim].copy_from_slice(cond);
            x[input_dim - 1] = pitch[t];
        }
        for t in 0..frames {
            let x = inputs.row(t);
            let h = hidden.row_mut(t);
            for j in 0..self.hidden_dim {
                let a = self.b1[j]
                    + self
                        .w1
                        .row(j)
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>();
                h[j] = a.tanh();
            }
            let h = hidden.row(t);
            let y = output.row_mut(t);
            for o in 0..self.output_dim {
                y[o] = self.b2[o]
                    + self
                        .w2
                        .row(o)
                        .iter()
                        .zip(h)
                        .map(|(w, v)| w * v)
                        .sum::<f64>();
            }
        }
        Ok((output, DecodeCache { inputs, hidden }))
    }

    /// Decodes frames; rows are output frames.
    pub fn decode(&self, content: &Matrix, cond: &[f64], pitch: &[f64]) -> Result<Matrix> {
        Ok(self.decode_cached(content, cond, pitch)?.0)
    }

    /// Accumulates gradients for `upstream = dL/d(output)` into `grads`.
    /// `grads.cond` receives the sum over frames of the gradient through
    /// the conditioning segment of each frame's input.
    pub fn backward_accumulate(
        &self,
        cache: &DecodeCache,
        upstream: &Matrix,
        grads: &mut DecoderGrads,
    ) -> Result<()> {
        if upstream.rows() != cache.inputs.rows() || upstream.cols() != self.output_dim {
            return Err(Error::dim_mismatch(
                "decoder upstream gradient",
                upstream.rows() * upstream.cols(),
                cache.inputs.rows() * self.output_dim,
            ));
        }
        let frames = cache.inputs.rows();
        let mut da = vec![0.0; self.hidden_dim];
        for t in 0..frames {
            let g = upstream.row(t);
            let h = cache.hidden.row(t);
            let x = cache.inputs.row(t);
            for o in 0..self.output_dim {
                grads.b2[o] += g[o];
                let dw2_row = grads.w2.row_mut(o);
                for j in 0..self.hidden_dim {
                    dw2_row[j] += g[o] * h[j];
                }
            }
            for j in 0..self.hidden_dim {
                let dh: f64 = (0..self.output_dim).map(|o| g[o] * self.w2.row(o)[j]).sum();
                da[j] = dh * (1.0 - h[j] * h[j]);
            }
            for j in 0..self.hidden_dim {
                grads.b1[j] += da[j];
                let dw1_row = grads.w1.row_mut(j);
                for (i, xi) in x.iter().enumerate() {
                    dw1_row[i] += da[j] * xi;
                }
            }
            for k in 0..self.cond_dim {
                let col = self.content_dim + k;
                grads.cond[k] += (0..self.hidden_dim).map(|j| da[j] * self.w1.row(j)[col]).sum::<f64>();
            }
        }
        Ok(())
    }

    /// Number of trainable scalars, in flattening order w1, b1, w2, b2.
    pub fn param_count(&self) -> usize {
        self.w1.rows() * self.w1.cols()
            + self.b1.len()
            + self.w2.rows() * self.w2.cols()
            + self.b2.len()
    }

    /// Appends parameters in flattening order w1, b1, w2, b2.
    pub fn append_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w1.values());
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(self.w2.values());
        out.extend_from_slice(&self.b2);
    }

    /// Appends gradients in the same order as `append_params`.
    pub fn append_grads(grads: &DecoderGrads, out: &mut Vec<f64>) {
        out.extend_from_slice(grads.w1.values());
        out.extend_from_slice(&grads.b1);
        out.extend_from_slice(grads.w2.values());
        out.extend_from_slice(&grads.b2);
    }

    /// Overwrites parameters from a flat slice laid out as `append_params`.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dim_mismatch(
                "decoder flat parameters",
                flat.len(),
                self.param_count(),
            ));
        }
        let mut at = 0;
        let n1 = self.w1.rows() * self.w1.cols();
        self.w1.values_mut().copy_from_slice(&flat[at..at + n1]);
        at += n1;
        let nb1 = self.b1.len();
        self.b1.copy_from_slice(&flat[at..at + nb1]);
        at += nb1;
        let n2 = self.w2.rows() * self.w2.cols();
        self.w2.values_mut().copy_from_slice(&flat[at..at + n2]);
        at += n2;
        self.b2.copy_from_slice(&flat[at..]);
        Ok(())
    }

    pub fn to_doc(&self) -> DecoderDoc {
        DecoderDoc {
            content_dim: self.content_dim,
            cond_dim: self.cond_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            w1: self.w1.values().to_vec(),
            b1: self.b1.clone(),
            w2: self.w2.values().to_vec(),
            b2: self.b2.clone(),
        }
    }

    pub fn from_doc(doc: &DecoderDoc) -> Result<Self> {
        let input_dim = doc.content_dim + doc.cond_dim + 1;
        ToyDecoder::new(
            doc.content_dim,
            doc.cond_dim,
            doc.hidden_dim,
            doc.output_dim,
            Matrix::new(doc.hidden_dim, input_dim, doc.w1.clone())?,
            doc.b1.clone(),
            Matrix::new(doc.output_dim, doc.hidden_dim, doc.w2.clone())?,
            doc.b2.clone(),
        )
    }
}

/// Serialized decoder: shape fields, then weights row-major and biases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderDoc {
    pub content_dim: usize,
    pub cond_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, l2_relative_error, mse_loss};

    fn random_case(
        rng: &mut SplitMix64,
    ) -> (ToyDecoder, Matrix, Vec<f64>, Vec<f64>, Matrix) {
        let d_c = 1 + rng.next_below(4) as usize;
        let d = 1 + rng.next_below(5) as usize;
        let h = 1 + rng.next_below(6) as usize;
        let d_x = 1 + rng.next_below(4) as usize;
        let frames = 1 + rng.next_below(5) as usize;
        let decoder = ToyDecoder::init(d_c, d, h, d_x, rng.next_u64()).unwrap();
        let content = Matrix::new(
            frames,
            d_c,
            (0..frames * d_c).map(|_| rng.next_normal()).collect(),
        )
        .unwrap();
        let cond: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let pitch: Vec<f64> = (0..frames).map(|_| rng.next_normal()).collect();
        let target = Matrix::new(
            frames,
            d_x,
            (0..frames * d_x).map(|_| rng.next_normal()).collect(),
        )
        .unwrap();
        (decoder, content, cond, pitch, target)
    }

    #[test]
    fn zero_weights_emit_output_bias() {
        let decoder = ToyDecoder::new(
            2,
            3,
            4,
            2,
            Matrix::zeros(4, 6),
            vec![0.0; 4],
            Matrix::zeros(2, 4),
            vec![0.5, -1.5],
        )
        .unwrap();
        let content = Matrix::new(3, 2, vec![1.0; 6]).unwrap();
        let out = decoder
            .decode(&content, &[2.0, 3.0, 4.0], &[0.1, 0.2, 0.3])
            .unwrap();
        for t in 0..3 {
            assert_eq!(out.row(t), &[0.5, -1.5]);
        }
    }

    #[test]
    fn hand_computed_single_frame() {
        // One frame, input [c, q, p] = [1, 2, 3], w1 row [0.1, 0.2, 0.3],
        // b1 = 0.4 gives a = 1.8; output = 2*tanh(1.8) - 1.
        let decoder = ToyDecoder::new(
            1,
            1,
            1,
            1,
            Matrix::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap(),
            vec![0.4],
            Matrix::new(1, 1, vec![2.0]).unwrap(),
            vec![-1.0],
        )
        .unwrap();
        let content = Matrix::new(1, 1, vec![1.0]).unwrap();
        let out = decoder.decode(&content, &[2.0], &[3.0]).unwrap();
        let expected = 2.0 * (1.8f64).tanh() - 1.0;
        assert!((out.row(0)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_scaled_weights() {
        let a = ToyDecoder::init(8, 16, 32, 16, 7).unwrap();
        let b = ToyDecoder::init(8, 16, 32, 16, 7).unwrap();
        assert_eq!(a.w1.values(), b.w1.values());
        assert_eq!(a.w2.values(), b.w2.values());
        assert!(a.b1.iter().chain(&a.b2).all(|&v| v == 0.0));
        let var1: f64 =
            a.w1.values().iter().map(|v| v * v).sum::<f64>() / a.w1.values().len() as f64;
        let expected1 = 1.0 / (8 + 16 + 1) as f64;
        assert!((var1 / expected1 - 1.0).abs() < 0.2, "w1 variance {var1}");
        let var2: f64 =
            a.w2.values().iter().map(|v| v * v).sum::<f64>() / a.w2.values().len() as f64;
        assert!((var2 * 32.0 - 1.0).abs() < 0.2, "w2 variance {var2}");
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let decoder = ToyDecoder::init(2, 3, 4, 2, 1).unwrap();
        let content = Matrix::zeros(3, 2);
        assert!(decoder.decode(&Matrix::zeros(3, 5), &[0.0; 3], &[0.0; 3]).is_err());
        assert!(decoder.decode(&content, &[0.0; 2], &[0.0; 3]).is_err());
        assert!(decoder.decode(&content, &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn param_flattening_round_trips() {
        let mut rng = SplitMix64::new(11);
        let decoder = ToyDecoder::init(2, 3, 5, 3, rng.next_u64()).unwrap();
        let mut flat = Vec::new();
        decoder.append_params(&mut flat);
        assert_eq!(flat.len(), decoder.param_count());
        let mut other = ToyDecoder::init(2, 3, 5, 3, rng.next_u64()).unwrap();
        other.set_params(&flat).unwrap();
        let content = Matrix::new(4, 2, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let cond = [0.2, -0.4, 0.6];
        let pitch = [0.5, -0.5, 1.0, 0.0];
        let a = decoder.decode(&content, &cond, &pitch).unwrap();
        let b = other.decode(&content, &cond, &pitch).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(0x0d3c0de5);
        for case in 0..30 {
            let (decoder, content, cond, pitch, target) = random_case(&mut rng);
            // Gradient over [decoder params, cond] jointly.
            let n_params = decoder.param_count();
            let mut base = Vec::with_capacity(n_params + cond.len());
            decoder.append_params(&mut base);
            base.extend_from_slice(&cond);

            let loss_at = |flat: &[f64]| {
                let mut d = decoder.clone();
                d.set_params(&flat[..n_params])?;
                let out = d.decode(&content, &flat[n_params..], &pitch)?;
                mse_loss(out.values(), target.values())
            };

            let (out, cache) = decoder.decode_cached(&content, &cond, &pitch).unwrap();
            // d(mse)/d(out) = 2 (out - target) / count.
            let count = (out.rows() * out.cols()) as f64;
            let upstream_values: Vec<f64> = out
                .values()
                .iter()
                .zip(target.values())
                .map(|(o, t)| 2.0 * (o - t) / count)
                .collect();
            let upstream = Matrix::new(out.rows(), out.cols(), upstream_values).unwrap();
            let mut grads = DecoderGrads::zeros(&decoder);
            decoder.backward_accumulate(&cache, &upstream, &mut grads).unwrap();
            let mut analytic = Vec::with_capacity(base.len());
            ToyDecoder::append_grads(&grads, &mut analytic);
            analytic.extend_from_slice(&grads.cond);

            let numeric = finite_difference_gradient(&loss_at, &base, 1e-5).unwrap();
            let rel = l2_relative_error(&analytic, &numeric);
            assert!(rel < 1e-6, "case {case}: relative error {rel}");
        }
    }

    #[test]
    fn doc_round_trip_is_exact() {
        let decoder = ToyDecoder::init(3, 4, 6, 5, 99).unwrap();
        let json = serde_json::to_string(&decoder.to_doc()).unwrap();
        let doc: DecoderDoc = serde_json::from_str(&json).unwrap();
        let back = ToyDecoder::from_doc(&doc).unwrap();
        assert_eq!(decoder.w1.values(), back.w1.values());
        assert_eq!(decoder.b1, back.b1);
        assert_eq!(decoder.w2.values(), back.w2.values());
        assert_eq!(decoder.b2, back.b2);
    }
}
