//! Dense L×H×T×T attention records.

use crate::error::{Error, Result};

/// Default tolerance on row sums, sized for f32 round trips.
pub const DEFAULT_ROW_TOL: f64 = 1e-5;

/// Post-softmax attention probabilities, layout `[layer][head][query][key]`.
///
/// Masked entries are stored as explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor {
    layers: usize,
    heads: usize,
    seq_len: usize,
    causal: bool,
    weights: Vec<f64>,
}

impl AttentionTensor {
    pub fn new(
        layers: usize,
        heads: usize,
        seq_len: usize,
        causal: bool,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let expected = layers * heads * seq_len * seq_len;
        if weights.len() != expected {
            return Err(Error::Shape(format!(
                "{layers}x{heads}x{seq_len}x{seq_len} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        Ok(AttentionTensor {
            layers,
            heads,
            seq_len,
            causal,
            weights,
        })
    }

    pub fn zeros(layers: usize, heads: usize, seq_len: usize, causal: bool) -> Self {
        AttentionTensor {
            layers,
            heads,
            seq_len,
            causal,
            weights: vec![0.0; layers * heads * seq_len * seq_len],
        }
    }

    /// Uniform rows: `1/T` everywhere when non-causal, `1/(q+1)` over `k <= q` when causal.
    pub fn uniform(layers: usize, heads: usize, seq_len: usize, causal: bool) -> Self {
        let mut a = Self::zeros(layers, heads, seq_len, causal);
        for l in 0..layers {
            for h in 0..heads {
                for q in 0..seq_len {
                    let row = a.row_mut(l, h, q);
                    if causal {
                        let w = 1.0 / (q + 1) as f64;
                        row[..=q].iter_mut().for_each(|x| *x = w);
                    } else {
                        row.iter_mut().for_each(|x| *x = 1.0 / seq_len as f64);
                    }
                }
            }
        }
        a
    }

    /// Builds a tensor by applying [`softmax_rows`] to every head's score matrix.
    pub fn from_scores(
        layers: usize,
        heads: usize,
        seq_len: usize,
        causal: bool,
        scores: &[f64],
    ) -> Result<Self> {
        let block = seq_len * seq_len;
        if scores.len() != layers * heads * block {
            return Err(Error::Shape(format!(
                "expected {} scores, got {}",
                layers * heads * block,
                scores.len()
            )));
        }
        let mut weights = Vec::with_capacity(scores.len());
        for chunk in scores.chunks(block.max(1)).take(layers * heads) {
            weights.extend(softmax_rows(chunk, seq_len, causal)?);
        }
        Self::new(layers, heads, seq_len, causal, weights)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    #[inline]
    pub fn index(&self, layer: usize, head: usize, query: usize, key: usize) -> usize {
        ((layer * self.heads + head) * self.seq_len + query) * self.seq_len + key
    }

    #[inline]
    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.weights[self.index(layer, head, query, key)]
    }

    pub fn set(&mut self, layer: usize, head: usize, query: usize, key: usize, value: f64) {
        let i = self.index(layer, head, query, key);
        self.weights[i] = value;
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = self.index(layer, head, query, 0);
        &self.weights[start..start + self.seq_len]
    }

    pub fn row_mut(&mut self, layer: usize, head: usize, query: usize) -> &mut [f64] {
        let start = self.index(layer, head, query, 0);
        &mut self.weights[start..start + self.seq_len]
    }

    /// T×T block of one head.
    pub fn head(&self, layer: usize, head: usize) -> &[f64] {
        let start = self.index(layer, head, 0, 0);
        &self.weights[start..start + self.seq_len * self.seq_len]
    }

    pub fn head_mut(&mut self, layer: usize, head: usize) -> &mut [f64] {
        let start = self.index(layer, head, 0, 0);
        let n = self.seq_len * self.seq_len;
        &mut self.weights[start..start + n]
    }

    /// Checks nonnegativity, the causal mask and row sums, in that order per entry/row.
    pub fn validate(&self, row_tol: f64) -> Result<()> {
        assert!(row_tol > 0.0, "row_tol must be positive");
        for l in 0..self.layers {
            for h in 0..self.heads {
                for q in 0..self.seq_len {
                    let row = self.row(l, h, q);
                    for (k, &w) in row.iter().enumerate() {
                        if !w.is_finite() {
                            return Err(Error::NonFiniteEntry {
                                layer: l,
                                head: h,
                                query: q,
                                key: k,
                            });
                        }
                        if w < 0.0 {
                            return Err(Error::NegativeEntry {
                                layer: l,
                                head: h,
                                query: q,
                                key: k,
                                value: w,
                            });
                        }
                        if self.causal && k > q && w != 0.0 {
                            return Err(Error::CausalViolation {
                                layer: l,
                                head: h,
                                query: q,
                                key: k,
                            });
                        }
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > row_tol {
                        return Err(Error::RowSum {
                            layer: l,
                            head: h,
                            query: q,
                            sum,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-wise softmax of a `T×T` score matrix with max subtraction.
///
/// Under `causal`, keys `k > q` are masked to exactly zero and excluded from
/// the normalizer.
pub fn softmax_rows(scores: &[f64], seq_len: usize, causal: bool) -> Result<Vec<f64>> {
    if scores.len() != seq_len * seq_len {
        return Err(Error::Shape(format!(
            "expected {seq_len}x{seq_len} scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput("attention scores"));
    }
    let mut out = vec![0.0; scores.len()];
    for q in 0..seq_len {
        let admissible = if causal { q + 1 } else { seq_len };
        if admissible == 0 {
            return Err(Error::AllMasked(q));
        }
        let row = &scores[q * seq_len..q * seq_len + admissible];
        softmax_into(row, &mut out[q * seq_len..q * seq_len + admissible]);
    }
    Ok(out)
}

/// Max-subtracted softmax of `scores` written into `out` (same length).
pub(crate) fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
