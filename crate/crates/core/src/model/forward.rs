use crate::attention::{softmax_into, AttentionTensor};
use crate::error::{Error, Result, Vocab};
use crate::intervention::{InterventionConfig, RowPlan};
use crate::segment::TokenSegmentation;

use super::linalg::{add_assign, matmul};
use super::MicroModelParameters;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerCache {
    pub x_in: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Concatenated per-head attention outputs, `T×d`.
    pub o: Vec<f64>,
    pub x_mid: Vec<f64>,
    pub h_act: Vec<f64>,
}

/// Everything a forward pass produced, enough to differentiate any scalar
/// built from the logits and the attention.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    pub segmentation: TokenSegmentation,
    /// `T × vocab_size`, row `t` scores the symbol at position `t + 1`.
    pub logits: Vec<f64>,
    /// The attention actually used for value mixing (causal).
    pub attention: AttentionTensor,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) x_final: Vec<f64>,
    pub(crate) fingerprint: u64,
    pub(crate) intervened: bool,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len() / self.tokens.len()
    }

    pub fn logits_row(&self, t: usize) -> &[f64] {
        let v = self.vocab_size();
        &self.logits[t * v..(t + 1) * v]
    }

    pub fn intervened(&self) -> bool {
        self.intervened
    }
}

pub fn forward(
    params: &MicroModelParameters,
    tokens: &[usize],
    seg: &TokenSegmentation,
) -> Result<ForwardTrace> {
    forward_with(params, tokens, seg, None)
}

/// Forward pass, optionally reallocating each selected layer's attention
/// rows before they mix the values.
pub fn forward_with(
    params: &MicroModelParameters,
    tokens: &[usize],
    seg: &TokenSegmentation,
    intervention: Option<&InterventionConfig>,
) -> Result<ForwardTrace> {
    let c = *params.config();
    let t_len = tokens.len();
    if t_len == 0 {
        return Err(Error::Shape("empty token sequence".into()));
    }
    if t_len > c.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: t_len,
            max: c.max_seq_len,
        });
    }
    if seg.total_len != t_len {
        return Err(Error::Shape(format!(
            "segmentation covers {} tokens, input has {t_len}",
            seg.total_len
        )));
    }
    seg.validate()?;
    let plan = match intervention {
        Some(cfg) if !cfg.is_identity() => {
            if seg.system.is_empty() {
                return Err(Error::EmptySystemSpan);
            }
            cfg.validate(c.n_layers)?;
            Some((cfg, RowPlan::new(seg, cfg)))
        }
        Some(cfg) => {
            cfg.validate(c.n_layers)?;
            None
        }
        None => None,
    };

    let d = c.d_model;
    let dh = c.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let layout = params.layout();

    let mut x = vec![0.0; t_len * d];
    for (t, &sym) in tokens.iter().enumerate() {
        let (table, size, vocab) = if seg.is_image(t) {
            (layout.img, c.image_vocab_size, Vocab::Image)
        } else {
            (layout.tok, c.vocab_size, Vocab::Text)
        };
        if sym >= size {
            return Err(Error::SymbolOutOfRange {
                position: t,
                symbol: sym,
                vocab,
                size,
            });
        }
        let emb = params.slice(table + sym * d, d);
        let pos = params.slice(layout.pos + t * d, d);
        for ((xi, e), p) in x[t * d..(t + 1) * d].iter_mut().zip(emb).zip(pos) {
            *xi = e + p;
        }
    }

    let mut attention = AttentionTensor::zeros(c.n_layers, c.n_heads, t_len, true);
    let mut caches = Vec::with_capacity(c.n_layers);
    let mut scores = vec![0.0; t_len];
    for l in 0..c.n_layers {
        let off = layout.layer(l);
        let q = matmul(&x, params.slice(off.wq, d * d), t_len, d, d);
        let k = matmul(&x, params.slice(off.wk, d * d), t_len, d, d);
        let v = matmul(&x, params.slice(off.wv, d * d), t_len, d, d);
        let mut o = vec![0.0; t_len * d];
        let reallocate = plan.as_ref().filter(|(cfg, _)| cfg.applies_to(l)).map(|(_, p)| p);

        for h in 0..c.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for qi in 0..t_len {
                let qrow = &q[qi * d + cols.start..qi * d + cols.end];
                for (ki, s) in scores[..=qi].iter_mut().enumerate() {
                    let krow = &k[ki * d + cols.start..ki * d + cols.end];
                    *s = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                let row = attention.row_mut(l, h, qi);
                softmax_into(&scores[..=qi], &mut row[..=qi]);
                if let Some(plan) = reallocate {
                    plan.apply(row);
                }
                let orow = &mut o[qi * d + cols.start..qi * d + cols.end];
                for (ki, &p) in row[..=qi].iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let vrow = &v[ki * d + cols.start..ki * d + cols.end];
                    for (oi, vi) in orow.iter_mut().zip(vrow) {
                        *oi += p * vi;
                    }
                }
            }
        }

        let mut x_mid = matmul(&o, params.slice(off.wo, d * d), t_len, d, d);
        add_assign(&mut x_mid, &x);
        let mut h_act = matmul(&x_mid, params.slice(off.w1, d * 2 * d), t_len, d, 2 * d);
        h_act.iter_mut().for_each(|v| *v = v.tanh());
        let mut x_out = matmul(&h_act, params.slice(off.w2, 2 * d * d), t_len, 2 * d, d);
        add_assign(&mut x_out, &x_mid);

        caches.push(LayerCache {
            x_in: x,
            q,
            k,
            v,
            o,
            x_mid,
            h_act,
        });
        x = x_out;
    }

    let logits = matmul(&x, params.slice(layout.out, d * c.vocab_size), t_len, d, c.vocab_size);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("logits"));
    }
    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        segmentation: seg.clone(),
        logits,
        attention,
        layers: caches,
        x_final: x,
        fingerprint: params.fingerprint(),
        intervened: plan.is_some(),
    })
}

/// Numerically stable `log softmax` of one logits row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Mean next-token negative log-likelihood over the response span.
///
/// `targets[i]` is the symbol at response position `response.start + i`,
/// scored by the logits one position earlier.
pub fn lm_loss(trace: &ForwardTrace, targets: &[usize]) -> Result<f64> {
    Ok(lm_loss_grad(trace, targets)?.0)
}

/// The loss together with `dL/dlogits` (`T × vocab_size`).
pub fn lm_loss_grad(trace: &ForwardTrace, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let resp = trace.segmentation.response;
    if resp.is_empty() {
        return Err(Error::EmptyResponseSpan);
    }
    if resp.start == 0 {
        return Err(Error::Shape("response starts at position 0; nothing predicts it".into()));
    }
    if targets.len() != resp.len() {
        return Err(Error::Shape(format!(
            "{} targets for a response span of length {}",
            targets.len(),
            resp.len()
        )));
    }
    let vocab = trace.vocab_size();
    let n = targets.len() as f64;
    let mut grad = vec![0.0; trace.logits.len()];
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        if target >= vocab {
            return Err(Error::SymbolOutOfRange {
                position: resp.start + i,
                symbol: target,
                vocab: Vocab::Text,
                size: vocab,
            });
        }
        let t = resp.start + i - 1;
        let logp = log_softmax(trace.logits_row(t));
        loss -= logp[target];
        let g = &mut grad[t * vocab..(t + 1) * vocab];
        for (gj, lp) in g.iter_mut().zip(&logp) {
            *gj = lp.exp() / n;
        }
        g[target] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}
