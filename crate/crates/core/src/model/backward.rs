use crate::error::{Error, Result};

use super::forward::ForwardTrace;
use super::linalg::{add_assign, matmul_a_bt, matmul_at_b_acc};
use super::{Gradients, MicroModelParameters};

/// Upstream gradients of a scalar objective with respect to the trace's
/// logits (`T × vocab`) and attention (`L × H × T × T`). `None` means zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    pub logits: Option<&'a [f64]>,
    pub attention: Option<&'a [f64]>,
}

/// Reverse-mode gradient of the objective with respect to every parameter.
///
/// Attention gradients pass through each row's softmax Jacobian
/// `diag(p) - p pᵀ` and on into the query/key projections.
pub fn backward(
    params: &MicroModelParameters,
    trace: &ForwardTrace,
    upstream: Upstream<'_>,
) -> Result<Gradients> {
    if trace.fingerprint != params.fingerprint() {
        return Err(Error::StaleTrace);
    }
    if trace.intervened {
        return Err(Error::InterventionTrace);
    }
    let c = *params.config();
    let (t_len, d, dh, vocab) = (trace.seq_len(), c.d_model, c.d_head(), c.vocab_size);
    let scale = 1.0 / (dh as f64).sqrt();
    let layout = params.layout();
    if let Some(g) = upstream.logits {
        if g.len() != trace.logits.len() {
            return Err(Error::Shape(format!(
                "logit gradient has {} entries, expected {}",
                g.len(),
                trace.logits.len()
            )));
        }
    }
    if let Some(g) = upstream.attention {
        if g.len() != trace.attention.weights().len() {
            return Err(Error::Shape(format!(
                "attention gradient has {} entries, expected {}",
                g.len(),
                trace.attention.weights().len()
            )));
        }
    }

    let mut grads = Gradients::zeros(layout.total);
    let gbuf = &mut grads.0;

    let mut dx = match upstream.logits {
        Some(dlogits) => {
            matmul_at_b_acc(
                &trace.x_final,
                dlogits,
                t_len,
                d,
                vocab,
                &mut gbuf[layout.out..layout.out + d * vocab],
            );
            matmul_a_bt(dlogits, params.slice(layout.out, d * vocab), t_len, vocab, d)
        }
        None => vec![0.0; t_len * d],
    };

    let mut dp = vec![0.0; t_len];
    for l in (0..c.n_layers).rev() {
        let cache = &trace.layers[l];
        let off = layout.layer(l);

        // x_out = x_mid + tanh(x_mid W1) W2
        let mut dx_mid = dx.clone();
        matmul_at_b_acc(&cache.h_act, &dx, t_len, 2 * d, d, &mut gbuf[off.w2..off.w2 + 2 * d * d]);
        let mut dpre = matmul_a_bt(&dx, params.slice(off.w2, 2 * d * d), t_len, d, 2 * d);
        for (g, a) in dpre.iter_mut().zip(&cache.h_act) {
            *g *= 1.0 - a * a;
        }
        matmul_at_b_acc(&cache.x_mid, &dpre, t_len, d, 2 * d, &mut gbuf[off.w1..off.w1 + 2 * d * d]);
        add_assign(
            &mut dx_mid,
            &matmul_a_bt(&dpre, params.slice(off.w1, 2 * d * d), t_len, 2 * d, d),
        );

        // x_mid = x_in + o Wo
        let mut dx_in = dx_mid.clone();
        matmul_at_b_acc(&cache.o, &dx_mid, t_len, d, d, &mut gbuf[off.wo..off.wo + d * d]);
        let d_o = matmul_a_bt(&dx_mid, params.slice(off.wo, d * d), t_len, d, d);

        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        for h in 0..c.n_heads {
            let c0 = h * dh;
            for qi in 0..t_len {
                let p = trace.attention.row(l, h, qi);
                let do_row = &d_o[qi * d + c0..qi * d + c0 + dh];
                let extra = upstream
                    .attention
                    .map(|g| &g[trace.attention.index(l, h, qi, 0)..][..t_len]);
                let mut dot = 0.0;
                for ki in 0..=qi {
                    let vrow = &cache.v[ki * d + c0..ki * d + c0 + dh];
                    let mut g: f64 = do_row.iter().zip(vrow).map(|(a, b)| a * b).sum();
                    if let Some(e) = extra {
                        g += e[ki];
                    }
                    dp[ki] = g;
                    dot += p[ki] * g;
                    let pk = p[ki];
                    if pk != 0.0 {
                        for (dvi, doi) in dv[ki * d + c0..ki * d + c0 + dh].iter_mut().zip(do_row) {
                            *dvi += pk * doi;
                        }
                    }
                }
                for ki in 0..=qi {
                    let ds = p[ki] * (dp[ki] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for j in 0..dh {
                        dq[qi * d + c0 + j] += ds * cache.k[ki * d + c0 + j];
                        dk[ki * d + c0 + j] += ds * cache.q[qi * d + c0 + j];
                    }
                }
            }
        }

        for (grad, w) in [(&dq, off.wq), (&dk, off.wk), (&dv, off.wv)] {
            matmul_at_b_acc(&cache.x_in, grad, t_len, d, d, &mut gbuf[w..w + d * d]);
            add_assign(&mut dx_in, &matmul_a_bt(grad, params.slice(w, d * d), t_len, d, d));
        }
        dx = dx_in;
    }

    let seg = &trace.segmentation;
    for (t, &sym) in trace.tokens.iter().enumerate() {
        let table = if seg.is_image(t) { layout.img } else { layout.tok };
        let g = &dx[t * d..(t + 1) * d];
        add_assign(&mut gbuf[table + sym * d..table + (sym + 1) * d], g);
        add_assign(&mut gbuf[layout.pos + t * d..layout.pos + (t + 1) * d], g);
    }
    Ok(grads)
}
