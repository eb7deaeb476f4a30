#![allow(dead_code)]

use avar_core::rng::SeededRng;
use avar_core::{AttentionTensor, Span, TokenSegmentation};

/// A random valid layout of length `t` with non-empty system, image and user
/// sets. Under `system_first` the system block opens the sequence, so every
/// causal row sees at least one system key.
pub fn random_segmentation(rng: &mut SeededRng, t: usize, system_first: bool) -> TokenSegmentation {
    assert!(t >= 3);
    // block kinds: 0 system, 1 image, 2 user, 3 response
    let mut kinds = vec![1, 2];
    for extra in [1, 2, 3] {
        if kinds.len() + 1 < t && rng.unit() < 0.5 {
            kinds.push(extra);
        }
    }
    rng.shuffle(&mut kinds);
    if system_first {
        kinds.insert(0, 0);
    } else {
        kinds.insert(rng.below(kinds.len() + 1), 0);
    }
    // one response block at most
    let mut seen_response = false;
    kinds.retain(|&k| k != 3 || !std::mem::replace(&mut seen_response, true));

    let used = kinds.len() + rng.below(t - kinds.len() + 1);
    let mut lens = vec![1; kinds.len()];
    for _ in kinds.len()..used {
        let i = rng.below(lens.len());
        lens[i] += 1;
    }
    let mut seg = TokenSegmentation::new(t, Span::empty(), vec![], vec![], Span::empty());
    let mut at = 0;
    for (&k, &n) in kinds.iter().zip(&lens) {
        let span = Span::new(at, at + n);
        match k {
            0 => seg.system = span,
            1 => seg.image.push(span),
            2 => seg.user.push(span),
            _ => seg.response = span,
        }
        at += n;
    }
    seg.validate().unwrap();
    seg
}

/// Row-stochastic attention with entries bounded away from zero on the
/// admissible keys.
pub fn random_attention(rng: &mut SeededRng, layers: usize, heads: usize, t: usize, causal: bool) -> AttentionTensor {
    let mut a = AttentionTensor::zeros(layers, heads, t, causal);
    for l in 0..layers {
        for h in 0..heads {
            for q in 0..t {
                let n = if causal { q + 1 } else { t };
                let row = a.row_mut(l, h, q);
                let mut s = 0.0;
                for w in &mut row[..n] {
                    *w = 0.05 + rng.unit();
                    s += *w;
                }
                row[..n].iter_mut().for_each(|w| *w /= s);
            }
        }
    }
    a
}

/// `(attention, segmentation)` with L, H in 1..=4 and T in 3..=16.
pub fn random_case(rng: &mut SeededRng) -> (AttentionTensor, TokenSegmentation) {
    let layers = 1 + rng.below(4);
    let heads = 1 + rng.below(4);
    let t = 3 + rng.below(14);
    let causal = rng.unit() < 0.5;
    let seg = random_segmentation(rng, t, causal);
    (random_attention(rng, layers, heads, t, causal), seg)
}
