use crate::attention::AttentionTensor;
use crate::error::Result;
use crate::intervention::InterventionConfig;
use crate::segment::{Span, TokenSegmentation};

use super::forward::forward_with;
use super::MicroModelParameters;

/// Result of a decoding run.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated symbols only (the prompt is not repeated).
    pub tokens: Vec<usize>,
    /// Prompt followed by the generated symbols.
    pub sequence: Vec<usize>,
    /// Segmentation of `sequence`, with the response span covering the output.
    pub segmentation: TokenSegmentation,
    /// Attention of a forward pass over the full sequence, under the same
    /// intervention. Causal rows match the per-step passes.
    pub attention: AttentionTensor,
}

/// Segmentation of `prompt_seg` extended by `extra` response positions.
pub(crate) fn extend_response(prompt_seg: &TokenSegmentation, prompt_len: usize, extra: usize) -> TokenSegmentation {
    let mut seg = prompt_seg.clone();
    seg.total_len = prompt_len + extra;
    seg.response = Span::new(prompt_len, prompt_len + extra);
    seg
}

pub fn greedy_decode(
    params: &MicroModelParameters,
    prompt: &[usize],
    seg: &TokenSegmentation,
    max_new: usize,
    end_symbol: Option<usize>,
) -> Result<Generation> {
    generate_with_intervention(params, prompt, seg, None, max_new, end_symbol)
}

/// Greedy decoding with full re-forward per step. Ties go to the lowest id.
/// Stops after `max_new` symbols, at `end_symbol`, or at `max_seq_len`.
pub fn generate_with_intervention(
    params: &MicroModelParameters,
    prompt: &[usize],
    seg: &TokenSegmentation,
    intervention: Option<&InterventionConfig>,
    max_new: usize,
    end_symbol: Option<usize>,
) -> Result<Generation> {
    decode(params, prompt, seg, intervention, max_new, end_symbol, |row| argmax(row))
}

pub(crate) fn decode(
    params: &MicroModelParameters,
    prompt: &[usize],
    seg: &TokenSegmentation,
    intervention: Option<&InterventionConfig>,
    max_new: usize,
    end_symbol: Option<usize>,
    mut pick: impl FnMut(&[f64]) -> usize,
) -> Result<Generation> {
    let p = prompt.len();
    let mut sequence = prompt.to_vec();
    let budget = max_new.min(params.config().max_seq_len.saturating_sub(p));
    for _ in 0..budget {
        let step_seg = extend_response(seg, p, sequence.len() - p);
        let trace = forward_with(params, &sequence, &step_seg, intervention)?;
        let next = pick(trace.logits_row(sequence.len() - 1));
        sequence.push(next);
        if Some(next) == end_symbol {
            break;
        }
    }
    let segmentation = extend_response(seg, p, sequence.len() - p);
    let attention = forward_with(params, &sequence, &segmentation, intervention)?.attention;
    Ok(Generation {
        tokens: sequence[p..].to_vec(),
        sequence,
        segmentation,
        attention,
    })
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
