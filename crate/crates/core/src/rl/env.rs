//! Grounded lookup: a synthetic task whose answer lives only in the image.
//!
//! Each episode lays out
//!
//! ```text
//! system : SYS_0 .. SYS_{p-1} VAL_distractor
//! image  : 8 patches; `pairs` of them are (key, value) symbols, the rest blank
//! user   : ASK KEY_q
//! answer : [LOOK] ANS VAL_answer END
//! ```
//!
//! The distractor planted in the system span is always a wrong value, so a
//! model that copies from the system prompt scores zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::SeededRng;
use crate::segment::{Span, TokenSegmentation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LookupConfig {
    pub n_keys: usize,
    pub n_values: usize,
    /// Key/value pairs shown per image.
    pub pairs: usize,
    /// Image patches per episode (pairs plus blanks).
    pub image_len: usize,
    /// Fixed system preamble length (the distractor comes after it).
    pub preamble_len: usize,
    /// Fraction of reference answers that start with the LOOK anchor.
    pub anchor_rate: f64,
    /// Generation budget for sampled/greedy answers.
    pub max_new: usize,
}

impl Default for LookupConfig {
    fn default() -> Self {
        LookupConfig {
            n_keys: 6,
            n_values: 6,
            pairs: 3,
            image_len: 8,
            preamble_len: 3,
            anchor_rate: 0.5,
            max_new: 5,
        }
    }
}

/// Symbol ids of the text and image vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    cfg_keys: usize,
    cfg_values: usize,
    preamble: usize,
}

impl Vocabulary {
    pub fn sys(&self, i: usize) -> usize {
        i
    }
    pub fn ask(&self) -> usize {
        self.preamble
    }
    pub fn key(&self, k: usize) -> usize {
        self.preamble + 1 + k
    }
    pub fn value(&self, v: usize) -> usize {
        self.preamble + 1 + self.cfg_keys + v
    }
    pub fn ans(&self) -> usize {
        self.value(self.cfg_values)
    }
    pub fn end(&self) -> usize {
        self.ans() + 1
    }
    pub fn look(&self) -> usize {
        self.ans() + 2
    }
    pub fn text_size(&self) -> usize {
        self.ans() + 3
    }
    /// Value index of a text symbol, if it is a value.
    pub fn as_value(&self, symbol: usize) -> Option<usize> {
        let first = self.value(0);
        (first..first + self.cfg_values).contains(&symbol).then(|| symbol - first)
    }
    pub fn pair_patch(&self, key: usize, value: usize) -> usize {
        key * self.cfg_values + value
    }
    pub fn blank_patch(&self) -> usize {
        self.cfg_keys * self.cfg_values
    }
    pub fn image_size(&self) -> usize {
        self.blank_patch() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub prompt: Vec<usize>,
    /// Segmentation of the prompt alone (empty response span).
    pub segmentation: TokenSegmentation,
    pub answer_value: usize,
    pub distractor_value: usize,
    /// Reference answer in text symbols.
    pub reference: Vec<usize>,
}

impl Episode {
    /// Prompt plus reference answer with the response span set, for teacher forcing.
    pub fn teacher_forced(&self) -> (Vec<usize>, TokenSegmentation) {
        let mut tokens = self.prompt.clone();
        tokens.extend(&self.reference);
        let mut seg = self.segmentation.clone();
        seg.total_len = tokens.len();
        seg.response = Span::new(self.prompt.len(), tokens.len());
        (tokens, seg)
    }
}

/// Environment scores for one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Score {
    pub accuracy: bool,
    pub format: bool,
}

#[derive(Debug, Clone)]
pub struct GroundedLookup {
    cfg: LookupConfig,
    vocab: Vocabulary,
}

impl GroundedLookup {
    pub fn new(cfg: LookupConfig) -> Result<Self> {
        if cfg.pairs == 0 || cfg.pairs > cfg.n_keys || cfg.pairs > cfg.n_values {
            return Err(Error::InvalidConfig(format!(
                "pairs must be in 1..=min(n_keys, n_values), got {}",
                cfg.pairs
            )));
        }
        if cfg.n_values < 2 {
            return Err(Error::InvalidConfig("need at least two values for a distractor".into()));
        }
        if cfg.image_len < cfg.pairs {
            return Err(Error::InvalidConfig("image_len smaller than pairs".into()));
        }
        if cfg.max_new < 3 {
            return Err(Error::InvalidConfig("max_new must allow ANS VALUE END".into()));
        }
        if !(0.0..=1.0).contains(&cfg.anchor_rate) {
            return Err(Error::InvalidConfig("anchor_rate must lie in [0, 1]".into()));
        }
        Ok(GroundedLookup {
            cfg,
            vocab: Vocabulary {
                cfg_keys: cfg.n_keys,
                cfg_values: cfg.n_values,
                preamble: cfg.preamble_len,
            },
        })
    }

    pub fn config(&self) -> &LookupConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn prompt_len(&self) -> usize {
        self.cfg.preamble_len + 1 + self.cfg.image_len + 2
    }

    /// A model config sized for this task; the remaining fields come from `base`.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.text_size(),
            image_vocab_size: self.vocab.image_size(),
            max_seq_len: base.max_seq_len.max(self.prompt_len() + self.cfg.max_new),
            ..*base
        }
    }

    pub fn episode(&self, rng: &mut SeededRng) -> Episode {
        let c = &self.cfg;
        let v = &self.vocab;
        let mut keys: Vec<usize> = (0..c.n_keys).collect();
        rng.shuffle(&mut keys);
        let mut values: Vec<usize> = (0..c.n_values).collect();
        rng.shuffle(&mut values);
        let shown: Vec<(usize, usize)> = keys[..c.pairs].iter().copied().zip(values[..c.pairs].iter().copied()).collect();
        let (query_key, answer) = shown[rng.below(c.pairs)];
        let distractor = {
            let d = rng.below(c.n_values - 1);
            if d >= answer { d + 1 } else { d }
        };

        let mut prompt: Vec<usize> = (0..c.preamble_len).map(|i| v.sys(i)).collect();
        prompt.push(v.value(distractor));
        let mut patches = vec![v.blank_patch(); c.image_len];
        let mut slots: Vec<usize> = (0..c.image_len).collect();
        rng.shuffle(&mut slots);
        for (&slot, &(k, val)) in slots.iter().zip(&shown) {
            patches[slot] = v.pair_patch(k, val);
        }
        let image_start = prompt.len();
        prompt.extend(patches);
        let user_start = prompt.len();
        prompt.push(v.ask());
        prompt.push(v.key(query_key));

        let mut reference = Vec::with_capacity(4);
        if rng.unit() < c.anchor_rate {
            reference.push(v.look());
        }
        reference.extend([v.ans(), v.value(answer), v.end()]);

        let segmentation = TokenSegmentation::new(
            prompt.len(),
            Span::new(0, c.preamble_len + 1),
            vec![Span::new(image_start, user_start)],
            vec![Span::new(user_start, prompt.len())],
            Span::new(prompt.len(), prompt.len()),
        );
        Episode {
            prompt,
            segmentation,
            answer_value: answer,
            distractor_value: distractor,
            reference,
        }
    }

    /// Episodes `0..n` of the stream seeded by `seed`.
    pub fn episodes(&self, seed: u64, n: usize) -> Vec<Episode> {
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| self.episode(&mut rng)).collect()
    }

    /// Accuracy: the first ANS is immediately followed by the right value.
    /// Format: `LOOK* ANS VALUE END` and nothing else.
    pub fn score(&self, episode: &Episode, response: &[usize]) -> Score {
        let v = &self.vocab;
        let ans_pos = response.iter().position(|&s| s == v.ans());
        let answered = ans_pos.and_then(|i| response.get(i + 1)).and_then(|&s| v.as_value(s));
        let accuracy = answered == Some(episode.answer_value);
        let format = match ans_pos {
            Some(i) => {
                response[..i].iter().all(|&s| s == v.look())
                    && response.len() == i + 3
                    && v.as_value(response[i + 1]).is_some()
                    && response[i + 2] == v.end()
            }
            None => false,
        };
        Score { accuracy, format }
    }
}
