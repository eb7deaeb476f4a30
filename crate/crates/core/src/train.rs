//! Supervised cold-start training on grounded lookup, and evaluation.
//!
//! Each example is the prompt followed by the reference answer. The loss is
//! `L_LM + alpha L_enhance + beta L_suppress` with the attention terms taken
//! over an [`AttentionScope`] (every layer and the response rows by default).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{
    backward, forward, greedy_decode, lm_loss_grad, Gradients, MicroModelParameters, Optimizer, OptimizerKind,
    Upstream,
};
use crate::objectives::{
    attention_loss_upstream, attention_losses, mean_image_mass, total_loss, AttentionScope, LossBreakdown,
    LossWeights,
};
use crate::rl::{Episode, GroundedLookup};
use crate::rng::SeededRng;
use crate::segment::TokenSegmentation;
use crate::vas::{mean, vas_per_head};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Gradient L2 norm cap; `0` disables clipping.
    pub max_grad_norm: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub scope: AttentionScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 16,
            learning_rate: 0.003,
            optimizer: OptimizerKind::Adam,
            max_grad_norm: 1.0,
            weight_decay: 0.0,
            seed: 0,
            weights: LossWeights::default(),
            scope: AttentionScope::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        self.weights.validate()?;
        if self.scope.layers.as_ref().is_some_and(|l| l.is_empty()) {
            return Err(Error::InvalidConfig("scope.layers is empty".into()));
        }
        self.optimizer().map(|_| ())
    }

    fn optimizer(&self) -> Result<Optimizer> {
        Optimizer::new(self.optimizer, self.learning_rate, self.max_grad_norm)?.with_weight_decay(self.weight_decay)
    }
}

/// One logged optimizer step (batch means, before the update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub lm: f64,
    pub enhance_img: f64,
    pub suppress_sys: f64,
    pub total: f64,
    #[serde(rename = "mean_image_attention_mass")]
    pub image_mass: f64,
    #[serde(rename = "vas_model")]
    pub vas: f64,
}

/// A teacher-forced example: `targets` are the response symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub segmentation: TokenSegmentation,
    pub targets: Vec<usize>,
}

impl From<&Episode> for Example {
    fn from(ep: &Episode) -> Self {
        let (tokens, segmentation) = ep.teacher_forced();
        Example {
            targets: ep.reference.clone(),
            tokens,
            segmentation,
        }
    }
}

/// Per-example statistics returned with the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleStats {
    pub loss: LossBreakdown,
    pub image_mass: f64,
    pub vas: f64,
}

fn stats_of(
    params: &MicroModelParameters,
    ex: &Example,
    weights: &LossWeights,
    scope: &AttentionScope,
    want_grad: bool,
) -> Result<(ExampleStats, Option<Gradients>)> {
    let trace = forward(params, &ex.tokens, &ex.segmentation)?;
    let (lm, dlogits) = lm_loss_grad(&trace, &ex.targets)?;
    let target = scope.target(&trace.attention, &ex.segmentation);
    let (enh, sup) = attention_losses(&trace.attention, &ex.segmentation, &target, weights.epsilon)?;
    let loss = total_loss(lm, enh, sup, weights)?;
    let image_mass = mean_image_mass(&trace.attention, &ex.segmentation, &target);
    let vas = mean(&vas_per_head(&trace.attention, &ex.segmentation, &target.queries, false)?.concat());
    let grads = if want_grad {
        let dattn = weights
            .uses_attention()
            .then(|| attention_loss_upstream(&trace.attention, &ex.segmentation, &target, weights))
            .transpose()?;
        Some(backward(
            params,
            &trace,
            Upstream {
                logits: Some(&dlogits),
                attention: dattn.as_deref(),
            },
        )?)
    } else {
        None
    };
    Ok((ExampleStats { loss, image_mass, vas }, grads))
}

/// `L_total` of one example (no gradient).
pub fn example_loss(
    params: &MicroModelParameters,
    ex: &Example,
    weights: &LossWeights,
    scope: &AttentionScope,
) -> Result<ExampleStats> {
    Ok(stats_of(params, ex, weights, scope, false)?.0)
}

/// `L_total` of one example and its gradient.
pub fn example_loss_grad(
    params: &MicroModelParameters,
    ex: &Example,
    weights: &LossWeights,
    scope: &AttentionScope,
) -> Result<(ExampleStats, Gradients)> {
    let (s, g) = stats_of(params, ex, weights, scope, true)?;
    Ok((s, g.expect("gradient requested")))
}

/// Batch-mean loss statistics and gradient. Summation runs in example order,
/// so the result is identical under either execution mode.
pub fn batch_loss_grad(
    params: &MicroModelParameters,
    batch: &[Example],
    weights: &LossWeights,
    scope: &AttentionScope,
    exec: Exec,
) -> Result<(ExampleStats, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let parts = exec.try_map(batch.len(), |i| {
        example_loss_grad(params, &batch[i], weights, scope).map_err(|e| e.at_sample(i))
    })?;
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros(params.len());
    let mut acc = ExampleStats {
        loss: LossBreakdown::default(),
        image_mass: 0.0,
        vas: 0.0,
    };
    for (s, g) in &parts {
        grads.add_scaled(g, 1.0 / n);
        acc.loss.lm += s.loss.lm / n;
        acc.loss.enhance_img += s.loss.enhance_img / n;
        acc.loss.suppress_sys += s.loss.suppress_sys / n;
        acc.loss.total += s.loss.total / n;
        acc.image_mass += s.image_mass / n;
        acc.vas += s.vas / n;
    }
    Ok((acc, grads))
}

/// Result of [`train_cold_start`].
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: MicroModelParameters,
    pub history: Vec<TrainRecord>,
}

/// Batch `step` of the training stream seeded by `seed`.
pub fn training_batch(env: &GroundedLookup, seed: u64, step: usize, batch_size: usize) -> Vec<Example> {
    let mut rng = SeededRng::derive(seed, step as u64);
    (0..batch_size).map(|_| Example::from(&env.episode(&mut rng))).collect()
}

pub fn train_cold_start(
    params: &MicroModelParameters,
    env: &GroundedLookup,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainRun> {
    cfg.validate()?;
    let mut opt = cfg.optimizer()?;
    let mut params = params.clone();
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = training_batch(env, cfg.seed, step, cfg.batch_size);
        let (s, grads) = batch_loss_grad(&params, &batch, &cfg.weights, &cfg.scope, exec)?;
        params = opt.step(&params, &grads)?;
        history.push(TrainRecord {
            step,
            lm: s.loss.lm,
            enhance_img: s.loss.enhance_img,
            suppress_sys: s.loss.suppress_sys,
            total: s.loss.total,
            image_mass: s.image_mass,
            vas: s.vas,
        });
    }
    Ok(TrainRun { params, history })
}

/// Held-out scores.
///
/// `accuracy`/`format_rate` come from greedy answers. `vas_reference` and
/// `image_mass` are measured on the reference answers under teacher forcing
/// (response query rows, every layer). `vas_generated` is measured on the
/// greedy answers over the rows that produced each answer symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub format_rate: f64,
    pub vas_reference: f64,
    pub image_mass: f64,
    pub vas_generated: f64,
}

/// Rows `P-1 .. P+n-2`: the positions whose logits produced each response symbol.
pub fn generation_rows(seg: &TokenSegmentation) -> Vec<usize> {
    let r = seg.response;
    (r.start.saturating_sub(1)..r.end.saturating_sub(1)).collect()
}

pub fn evaluate(
    params: &MicroModelParameters,
    env: &GroundedLookup,
    episodes: &[Episode],
    exec: Exec,
) -> Result<Evaluation> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weights = LossWeights::off();
    let scope = AttentionScope::default();
    let rows = exec.try_map(episodes.len(), |i| {
        let ep = &episodes[i];
        let s = example_loss(params, &Example::from(ep), &weights, &scope).map_err(|e| e.at_sample(i))?;
        let gen = greedy_decode(
            params,
            &ep.prompt,
            &ep.segmentation,
            env.config().max_new,
            Some(env.vocab().end()),
        )
        .map_err(|e| e.at_sample(i))?;
        let score = env.score(ep, &gen.tokens);
        let rows = generation_rows(&gen.segmentation);
        let vas_gen = mean(&vas_per_head(&gen.attention, &gen.segmentation, &rows, false)?.concat());
        Ok::<_, Error>((score, s.vas, s.image_mass, vas_gen))
    })?;
    let n = rows.len() as f64;
    let sum = |f: &dyn Fn(&(crate::rl::Score, f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(Evaluation {
        accuracy: sum(&|r| f64::from(u8::from(r.0.accuracy))),
        format_rate: sum(&|r| f64::from(u8::from(r.0.format))),
        vas_reference: sum(&|r| r.1),
        image_mass: sum(&|r| r.2),
        vas_generated: sum(&|r| r.3),
    })
}
