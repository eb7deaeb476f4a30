use avar_core::model::{
    backward, finite_diff_grad, forward, init_params, lm_loss, lm_loss_grad, max_relative_error, MicroModelParameters,
    ModelConfig, Upstream,
};
use avar_core::objectives::{AttentionScope, attention_loss_upstream, enhance_img_loss, suppress_sys_loss, AttentionTarget, LossWeights};
use avar_core::rl::{grpo_loss, grpo_loss_grad, rollout, GroundedLookup, LookupConfig, RLConfig};
use avar_core::rng::SeededRng;
use avar_core::train::{example_loss, example_loss_grad, Example};
use avar_core::Exec;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: [u64; 3] = [1, 2, 3];

fn setup(seed: u64) -> (GroundedLookup, MicroModelParameters, Example) {
    let env = GroundedLookup::new(LookupConfig::default()).unwrap();
    let cfg = env.model_config(&ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ..Default::default()
    });
    let params = init_params(&cfg, seed).unwrap();
    assert!(params.len() <= 5000, "{} parameters", params.len());
    let ep = &env.episodes(seed + 100, 1)[0];
    (env, params, Example::from(ep))
}

fn check(name: &str, analytic: &[f64], numeric: &[f64]) {
    let err = max_relative_error(analytic, numeric);
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("{name}: max relative error {err:.3e} (max |g| {scale:.3e})");
    assert!(scale > 0.0, "{name}: gradient identically zero");
    assert!(err <= TOL, "{name}: {err:.3e} > {TOL:e}");
}

#[test]
fn lm_loss_gradient() {
    for seed in SEEDS {
        let (_, p, ex) = setup(seed);
        let trace = forward(&p, &ex.tokens, &ex.segmentation).unwrap();
        let (_, dlogits) = lm_loss_grad(&trace, &ex.targets).unwrap();
        let g = backward(
            &p,
            &trace,
            Upstream {
                logits: Some(&dlogits),
                attention: None,
            },
        )
        .unwrap();
        let fd = finite_diff_grad(
            |q| lm_loss(&forward(q, &ex.tokens, &ex.segmentation)?, &ex.targets),
            &p,
            H,
            Exec::Parallel,
        )
        .unwrap();
        check(&format!("lm seed {seed}"), &g.0, &fd.0);
    }
}

fn attention_only(alpha: f64, beta: f64) -> LossWeights {
    LossWeights {
        alpha,
        beta,
        epsilon: 1e-6,
    }
}

#[test]
fn enhance_loss_gradient() {
    for seed in SEEDS {
        let (_, p, ex) = setup(seed);
        let trace = forward(&p, &ex.tokens, &ex.segmentation).unwrap();
        let target = AttentionTarget::all_layers(&trace.attention, ex.segmentation.response_indices());
        let up = attention_loss_upstream(&trace.attention, &ex.segmentation, &target, &attention_only(1.0, 0.0)).unwrap();
        let g = backward(
            &p,
            &trace,
            Upstream {
                logits: None,
                attention: Some(&up),
            },
        )
        .unwrap();
        let fd = finite_diff_grad(
            |q| {
                let t = forward(q, &ex.tokens, &ex.segmentation)?;
                enhance_img_loss(&t.attention, &ex.segmentation, &target, 1e-6)
            },
            &p,
            H,
            Exec::Parallel,
        )
        .unwrap();
        check(&format!("enhance seed {seed}"), &g.0, &fd.0);
    }
}

#[test]
fn suppress_loss_gradient() {
    for seed in SEEDS {
        let (_, p, ex) = setup(seed);
        let trace = forward(&p, &ex.tokens, &ex.segmentation).unwrap();
        let target = AttentionTarget::all_layers(&trace.attention, ex.segmentation.response_indices());
        let up = attention_loss_upstream(&trace.attention, &ex.segmentation, &target, &attention_only(0.0, 1.0)).unwrap();
        let g = backward(
            &p,
            &trace,
            Upstream {
                logits: None,
                attention: Some(&up),
            },
        )
        .unwrap();
        let fd = finite_diff_grad(
            |q| {
                let t = forward(q, &ex.tokens, &ex.segmentation)?;
                suppress_sys_loss(&t.attention, &ex.segmentation, &target, 1e-6)
            },
            &p,
            H,
            Exec::Parallel,
        )
        .unwrap();
        check(&format!("suppress seed {seed}"), &g.0, &fd.0);
    }
}

#[test]
fn total_loss_gradient() {
    let w = LossWeights::default();
    assert_eq!((w.alpha, w.beta, w.epsilon), (0.15, 0.15, 1e-6));
    for seed in SEEDS {
        let (_, p, ex) = setup(seed);
        let (_, g) = example_loss_grad(&p, &ex, &w, &AttentionScope::default()).unwrap();
        let fd = finite_diff_grad(|q| Ok(example_loss(q, &ex, &w, &AttentionScope::default())?.loss.total), &p, H, Exec::Parallel).unwrap();
        check(&format!("total seed {seed}"), &g.0, &fd.0);
    }
}

/// Moves every parameter by a small seeded amount.
fn nudge(p: &MicroModelParameters, seed: u64, size: f64) -> MicroModelParameters {
    let mut rng = SeededRng::new(seed);
    let data = p.as_slice().iter().map(|v| v + rng.symmetric(size)).collect();
    MicroModelParameters::from_vec(*p.config(), data).unwrap()
}

#[test]
fn grpo_loss_gradient() {
    for seed in SEEDS {
        let (env, p_old, _) = setup(seed);
        let reference = nudge(&p_old, seed + 10, 0.05);
        let cfg = RLConfig {
            group_size: 4,
            ..Default::default()
        };
        let episodes = env.episodes(seed + 200, 2);
        let mut groups: Vec<_> = episodes
            .iter()
            .enumerate()
            .map(|(i, ep)| rollout(&p_old, &reference, &env, ep, &cfg, seed * 7 + i as u64, Exec::Parallel).unwrap())
            .collect();
        // fixed non-degenerate advantages so the surrogate term is exercised
        let mut rng = SeededRng::new(seed + 30);
        for g in &mut groups {
            g.advantages = (0..g.trajectories.len()).map(|_| rng.symmetric(1.5)).collect();
        }
        let theta = nudge(&p_old, seed + 20, 0.01);
        let (stats, g) = grpo_loss_grad(&theta, &groups, &cfg, Exec::Parallel).unwrap();
        assert!(stats.kl > 0.0);
        let fd = finite_diff_grad(|q| Ok(grpo_loss(q, &groups, &cfg, Exec::Sequential)?.loss), &theta, H, Exec::Parallel)
            .unwrap();
        check(&format!("grpo seed {seed}"), &g.0, &fd.0);
    }
}
