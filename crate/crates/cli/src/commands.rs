//! Subcommand bodies. Each prints one JSON line to `out`, then a
//! human-readable summary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use avar_core::dump;
use avar_core::experiment::{eval_seed, experiment_compare, initial_params};
use avar_core::intervention::{reallocate, InterventionConfig, Redistribution};
use avar_core::model::{
    finite_diff_grad, generate_with_intervention, init_params, load_checkpoint, max_relative_error, save_checkpoint,
    Checkpoint, MicroModelParameters, ModelConfig,
};
use avar_core::objectives::{AttentionScope, LossWeights};
use avar_core::rl::{train_rl, GroundedLookup};
use avar_core::train::{evaluate, example_loss, example_loss_grad, generation_rows, train_cold_start, Example};
use avar_core::vas::{aggregate_vas, classify_band, mean, pearson, vas_model, vas_per_head, vas_report, Sample, VasOptions};
use avar_core::Exec;
use avar_synth::{
    demo_inputs, read_inputs, run_pipeline, GenParams, GeneratorClient, HttpClient, Lexicon, MockClient,
    PipelineConfig, StageClients, Templates,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cli::*;
use crate::config::{check_paths, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{curves_svg, heatmap_svg, table, Series};

pub struct Ctx<'a> {
    pub exec: Exec,
    pub out: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn emit(&mut self, summary: &impl Serialize, text: &str) -> CliResult<()> {
        let line = serde_json::to_string(summary)?;
        writeln!(self.out, "{line}").and_then(|_| self.out.write_all(text.as_bytes())).map_err(stdout_err)
    }
}

fn stdout_err(e: std::io::Error) -> CliError {
    CliError::backend(format!("stdout: {e}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::output(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_file(path, &buf)
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

fn env_of(cfg: &RunConfig) -> CliResult<GroundedLookup> {
    Ok(GroundedLookup::new(cfg.env)?)
}

/// Checkpoint parameters if a path is given, fresh ones from `seed` otherwise.
fn start_params(
    env: &GroundedLookup,
    model: &ModelConfig,
    ckpt: Option<&Path>,
    seed: u64,
) -> CliResult<MicroModelParameters> {
    match ckpt {
        Some(p) => load_checkpoint(p)
            .map(|c| c.params)
            .map_err(|e| CliError::invalid(format!("{}: {e}", p.display()))),
        None => Ok(initial_params(env, model, seed)?),
    }
}

pub fn analyze(ctx: &mut Ctx<'_>, a: &AnalyzeArgs) -> CliResult<()> {
    let outputs: Vec<&Path> = [&a.json, &a.csv, &a.svg].into_iter().flatten().map(PathBuf::as_path).collect();
    check_paths(&a.dumps.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &outputs)?;
    let dumps = a
        .dumps
        .iter()
        .map(|p| dump::load(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    let opts = VasOptions {
        query_kind: a.queries,
        strict: a.strict,
    };
    let samples: Vec<Sample<'_>> = dumps
        .iter()
        .zip(&a.dumps)
        .map(|(d, p)| Sample {
            id: d.sample_id.clone().unwrap_or_else(|| p.display().to_string()),
            attention: &d.attention,
            segmentation: &d.segmentation,
        })
        .collect();
    let agg = aggregate_vas(&samples, opts, ctx.exec)?;
    // Per-head grids are averaged across dumps, which requires a common shape.
    let reports = dumps
        .iter()
        .map(|d| vas_report(&d.attention, &d.segmentation, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let shape = |r: &avar_core::vas::VasReport| (r.per_head.len(), r.per_head.first().map_or(0, Vec::len));
    if reports.iter().any(|r| shape(r) != shape(&reports[0])) {
        return Err(CliError::invalid("dumps differ in layer/head count"));
    }
    let n = reports.len() as f64;
    let (layers, heads) = shape(&reports[0]);
    let per_head: Vec<Vec<f64>> = (0..layers)
        .map(|l| (0..heads).map(|h| reports.iter().map(|r| r.per_head[l][h]).sum::<f64>() / n).collect())
        .collect();
    let per_layer: Vec<f64> = per_head.iter().map(|row| mean(row)).collect();
    let band = classify_band(agg.mean)?;
    let summary = json!({
        "model_level": agg.mean,
        "band": band,
        "query_set_kind": a.queries,
        "per_layer": per_layer,
        "per_head": per_head,
        "samples": agg.samples,
    });
    if let Some(p) = &a.json {
        write_file(p, format!("{}\n", serde_json::to_string_pretty(&summary)?).as_bytes())?;
    }
    if let Some(p) = &a.csv {
        let mut s = String::from("layer,head,vas\n");
        for (l, row) in per_head.iter().enumerate() {
            for (h, v) in row.iter().enumerate() {
                s.push_str(&format!("{l},{h},{v}\n"));
            }
        }
        s.push_str(&format!("model,-,{}\n", agg.mean));
        write_file(p, s.as_bytes())?;
    }
    if let Some(p) = &a.svg {
        let title = format!("VAS per head ({} queries, {} dumps)", a.queries, dumps.len());
        write_file(p, heatmap_svg(&title, &per_head).as_bytes())?;
    }
    let rows: Vec<Vec<String>> = per_layer
        .iter()
        .enumerate()
        .map(|(l, v)| {
            let mut r = vec![format!("layer {l}"), f(*v)];
            r.extend(per_head[l].iter().map(|x| f(*x)));
            r
        })
        .collect();
    let head_names: Vec<String> = (0..heads).map(|h| format!("h{h}")).collect();
    let mut header = vec!["", "mean"];
    header.extend(head_names.iter().map(String::as_str));
    let text = format!(
        "model VAS {} ({band}, {} queries, {} dumps)\n{}",
        f(agg.mean),
        a.queries,
        dumps.len(),
        table(&header, &rows)
    );
    ctx.emit(&summary, &text)
}

pub fn band(ctx: &mut Ctx<'_>, vas: f64) -> CliResult<()> {
    let b = classify_band(vas)?;
    writeln!(ctx.out, "{b}").map_err(stdout_err)
}

pub fn correlate(ctx: &mut Ctx<'_>, x: &[f64], y: &[f64]) -> CliResult<()> {
    let r = pearson(x, y)?;
    ctx.emit(&json!({"r": r, "n": x.len()}), &format!("r = {r:.6} over {} points\n", x.len()))
}

pub fn train(ctx: &mut Ctx<'_>, a: &TrainArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed.or(cfg.seed) {
        cfg.train.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(v) = a.alpha {
        cfg.train.weights.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.train.weights.beta = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    let history = a.history.clone().or(cfg.paths.output.clone());
    let ckpt_out = a.out.clone().or(cfg.paths.checkpoint_out.clone());
    let init = cfg.paths.checkpoint.clone();
    check_paths(
        &init.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
        &[&history, &ckpt_out].into_iter().flatten().map(PathBuf::as_path).collect::<Vec<_>>(),
    )?;
    cfg.train.validate()?;
    let env = env_of(&cfg)?;
    let seed = cfg.train.seed;
    let params = start_params(&env, &cfg.model, init.as_deref(), seed)?;
    let run = train_cold_start(&params, &env, &cfg.train, ctx.exec)?;
    if let Some(p) = &history {
        write_jsonl(p, &run.history)?;
    }
    if let Some(p) = &ckpt_out {
        let ck = Checkpoint {
            params: run.params.clone(),
            seed,
            step: cfg.train.steps as u64,
        };
        save_checkpoint(p, &ck).map_err(|e| CliError::output(p, e))?;
    }
    let held_out = env.episodes(eval_seed(seed), cfg.experiment.eval_episodes.max(1));
    let eval = evaluate(&run.params, &env, &held_out, ctx.exec)?;
    let last = run.history.last();
    let summary = json!({
        "steps": cfg.train.steps,
        "seed": seed,
        "alpha": cfg.train.weights.alpha,
        "beta": cfg.train.weights.beta,
        "final": last,
        "eval": eval,
    });
    let rows = vec![
        vec!["accuracy".into(), f(eval.accuracy)],
        vec!["format rate".into(), f(eval.format_rate)],
        vec!["VAS (reference)".into(), f(eval.vas_reference)],
        vec!["VAS (generated)".into(), f(eval.vas_generated)],
        vec!["image mass".into(), f(eval.image_mass)],
    ];
    let text = format!(
        "trained {} steps (seed {seed}, alpha {}, beta {}) on {} held-out episodes\n{}",
        cfg.train.steps,
        cfg.train.weights.alpha,
        cfg.train.weights.beta,
        held_out.len(),
        table(&["metric", "value"], &rows)
    );
    ctx.emit(&summary, &text)
}

/// Small model used by `gradcheck`; well under 5k parameters.
fn gradcheck_model(env: &GroundedLookup) -> ModelConfig {
    env.model_config(&ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ..Default::default()
    })
}

pub fn gradcheck(ctx: &mut Ctx<'_>, a: &GradcheckArgs) -> CliResult<()> {
    if !(a.h > 0.0 && a.tol > 0.0) {
        return Err(CliError::invalid("--h and --tol must be positive"));
    }
    let env = GroundedLookup::new(Default::default())?;
    let model = gradcheck_model(&env);
    let scope = AttentionScope::default();
    let losses = [
        ("lm", LossWeights::off()),
        (
            "enhance_img",
            LossWeights {
                alpha: 1.0,
                beta: 0.0,
                epsilon: 1e-6,
            },
        ),
        (
            "suppress_sys",
            LossWeights {
                alpha: 0.0,
                beta: 1.0,
                epsilon: 1e-6,
            },
        ),
        ("total", LossWeights::default()),
    ];
    let mut results = Vec::new();
    for &seed in &a.seeds {
        let params = init_params(&model, seed)?;
        let ex = Example::from(&env.episodes(seed + 100, 1)[0]);
        for (name, w) in &losses {
            let (_, g) = example_loss_grad(&params, &ex, w, &scope)?;
            let fd = finite_diff_grad(|p| Ok(example_loss(p, &ex, w, &scope)?.loss.total), &params, a.h, ctx.exec)?;
            let err = max_relative_error(&g.0, &fd.0);
            results.push(json!({"seed": seed, "loss": name, "max_relative_error": err, "pass": err <= a.tol}));
        }
    }
    let pass = results.iter().all(|r| r["pass"] == true);
    let summary = json!({"parameters": model.param_count(), "h": a.h, "tol": a.tol, "pass": pass, "results": results});
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r["seed"].to_string(),
                r["loss"].as_str().unwrap_or_default().to_string(),
                format!("{:.3e}", r["max_relative_error"].as_f64().unwrap_or(f64::NAN)),
                if r["pass"] == true { "ok" } else { "FAIL" }.to_string(),
            ]
        })
        .collect();
    ctx.emit(&summary, &table(&["seed", "loss", "max rel err", ""], &rows))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::invalid(format!("gradient check exceeded tolerance {:e}", a.tol)))
    }
}

pub fn rl(ctx: &mut Ctx<'_>, a: &RlArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed.or(cfg.seed) {
        cfg.rl.seed = s;
    }
    let r = &mut cfg.rl;
    if let Some(v) = a.steps {
        r.steps = v;
    }
    if let Some(v) = a.lambda_v {
        r.reward.lambda_v = v;
    }
    if let Some(v) = a.lambda_f {
        r.reward.lambda_f = v;
    }
    if let Some(v) = a.group {
        r.group_size = v;
    }
    if let Some(v) = a.clip {
        r.clip_range = v;
    }
    if let Some(v) = a.kl {
        r.kl_coeff = v;
    }
    if let Some(v) = a.lr {
        r.learning_rate = v;
    }
    let init = a.ckpt.clone().or(cfg.paths.checkpoint.clone());
    let history = a.history.clone().or(cfg.paths.output.clone());
    let ckpt_out = a.out.clone().or(cfg.paths.checkpoint_out.clone());
    check_paths(
        &init.iter().map(PathBuf::as_path).collect::<Vec<_>>(),
        &[&history, &ckpt_out].into_iter().flatten().map(PathBuf::as_path).collect::<Vec<_>>(),
    )?;
    cfg.rl.validate()?;
    let env = env_of(&cfg)?;
    let seed = cfg.rl.seed;
    let params = start_params(&env, &cfg.model, init.as_deref(), seed)?;
    let run = train_rl(&params, &env, &cfg.rl, ctx.exec)?;
    if let Some(p) = &history {
        write_jsonl(p, &run.history)?;
    }
    if let Some(p) = &ckpt_out {
        let ck = Checkpoint {
            params: run.params.clone(),
            seed,
            step: cfg.rl.steps as u64,
        };
        save_checkpoint(p, &ck).map_err(|e| CliError::output(p, e))?;
    }
    let last = run.history.last();
    let summary = json!({
        "steps": cfg.rl.steps,
        "seed": seed,
        "lambda_v": cfg.rl.reward.lambda_v,
        "lambda_f": cfg.rl.reward.lambda_f,
        "final": last,
    });
    let rows: Vec<Vec<String>> = last
        .map(|r| {
            vec![
                vec!["mean reward".into(), f(r.mean_reward)],
                vec!["mean accuracy".into(), f(r.mean_accuracy)],
                vec!["mean visual reward".into(), f(r.mean_visual_reward)],
                vec!["mean VAS".into(), f(r.mean_vas)],
                vec!["KL".into(), format!("{:.3e}", r.kl)],
            ]
        })
        .unwrap_or_default();
    let text = format!(
        "GRPO {} steps (seed {seed}, lambda_v {}, lambda_f {}); last batch:\n{}",
        cfg.rl.steps,
        cfg.rl.reward.lambda_v,
        cfg.rl.reward.lambda_f,
        table(&["metric", "value"], &rows)
    );
    ctx.emit(&summary, &text)
}

fn layer_selection(range: Option<&str>) -> CliResult<Option<Vec<usize>>> {
    range.map(parse_layers).transpose().map_err(CliError::invalid)
}

pub fn intervene(ctx: &mut Ctx<'_>, a: &InterveneArgs) -> CliResult<()> {
    check_paths(&[&a.dump], &[&a.out])?;
    let cfg = InterventionConfig {
        gamma: a.gamma,
        layers: layer_selection(a.layers.as_deref())?,
        redistribution: if a.image_only {
            Redistribution::ImageOnly
        } else {
            Redistribution::Proportional
        },
    };
    let d = dump::load(&a.dump).map_err(|e| CliError::invalid(format!("{}: {e}", a.dump.display())))?;
    let after = reallocate(&d.attention, &d.segmentation, &cfg)?;
    let opts = VasOptions::new(a.queries);
    let before_vas = vas_model(&d.attention, &d.segmentation, opts)?;
    let after_vas = vas_model(&after, &d.segmentation, opts)?;
    let bytes = dump::write_dump(&after, &d.segmentation, d.sample_id.as_deref())?;
    write_file(&a.out, &bytes)?;
    let summary = json!({"vas_before": before_vas, "vas_after": after_vas, "gamma": a.gamma});
    let text = format!(
        "VAS {} -> {} (gamma {}, ratio {:.4})\nwrote {}\n",
        f(before_vas),
        f(after_vas),
        a.gamma,
        after_vas / before_vas,
        a.out.display()
    );
    ctx.emit(&summary, &text)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GenStats {
    pub vas: f64,
    pub accuracy: f64,
}

/// Greedy decoding over `n` episodes drawn from `seed`. VAS is read on the
/// rows that produced each answer symbol.
pub fn decode_stats(
    params: &MicroModelParameters,
    env: &GroundedLookup,
    seed: u64,
    n: usize,
    cfg: Option<&InterventionConfig>,
    exec: Exec,
) -> CliResult<GenStats> {
    let episodes = env.episodes(seed, n);
    let per = exec.try_map(episodes.len(), |i| {
        let ep = &episodes[i];
        let g = generate_with_intervention(
            params,
            &ep.prompt,
            &ep.segmentation,
            cfg,
            env.config().max_new,
            Some(env.vocab().end()),
        )?;
        let rows = generation_rows(&g.segmentation);
        let vas = mean(&vas_per_head(&g.attention, &g.segmentation, &rows, false)?.concat());
        Ok::<_, avar_core::Error>((vas, env.score(ep, &g.tokens).accuracy))
    })?;
    let k = per.len() as f64;
    Ok(GenStats {
        vas: per.iter().map(|p| p.0).sum::<f64>() / k,
        accuracy: per.iter().filter(|p| p.1).count() as f64 / k,
    })
}

pub fn gen(ctx: &mut Ctx<'_>, a: &GenArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let ckpt = a.ckpt.clone().or(cfg.paths.checkpoint.clone());
    check_paths(&ckpt.iter().map(PathBuf::as_path).collect::<Vec<_>>(), &[])?;
    if a.episodes == 0 {
        return Err(CliError::invalid("--episodes must be >= 1"));
    }
    let Task::GroundedLookup = a.task;
    let env = env_of(&cfg)?;
    let params = start_params(&env, &cfg.model, ckpt.as_deref(), a.seed)?;
    let icfg = InterventionConfig {
        gamma: a.gamma,
        layers: layer_selection(a.layers.as_deref())?.or(cfg.intervention.layers.clone()),
        redistribution: cfg.intervention.redistribution,
    };
    icfg.validate(params.config().n_layers)?;
    let stream = eval_seed(a.seed);
    let before = decode_stats(&params, &env, stream, a.episodes, None, ctx.exec)?;
    let after = decode_stats(&params, &env, stream, a.episodes, Some(&icfg), ctx.exec)?;
    let summary = json!({
        "vas_before": before.vas,
        "vas_after": after.vas,
        "gamma": a.gamma,
        "accuracy_before": before.accuracy,
        "accuracy_after": after.accuracy,
    });
    let rows = vec![
        vec!["baseline".into(), f(before.vas), f(before.accuracy)],
        vec![format!("gamma {}", a.gamma), f(after.vas), f(after.accuracy)],
    ];
    let text = format!(
        "greedy decoding on {} episodes (seed {})\n{}",
        a.episodes,
        a.seed,
        table(&["run", "VAS", "accuracy"], &rows)
    );
    ctx.emit(&summary, &text)
}

pub fn synth(ctx: &mut Ctx<'_>, a: &SynthArgs) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let s = &cfg.synth;
    let inputs_path: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    check_paths(&inputs_path, &[&a.out])?;
    if let Some(t) = &s.templates {
        if !t.is_dir() {
            return Err(CliError::input(t, "templates directory not found"));
        }
    }
    let mut inputs = match &a.input {
        Some(p) => {
            let file = File::open(p).map_err(|e| CliError::input(p, e))?;
            read_inputs(BufReader::new(file)).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?
        }
        None => demo_inputs(a.n.unwrap_or(100)),
    };
    if let Some(n) = a.n {
        inputs.truncate(n);
    }
    let pcfg = PipelineConfig {
        concurrency: a.concurrency.unwrap_or(s.concurrency),
        anchor_every: a.rule_every.or(s.rule_anchor_every).unwrap_or(3),
        params: GenParams {
            max_tokens: s.max_tokens,
            temperature: s.temperature,
        },
        templates: match &s.templates {
            Some(dir) => Templates::from_dir(dir)?,
            None => Templates::default(),
        },
        lexicon: match &s.lexicon {
            Some(words) => Lexicon::new(words.clone())?,
            None => Lexicon::default(),
        },
    };
    let client: Box<dyn GeneratorClient> = match a.backend {
        Backend::Mock => Box::new(MockClient::new()),
        Backend::Http => {
            let endpoint = a
                .endpoint
                .clone()
                .or(s.endpoint.clone())
                .ok_or_else(|| CliError::invalid("the http backend needs --endpoint or synth.endpoint"))?;
            Box::new(HttpClient::from_env(endpoint)?.with_retries(s.max_attempts, Duration::from_millis(500))?)
        }
    };
    let rule = a.rule_every.is_some() || s.rule_anchor_every.is_some();
    let clients = StageClients {
        describe: client.as_ref(),
        reason: client.as_ref(),
        anchor: if rule { None } else { Some(client.as_ref()) },
    };
    let file = File::create(&a.out).map_err(|e| CliError::output(&a.out, e))?;
    let mut w = BufWriter::new(file);
    let summary = run_pipeline(&inputs, clients, &pcfg, &mut w)?;
    let text = format!(
        "{} inputs, {} records, {} failed; anchors total {} (mean {:.2}, min {}, max {})\nwrote {}\n",
        summary.inputs,
        summary.records,
        summary.failed,
        summary.anchors.total,
        summary.anchors.mean,
        summary.anchors.min,
        summary.anchors.max,
        a.out.display()
    );
    ctx.emit(&summary, &text)?;
    for fl in &summary.failures {
        eprintln!("failed input {} ({}): {}", fl.index, fl.id, fl.error);
    }
    if summary.success() {
        Ok(())
    } else {
        Err(CliError::backend(format!("{} of {} inputs failed", summary.failed, summary.inputs)))
    }
}

/// First present key of `row`, looking one level into `eval` as well.
fn pick(row: &Value, keys: &[&str]) -> Option<f64> {
    keys.iter().find_map(|k| {
        let (head, tail) = k.split_once('.').unwrap_or((k, ""));
        let v = &row[head];
        if tail.is_empty() {
            v.as_f64()
        } else {
            v[tail].as_f64()
        }
    })
}

pub fn report(ctx: &mut Ctx<'_>, a: &ReportArgs) -> CliResult<()> {
    check_paths(&[&a.from], &[&a.svg])?;
    let file = File::open(&a.from).map_err(|e| CliError::input(&a.from, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(&a.from, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| CliError::invalid(format!("{}:{}: {e}", a.from.display(), n + 1)))?;
        rows.push(v);
    }
    if rows.is_empty() {
        return Err(CliError::invalid(format!("{}: no history rows", a.from.display())));
    }
    let wanted: [(&str, &[&str]); 4] = [
        ("VAS", &["vas_model", "mean_vas"]),
        ("accuracy", &["mean_accuracy", "eval.accuracy"]),
        ("image attention mass", &["mean_image_attention_mass"]),
        ("loss / reward", &["total", "mean_reward"]),
    ];
    let series: Vec<Series> = wanted
        .iter()
        .filter_map(|(name, keys)| {
            let points: Vec<(f64, f64)> = rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| Some((r["step"].as_f64().unwrap_or(i as f64), pick(r, keys)?)))
                .collect();
            (!points.is_empty()).then(|| Series {
                name: name.to_string(),
                points,
            })
        })
        .collect();
    if series.is_empty() {
        return Err(CliError::invalid(format!("{}: no VAS or accuracy fields", a.from.display())));
    }
    write_file(&a.svg, curves_svg(&a.from.display().to_string(), &series).as_bytes())?;
    let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
    let last: Vec<Vec<String>> = series
        .iter()
        .map(|s| {
            let first = s.points.first().map_or(f64::NAN, |p| p.1);
            let end = s.points.last().map_or(f64::NAN, |p| p.1);
            vec![s.name.clone(), f(first), f(end)]
        })
        .collect();
    let summary = json!({"rows": rows.len(), "series": names, "svg": a.svg});
    let text = format!("{} rows\n{}", rows.len(), table(&["series", "first", "last"], &last));
    ctx.emit(&summary, &text)
}

pub fn compare(ctx: &mut Ctx<'_>, a: &CompareArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = &a.seeds {
        cfg.experiment.seeds = s.clone();
    }
    if let Some(n) = a.train_steps {
        cfg.train.steps = n;
    }
    if let Some(n) = a.rl_steps {
        cfg.rl.steps = n;
    }
    let out = a.out.clone().or(cfg.paths.output.clone());
    check_paths(&[], &out.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    if cfg.experiment.seeds.is_empty() {
        return Err(CliError::invalid("no seeds to compare"));
    }
    let rows = experiment_compare(&cfg.experiment(), ctx.exec)?;
    let schema: Vec<Value> = rows
        .iter()
        .map(|r| json!({"variant": r.variant, "vas": r.vas, "accuracy": r.accuracy, "seed": r.seed}))
        .collect();
    if let Some(p) = &out {
        write_jsonl(p, &rows)?;
    }
    let text_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name().to_string(),
                r.seed.to_string(),
                f(r.vas),
                f(r.accuracy),
                f(r.image_mass),
            ]
        })
        .collect();
    ctx.emit(&schema, &table(&["variant", "seed", "VAS", "accuracy", "image mass"], &text_rows))
}

pub fn run(command: &Command, ctx: &mut Ctx<'_>) -> CliResult<()> {
    match command {
        Command::Analyze(a) => analyze(ctx, a),
        Command::Band { vas } => band(ctx, *vas),
        Command::Correlate { x, y } => correlate(ctx, x, y),
        Command::Train(a) => train(ctx, a),
        Command::Gradcheck(a) => gradcheck(ctx, a),
        Command::Rl(a) => rl(ctx, a),
        Command::Intervene(a) => intervene(ctx, a),
        Command::Gen(a) => gen(ctx, a),
        Command::Synth(a) => synth(ctx, a),
        Command::Report(a) => report(ctx, a),
        Command::Compare(a) => compare(ctx, a),
    }
}
