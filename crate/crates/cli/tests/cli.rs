use std::path::Path;
use std::process::{Command, Output};

use avar_cli::commands::decode_stats;
use avar_core::dump;
use avar_core::experiment::initial_params;
use avar_core::intervention::InterventionConfig;
use avar_core::model::ModelConfig;
use avar_core::rl::{GroundedLookup, LookupConfig};
use avar_core::{AttentionTensor, Exec, Span, TokenSegmentation};
use serde_json::Value;

const TINY: &str = r#"{"model": {"d_model": 8, "n_layers": 1, "n_heads": 2}, "experiment": {"eval_episodes": 20}}"#;

fn avar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avar")).args(args).output().expect("spawn avar")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn first_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    serde_json::from_str(text.lines().next().expect("stdout line")).expect("json first line")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// T=10: system [0,2), image [2,6), user [6,9), response [9,10).
fn uniform_dump(path: &Path) {
    let seg = TokenSegmentation::new(10, Span::new(0, 2), vec![Span::new(2, 6)], vec![Span::new(6, 9)], Span::new(9, 10));
    dump::save(path, &AttentionTensor::uniform(2, 3, 10, false), &seg, Some("uniform")).unwrap();
}

#[test]
fn band_prints_only_the_name() {
    let o = avar(&["band", "18.9"]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout), "Panoramic\n");
    assert_eq!(String::from_utf8_lossy(&avar(&["band", "10"]).stdout), "Wide\n");
    assert_eq!(code(&avar(&["band", "--", "-1"])), 2);
}

#[test]
fn usage_errors_exit_one() {
    let o = avar(&["frobnicate"]);
    assert_eq!(code(&o), 1);
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&avar(&["band"])), 1);
    assert_eq!(code(&avar(&["--help"])), 0);
    let help = String::from_utf8_lossy(&avar(&["rl", "--help"]).stdout).to_string();
    for flag in ["--lambda-v", "--lambda-f", "--group", "--clip", "--kl", "--steps", "--seed", "--config"] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn unreadable_or_malformed_dumps_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = avar(&["analyze", "missing.atnd"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.atnd"));
    let junk = dir.path().join("junk.atnd");
    std::fs::write(&junk, b"not a dump at all").unwrap();
    let o = avar(&["analyze", p(&junk)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("magic"));
}

#[test]
fn analyze_reports_json_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("u.atnd");
    uniform_dump(&d);
    let (json, csv, svg) = (dir.path().join("r.json"), dir.path().join("r.csv"), dir.path().join("r.svg"));
    let o = avar(&["analyze", p(&d), p(&d), "--json", p(&json), "--csv", p(&csv), "--svg", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = first_json(&o);
    assert!((v["model_level"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert_eq!(v["band"], "Narrow");
    assert_eq!(v["query_set_kind"], "user");
    assert_eq!(v["per_head"].as_array().unwrap().len(), 2);
    assert_eq!(v["per_head"][0].as_array().unwrap().len(), 3);
    assert_eq!(v["samples"][0]["id"], "uniform");
    let file: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(file, v);
    let csv = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 + 1);
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert_eq!(&last[..2], ["model", "-"]);
    assert!((last[2].parse::<f64>().unwrap() - 2.0).abs() < 1e-9);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let o = avar(&["analyze", p(&d), "--queries", "response"]);
    assert_eq!(first_json(&o)["query_set_kind"], "response");
}

#[test]
fn outputs_in_missing_directories_are_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("u.atnd");
    uniform_dump(&d);
    let nowhere = dir.path().join("no/such/dir/r.json");
    assert_eq!(code(&avar(&["analyze", p(&d), "--json", p(&nowhere)])), 2);
    assert!(!nowhere.exists());
}

#[test]
fn intervene_scales_vas_by_inverse_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let (d, out) = (dir.path().join("u.atnd"), dir.path().join("v.atnd"));
    uniform_dump(&d);
    let o = avar(&["intervene", "--dump", p(&d), "--gamma", "0.5", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = first_json(&o);
    let (before, after) = (v["vas_before"].as_f64().unwrap(), v["vas_after"].as_f64().unwrap());
    assert!((after - before / 0.5).abs() < 1e-9);
    assert_eq!(v["gamma"], 0.5);
    dump::load(&out).unwrap().attention.validate(1e-5).unwrap();

    // only layer 1 modified: model level is the mean of 2x and 1x
    let o = avar(&["intervene", "--dump", p(&d), "--gamma", "0.5", "--layers", "1..1", "--out", p(&out)]);
    assert!((first_json(&o)["vas_after"].as_f64().unwrap() - 1.5 * before).abs() < 1e-9);

    assert_eq!(code(&avar(&["intervene", "--dump", p(&d), "--gamma", "1.5", "--out", p(&out)])), 2);
    assert_eq!(code(&avar(&["intervene", "--dump", p(&d), "--gamma", "0.5", "--layers", "0..7", "--out", p(&out)])), 2);
}

#[test]
fn correlate_reports_r_and_n() {
    let o = avar(&["correlate", "--x", "1,2,3", "--y", "3,5,7"]);
    let v = first_json(&o);
    assert!((v["r"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["n"], 3);
    assert_eq!(code(&avar(&["correlate", "--x", "1,2", "--y", "1,2,3"])), 2);
    assert_eq!(code(&avar(&["correlate", "--x", "1,1", "--y", "1,2"])), 2);
}

#[test]
fn config_documents_are_strict() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"rl": {"stepz": 3}}"#).unwrap();
    let o = avar(&["rl", "--config", p(&bad), "--steps", "1"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
    assert_eq!(code(&avar(&["train", "--config", p(&dir.path().join("absent.json"))])), 2);
}

#[test]
fn train_is_reproducible_and_feeds_rl_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |tag: &str| {
        let (h, c) = (dir.path().join(format!("{tag}.jsonl")), dir.path().join(format!("{tag}.ckpt")));
        let o = avar(&["train", "--config", p(&cfg), "--steps", "4", "--seed", "3", "--history", p(&h), "--out", p(&c)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (o, h, c)
    };
    let (o1, h1, c1) = run("a");
    let (o2, h2, c2) = run("b");
    assert_eq!(o1.stdout, o2.stdout);
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_eq!(std::fs::read(&h1).unwrap(), std::fs::read(&h2).unwrap());
    let history = std::fs::read_to_string(&h1).unwrap();
    assert_eq!(history.lines().count(), 4);
    let row: Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    for key in ["step", "lm", "enhance_img", "suppress_sys", "total", "mean_image_attention_mass", "vas_model"] {
        assert!(row.get(key).is_some(), "{key} missing");
    }

    let (rh, rc) = (dir.path().join("rl.jsonl"), dir.path().join("rl.ckpt"));
    let o = avar(&[
        "rl", "--config", p(&cfg), "--ckpt", p(&c1), "--steps", "2", "--seed", "1", "--group", "4", "--lambda-v", "0.3",
        "--history", p(&rh), "--out", p(&rc),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Value> = std::fs::read_to_string(&rh)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    for key in ["step", "mean_reward", "mean_accuracy", "mean_visual_reward", "mean_vas", "kl"] {
        assert!(rows[0].get(key).is_some(), "{key} missing");
    }
    assert!(rc.exists());
    assert_eq!(code(&avar(&["rl", "--config", p(&cfg), "--steps", "1", "--group", "1"])), 2);

    let svg = dir.path().join("curves.svg");
    let o = avar(&["report", "--from", p(&h1), "--svg", p(&svg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series = first_json(&o)["series"].clone();
    assert!(series.as_array().unwrap().iter().any(|s| s == "VAS"));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
    let o = avar(&["report", "--from", p(&rh), "--svg", p(&svg)]);
    assert!(first_json(&o)["series"].as_array().unwrap().iter().any(|s| s == "accuracy"));

    let o = avar(&["gen", "--config", p(&cfg), "--ckpt", p(&c1), "--gamma", "0.5", "--episodes", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = first_json(&o);
    for key in ["vas_before", "vas_after", "gamma", "accuracy_before", "accuracy_after"] {
        assert!(v.get(key).is_some(), "{key} missing");
    }
}

#[test]
fn reallocation_during_decoding_raises_vas() {
    let env = GroundedLookup::new(LookupConfig::default()).unwrap();
    let cfg = InterventionConfig::with_gamma(0.5);
    for seed in 0..3 {
        let params = initial_params(&env, &ModelConfig::default(), seed).unwrap();
        let base = decode_stats(&params, &env, seed, 20, None, Exec::Parallel).unwrap();
        let moved = decode_stats(&params, &env, seed, 20, Some(&cfg), Exec::Parallel).unwrap();
        assert!(moved.vas > base.vas, "seed {seed}: {} <= {}", moved.vas, base.vas);
        let same = decode_stats(&params, &env, seed, 20, Some(&InterventionConfig::with_gamma(1.0)), Exec::Parallel).unwrap();
        assert_eq!(same, base);
    }
}

#[test]
fn compare_with_zero_budget_gives_identical_variants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, TINY).unwrap();
    let o = avar(&["compare", "--config", p(&cfg), "--seeds", "4", "--train-steps", "0", "--rl-steps", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = first_json(&o);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.as_object().unwrap().len(), 4);
        assert_eq!(r["seed"], 4);
        assert_eq!(r["vas"], rows[0]["vas"]);
    }
}

#[test]
fn synth_mock_run_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let o = avar(&["synth", "--backend", "mock", "--n", "20", "--concurrency", "1", "--out", p(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first_json(&o)["records"], 20);
    avar(&["synth", "--n", "20", "--concurrency", "8", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 20);

    let o = avar(&["synth", "--n", "6", "--rule-every", "2", "--out", p(&a)]);
    assert_eq!(code(&o), 0);
    assert!(std::fs::read_to_string(&a).unwrap().contains("rule:k=2"));

    let bad = dir.path().join("in.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\"}\n").unwrap();
    assert_eq!(code(&avar(&["synth", "--in", p(&bad), "--out", p(&a)])), 2);

    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"synth": {"endpoint": "http://127.0.0.1:9/complete", "max_attempts": 1}}"#).unwrap();
    let o = avar(&["synth", "--config", p(&cfg), "--backend", "http", "--n", "2", "--out", p(&a)]);
    assert_eq!(code(&o), 3);
    assert_eq!(first_json(&o)["failed"], 2);
    assert_eq!(code(&avar(&["synth", "--backend", "http", "--n", "1", "--out", p(&a)])), 2);
}

#[test]
fn gradcheck_passes_on_one_seed() {
    let o = avar(&["gradcheck", "--seeds", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let v = first_json(&o);
    assert_eq!(v["pass"], true);
    assert!(v["parameters"].as_u64().unwrap() <= 5000);
}
