use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::anchor::Lexicon;
use crate::client::{GenParams, GeneratorClient};
use crate::error::{Error, Result};
use crate::stages::{describe, extract_answer, integrate_anchors, reason, AnchorMode};
use crate::template::Templates;

/// One line of the input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisInput {
    pub id: String,
    /// Opaque reference; also used as the image text when `image_doc` is absent.
    pub image_ref: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_doc: Option<String>,
}

impl SynthesisInput {
    pub fn image_text(&self) -> &str {
        self.image_doc.as_deref().unwrap_or(&self.image_ref)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub describe: String,
    pub reason: String,
    pub anchor: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    pub description: String,
    pub reasoning: String,
    pub anchored_reasoning: String,
    pub anchor_count: usize,
    pub answer: String,
    pub provenance: Provenance,
}

/// Backends for each stage; `anchor: None` selects rule insertion.
#[derive(Clone, Copy)]
pub struct StageClients<'a> {
    pub describe: &'a dyn GeneratorClient,
    pub reason: &'a dyn GeneratorClient,
    pub anchor: Option<&'a dyn GeneratorClient>,
}

impl<'a> StageClients<'a> {
    /// The same backend for all three stages.
    pub fn uniform(client: &'a dyn GeneratorClient) -> Self {
        StageClients {
            describe: client,
            reason: client,
            anchor: Some(client),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Worker count, which is also the in-flight request bound.
    pub concurrency: usize,
    /// Rule-mode interval.
    pub anchor_every: usize,
    pub params: GenParams,
    pub templates: Templates,
    pub lexicon: Lexicon,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            concurrency: 4,
            anchor_every: 3,
            params: GenParams::default(),
            templates: Templates::default(),
            lexicon: Lexicon::default(),
        }
    }
}

/// Runs the three stages for one input.
pub fn synthesize(input: &SynthesisInput, clients: StageClients<'_>, cfg: &PipelineConfig) -> Result<SynthesisRecord> {
    if input.id.trim().is_empty() {
        return Err(Error::EmptyInput("id"));
    }
    let t = &cfg.templates;
    let description = describe(input.image_text(), clients.describe, t, &cfg.params)?;
    let reasoning = reason(&description, &input.question, clients.reason, t, &cfg.params)?;
    let mode = match clients.anchor {
        Some(c) => AnchorMode::Client(c),
        None => AnchorMode::Rule { k: cfg.anchor_every },
    };
    let anchored_reasoning = integrate_anchors(&reasoning, mode, &cfg.lexicon, t, &cfg.params)?;
    let anchor_count = cfg.lexicon.count(&anchored_reasoning);
    let answer = extract_answer(&anchored_reasoning)
        .or_else(|| extract_answer(&reasoning))
        .unwrap_or_default();
    Ok(SynthesisRecord {
        id: input.id.clone(),
        image_ref: input.image_ref.clone(),
        question: input.question.clone(),
        description,
        reasoning,
        anchored_reasoning,
        anchor_count,
        answer,
        provenance: Provenance {
            describe: clients.describe.name().to_string(),
            reason: clients.reason.name().to_string(),
            anchor: mode.provenance(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub index: usize,
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorStats {
    pub total: usize,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub inputs: usize,
    pub records: usize,
    pub failed: usize,
    pub failures: Vec<Failure>,
    pub anchors: AnchorStats,
}

impl PipelineSummary {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

/// Synthesizes every input and writes the successful records to `out` as
/// JSONL in input order. Failed inputs are listed in the summary only.
pub fn run_pipeline<W: Write>(
    inputs: &[SynthesisInput],
    clients: StageClients<'_>,
    cfg: &PipelineConfig,
    out: &mut W,
) -> Result<PipelineSummary> {
    if cfg.concurrency == 0 {
        return Err(Error::InvalidConfig("concurrency must be >= 1".into()));
    }
    if cfg.anchor_every == 0 {
        return Err(Error::InvalidConfig("anchor interval must be >= 1".into()));
    }
    cfg.templates.check()?;
    let slots: Vec<Mutex<Option<Result<SynthesisRecord>>>> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = cfg.concurrency.min(inputs.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let r = synthesize(&inputs[i], clients, cfg);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });

    let mut failures = Vec::new();
    let mut counts = Vec::new();
    for (i, slot) in slots.into_iter().enumerate() {
        match slot.into_inner().expect("slot lock").expect("every slot filled") {
            Ok(rec) => {
                counts.push(rec.anchor_count);
                serde_json::to_writer(&mut *out, &rec)?;
                out.write_all(b"\n")?;
            }
            Err(e) => failures.push(Failure {
                index: i,
                id: inputs[i].id.clone(),
                error: e.to_string(),
            }),
        }
    }
    out.flush()?;
    let total: usize = counts.iter().sum();
    Ok(PipelineSummary {
        inputs: inputs.len(),
        records: counts.len(),
        failed: failures.len(),
        failures,
        anchors: AnchorStats {
            total,
            mean: if counts.is_empty() { 0.0 } else { total as f64 / counts.len() as f64 },
            min: counts.iter().copied().min().unwrap_or(0),
            max: counts.iter().copied().max().unwrap_or(0),
        },
    })
}

/// Parses JSONL inputs; blank lines are skipped.
pub fn read_inputs(reader: impl BufRead) -> Result<Vec<SynthesisInput>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let input = serde_json::from_str(&line).map_err(|e| Error::InputFormat {
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(input);
    }
    Ok(out)
}

/// `n` deterministic geometry-flavoured inputs for offline runs.
pub fn demo_inputs(n: usize) -> Vec<SynthesisInput> {
    const SHAPES: [&str; 4] = ["triangle", "square", "circle", "pentagon"];
    const COLORS: [&str; 3] = ["red", "blue", "green"];
    (0..n)
        .map(|i| {
            let shape = SHAPES[i % SHAPES.len()];
            let color = COLORS[i % COLORS.len()];
            let count = 2 + i % 5;
            SynthesisInput {
                id: format!("demo-{i:04}"),
                image_ref: format!("demo://{i}"),
                question: format!("How many {color} {shape}s are there?"),
                image_doc: Some(format!(
                    "{count} {color} {shape}s in a row\na grey background\na caption reading \"figure {i}\"\nthe count of {color} {shape}s is {count}"
                )),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::MockClient;

    #[test]
    fn input_parsing() {
        let text = "{\"id\":\"a\",\"image_ref\":\"r\",\"question\":\"q\"}\n\n";
        let v = read_inputs(text.as_bytes()).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].image_text(), "r");
        let bad = read_inputs("{\"id\":1}".as_bytes()).unwrap_err();
        assert!(matches!(bad, Error::InputFormat { line: 1, .. }));
    }

    #[test]
    fn demo_records_answer_the_count() {
        let m = MockClient::new();
        let rec = synthesize(&demo_inputs(1)[0], StageClients::uniform(&m), &PipelineConfig::default()).unwrap();
        assert_eq!(rec.answer, "the count of red triangles is 2");
        assert!(rec.anchor_count >= 1);
        assert_eq!(rec.provenance.anchor, "mock");
    }

    #[test]
    fn zero_concurrency_rejected() {
        let m = MockClient::new();
        let cfg = PipelineConfig {
            concurrency: 0,
            ..Default::default()
        };
        assert!(run_pipeline(&[], StageClients::uniform(&m), &cfg, &mut Vec::new()).is_err());
    }
}
