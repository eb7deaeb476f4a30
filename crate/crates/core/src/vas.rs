//! Visual Attention Score (VAS).
//!
//! For a query `i`, layer `l` and head `h`:
//!
//! ```text
//! VAS_i(l,h) = sum_{j in V} A[l,h,i,j] / (sum_{j in S} A[l,h,i,j] + 1e-12)
//! ```
//!
//! The model-level score averages this over all layers, heads and queries.
//! Queries default to the user tokens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionTensor, DEFAULT_ROW_TOL};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::segment::TokenSegmentation;

/// Guard added to the system-mass denominator.
pub const DENOMINATOR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    #[default]
    User,
    Response,
}

impl QueryKind {
    pub fn indices(self, seg: &TokenSegmentation) -> Vec<usize> {
        match self {
            QueryKind::User => seg.user_indices(),
            QueryKind::Response => seg.response_indices(),
        }
    }
}

impl FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "user" => Ok(QueryKind::User),
            "response" => Ok(QueryKind::Response),
            other => Err(format!("unknown query set {other:?} (user|response)")),
        }
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryKind::User => "user",
            QueryKind::Response => "response",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VasOptions {
    pub query_kind: QueryKind,
    /// Drop queries that precede the whole system span under a causal mask
    /// instead of letting the denominator guard absorb them.
    pub strict: bool,
}

impl VasOptions {
    pub fn new(query_kind: QueryKind) -> Self {
        VasOptions {
            query_kind,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewBand {
    Narrow,
    Wide,
    Panoramic,
}

impl fmt::Display for ViewBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViewBand::Narrow => "Narrow",
            ViewBand::Wide => "Wide",
            ViewBand::Panoramic => "Panoramic",
        })
    }
}

/// Narrow below 10, Wide on `[10, 15]`, Panoramic above 15.
pub fn classify_band(vas: f64) -> Result<ViewBand> {
    if vas.is_nan() {
        return Err(Error::NonFiniteInput("vas"));
    }
    if vas < 0.0 {
        return Err(Error::NegativeScore(vas));
    }
    Ok(if vas < 10.0 {
        ViewBand::Narrow
    } else if vas <= 15.0 {
        ViewBand::Wide
    } else {
        ViewBand::Panoramic
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VasReport {
    pub model_level: f64,
    pub band: ViewBand,
    pub query_set_kind: QueryKind,
    pub per_layer: Vec<f64>,
    pub per_head: Vec<Vec<f64>>,
}

/// Mean per-query VAS for every `(layer, head)`, as `per_head[layer][head]`.
pub fn vas_per_head(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    queries: &[usize],
    strict: bool,
) -> Result<Vec<Vec<f64>>> {
    if seg.system.is_empty() {
        return Err(Error::EmptySystemSpan);
    }
    let queries = admissible_queries(attn, seg, queries, strict)?;
    let system = seg.system_indices();
    let image = seg.image_indices();

    let mut grid = vec![vec![0.0; attn.heads()]; attn.layers()];
    for (l, layer) in grid.iter_mut().enumerate() {
        for (h, cell) in layer.iter_mut().enumerate() {
            let mut acc = NeumaierSum::default();
            for &q in &queries {
                let row = attn.row(l, h, q);
                acc.add(row_ratio(row, &image, &system, DENOMINATOR_EPS));
            }
            *cell = acc.total() / queries.len() as f64;
        }
    }
    Ok(grid)
}

pub fn vas_model(attn: &AttentionTensor, seg: &TokenSegmentation, opts: VasOptions) -> Result<f64> {
    Ok(vas_report(attn, seg, opts)?.model_level)
}

pub fn vas_report(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    opts: VasOptions,
) -> Result<VasReport> {
    let queries = opts.query_kind.indices(seg);
    let per_head = vas_per_head(attn, seg, &queries, opts.strict)?;
    let per_layer: Vec<f64> = per_head.iter().map(|row| mean(row)).collect();
    let model_level = mean(&per_head.iter().flatten().copied().collect::<Vec<_>>());
    Ok(VasReport {
        model_level,
        band: classify_band(model_level)?,
        query_set_kind: opts.query_kind,
        per_layer,
        per_head,
    })
}

/// Visual-to-system mass ratio of one attention row.
pub fn row_ratio(row: &[f64], image: &[usize], system: &[usize], eps: f64) -> f64 {
    let visual: f64 = image.iter().map(|&j| row[j]).sum();
    let sys: f64 = system.iter().map(|&j| row[j]).sum();
    visual / (sys + eps)
}

fn admissible_queries(
    attn: &AttentionTensor,
    seg: &TokenSegmentation,
    queries: &[usize],
    strict: bool,
) -> Result<Vec<usize>> {
    if let Some(&bad) = queries.iter().find(|&&q| q >= attn.seq_len()) {
        return Err(Error::Shape(format!(
            "query {bad} outside sequence of length {}",
            attn.seq_len()
        )));
    }
    let kept: Vec<usize> = queries
        .iter()
        .copied()
        .filter(|&q| !(strict && attn.causal() && q < seg.system.start))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleVas {
    pub id: String,
    pub vas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateVas {
    pub mean: f64,
    pub samples: Vec<SampleVas>,
}

/// One entry of a multi-sample analysis.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub id: String,
    pub attention: &'a AttentionTensor,
    pub segmentation: &'a TokenSegmentation,
}

/// Unweighted mean of per-sample model-level VAS.
///
/// Each sample is validated first; errors carry the sample index.
pub fn aggregate_vas(samples: &[Sample<'_>], opts: VasOptions, exec: Exec) -> Result<AggregateVas> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let values = exec.try_map(samples.len(), |i| {
        let s = &samples[i];
        s.segmentation
            .validate()
            .and_then(|_| s.attention.validate(DEFAULT_ROW_TOL))
            .and_then(|_| vas_model(s.attention, s.segmentation, opts))
            .map_err(|e| e.at_sample(i))
    })?;
    let mean = mean(&values);
    let samples = samples
        .iter()
        .zip(values)
        .map(|(s, vas)| SampleVas {
            id: s.id.clone(),
            vas,
        })
        .collect();
    Ok(AggregateVas { mean, samples })
}

/// Product-moment correlation from centered sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::SeriesLength(xs.len(), ys.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("series"));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Compensated mean; order-stable to well below 1e-12 for the sizes used here.
pub fn mean(values: &[f64]) -> f64 {
    let mut acc = NeumaierSum::default();
    values.iter().for_each(|&v| acc.add(v));
    acc.total() / values.len() as f64
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}
