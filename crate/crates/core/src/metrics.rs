//! Evaluation of rendered text: word accuracy and F1, character error rate,
//! text-gated layout IoU and prompt coverage, aggregated per difficulty level.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{levenshtein, similarity_of_normalized};
use crate::client::{call_json, ClientError, LineTransport};
use crate::geometry::{box_iou, reading_order, GroundedSpan, NormBox, OcrWord, SampleRecord};
use crate::stratify::{BenchManifest, Level};
use crate::target::quantize_box;
use crate::text::{extract_spans, match_tokens, normalize_text};

/// Similarity at or above which two strings count as the same text.
pub const MATCH_THRESHOLD: f64 = 0.8;
/// Longest run of hypothesis words joined when looking for a span.
pub const MAX_COVERAGE_WINDOW: usize = 6;

/// OCR output on a generated image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisOcr {
    pub id: String,
    pub words: Vec<OcrWord>,
}

/// Greedy one-to-one pairing of equal words: each reference takes the first
/// unused equal hypothesis.
pub fn word_match(refs: &[String], hyps: &[String]) -> Vec<(usize, usize)> {
    let mut used = vec![false; hyps.len()];
    let mut pairs = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        if let Some(j) = (0..hyps.len()).find(|&j| !used[j] && hyps[j] == *r) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Word accuracy (recall) and F1. Both empty scores 1; no references with
/// some hypotheses scores 0.
pub fn accuracy_f1(refs: &[String], hyps: &[String]) -> (f64, f64) {
    if refs.is_empty() {
        return if hyps.is_empty() { (1.0, 1.0) } else { (0.0, 0.0) };
    }
    let pairs = word_match(refs, hyps).len() as f64;
    let recall = pairs / refs.len() as f64;
    let precision = if hyps.is_empty() { 0.0 } else { pairs / hyps.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (recall, f1)
}

fn joined_normalized<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    texts.into_iter().map(normalize_text).filter(|t| !t.is_empty()).collect::<Vec<_>>().join(" ")
}

/// Character error rate between two reading-ordered text lists. Not clamped:
/// verbose hypotheses can exceed 1.
pub fn cer(ref_texts: &[&str], hyp_texts: &[&str]) -> f64 {
    let r = joined_normalized(ref_texts.iter().copied());
    let h = joined_normalized(hyp_texts.iter().copied());
    levenshtein(&r, &h) as f64 / r.chars().count().max(1) as f64
}

fn ordered_ref_texts(refs: &[GroundedSpan]) -> Vec<&str> {
    reading_order(refs).into_iter().map(|i| refs[i].text.as_str()).collect()
}

fn ordered_hyp_texts(words: &[OcrWord]) -> Vec<&str> {
    reading_order(words).into_iter().map(|i| words[i].text.as_str()).collect()
}

fn texts_match(a_norm: &str, b_norm: &str) -> bool {
    a_norm == b_norm || similarity_of_normalized(a_norm, b_norm) >= MATCH_THRESHOLD
}

/// Hypothesis boxes on the normalized grid; boxes entirely off-image are dropped.
fn quantized_hyps(words: &[OcrWord], width: u32, height: u32) -> Vec<(String, NormBox)> {
    words
        .iter()
        .filter_map(|w| {
            let clipped = w.bbox.clip_to(width as f64, height as f64)?;
            let b = quantize_box(&clipped, width, height).ok()?;
            Some((normalize_text(&w.text), b))
        })
        .collect()
}

/// Mean IoU over references. Pairs are admissible when their texts match;
/// the assignment is one-to-one, greedy by descending IoU. Unmatched
/// references count as 0. `None` without references.
pub fn layout_iou(refs: &[GroundedSpan], hyp: &HypothesisOcr, width: u32, height: u32) -> Option<f64> {
    if refs.is_empty() {
        return None;
    }
    let hyps = quantized_hyps(&hyp.words, width, height);
    let ref_norms: Vec<String> = refs.iter().map(|r| normalize_text(&r.text)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        for (j, (text, b)) in hyps.iter().enumerate() {
            if texts_match(&ref_norms[i], text) {
                pairs.push((box_iou(&r.bbox, b), i, j));
            }
        }
    }
    Some(greedy_assignment(pairs, refs.len(), hyps.len()).iter().sum::<f64>() / refs.len() as f64)
}

/// Per-reference IoU from a greedy max-IoU one-to-one assignment.
pub(crate) fn greedy_assignment(mut pairs: Vec<(f64, usize, usize)>, n_refs: usize, n_hyps: usize) -> Vec<f64> {
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut per_ref = vec![0.0; n_refs];
    let mut ref_used = vec![false; n_refs];
    let mut hyp_used = vec![false; n_hyps];
    for (iou, i, j) in pairs {
        if !ref_used[i] && !hyp_used[j] {
            ref_used[i] = true;
            hyp_used[j] = true;
            per_ref[i] = iou;
        }
    }
    per_ref
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub total_spans: usize,
    pub matched_spans: usize,
    pub matched_flags: Vec<bool>,
}

impl CoverageResult {
    /// `None` when there are no spans to cover.
    pub fn pc(&self) -> Option<f64> {
        (self.total_spans > 0).then(|| self.matched_spans as f64 / self.total_spans as f64)
    }
}

/// A span is covered when some hypothesis entry, or a run of up to six
/// consecutive entries in reading order, matches it exactly or with
/// similarity at least 0.8.
pub fn prompt_coverage(spans: &[&str], hyp: &HypothesisOcr) -> CoverageResult {
    let ordered: Vec<&str> = ordered_hyp_texts(&hyp.words);
    let mut candidates = Vec::new();
    for start in 0..ordered.len() {
        for len in 1..=MAX_COVERAGE_WINDOW.min(ordered.len() - start) {
            candidates.push(joined_normalized(ordered[start..start + len].iter().copied()));
        }
    }
    let matched_flags: Vec<bool> = spans
        .iter()
        .map(|s| {
            let s = normalize_text(s);
            candidates.iter().any(|c| texts_match(&s, c))
        })
        .collect();
    CoverageResult {
        total_spans: spans.len(),
        matched_spans: matched_flags.iter().filter(|&&m| m).count(),
        matched_flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRequest {
    pub image_ref: String,
    pub prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipResponse {
    pub score: f64,
}

/// External image-text similarity scorer.
pub trait ClipScoreClient: Send + Sync {
    fn score(&self, request: &ClipRequest) -> Result<f64, ClientError>;
}

/// Deterministic placeholder scorer: a value in `[20, 35)` derived from a
/// hash of the request and seed. Only useful for exercising the plumbing.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClipScorer {
    pub seed: u64,
}

impl ClipScoreClient for MockClipScorer {
    fn score(&self, request: &ClipRequest) -> Result<f64, ClientError> {
        let key = format!("{}\u{0}{}", request.image_ref, request.prompt);
        Ok(20.0 + 15.0 * crate::filter::downsample_uniform(&key, self.seed))
    }
}

pub struct RemoteClipScorer<T: LineTransport>(pub T);

impl<T: LineTransport> ClipScoreClient for RemoteClipScorer<T> {
    fn score(&self, request: &ClipRequest) -> Result<f64, ClientError> {
        call_json::<_, ClipResponse>(&self.0, request).map(|r| r.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub level: Level,
    pub acc: f64,
    pub f1: f64,
    pub cer: f64,
    pub layout_iou: Option<f64>,
    pub pc: Option<f64>,
    pub cs: Option<f64>,
}

pub fn sample_metrics(sample: &SampleRecord, hyp: &HypothesisOcr, level: Level) -> SampleMetrics {
    let refs = &sample.grounded_spans;
    let ref_words: Vec<String> = ordered_ref_texts(refs).into_iter().flat_map(match_tokens).collect();
    let hyp_words: Vec<String> = ordered_hyp_texts(&hyp.words).into_iter().flat_map(match_tokens).collect();
    let (acc, f1) = accuracy_f1(&ref_words, &hyp_words);
    let spans: Vec<String> = extract_spans(&sample.prompt).into_iter().map(|s| s.text).collect();
    let span_refs: Vec<&str> = spans.iter().map(String::as_str).collect();
    SampleMetrics {
        id: sample.id.clone(),
        level,
        acc,
        f1,
        cer: cer(&ordered_ref_texts(refs), &ordered_hyp_texts(&hyp.words)),
        layout_iou: layout_iou(refs, hyp, sample.width, sample.height),
        pc: prompt_coverage(&span_refs, hyp).pc(),
        cs: None,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelSummary {
    pub samples: usize,
    pub acc: f64,
    pub f1: f64,
    pub cer: f64,
    pub layout_iou: Option<f64>,
    pub pc: Option<f64>,
    /// Samples contributing to `pc` (those with at least one quoted span).
    pub pc_samples: usize,
    pub cs: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl LevelSummary {
    fn from_samples(samples: &[&SampleMetrics]) -> Self {
        Self {
            samples: samples.len(),
            acc: mean_of(samples.iter().map(|s| s.acc)).unwrap_or(0.0),
            f1: mean_of(samples.iter().map(|s| s.f1)).unwrap_or(0.0),
            cer: mean_of(samples.iter().map(|s| s.cer)).unwrap_or(0.0),
            layout_iou: mean_of(samples.iter().filter_map(|s| s.layout_iou)),
            pc: mean_of(samples.iter().filter_map(|s| s.pc)),
            pc_samples: samples.iter().filter(|s| s.pc.is_some()).count(),
            cs: mean_of(samples.iter().filter_map(|s| s.cs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleMetrics>,
    pub levels: BTreeMap<Level, LevelSummary>,
    pub overall: LevelSummary,
    /// Bench ids without a hypothesis or a corpus record.
    pub missing: Vec<String>,
    pub incomplete: bool,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scoring sample {id}: {source}")]
    Scorer { id: String, source: ClientError },
}

/// Scores every bench sample that has both a corpus record and a hypothesis.
/// Missing ids are listed and mark the report incomplete.
pub fn evaluate(
    manifest: &BenchManifest,
    corpus: &HashMap<String, SampleRecord>,
    hyps: &HashMap<String, HypothesisOcr>,
    scorer: Option<&dyn ClipScoreClient>,
) -> Result<EvalReport, EvalError> {
    let mut jobs = Vec::new();
    let mut missing = Vec::new();
    for (&level, ids) in &manifest.levels {
        for id in ids {
            match (corpus.get(id), hyps.get(id)) {
                (Some(s), Some(h)) => jobs.push((level, s, h)),
                _ => missing.push(id.clone()),
            }
        }
    }
    missing.sort();

    let per_sample: Vec<SampleMetrics> = jobs
        .par_iter()
        .map(|&(level, sample, hyp)| {
            let mut m = sample_metrics(sample, hyp, level);
            if let Some(scorer) = scorer {
                let req = ClipRequest { image_ref: sample.image_ref.clone(), prompt: sample.prompt.clone() };
                m.cs = Some(scorer.score(&req).map_err(|source| EvalError::Scorer { id: sample.id.clone(), source })?);
            }
            Ok(m)
        })
        .collect::<Result<_, EvalError>>()?;

    let levels = Level::ALL
        .iter()
        .map(|&l| {
            let members: Vec<&SampleMetrics> = per_sample.iter().filter(|m| m.level == l).collect();
            (l, LevelSummary::from_samples(&members))
        })
        .collect();
    let overall = LevelSummary::from_samples(&per_sample.iter().collect::<Vec<_>>());
    let incomplete = !missing.is_empty();
    Ok(EvalReport { per_sample, levels, overall, missing, incomplete })
}

fn cell(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * scale))
}

/// Aligned text table: one row per level plus the overall row, first in raw
/// `[0, 1]` units, then scaled by 100 (CS is printed unscaled in both).
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    for (title, scale) in [("raw", 1.0), ("x100", 100.0)] {
        let _ = writeln!(out, "[{title}]");
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "level", "n", "CS", "Acc", "F1", "CER", "IOU", "PC"
        );
        let rows = report
            .levels
            .iter()
            .map(|(l, s)| (format!("{l:?}"), s))
            .chain(std::iter::once(("overall".to_string(), &report.overall)));
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                name,
                s.samples,
                cell(s.cs, 1.0),
                cell(Some(s.acc), scale),
                cell(Some(s.f1), scale),
                cell(Some(s.cer), scale),
                cell(s.layout_iou, scale),
                cell(s.pc, scale),
            );
        }
    }
    if report.incomplete {
        let _ = writeln!(out, "missing hypotheses: {}", report.missing.len());
    }
    out
}
