//! Three-stage quality filtering.
//!
//! 1. Heuristic image and box checks ([`stage1_filter`]).
//! 2. Seeded downsampling of samples with one or two boxes ([`stage2_downsample`]).
//! 3. A semantic audit through a [`VlmAuditClient`] ([`stage3_semantic_audit`]).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{merged_word_box, AlignmentResult};
use crate::client::{call_json, ClientError, LineTransport, RetryPolicy};
use crate::geometry::{GroundedSpan, OcrWord, PixelBox, SampleRecord};
use crate::target::quantize_box;
use crate::text::{has_alphanumeric, normalize_text, QuotedSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    MinDim,
    AspectRatio,
    TextArea,
    LowConfidence,
    SymbolOnly,
    UnmatchedRatio,
    Downsampled,
    AuditSpanUngrounded,
    AuditIncoherent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub decision: Decision,
    pub reasons: Vec<Reason>,
}

impl FilterVerdict {
    pub fn keep() -> Self {
        Self { decision: Decision::Keep, reasons: Vec::new() }
    }

    /// Keep when `reasons` is empty, drop otherwise.
    pub fn from_reasons(mut reasons: Vec<Reason>) -> Self {
        reasons.sort();
        reasons.dedup();
        let decision = if reasons.is_empty() { Decision::Keep } else { Decision::Drop };
        Self { decision, reasons }
    }

    pub fn is_keep(&self) -> bool {
        self.decision == Decision::Keep
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_dim: u32,
    pub aspect_range: [f64; 2],
    pub min_text_area_ratio: f64,
    pub min_ocr_confidence: f64,
    pub max_unmatched_ratio: f64,
    pub drop_rate_1box: f64,
    pub drop_rate_2box: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_dim: 256,
            aspect_range: [0.67, 1.5],
            min_text_area_ratio: 0.10,
            min_ocr_confidence: 0.7,
            max_unmatched_ratio: 0.70,
            drop_rate_1box: 0.60,
            drop_rate_2box: 0.40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid filter config: {0}")]
pub struct ConfigError(String);

impl FilterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ratios = [
            ("min_text_area_ratio", self.min_text_area_ratio),
            ("min_ocr_confidence", self.min_ocr_confidence),
            ("max_unmatched_ratio", self.max_unmatched_ratio),
            ("drop_rate_1box", self.drop_rate_1box),
            ("drop_rate_2box", self.drop_rate_2box),
        ];
        for (name, v) in ratios {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let [lo, hi] = self.aspect_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ConfigError(format!("aspect range [{lo}, {hi}] must be positive and ordered")));
        }
        Ok(())
    }
}

/// Exact area of the union of the word boxes (clipped to the image) over the
/// image area, by coordinate compression.
pub fn union_text_area_ratio(words: &[OcrWord], width: u32, height: u32) -> f64 {
    let boxes: Vec<PixelBox> = words.iter().filter_map(|w| w.bbox.clip_to(width as f64, height as f64)).collect();
    union_area(&boxes) / (width as f64 * height as f64)
}

pub(crate) fn union_area(boxes: &[PixelBox]) -> f64 {
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x_min(), b.x_max()]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut area = 0.0;
    let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(boxes.len());
    for strip in xs.windows(2) {
        let (x0, x1) = (strip[0], strip[1]);
        intervals.clear();
        intervals.extend(boxes.iter().filter(|b| b.x_min() <= x0 && b.x_max() >= x1).map(|b| (b.y_min(), b.y_max())));
        if intervals.is_empty() {
            continue;
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let (mut lo, mut hi) = intervals[0];
        for &(a, b) in &intervals[1..] {
            if a > hi {
                covered += hi - lo;
                (lo, hi) = (a, b);
            } else {
                hi = hi.max(b);
            }
        }
        covered += hi - lo;
        area += covered * (x1 - x0);
    }
    area
}

/// Indices of words that pass both the confidence and the symbol checks.
pub fn surviving_words(words: &[OcrWord], cfg: &FilterConfig) -> Vec<usize> {
    (0..words.len())
        .filter(|&i| words[i].confidence >= cfg.min_ocr_confidence && has_alphanumeric(&words[i].text))
        .collect()
}

/// Image- and box-level heuristics. Low-confidence and symbol-only words are
/// removed before the area check; the unmatched ratio is measured over every
/// word that carries a letter or digit.
pub fn stage1_filter(sample: &SampleRecord, alignment: &AlignmentResult, cfg: &FilterConfig) -> FilterVerdict {
    let mut reasons = Vec::new();
    let (w, h) = (sample.width, sample.height);

    if w.min(h) < cfg.min_dim {
        reasons.push(Reason::MinDim);
    }
    let aspect = w as f64 / h as f64;
    if aspect < cfg.aspect_range[0] || aspect > cfg.aspect_range[1] {
        reasons.push(Reason::AspectRatio);
    }

    let words = &sample.ocr_words;
    let survivors = surviving_words(words, cfg);
    if !words.is_empty() && survivors.is_empty() {
        let any_confident = words.iter().any(|word| word.confidence >= cfg.min_ocr_confidence);
        reasons.push(if any_confident { Reason::SymbolOnly } else { Reason::LowConfidence });
    }

    let kept: Vec<OcrWord> = survivors.iter().map(|&i| words[i].clone()).collect();
    if union_text_area_ratio(&kept, w, h) < cfg.min_text_area_ratio {
        reasons.push(Reason::TextArea);
    }

    let textual: Vec<usize> = (0..words.len()).filter(|&i| has_alphanumeric(&words[i].text)).collect();
    if !textual.is_empty() {
        let unmatched = textual.iter().filter(|i| alignment.unmatched_word_indices.contains(i)).count();
        if unmatched as f64 / textual.len() as f64 > cfg.max_unmatched_ratio {
            reasons.push(Reason::UnmatchedRatio);
        }
    }

    FilterVerdict::from_reasons(reasons)
}

/// Uniform value in `[0, 1)` derived from a SHA-256 of the seed and sample id.
pub fn downsample_uniform(id: &str, seed: u64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest = h.finalize();
    let bits = u64::from_be_bytes(digest[..8].try_into().unwrap());
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// Bernoulli drop for samples with one or two grounded spans.
pub fn stage2_verdict(sample: &SampleRecord, cfg: &FilterConfig) -> FilterVerdict {
    let rate = match sample.grounded_spans.len() {
        1 => cfg.drop_rate_1box,
        2 => cfg.drop_rate_2box,
        _ => return FilterVerdict::keep(),
    };
    if downsample_uniform(&sample.id, cfg.seed) < rate {
        FilterVerdict::from_reasons(vec![Reason::Downsampled])
    } else {
        FilterVerdict::keep()
    }
}

pub fn stage2_downsample<'a, I>(
    samples: I,
    cfg: &'a FilterConfig,
) -> impl Iterator<Item = (SampleRecord, FilterVerdict)> + 'a
where
    I: IntoIterator<Item = SampleRecord>,
    I::IntoIter: 'a,
{
    samples.into_iter().map(move |s| {
        let v = stage2_verdict(&s, cfg);
        (s, v)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRequest {
    pub image_ref: String,
    pub caption: String,
    pub spans: Vec<String>,
    pub grounded_spans: Vec<GroundedSpan>,
    pub ocr_words: Vec<OcrWord>,
    pub width: u32,
    pub height: u32,
}

impl AuditRequest {
    pub fn new(sample: &SampleRecord, spans: &[QuotedSpan]) -> Self {
        Self {
            image_ref: sample.image_ref.clone(),
            caption: sample.prompt.clone(),
            spans: spans.iter().map(|s| s.text.clone()).collect(),
            grounded_spans: sample.grounded_spans.clone(),
            ocr_words: sample.ocr_words.clone(),
            width: sample.width,
            height: sample.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResponse {
    /// One flag per entry of `AuditRequest::spans`.
    pub span_grounded: Vec<bool>,
    pub coherent: bool,
}

pub trait VlmAuditClient: Send + Sync {
    fn audit(&self, request: &AuditRequest) -> Result<AuditResponse, ClientError>;
}

/// Rule-based stand-in for the VLM auditor: a span is grounded when some
/// grounded span carries the same normalized text, and the sample is coherent
/// when every stored box equals the quantized union of its source words.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAuditor;

impl VlmAuditClient for MockAuditor {
    fn audit(&self, req: &AuditRequest) -> Result<AuditResponse, ClientError> {
        let grounded: Vec<String> = req.grounded_spans.iter().map(|g| normalize_text(&g.text)).collect();
        let span_grounded = req.spans.iter().map(|s| grounded.contains(&normalize_text(s))).collect();
        let coherent = req.grounded_spans.iter().all(|g| {
            g.source_word_indices.iter().all(|&i| i < req.ocr_words.len())
                && merged_word_box(&req.ocr_words, &g.source_word_indices, req.width, req.height)
                    .ok()
                    .and_then(|b| quantize_box(&b, req.width, req.height).ok())
                    == Some(g.bbox)
        });
        Ok(AuditResponse { span_grounded, coherent })
    }
}

/// An auditor reached over the line-delimited JSON transport.
pub struct RemoteAuditor<T: LineTransport>(pub T);

impl<T: LineTransport> VlmAuditClient for RemoteAuditor<T> {
    fn audit(&self, request: &AuditRequest) -> Result<AuditResponse, ClientError> {
        call_json(&self.0, request)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("audit of sample {id} failed after {attempts} attempt(s): {source}")]
pub struct AuditError {
    pub id: String,
    pub attempts: u32,
    pub source: ClientError,
}

pub fn stage3_semantic_audit(
    sample: &SampleRecord,
    spans: &[QuotedSpan],
    auditor: &dyn VlmAuditClient,
    retry: &RetryPolicy,
) -> Result<FilterVerdict, AuditError> {
    let request = AuditRequest::new(sample, spans);
    let response = retry
        .run(|| {
            let r = auditor.audit(&request)?;
            if r.span_grounded.len() != request.spans.len() {
                return Err(ClientError::Protocol(format!(
                    "expected {} span flags, got {}",
                    request.spans.len(),
                    r.span_grounded.len()
                )));
            }
            Ok(r)
        })
        .map_err(|(attempts, source)| AuditError { id: sample.id.clone(), attempts, source })?;

    let mut reasons = Vec::new();
    if response.span_grounded.iter().any(|g| !g) {
        reasons.push(Reason::AuditSpanUngrounded);
    }
    if !response.coherent {
        reasons.push(Reason::AuditIncoherent);
    }
    Ok(FilterVerdict::from_reasons(reasons))
}
