//! Multistage alignment of quoted caption spans to OCR word windows.
//!
//! Every span is compared against contiguous windows of OCR words taken in
//! reading order. A (span, window) pair is classified by the first stage it
//! passes:
//!
//! 1. **exact**: the normalized span equals the normalized window text;
//! 2. **partial**: the share of distinct span tokens present in the window is
//!    at least `partial_threshold`;
//! 3. **fuzzy**: the normalized Levenshtein similarity is at least
//!    `fuzzy_threshold`.
//!
//! All candidate pairs are then assigned greedily, best first, ordered by
//! stage, similarity and span index, so that no OCR word is claimed twice.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{box_union, reading_order, GeometryError, GroundedSpan, OcrWord, PixelBox};
use crate::target::{quantize_box, QuantizeError};
use crate::text::{match_tokens, normalize_text, tokenize_words, QuotedSpan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub partial_threshold: f64,
    pub fuzzy_threshold: f64,
    /// Extra words allowed in a window beyond the span's token count.
    pub max_window_slack: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self { partial_threshold: 0.6, fuzzy_threshold: 0.8, max_window_slack: 2 }
    }
}

/// Which alignment stage produced a match. Declaration order is priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStage {
    Exact,
    Partial,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanMatch {
    pub span_index: usize,
    /// Indices into the sample's OCR words, ascending. They form a run of
    /// consecutive words in reading order.
    pub word_indices: Vec<usize>,
    pub stage: MatchStage,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub matches: Vec<SpanMatch>,
    pub unmatched_span_indices: Vec<usize>,
    pub unmatched_word_indices: Vec<usize>,
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j + 1] + 1).min(curr[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// `1 - d / max_len` over normalized strings; 1 when both normalize to empty.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    similarity_of_normalized(&normalize_text(a), &normalize_text(b))
}

pub(crate) fn similarity_of_normalized(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

struct Candidate {
    stage: MatchStage,
    similarity: f64,
    char_similarity: f64,
    span: usize,
    start: usize,
    len: usize,
}

fn classify_window(
    span_norm: &str,
    span_tokens: &BTreeSet<String>,
    window_text: &str,
    cfg: &AlignConfig,
) -> Option<(MatchStage, f64, f64)> {
    let window_norm = normalize_text(window_text);
    let char_sim = similarity_of_normalized(span_norm, &window_norm);
    if window_norm == span_norm {
        return Some((MatchStage::Exact, 1.0, 1.0));
    }
    if !span_tokens.is_empty() {
        let window_tokens: BTreeSet<String> = match_tokens(window_text).into_iter().collect();
        let overlap = span_tokens.intersection(&window_tokens).count() as f64 / span_tokens.len() as f64;
        if overlap >= cfg.partial_threshold {
            return Some((MatchStage::Partial, overlap, char_sim));
        }
    }
    if char_sim >= cfg.fuzzy_threshold {
        return Some((MatchStage::Fuzzy, char_sim, char_sim));
    }
    None
}

pub fn align_spans(spans: &[QuotedSpan], words: &[OcrWord], cfg: &AlignConfig) -> AlignmentResult {
    let order = reading_order(words);
    let mut candidates = Vec::new();

    for (span_idx, span) in spans.iter().enumerate() {
        let span_norm = normalize_text(&span.text);
        if span_norm.is_empty() {
            continue;
        }
        let span_tokens: BTreeSet<String> = match_tokens(&span.text).into_iter().collect();
        let max_len = tokenize_words(&span.text).len().max(1) + cfg.max_window_slack;
        for start in 0..order.len() {
            let mut window_text = String::new();
            for len in 1..=max_len.min(order.len() - start) {
                if len > 1 {
                    window_text.push(' ');
                }
                window_text.push_str(&words[order[start + len - 1]].text);
                if let Some((stage, similarity, char_similarity)) =
                    classify_window(&span_norm, &span_tokens, &window_text, cfg)
                {
                    candidates.push(Candidate { stage, similarity, char_similarity, span: span_idx, start, len });
                }
            }
        }
    }

    candidates.sort_by(|a, b| {
        a.stage
            .cmp(&b.stage)
            .then(b.similarity.total_cmp(&a.similarity))
            .then(a.span.cmp(&b.span))
            .then(a.len.cmp(&b.len))
            .then(b.char_similarity.total_cmp(&a.char_similarity))
            .then(a.start.cmp(&b.start))
    });

    let mut span_done = vec![false; spans.len()];
    let mut word_used = vec![false; words.len()];
    let mut matches = Vec::new();
    for c in candidates {
        if span_done[c.span] {
            continue;
        }
        let window = &order[c.start..c.start + c.len];
        if window.iter().any(|&w| word_used[w]) {
            continue;
        }
        for &w in window {
            word_used[w] = true;
        }
        span_done[c.span] = true;
        let mut word_indices = window.to_vec();
        word_indices.sort_unstable();
        matches.push(SpanMatch { span_index: c.span, word_indices, stage: c.stage, similarity: c.similarity });
    }
    matches.sort_by_key(|m| m.span_index);

    AlignmentResult {
        matches,
        unmatched_span_indices: (0..spans.len()).filter(|&i| !span_done[i]).collect(),
        unmatched_word_indices: (0..words.len()).filter(|&i| !word_used[i]).collect(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GroundingError {
    #[error("match for span {span} references word {word} outside the word list")]
    WordIndex { span: usize, word: usize },
    #[error("match references span {0} outside the span list")]
    SpanIndex(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
}

/// Pixel union of the given words, clipped to the image.
pub fn merged_word_box(
    words: &[OcrWord],
    indices: &[usize],
    width: u32,
    height: u32,
) -> Result<PixelBox, GeometryError> {
    let boxes: Vec<PixelBox> = indices.iter().map(|&i| words[i].bbox).collect();
    let union = box_union(&boxes)?;
    union.clip_to(width as f64, height as f64).ok_or(GeometryError::Degenerate(union.into()))
}

/// One grounded span per match, with the quantized union of the matched
/// word boxes.
pub fn grounded_spans_from_alignment(
    result: &AlignmentResult,
    spans: &[QuotedSpan],
    words: &[OcrWord],
    width: u32,
    height: u32,
) -> Result<Vec<GroundedSpan>, GroundingError> {
    result
        .matches
        .iter()
        .map(|m| {
            let span = spans.get(m.span_index).ok_or(GroundingError::SpanIndex(m.span_index))?;
            if let Some(&word) = m.word_indices.iter().find(|&&w| w >= words.len()) {
                return Err(GroundingError::WordIndex { span: m.span_index, word });
            }
            let merged = merged_word_box(words, &m.word_indices, width, height)?;
            let bbox = quantize_box(&merged, width, height)?;
            Ok(GroundedSpan::new(span.text.trim(), bbox, m.word_indices.clone())?)
        })
        .collect()
}
