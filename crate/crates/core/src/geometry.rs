//! Domain types shared by every stage: pixel and normalized boxes, OCR words,
//! grounded spans and sample records, plus exact rectangle arithmetic.
//!
//! Boxes are stored as closed corner pairs `(x_min, y_min, x_max, y_max)` and
//! degenerate boxes are rejected at construction, so every area is strictly
//! positive and IoU never divides by zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound of the normalized coordinate grid.
pub const NORM_GRID: u16 = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinates must be finite and non-negative, got {0:?}")]
    NonFinite([f64; 4]),
    #[error("degenerate box {0:?}: requires x_min < x_max and y_min < y_max")]
    Degenerate([f64; 4]),
    #[error("normalized coordinate {0} outside [0, 512]")]
    OutOfGrid(u16),
    #[error("union of an empty box list")]
    EmptyUnion,
    #[error("OCR word text is empty")]
    EmptyWord,
    #[error("OCR confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("grounded span text is empty")]
    EmptySpan,
    #[error("grounded span source indices must be non-empty and strictly increasing")]
    SourceIndices,
}

/// Anything with axis-aligned corners in a single coordinate space.
///
/// IoU is only defined between two boxes of the same type, so mixing pixel and
/// normalized boxes is rejected by the compiler.
pub trait AxisBox {
    fn corners(&self) -> [f64; 4];

    fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.corners();
        (x1 - x0) * (y1 - y0)
    }
}

/// A box in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct PixelBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl PixelBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let c = [x_min, y_min, x_max, y_max];
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeometryError::NonFinite(c));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Degenerate(c));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Intersects with the image rectangle `[0, width] x [0, height]`.
    /// Returns `None` if nothing with positive area is left.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<PixelBox> {
        PixelBox::new(self.x_min.min(width), self.y_min.min(height), self.x_max.min(width), self.y_max.min(height)).ok()
    }
}

impl TryFrom<[f64; 4]> for PixelBox {
    type Error = GeometryError;
    fn try_from(c: [f64; 4]) -> Result<Self, Self::Error> {
        PixelBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<PixelBox> for [f64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl AxisBox for PixelBox {
    fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// A box on the resolution-independent integer grid `[0, 512]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u16; 4]", into = "[u16; 4]")]
pub struct NormBox {
    x_min: u16,
    y_min: u16,
    x_max: u16,
    y_max: u16,
}

impl NormBox {
    pub fn new(x_min: u16, y_min: u16, x_max: u16, y_max: u16) -> Result<Self, GeometryError> {
        for v in [x_min, y_min, x_max, y_max] {
            if v > NORM_GRID {
                return Err(GeometryError::OutOfGrid(v));
            }
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeometryError::Degenerate([x_min as f64, y_min as f64, x_max as f64, y_max as f64]));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> u16 {
        self.x_min
    }
    pub fn y_min(&self) -> u16 {
        self.y_min
    }
    pub fn x_max(&self) -> u16 {
        self.x_max
    }
    pub fn y_max(&self) -> u16 {
        self.y_max
    }

    /// Coordinates in `x_min, y_min, x_max, y_max` order.
    pub fn coords(&self) -> [u16; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[u16; 4]> for NormBox {
    type Error = GeometryError;
    fn try_from(c: [u16; 4]) -> Result<Self, Self::Error> {
        NormBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<NormBox> for [u16; 4] {
    fn from(b: NormBox) -> Self {
        b.coords()
    }
}

impl AxisBox for NormBox {
    fn corners(&self) -> [f64; 4] {
        [self.x_min as f64, self.y_min as f64, self.x_max as f64, self.y_max as f64]
    }
}

pub fn box_area<B: AxisBox>(b: &B) -> f64 {
    b.area()
}

/// Smallest axis-aligned box containing every input box.
pub fn box_union(boxes: &[PixelBox]) -> Result<PixelBox, GeometryError> {
    let (first, rest) = boxes.split_first().ok_or(GeometryError::EmptyUnion)?;
    let mut acc = *first;
    for b in rest {
        acc.x_min = acc.x_min.min(b.x_min);
        acc.y_min = acc.y_min.min(b.y_min);
        acc.x_max = acc.x_max.max(b.x_max);
        acc.y_max = acc.y_max.max(b.y_max);
    }
    Ok(acc)
}

/// Intersection over union of two boxes in the same coordinate space.
pub fn box_iou<B: AxisBox>(a: &B, b: &B) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = ax1.min(bx1) - ax0.max(bx0);
    let ih = ay1.min(by1) - ay0.max(by0);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Sort key for reading order: top to bottom, then left to right.
pub(crate) fn reading_key<B: AxisBox>(b: &B) -> (f64, f64) {
    let [x0, y0, _, _] = b.corners();
    (y0, x0)
}

/// Indices of `boxes` sorted into reading order; ties keep input order.
pub fn reading_order<B: AxisBox>(boxes: &[B]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&i, &j| {
        let (yi, xi) = reading_key(&boxes[i]);
        let (yj, xj) = reading_key(&boxes[j]);
        yi.total_cmp(&yj).then(xi.total_cmp(&xj)).then(i.cmp(&j))
    });
    idx
}

/// A single word detected by an OCR engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOcrWord")]
pub struct OcrWord {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct RawOcrWord {
    text: String,
    #[serde(rename = "box")]
    bbox: PixelBox,
    confidence: f64,
}

impl TryFrom<RawOcrWord> for OcrWord {
    type Error = GeometryError;
    fn try_from(r: RawOcrWord) -> Result<Self, Self::Error> {
        OcrWord::new(r.text, r.bbox, r.confidence)
    }
}

impl OcrWord {
    pub fn new(text: impl Into<String>, bbox: PixelBox, confidence: f64) -> Result<Self, GeometryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GeometryError::EmptyWord);
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(Self { text, bbox, confidence })
    }
}

impl AxisBox for OcrWord {
    fn corners(&self) -> [f64; 4] {
        self.bbox.corners()
    }
}

/// A prompt-entailed span together with its normalized box and the OCR
/// words it was merged from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGroundedSpan")]
pub struct GroundedSpan {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub source_word_indices: Vec<usize>,
}

#[derive(Deserialize)]
struct RawGroundedSpan {
    text: String,
    #[serde(rename = "box")]
    bbox: NormBox,
    source_word_indices: Vec<usize>,
}

impl TryFrom<RawGroundedSpan> for GroundedSpan {
    type Error = GeometryError;
    fn try_from(r: RawGroundedSpan) -> Result<Self, Self::Error> {
        GroundedSpan::new(r.text, r.bbox, r.source_word_indices)
    }
}

impl GroundedSpan {
    pub fn new(text: impl Into<String>, bbox: NormBox, source_word_indices: Vec<usize>) -> Result<Self, GeometryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GeometryError::EmptySpan);
        }
        if source_word_indices.is_empty() || source_word_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GeometryError::SourceIndices);
        }
        Ok(Self { text, bbox, source_word_indices })
    }
}

impl AxisBox for GroundedSpan {
    fn corners(&self) -> [f64; 4] {
        self.bbox.corners()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Public,
    Mined,
}

/// One image with its caption, OCR output and grounded annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_ref: String,
    pub width: u32,
    pub height: u32,
    pub prompt: String,
    pub ocr_words: Vec<OcrWord>,
    #[serde(default)]
    pub grounded_spans: Vec<GroundedSpan>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_path: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("sample {id}: image dimensions must be at least 1x1")]
    Dimensions { id: String },
    #[error("sample {id}: grounded span {span} references word {word} but only {count} words exist")]
    WordIndex { id: String, span: usize, word: usize, count: usize },
    #[error("sample id is empty")]
    EmptyId,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.width == 0 || self.height == 0 {
            return Err(RecordError::Dimensions { id: self.id.clone() });
        }
        let count = self.ocr_words.len();
        for (span, g) in self.grounded_spans.iter().enumerate() {
            if let Some(&word) = g.source_word_indices.iter().find(|&&w| w >= count) {
                return Err(RecordError::WordIndex { id: self.id.clone(), span, word, count });
            }
        }
        Ok(())
    }
}
