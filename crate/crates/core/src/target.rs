//! Layout-aware training targets.
//!
//! A target is the image token sequence extended with one block per grounded
//! span, either after the image (`PostImage`, the training-time supervision
//! layout) or before it (`PreImage`). Each block follows the grammar
//!
//! ```text
//! block := SPAN_START char* BOX_SEP [x_min y_min x_max y_max] SPAN_END
//! post  := image+ block* SEQ_END
//! pre   := block* TEXT_END image+
//! ```
//!
//! where the characters are omitted for `BBoxOnly` and the coordinates for
//! `TextOnly`. Blocks are emitted in reading order of their boxes. The two
//! loss masks are disjoint: image positions versus everything else.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{reading_order, GroundedSpan, NormBox, PixelBox, NORM_GRID};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantizeError {
    #[error("box {bbox:?} lies outside the {width}x{height} image")]
    OutsideImage { bbox: [f64; 4], width: u32, height: u32 },
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
}

fn quantize_coord(v: f64, dim: u32) -> u16 {
    let scaled = (v * NORM_GRID as f64 / dim as f64 + 0.5).floor();
    scaled.clamp(0.0, NORM_GRID as f64) as u16
}

fn widen(lo: u16, hi: u16) -> (u16, u16) {
    if lo < hi {
        (lo, hi)
    } else if hi < NORM_GRID {
        (lo, hi + 1)
    } else {
        (lo - 1, hi)
    }
}

/// Maps a pixel box onto the `[0, 512]` grid with half-up rounding. An edge
/// pair that rounds onto the same value is widened by one unit.
pub fn quantize_box(b: &PixelBox, width: u32, height: u32) -> Result<NormBox, QuantizeError> {
    if width == 0 || height == 0 {
        return Err(QuantizeError::EmptyImage);
    }
    if b.x_max() > width as f64 || b.y_max() > height as f64 {
        return Err(QuantizeError::OutsideImage { bbox: (*b).into(), width, height });
    }
    let (x0, x1) = widen(quantize_coord(b.x_min(), width), quantize_coord(b.x_max(), width));
    let (y0, y1) = widen(quantize_coord(b.y_min(), height), quantize_coord(b.y_max(), height));
    Ok(NormBox::new(x0, y0, x1, y1).expect("widened coordinates form a valid box"))
}

pub fn dequantize_box(n: &NormBox, width: u32, height: u32) -> PixelBox {
    let sx = width as f64 / NORM_GRID as f64;
    let sy = height as f64 / NORM_GRID as f64;
    PixelBox::new(n.x_min() as f64 * sx, n.y_min() as f64 * sy, n.x_max() as f64 * sx, n.y_max() as f64 * sy)
        .expect("a valid normalized box scales to a valid pixel box")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Control {
    SpanStart,
    BoxSep,
    SpanEnd,
    SeqEnd,
    TextEnd,
}

impl Control {
    const ALL: [Control; 5] =
        [Control::SpanStart, Control::BoxSep, Control::SpanEnd, Control::SeqEnd, Control::TextEnd];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Image(u32),
    Char(char),
    Coord(u16),
    Control(Control),
}

/// Disjoint id ranges: image tokens, characters, the 513 coordinate values
/// and the control tokens, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "VocabSpec", from = "VocabSpec")]
pub struct VocabLayout {
    image_vocab: u32,
    chars: Vec<char>,
    char_ids: HashMap<char, u32>,
}

/// Serialized form of a layout: character ids follow the order of `chars`.
#[derive(Serialize, Deserialize)]
struct VocabSpec {
    image_vocab: u32,
    chars: String,
}

impl From<VocabLayout> for VocabSpec {
    fn from(v: VocabLayout) -> Self {
        Self { image_vocab: v.image_vocab, chars: v.chars.into_iter().collect() }
    }
}

impl From<VocabSpec> for VocabLayout {
    fn from(s: VocabSpec) -> Self {
        Self::new(s.image_vocab, s.chars.chars())
    }
}

impl VocabLayout {
    pub fn new(image_vocab: u32, chars: impl IntoIterator<Item = char>) -> Self {
        let mut list: Vec<char> = Vec::new();
        for c in chars {
            if !list.contains(&c) {
                list.push(c);
            }
        }
        let char_ids = list.iter().enumerate().map(|(i, &c)| (c, image_vocab + i as u32)).collect();
        Self { image_vocab, chars: list, char_ids }
    }

    /// Printable ASCII characters.
    pub fn ascii(image_vocab: u32) -> Self {
        Self::new(image_vocab, (0x20u8..0x7f).map(char::from))
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn image_vocab(&self) -> u32 {
        self.image_vocab
    }

    fn coord_base(&self) -> u32 {
        self.image_vocab + self.chars.len() as u32
    }

    fn control_base(&self) -> u32 {
        self.coord_base() + NORM_GRID as u32 + 1
    }

    pub fn size(&self) -> u32 {
        self.control_base() + Control::ALL.len() as u32
    }

    pub fn image(&self, t: u32) -> Option<u32> {
        (t < self.image_vocab).then_some(t)
    }

    pub fn char_id(&self, c: char) -> Option<u32> {
        self.char_ids.get(&c).copied()
    }

    pub fn coord(&self, v: u16) -> u32 {
        assert!(v <= NORM_GRID, "coordinate {v} outside the grid");
        self.coord_base() + v as u32
    }

    pub fn control(&self, c: Control) -> u32 {
        self.control_base() + Control::ALL.iter().position(|&x| x == c).unwrap() as u32
    }

    pub fn decode(&self, id: u32) -> Option<Token> {
        if id < self.image_vocab {
            Some(Token::Image(id))
        } else if id < self.coord_base() {
            Some(Token::Char(self.chars[(id - self.image_vocab) as usize]))
        } else if id < self.control_base() {
            Some(Token::Coord((id - self.coord_base()) as u16))
        } else if id < self.size() {
            Some(Token::Control(Control::ALL[(id - self.control_base()) as usize]))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    TextOnly,
    BBoxOnly,
    TextAndBBox,
}

impl Variant {
    pub fn has_text(self) -> bool {
        self != Variant::BBoxOnly
    }
    pub fn has_box(self) -> bool {
        self != Variant::TextOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Order {
    PostImage,
    PreImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub variant: Variant,
    pub order: Order,
    /// Weight of the text segment in the total loss.
    pub alpha: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self { variant: Variant::TextAndBBox, order: Order::PostImage, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TargetSequence {
    pub tokens: Vec<u32>,
    pub img_mask: Vec<bool>,
    pub text_mask: Vec<bool>,
}

impl TargetSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Image tokens alone: what the model emits at inference time.
    pub fn unsupervised(image_tokens: &[u32]) -> Self {
        Self {
            tokens: image_tokens.to_vec(),
            img_mask: vec![true; image_tokens.len()],
            text_mask: vec![false; image_tokens.len()],
        }
    }

    fn push(&mut self, token: u32, image: bool) {
        self.tokens.push(token);
        self.img_mask.push(image);
        self.text_mask.push(!image);
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuildError {
    #[error("image token list is empty")]
    NoImageTokens,
    #[error("image token {token} at {position} outside the image vocabulary of {vocab}")]
    ImageToken { position: usize, token: u32, vocab: u32 },
    #[error("span {span} ({text:?}): character {ch:?} has no token")]
    Unencodable { span: usize, text: String, ch: char },
}

/// Token count of a built target, computed without building it.
pub fn target_len(image_tokens: usize, spans: &[GroundedSpan], variant: Variant) -> usize {
    let blocks: usize = spans
        .iter()
        .map(|s| {
            3 + if variant.has_text() { s.text.chars().count() } else { 0 } + if variant.has_box() { 4 } else { 0 }
        })
        .sum();
    image_tokens + blocks + 1
}

pub fn build_target(
    image_tokens: &[u32],
    spans: &[GroundedSpan],
    cfg: &BuildConfig,
    vocab: &VocabLayout,
) -> Result<TargetSequence, BuildError> {
    if image_tokens.is_empty() {
        return Err(BuildError::NoImageTokens);
    }
    if let Some((position, &token)) = image_tokens.iter().enumerate().find(|(_, &t)| vocab.image(t).is_none()) {
        return Err(BuildError::ImageToken { position, token, vocab: vocab.image_vocab() });
    }

    let mut blocks = Vec::new();
    for idx in reading_order(spans) {
        let span = &spans[idx];
        blocks.push(vocab.control(Control::SpanStart));
        if cfg.variant.has_text() {
            for ch in span.text.chars() {
                let id = vocab.char_id(ch).ok_or_else(|| BuildError::Unencodable {
                    span: idx,
                    text: span.text.clone(),
                    ch,
                })?;
                blocks.push(id);
            }
        }
        blocks.push(vocab.control(Control::BoxSep));
        if cfg.variant.has_box() {
            blocks.extend(span.bbox.coords().iter().map(|&v| vocab.coord(v)));
        }
        blocks.push(vocab.control(Control::SpanEnd));
    }

    let mut seq = TargetSequence::default();
    match cfg.order {
        Order::PostImage => {
            image_tokens.iter().for_each(|&t| seq.push(t, true));
            blocks.iter().for_each(|&t| seq.push(t, false));
            seq.push(vocab.control(Control::SeqEnd), false);
        }
        Order::PreImage => {
            blocks.iter().for_each(|&t| seq.push(t, false));
            seq.push(vocab.control(Control::TextEnd), false);
            image_tokens.iter().for_each(|&t| seq.push(t, true));
        }
    }
    Ok(seq)
}

/// A span as recovered from a target. Fields absent from the variant are empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSpan {
    pub text: String,
    pub bbox: Option<NormBox>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTarget {
    pub image_tokens: Vec<u32>,
    pub spans: Vec<ParsedSpan>,
    /// `None` when there are no spans to observe it from.
    pub variant: Option<Variant>,
    pub order: Order,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed target at position {position}: expected {expected}")]
pub struct ParseError {
    pub position: usize,
    pub expected: String,
}

impl ParseError {
    fn at(position: usize, expected: impl fmt::Display) -> Self {
        Self { position, expected: expected.to_string() }
    }
}

struct Cursor<'a> {
    tokens: &'a [u32],
    vocab: &'a VocabLayout,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<Token> {
        self.tokens.get(self.pos).and_then(|&t| self.vocab.decode(t))
    }

    fn expect_control(&mut self, c: Control) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token::Control(x)) if x == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::at(self.pos, format!("{c:?}"))),
        }
    }

    fn images(&mut self) -> Vec<u32> {
        let start = self.pos;
        while let Some(Token::Image(_)) = self.peek() {
            self.pos += 1;
        }
        self.tokens[start..self.pos].to_vec()
    }

    fn block(&mut self) -> Result<(ParsedSpan, bool, bool), ParseError> {
        let start = self.pos;
        self.expect_control(Control::SpanStart)?;
        let mut text = String::new();
        while let Some(Token::Char(c)) = self.peek() {
            text.push(c);
            self.pos += 1;
        }
        self.expect_control(Control::BoxSep)?;
        let mut coords = Vec::with_capacity(4);
        while let Some(Token::Coord(v)) = self.peek() {
            coords.push(v);
            self.pos += 1;
        }
        let bbox = match coords.len() {
            0 => None,
            4 => Some(
                NormBox::new(coords[0], coords[1], coords[2], coords[3])
                    .map_err(|e| ParseError::at(self.pos - 4, format!("a valid box ({e})")))?,
            ),
            n => return Err(ParseError::at(self.pos, format!("4 coordinates, found {n}"))),
        };
        self.expect_control(Control::SpanEnd)?;
        let (has_text, has_box) = (!text.is_empty(), bbox.is_some());
        if !has_text && !has_box {
            return Err(ParseError::at(start, "a block with text or a box"));
        }
        Ok((ParsedSpan { text, bbox }, has_text, has_box))
    }

    fn blocks(&mut self) -> Result<(Vec<ParsedSpan>, Option<Variant>), ParseError> {
        let mut spans = Vec::new();
        let mut variant = None;
        while let Some(Token::Control(Control::SpanStart)) = self.peek() {
            let start = self.pos;
            let (span, has_text, has_box) = self.block()?;
            let v = match (has_text, has_box) {
                (true, true) => Variant::TextAndBBox,
                (true, false) => Variant::TextOnly,
                _ => Variant::BBoxOnly,
            };
            if variant.is_some_and(|prev| prev != v) {
                return Err(ParseError::at(start, format!("a {:?} block", variant.unwrap())));
            }
            variant = Some(v);
            spans.push(span);
        }
        Ok((spans, variant))
    }
}

/// Inverse of [`build_target`]; also checks that the masks match the grammar.
pub fn parse_target(seq: &TargetSequence, vocab: &VocabLayout) -> Result<ParsedTarget, ParseError> {
    if seq.img_mask.len() != seq.len() || seq.text_mask.len() != seq.len() {
        return Err(ParseError::at(0, "masks as long as the token list"));
    }
    let mut cur = Cursor { tokens: &seq.tokens, vocab, pos: 0 };
    let order = match cur.peek() {
        Some(Token::Image(_)) => Order::PostImage,
        _ => Order::PreImage,
    };
    let (image_tokens, spans, variant) = match order {
        Order::PostImage => {
            let images = cur.images();
            let (spans, variant) = cur.blocks()?;
            cur.expect_control(Control::SeqEnd)?;
            (images, spans, variant)
        }
        Order::PreImage => {
            let (spans, variant) = cur.blocks()?;
            cur.expect_control(Control::TextEnd)?;
            let images = cur.images();
            if images.is_empty() {
                return Err(ParseError::at(cur.pos, "image tokens"));
            }
            (images, spans, variant)
        }
    };
    if cur.pos != seq.len() {
        return Err(ParseError::at(cur.pos, "end of sequence"));
    }
    for (i, &t) in seq.tokens.iter().enumerate() {
        let is_image = matches!(vocab.decode(t), Some(Token::Image(_)));
        if seq.img_mask[i] != is_image || seq.text_mask[i] == is_image {
            return Err(ParseError::at(i, "masks consistent with token roles"));
        }
    }
    Ok(ParsedTarget { image_tokens, spans, variant, order })
}
