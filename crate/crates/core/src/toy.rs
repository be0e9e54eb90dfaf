//! A tiny autoregressive model used to check the decoupled training
//! objective `L = L_img + alpha * L_text` end to end.
//!
//! The model averages the embeddings of the last `context` tokens (prompt
//! included), projects to vocabulary logits and applies a softmax. Training
//! is plain SGD on `f64` parameters with hand-written gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GroundedSpan, NormBox};
use crate::target::{build_target, BuildConfig, BuildError, TargetSequence, VocabLayout};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("token {token} at position {position} outside the vocabulary of {vocab}")]
    TokenOutOfVocab { position: usize, token: u32, vocab: usize },
    #[error("training diverged at step {step}: l_img={l_img}, l_text={l_text}")]
    Diverged { step: usize, l_img: f64, l_text: f64 },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Build(#[from] BuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentedLoss {
    pub l_img: f64,
    pub l_text: f64,
    pub total: f64,
    pub alpha: f64,
}

impl SegmentedLoss {
    fn new(l_img: f64, l_text: f64, alpha: f64) -> Self {
        Self { l_img, l_text, total: l_img + alpha * l_text, alpha }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    vocab: usize,
    dim: usize,
    context: usize,
    /// `vocab x dim`, row-major.
    pub embedding: Vec<f64>,
    /// `dim x vocab`, row-major.
    pub projection: Vec<f64>,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Vec<f64>,
    pub projection: Vec<f64>,
}

impl Gradients {
    fn zeros(m: &ToyModel) -> Self {
        Self { embedding: vec![0.0; m.embedding.len()], projection: vec![0.0; m.projection.len()] }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.embedding.iter_mut().zip(&other.embedding) {
            *a += scale * b;
        }
        for (a, b) in self.projection.iter_mut().zip(&other.projection) {
            *a += scale * b;
        }
    }
}

/// Which parameter a flat coordinate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Embedding(usize),
    Projection(usize),
}

impl ToyModel {
    /// Random embedding and projection, uniform in `[-scale, scale]`.
    pub fn new(vocab: usize, dim: usize, context: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<_>>();
        let embedding = draw(vocab * dim);
        let projection = draw(dim * vocab);
        Self { vocab, dim, context, embedding, projection }
    }

    /// Random embedding with a zero projection: every prediction is uniform.
    pub fn uniform(vocab: usize, dim: usize, context: usize, seed: u64) -> Self {
        let mut m = Self::new(vocab, dim, context, seed, 0.1);
        m.projection.iter_mut().for_each(|w| *w = 0.0);
        m
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn param_count(&self) -> usize {
        self.embedding.len() + self.projection.len()
    }

    pub fn param(&self, p: Param) -> f64 {
        match p {
            Param::Embedding(i) => self.embedding[i],
            Param::Projection(i) => self.projection[i],
        }
    }

    pub fn param_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::Embedding(i) => &mut self.embedding[i],
            Param::Projection(i) => &mut self.projection[i],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.iter().chain(&self.projection).all(|v| v.is_finite())
    }

    fn check_tokens(&self, prompt: &[u32], target: &TargetSequence) -> Result<(), ToyError> {
        for (position, &token) in prompt.iter().chain(&target.tokens).enumerate() {
            if token as usize >= self.vocab {
                return Err(ToyError::TokenOutOfVocab { position, token, vocab: self.vocab });
            }
        }
        Ok(())
    }

    fn hidden(&self, ctx: &[u32], h: &mut [f64]) {
        h.iter_mut().for_each(|v| *v = 0.0);
        if ctx.is_empty() {
            return;
        }
        let inv = 1.0 / ctx.len() as f64;
        for &t in ctx {
            let row = &self.embedding[t as usize * self.dim..(t as usize + 1) * self.dim];
            for (a, e) in h.iter_mut().zip(row) {
                *a += e * inv;
            }
        }
    }

    fn softmax_into(&self, h: &[f64], probs: &mut [f64]) {
        probs.iter_mut().for_each(|v| *v = 0.0);
        for (k, &hk) in h.iter().enumerate() {
            let row = &self.projection[k * self.vocab..(k + 1) * self.vocab];
            for (p, w) in probs.iter_mut().zip(row) {
                *p += hk * w;
            }
        }
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        probs.iter_mut().for_each(|p| *p /= sum);
    }

    /// Next-token distributions at every target position under teacher forcing.
    pub fn position_probs(&self, prompt: &[u32], target: &TargetSequence) -> Result<Vec<Vec<f64>>, ToyError> {
        self.check_tokens(prompt, target)?;
        let full: Vec<u32> = prompt.iter().chain(&target.tokens).copied().collect();
        let mut h = vec![0.0; self.dim];
        Ok((0..target.len())
            .map(|t| {
                let end = prompt.len() + t;
                self.hidden(&full[end.saturating_sub(self.context)..end], &mut h);
                let mut p = vec![0.0; self.vocab];
                self.softmax_into(&h, &mut p);
                p
            })
            .collect())
    }

    fn run(
        &self,
        prompt: &[u32],
        target: &TargetSequence,
        alpha: f64,
        mut grads: Option<&mut Gradients>,
        mut per_position: Option<&mut Vec<f64>>,
    ) -> Result<SegmentedLoss, ToyError> {
        self.check_tokens(prompt, target)?;
        let full: Vec<u32> = prompt.iter().chain(&target.tokens).copied().collect();
        let mut h = vec![0.0; self.dim];
        let mut probs = vec![0.0; self.vocab];
        let mut dh = vec![0.0; self.dim];
        let (mut l_img, mut l_text) = (0.0, 0.0);

        for t in 0..target.len() {
            let weight = match (target.img_mask[t], target.text_mask[t]) {
                (true, _) => 1.0,
                (false, true) => alpha,
                (false, false) => continue,
            };
            let end = prompt.len() + t;
            let ctx = &full[end.saturating_sub(self.context)..end];
            self.hidden(ctx, &mut h);
            self.softmax_into(&h, &mut probs);
            let y = target.tokens[t] as usize;
            let nll = -probs[y].ln();
            if let Some(out) = per_position.as_deref_mut() {
                out.push(weight * nll);
            }
            if target.img_mask[t] {
                l_img += nll;
            } else {
                l_text += nll;
            }

            let Some(g) = grads.as_deref_mut() else { continue };
            if weight == 0.0 {
                continue;
            }
            // d(nll)/d(logits) = p - onehot(y)
            probs[y] -= 1.0;
            for (k, &hk) in h.iter().enumerate() {
                let row = k * self.vocab..(k + 1) * self.vocab;
                let (gw, w) = (&mut g.projection[row.clone()], &self.projection[row]);
                let mut acc = 0.0;
                for v in 0..self.vocab {
                    let d = weight * probs[v];
                    gw[v] += hk * d;
                    acc += w[v] * d;
                }
                dh[k] = acc;
            }
            if !ctx.is_empty() {
                let inv = 1.0 / ctx.len() as f64;
                for &c in ctx {
                    let row = &mut g.embedding[c as usize * self.dim..(c as usize + 1) * self.dim];
                    for (ge, d) in row.iter_mut().zip(&dh) {
                        *ge += d * inv;
                    }
                }
            }
        }
        Ok(SegmentedLoss::new(l_img, l_text, alpha))
    }
}

/// Teacher-forced negative log-likelihood, summed separately over the image
/// and text masks.
pub fn forward_nll(
    model: &ToyModel,
    prompt: &[u32],
    target: &TargetSequence,
    alpha: f64,
) -> Result<SegmentedLoss, ToyError> {
    model.run(prompt, target, alpha, None, None)
}

/// Analytic gradient of the total loss with respect to every parameter.
pub fn backward(
    model: &ToyModel,
    prompt: &[u32],
    target: &TargetSequence,
    alpha: f64,
) -> Result<(SegmentedLoss, Gradients), ToyError> {
    let mut g = Gradients::zeros(model);
    let loss = model.run(prompt, target, alpha, Some(&mut g), None)?;
    Ok((loss, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub prompt: Vec<u32>,
    pub image_tokens: Vec<u32>,
    pub spans: Vec<GroundedSpan>,
    pub target: TargetSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphTask {
    pub vocab: VocabLayout,
    pub examples: Vec<ToyExample>,
}

pub const GLYPH_GRID: usize = 4;
const GLYPHS: std::ops::RangeInclusive<char> = 'A'..='P';

/// Image vocabulary of the glyph task: blank plus one token per glyph.
pub fn glyph_vocab() -> VocabLayout {
    VocabLayout::new(1 + GLYPHS.count() as u32, GLYPHS)
}

/// Synthetic samples: a 4x4 grid of glyph tokens stands in for the image,
/// spans are horizontal runs of glyphs with their cell boxes on the
/// normalized grid, and the prompt lists the span characters. Other cells
/// hold blanks or incidental glyphs.
pub fn make_glyph_task(seed: u64, n_samples: usize, cfg: &BuildConfig) -> Result<GlyphTask, ToyError> {
    let vocab = glyph_vocab();
    let glyphs: Vec<char> = GLYPHS.collect();
    let cell = (crate::geometry::NORM_GRID as usize / GLYPH_GRID) as u16;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n_samples);

    for _ in 0..n_samples {
        let mut grid = vec![0u32; GLYPH_GRID * GLYPH_GRID];
        for g in grid.iter_mut() {
            if rng.random_bool(0.15) {
                *g = rng.random_range(1..=glyphs.len() as u32);
            }
        }
        let mut rows: Vec<usize> = (0..GLYPH_GRID).collect();
        rows.shuffle(&mut rng);
        let n_spans = rng.random_range(1..=3);
        let mut spans = Vec::new();
        for &r in rows.iter().take(n_spans) {
            let c = rng.random_range(0..GLYPH_GRID);
            let len = rng.random_range(1..=(GLYPH_GRID - c).min(3));
            let mut text = String::new();
            let mut cells = Vec::new();
            for k in c..c + len {
                let g = rng.random_range(0..glyphs.len());
                grid[r * GLYPH_GRID + k] = g as u32 + 1;
                text.push(glyphs[g]);
                cells.push(r * GLYPH_GRID + k);
            }
            let bbox = NormBox::new(c as u16 * cell, r as u16 * cell, (c + len) as u16 * cell, (r + 1) as u16 * cell)
                .expect("grid cells are valid boxes");
            spans.push(GroundedSpan::new(text, bbox, cells).expect("spans are non-empty"));
        }
        spans.sort_by_key(|s| (s.bbox.y_min(), s.bbox.x_min()));
        let prompt: Vec<u32> = spans.iter().flat_map(|s| s.text.chars()).map(|c| vocab.char_id(c).unwrap()).collect();
        let target = build_target(&grid, &spans, cfg, &vocab)?;
        examples.push(ToyExample { prompt, image_tokens: grid, spans, target });
    }
    Ok(GlyphTask { vocab, examples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Examples per step; `None` trains on the full dataset every step.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 500, learning_rate: 0.5, batch_size: Some(8), seed: 0, alpha: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    /// Batch means of the per-example sums.
    pub l_img: f64,
    pub l_text: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub curve: Vec<StepLoss>,
    /// Dataset means before the first and after the last step.
    pub initial: SegmentedLoss,
    pub final_loss: SegmentedLoss,
}

/// Mean loss over a dataset.
pub fn dataset_loss(model: &ToyModel, data: &[ToyExample], alpha: f64) -> Result<SegmentedLoss, ToyError> {
    let (mut img, mut text) = (0.0, 0.0);
    for ex in data {
        let l = forward_nll(model, &ex.prompt, &ex.target, alpha)?;
        img += l.l_img;
        text += l.l_text;
    }
    let n = data.len().max(1) as f64;
    Ok(SegmentedLoss::new(img / n, text / n, alpha))
}

/// Sum of per-example losses and gradients over a batch, divided by the
/// number of supervised tokens so the step size is insensitive to length.
pub fn batch_gradient(
    model: &ToyModel,
    batch: &[&ToyExample],
    alpha: f64,
) -> Result<(SegmentedLoss, Gradients), ToyError> {
    let mut total = Gradients::zeros(model);
    let (mut img, mut text, mut tokens) = (0.0, 0.0, 0usize);
    for ex in batch {
        let (l, g) = backward(model, &ex.prompt, &ex.target, alpha)?;
        img += l.l_img;
        text += l.l_text;
        tokens += ex.target.img_mask.iter().zip(&ex.target.text_mask).filter(|(a, b)| **a || **b).count();
        total.add_scaled(&g, 1.0);
    }
    let scale = 1.0 / tokens.max(1) as f64;
    let mut grads = Gradients::zeros(model);
    grads.add_scaled(&total, scale);
    let n = batch.len().max(1) as f64;
    Ok((SegmentedLoss::new(img / n, text / n, alpha), grads))
}

pub fn train(model: &mut ToyModel, data: &[ToyExample], cfg: &TrainConfig) -> Result<TrainOutcome, ToyError> {
    if data.is_empty() {
        return Err(ToyError::EmptyDataset);
    }
    let initial = dataset_loss(model, data, cfg.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batch_size = cfg.batch_size.unwrap_or(data.len()).clamp(1, data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<&ToyExample> = if batch_size == data.len() {
            data.iter().collect()
        } else {
            (0..batch_size)
                .map(|_| {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += 1;
                    &data[order[cursor - 1]]
                })
                .collect()
        };
        let (loss, grads) = batch_gradient(model, &batch, cfg.alpha)?;
        if !loss.total.is_finite() {
            return Err(ToyError::Diverged { step, l_img: loss.l_img, l_text: loss.l_text });
        }
        curve.push(StepLoss { step, l_img: loss.l_img, l_text: loss.l_text, total: loss.total });
        for (w, g) in model.embedding.iter_mut().zip(&grads.embedding) {
            *w -= cfg.learning_rate * g;
        }
        for (w, g) in model.projection.iter_mut().zip(&grads.projection) {
            *w -= cfg.learning_rate * g;
        }
        if !model.is_finite() {
            return Err(ToyError::Diverged { step, l_img: loss.l_img, l_text: loss.l_text });
        }
    }
    let final_loss = dataset_loss(model, data, cfg.alpha)?;
    Ok(TrainOutcome { curve, initial, final_loss })
}

/// Embedding width of the reference training setup.
pub const REFERENCE_DIM: usize = 16;
/// Context window of the reference training setup.
pub const REFERENCE_CONTEXT: usize = 4;
/// Samples in the reference glyph task.
pub const REFERENCE_SAMPLES: usize = 64;

/// Model for the reference setup: small random weights sized to the glyph vocabulary.
pub fn reference_model(seed: u64) -> ToyModel {
    ToyModel::new(glyph_vocab().size() as usize, REFERENCE_DIM, REFERENCE_CONTEXT, seed, 0.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|)`, zero when both vanish.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub entries: Vec<GradientEntry>,
    pub max_relative_error: f64,
    /// Rounding floor of the difference quotient, `2 * f64::EPSILON * sum_t |l_t| / h`
    /// over the weighted per-position losses `l_t`.
    pub resolution: f64,
}

impl GradientCheck {
    /// Entries whose gradient is too small for `rel_tol` to clear the rounding floor.
    pub fn below_resolution(&self, rel_tol: f64) -> usize {
        self.entries.iter().filter(|e| e.analytic.abs().max(e.numeric.abs()) * rel_tol < self.resolution).count()
    }
}

/// Weighted negative log-likelihood of every supervised target position, in order.
pub fn position_losses(
    model: &ToyModel,
    prompt: &[u32],
    target: &TargetSequence,
    alpha: f64,
) -> Result<Vec<f64>, ToyError> {
    let mut out = Vec::with_capacity(target.len());
    model.run(prompt, target, alpha, None, Some(&mut out))?;
    Ok(out)
}

/// Compares the analytic gradient with central differences of step `h` at
/// `n` coordinates drawn uniformly from the parameters the example can touch
/// (the whole projection and the embedding rows of its tokens).
///
/// The difference `L(w + h) - L(w - h)` is summed position by position, so
/// positions the coordinate cannot reach contribute exactly zero.
pub fn gradient_check(
    model: &ToyModel,
    example: &ToyExample,
    alpha: f64,
    n: usize,
    h: f64,
    seed: u64,
) -> Result<GradientCheck, ToyError> {
    let (_, grads) = backward(model, &example.prompt, &example.target, alpha)?;
    let base = position_losses(model, &example.prompt, &example.target, alpha)?;
    let resolution = 2.0 * f64::EPSILON * base.iter().map(|l| l.abs()).sum::<f64>() / h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut tokens: Vec<usize> = example.prompt.iter().chain(&example.target.tokens).map(|&t| t as usize).collect();
    tokens.sort_unstable();
    tokens.dedup();
    let active: Vec<Param> = tokens
        .iter()
        .flat_map(|&t| (t * model.dim..(t + 1) * model.dim).map(Param::Embedding))
        .chain((0..model.projection.len()).map(Param::Projection))
        .collect();
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let p = active[rng.random_range(0..active.len())];
        let analytic = match p {
            Param::Embedding(i) => grads.embedding[i],
            Param::Projection(i) => grads.projection[i],
        };
        let w = model.param(p);
        *probe.param_mut(p) = w + h;
        let up = position_losses(&probe, &example.prompt, &example.target, alpha)?;
        *probe.param_mut(p) = w - h;
        let down = position_losses(&probe, &example.prompt, &example.target, alpha)?;
        *probe.param_mut(p) = w;
        let numeric = up.iter().zip(&down).map(|(u, d)| u - d).sum::<f64>() / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let relative_error = if scale == 0.0 { 0.0 } else { (analytic - numeric).abs() / scale };
        entries.push(GradientEntry { analytic, numeric, relative_error });
    }
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(GradientCheck { entries, max_relative_error, resolution })
}
