//! A deterministic stand-in for running OCR on generated images: the
//! ground-truth spans of a sample, perturbed by character substitutions and
//! box jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OcrWord, PixelBox, SampleRecord};
use crate::metrics::HypothesisOcr;
use crate::target::dequantize_box;

const SUBSTITUTES: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrNoise {
    /// Probability that a non-whitespace character is replaced.
    pub char_sub_rate: f64,
    /// Each box edge moves by a uniform offset in `[-box_jitter_px, box_jitter_px]`.
    pub box_jitter_px: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NoiseError {
    #[error("char_sub_rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("box_jitter_px {0} must be finite and non-negative")]
    Jitter(f64),
}

impl OcrNoise {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if !(0.0..=1.0).contains(&self.char_sub_rate) {
            return Err(NoiseError::Rate(self.char_sub_rate));
        }
        if !(self.box_jitter_px.is_finite() && self.box_jitter_px >= 0.0) {
            return Err(NoiseError::Jitter(self.box_jitter_px));
        }
        Ok(())
    }
}

fn substitute(c: char, rng: &mut ChaCha8Rng) -> char {
    loop {
        let s = SUBSTITUTES[rng.random_range(0..SUBSTITUTES.len())] as char;
        if s != c {
            return s;
        }
    }
}

fn jitter_axis(lo: f64, hi: f64, limit: f64, j: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if j == 0.0 {
        return (lo, hi);
    }
    let a = (lo + rng.random_range(-j..=j)).clamp(0.0, limit);
    let b = (hi + rng.random_range(-j..=j)).clamp(0.0, limit);
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if b - a >= 1.0 {
        (a, b)
    } else {
        let mid = ((a + b) / 2.0).clamp(0.5, limit - 0.5);
        (mid - 0.5, mid + 0.5)
    }
}

/// One hypothesis word per grounded span, carrying the span text and its
/// box mapped back to pixels. Randomness is drawn from a stream seeded by
/// `(seed, sample id)`, so results do not depend on call order.
pub fn mock_ocr(sample: &SampleRecord, noise: &OcrNoise, seed: u64) -> Result<HypothesisOcr, NoiseError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::from_seed(super::stream_seed("mock-ocr", seed, &sample.id));
    let (w, h) = (sample.width, sample.height);
    let words = sample
        .grounded_spans
        .iter()
        .map(|g| {
            let text: String = g
                .text
                .chars()
                .map(|c| {
                    if !c.is_whitespace() && noise.char_sub_rate > 0.0 && rng.random_bool(noise.char_sub_rate) {
                        substitute(c, &mut rng)
                    } else {
                        c
                    }
                })
                .collect();
            let b = dequantize_box(&g.bbox, w, h);
            let (x0, x1) = jitter_axis(b.x_min(), b.x_max(), w as f64, noise.box_jitter_px, &mut rng);
            let (y0, y1) = jitter_axis(b.y_min(), b.y_max(), h as f64, noise.box_jitter_px, &mut rng);
            let bbox = PixelBox::new(x0, y0, x1, y1).expect("jittered boxes keep unit extent");
            OcrWord::new(text, bbox, 1.0).expect("span text is non-empty")
        })
        .collect();
    Ok(HypothesisOcr { id: sample.id.clone(), words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GroundedSpan, NormBox, Source};

    fn sample(spans: &[(&str, [u16; 4])]) -> SampleRecord {
        SampleRecord {
            id: "m".into(),
            image_ref: "synthetic://m".into(),
            width: 1024,
            height: 768,
            prompt: String::new(),
            ocr_words: Vec::new(),
            grounded_spans: spans
                .iter()
                .map(|(t, b)| GroundedSpan::new(*t, NormBox::try_from(*b).unwrap(), vec![0]).unwrap())
                .collect(),
            source: Source::Public,
            topic_path: None,
        }
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = sample(&[("Summer Sale", [10, 20, 200, 60]), ("OPEN", [0, 400, 512, 512])]);
        let h = mock_ocr(&s, &OcrNoise::default(), 5).unwrap();
        assert_eq!(h.words.len(), 2);
        assert_eq!(h.words[0].text, "Summer Sale");
        assert_eq!(h.words[1].bbox, PixelBox::new(0.0, 600.0, 1024.0, 768.0).unwrap());
    }

    #[test]
    fn full_rate_substitutes_every_character() {
        let s = sample(&[("ab", [0, 0, 10, 10])]);
        let noise = OcrNoise { char_sub_rate: 1.0, box_jitter_px: 0.0 };
        let h = mock_ocr(&s, &noise, 1).unwrap();
        let t: Vec<char> = h.words[0].text.chars().collect();
        assert_eq!(t.len(), 2);
        assert!(t[0] != 'a' && t[1] != 'b');
    }

    #[test]
    fn jitter_stays_within_bounds_and_is_seeded() {
        let s = sample(&[("x", [100, 100, 200, 200]), ("y", [0, 0, 1, 1])]);
        let noise = OcrNoise { char_sub_rate: 0.3, box_jitter_px: 4.0 };
        let a = mock_ocr(&s, &noise, 9).unwrap();
        assert_eq!(a, mock_ocr(&s, &noise, 9).unwrap());
        assert_ne!(a, mock_ocr(&s, &noise, 10).unwrap());
        let b = a.words[0].bbox;
        assert!((b.x_min() - 200.0).abs() <= 4.0 && (b.y_max() - 300.0).abs() <= 4.0);
    }

    #[test]
    fn invalid_noise_is_rejected() {
        let s = sample(&[]);
        assert!(mock_ocr(&s, &OcrNoise { char_sub_rate: 1.5, box_jitter_px: 0.0 }, 0).is_err());
        assert!(mock_ocr(&s, &OcrNoise { char_sub_rate: 0.0, box_jitter_px: -1.0 }, 0).is_err());
    }
}
