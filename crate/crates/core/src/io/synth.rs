//! Deterministic synthetic corpora: captions quoting one to four spans, with
//! OCR words laid out on the image so that every span is readable, plus an
//! optional share of samples carrying a single deliberate defect.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::filter::union_text_area_ratio;
use crate::geometry::{OcrWord, PixelBox, SampleRecord, Source};

const WORDS: &[&str] = &[
    "SALE", "Open", "COFFEE", "Bakery", "Fresh", "Daily", "Summer", "Winter", "Books", "Market", "EXIT", "North",
    "Garden", "Pizza", "Hotel", "Station", "Welcome", "Home", "Music", "Night", "Festival", "Grand", "Opening", "Café",
    "Crème", "Straße", "Ocean", "View", "Street", "Food", "Best", "Deals", "City", "Library", "Museum", "Park",
    "Theatre", "Cinema", "Tickets", "Only", "Today", "Happy", "Birthday", "Vintage", "Records", "Bike", "Repair",
    "Flowers", "Organic", "Tea", "House", "Golden", "Dragon", "Blue", "Moon", "Lucky", "Star", "2024", "50%", "OFF",
    "No.7", "Route", "66", "Dental", "Clinic",
];

const DISTRACTORS: &[&str] =
    &["©", "est.", "1987", "www", "tel", "®", "#12", "ltd", "co", "inc", "p.o.", "fax", "—", "&"];

const SCENES: &[&str] = &[
    "A storefront photographed at noon",
    "A hand-painted wooden sign",
    "A neon sign glowing on a brick wall",
    "A poster taped to a lamppost",
    "A chalkboard menu outside a shop",
    "A highway billboard under a clear sky",
    "A paper flyer pinned to a corkboard",
    "A vintage enamel plaque",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defect {
    /// Shorter side under 256 px.
    Small,
    /// Width over height outside the accepted range.
    Panorama,
    /// Every word below the confidence threshold.
    Blurry,
    /// OCR finds only punctuation and symbols.
    Symbols,
    /// Text covers a small fraction of the image.
    TinyText,
    /// Many words that no span accounts for.
    Cluttered,
    /// One quoted span is absent from the OCR output.
    MissingSpan,
}

impl Defect {
    pub const ALL: [Defect; 7] = [
        Defect::Small,
        Defect::Panorama,
        Defect::Blurry,
        Defect::Symbols,
        Defect::TinyText,
        Defect::Cluttered,
        Defect::MissingSpan,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Share of samples that carry one defect.
    pub defect_rate: f64,
    /// Span count is drawn uniformly from `1..=max_spans`.
    pub max_spans: usize,
    /// Span token count is drawn uniformly from `1..=max_span_words`.
    pub max_span_words: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_samples: 2000, seed: 7, defect_rate: 0.25, max_spans: 4, max_span_words: 6 }
    }
}

impl SynthConfig {
    /// Every sample passes the heuristic filter and the semantic audit.
    pub fn clean(n_samples: usize, seed: u64) -> Self {
        Self { n_samples, seed, defect_rate: 0.0, ..Self::default() }
    }
}

struct Line {
    words: Vec<String>,
    confidence: f64,
}

fn layout(lines: &[Line], width: u32, height: u32, scale: f64, rng: &mut ChaCha8Rng) -> Vec<OcrWord> {
    let (w, h) = (width as f64, height as f64);
    let longest = lines.iter().map(|l| l.words.join(" ").chars().count()).max().unwrap_or(1).max(1) as f64;
    let n = lines.len().max(1) as f64;
    let base = (0.8 * h / (n * 1.3)).min(0.9 * w / (0.6 * longest));
    let font = (base * scale).min(0.98 * h / (n * 1.3)).min(0.98 * w / (0.6 * longest));
    let advance = 0.6 * font;
    let block = lines.len() as f64 * font * 1.3;
    let top = rng.random_range(0.0..=(h - block).max(0.0));
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let chars = line.words.join(" ").chars().count() as f64;
        let left = rng.random_range(0.0..=(w - chars * advance).max(0.0));
        let y0 = top + i as f64 * font * 1.3;
        let mut x = left;
        for word in &line.words {
            let len = word.chars().count() as f64 * advance;
            let bbox =
                PixelBox::new(x, y0, (x + len).min(w), (y0 + font).min(h)).expect("layout stays inside the image");
            out.push(OcrWord::new(word.clone(), bbox, line.confidence).expect("words are non-empty"));
            x += len + advance;
        }
    }
    out
}

fn wrap(words: &[String], max_chars: usize) -> Vec<Vec<String>> {
    let mut lines: Vec<Vec<String>> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for w in words {
        let len: usize = current.iter().map(|c| c.chars().count() + 1).sum::<usize>() + w.chars().count();
        if !current.is_empty() && len > max_chars {
            lines.push(std::mem::take(&mut current));
        }
        current.push(w.clone());
    }
    if !current.is_empty() {
        lines.push(current);
    }
    lines
}

fn rewrap(lines: &[Line], max_chars: usize) -> Vec<Line> {
    lines
        .iter()
        .flat_map(|l| wrap(&l.words, max_chars).into_iter().map(|words| Line { words, confidence: l.confidence }))
        .collect()
}

fn caption(scene: &str, spans: &[String], rng: &mut ChaCha8Rng) -> String {
    let quote = |s: &String, curly: bool| if curly { format!("\u{201c}{s}\u{201d}") } else { format!("\"{s}\"") };
    let mut c = format!("{scene} that reads {}", quote(&spans[0], rng.random_bool(0.2)));
    for (i, s) in spans.iter().enumerate().skip(1) {
        let joiner = if i + 1 == spans.len() { ", and below it" } else { ", then" };
        c.push_str(&format!("{joiner} {}", quote(s, rng.random_bool(0.2))));
    }
    c.push('.');
    c
}

fn dims(rng: &mut ChaCha8Rng) -> (u32, u32) {
    let width = rng.random_range(512..=1024);
    let aspect: f64 = rng.random_range(0.75..=1.33);
    (width, ((width as f64 / aspect).round() as u32).max(512))
}

fn sample(cfg: &SynthConfig, index: usize) -> SampleRecord {
    let id = format!("syn-{:05}", index);
    let mut rng = ChaCha8Rng::from_seed(super::stream_seed("synth", cfg.seed, &id));
    let defect = (rng.random::<f64>() < cfg.defect_rate).then(|| *Defect::ALL.choose(&mut rng).unwrap());

    let n_spans = rng.random_range(1..=cfg.max_spans.max(1));
    let mut pool: Vec<&str> = WORDS.to_vec();
    pool.shuffle(&mut rng);
    let mut pool = pool.into_iter().cycle();
    let spans: Vec<Vec<String>> = (0..n_spans)
        .map(|_| {
            (0..rng.random_range(1..=cfg.max_span_words.max(1))).map(|_| pool.next().unwrap().to_string()).collect()
        })
        .collect();
    let span_texts: Vec<String> = spans.iter().map(|s| s.join(" ")).collect();
    let prompt = caption(SCENES.choose(&mut rng).unwrap(), &span_texts, &mut rng);

    let (mut width, mut height) = dims(&mut rng);
    let mut lines: Vec<Line> = Vec::new();
    for (i, words) in spans.iter().enumerate() {
        if defect == Some(Defect::MissingSpan) && i == n_spans - 1 {
            continue;
        }
        for l in wrap(words, 16) {
            lines.push(Line { words: l, confidence: rng.random_range(0.85..=0.99) });
        }
    }
    let distractors = match defect {
        Some(Defect::Cluttered) => 12 + 4 * lines.iter().map(|l| l.words.len()).sum::<usize>(),
        _ => rng.random_range(0..=1),
    };
    if distractors > 0 {
        let words: Vec<String> = (0..distractors).map(|_| DISTRACTORS.choose(&mut rng).unwrap().to_string()).collect();
        for l in wrap(&words, 16) {
            lines.push(Line { words: l, confidence: rng.random_range(0.85..=0.99) });
        }
    }
    if defect == Some(Defect::Cluttered) {
        // Letters make the clutter count towards the unmatched ratio.
        for l in lines.iter_mut().filter(|l| DISTRACTORS.contains(&l.words[0].as_str())) {
            for w in l.words.iter_mut() {
                w.push('x');
            }
        }
    }
    if defect == Some(Defect::Symbols) {
        lines = vec![Line { words: vec!["©".into(), "—".into(), "&".into()], confidence: 0.95 }];
    }
    if defect == Some(Defect::Blurry) {
        lines.iter_mut().for_each(|l| l.confidence = rng.random_range(0.2..0.6));
    }
    match defect {
        Some(Defect::Small) => {
            width = rng.random_range(128..256);
            height = rng.random_range(128..256);
        }
        Some(Defect::Panorama) => height = (width as f64 / rng.random_range(2.0..3.0)).round().max(256.0) as u32,
        _ => {}
    }

    let scale = if defect == Some(Defect::TinyText) { 0.15 } else { 1.0 };
    let mut ocr_words = layout(&lines, width, height, scale, &mut rng);
    if defect.is_none() || defect == Some(Defect::MissingSpan) {
        // Enlarge text, then narrow the lines, until it covers enough of the image.
        'grow: for max_chars in [16, 10, 6, 1] {
            let narrow = rewrap(&lines, max_chars);
            let mut s = scale;
            while s < 4.0 {
                ocr_words = layout(&narrow, width, height, s, &mut rng);
                if union_text_area_ratio(&ocr_words, width, height) >= 0.12 {
                    break 'grow;
                }
                s *= 1.15;
            }
        }
    }

    SampleRecord {
        id: id.clone(),
        image_ref: format!("synthetic://{id}"),
        width,
        height,
        prompt,
        ocr_words,
        grounded_spans: Vec::new(),
        source: if index.is_multiple_of(3) { Source::Mined } else { Source::Public },
        topic_path: None,
    }
}

/// Ungrounded samples with ids `syn-00000`, `syn-00001`, ... Each sample
/// depends only on the seed and its index.
pub fn synth_corpus(cfg: &SynthConfig) -> Vec<SampleRecord> {
    (0..cfg.n_samples).map(|i| sample(cfg, i)).collect()
}

/// The defect injected into a sample of [`synth_corpus`], if any.
pub fn defect_of(cfg: &SynthConfig, index: usize) -> Option<Defect> {
    let id = format!("syn-{:05}", index);
    let mut rng = ChaCha8Rng::from_seed(super::stream_seed("synth", cfg.seed, &id));
    (rng.random::<f64>() < cfg.defect_rate).then(|| *Defect::ALL.choose(&mut rng).unwrap())
}
