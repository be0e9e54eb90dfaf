//! Difficulty levels, seeded benchmark selection and corpus statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::SampleRecord;
use crate::text::tokenize_words;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Easy, Level::Medium, Level::Hard];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyFeatures {
    /// Number of grounded spans.
    pub n_box: usize,
    /// Largest whitespace-token count of any span.
    pub w_max: usize,
}

impl DifficultyFeatures {
    pub fn of(sample: &SampleRecord) -> Self {
        Self {
            n_box: sample.grounded_spans.len(),
            w_max: sample.grounded_spans.iter().map(|g| tokenize_words(&g.text).len()).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StratifyError {
    #[error("sample has no grounded spans and cannot be benchmarked")]
    NotBenchmarkable,
}

pub fn classify(f: DifficultyFeatures) -> Result<Level, StratifyError> {
    if f.n_box == 0 {
        return Err(StratifyError::NotBenchmarkable);
    }
    let many_boxes = f.n_box >= 3;
    let long_text = f.w_max >= 5;
    Ok(match (many_boxes, long_text) {
        (false, false) => Level::Easy,
        (true, true) => Level::Hard,
        _ => Level::Medium,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub level: Level,
    pub requested: usize,
    pub available: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub quota_per_level: usize,
    pub corpus_digest: String,
    pub levels: BTreeMap<Level, Vec<String>>,
    pub counts: BTreeMap<Level, usize>,
    pub shortfalls: Vec<Shortfall>,
    /// Samples without grounded spans.
    pub excluded: Vec<String>,
}

impl BenchManifest {
    pub fn level_of(&self, id: &str) -> Option<Level> {
        self.levels.iter().find(|(_, ids)| ids.iter().any(|i| i == id)).map(|(l, _)| *l)
    }
}

/// SHA-256 over the records in id order, so any permutation of the same
/// corpus has the same digest.
pub fn corpus_digest(corpus: &[SampleRecord]) -> String {
    let mut sorted: Vec<&SampleRecord> = corpus.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut h = Sha256::new();
    for s in sorted {
        h.update(serde_json::to_vec(s).expect("records serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn selection_key(id: &str, seed: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"bench");
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    h.finalize().into()
}

/// Picks up to `quota` samples per level by ascending seeded hash of the id.
pub fn build_bench(corpus: &[SampleRecord], quota: usize, seed: u64) -> BenchManifest {
    let mut pools: BTreeMap<Level, Vec<&str>> = Level::ALL.iter().map(|&l| (l, Vec::new())).collect();
    let mut excluded = Vec::new();
    for s in corpus {
        match classify(DifficultyFeatures::of(s)) {
            Ok(level) => pools.get_mut(&level).unwrap().push(&s.id),
            Err(StratifyError::NotBenchmarkable) => excluded.push(s.id.clone()),
        }
    }
    excluded.sort();

    let mut levels = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut shortfalls = Vec::new();
    for (level, mut pool) in pools {
        pool.sort_by_cached_key(|id| (selection_key(id, seed), id.to_string()));
        if pool.len() < quota {
            shortfalls.push(Shortfall { level, requested: quota, available: pool.len() });
        }
        let mut chosen: Vec<String> = pool.into_iter().take(quota).map(str::to_string).collect();
        chosen.sort();
        counts.insert(level, chosen.len());
        levels.insert(level, chosen);
    }

    BenchManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        quota_per_level: quota,
        corpus_digest: corpus_digest(corpus),
        levels,
        counts,
        shortfalls,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub key: usize,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointCell {
    pub n_box: usize,
    pub tokens: usize,
    pub count: usize,
    /// Share of all boxes.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub boxes: usize,
    /// Samples per grounded-span count.
    pub bbox_count: Vec<Bucket>,
    /// Boxes per token length.
    pub token_length: Vec<Bucket>,
    /// Boxes per (span count of their sample, token length).
    pub joint: Vec<JointCell>,
    pub levels: BTreeMap<Level, usize>,
}

fn buckets(map: BTreeMap<usize, usize>, total: usize) -> Vec<Bucket> {
    map.into_iter().map(|(key, count)| Bucket { key, count, percent: 100.0 * count as f64 / total as f64 }).collect()
}

pub fn corpus_stats(corpus: &[SampleRecord]) -> CorpusStats {
    let mut per_sample = BTreeMap::new();
    let mut per_box = BTreeMap::new();
    let mut joint = BTreeMap::new();
    let mut levels = BTreeMap::new();
    let mut boxes = 0;
    for s in corpus {
        let n = s.grounded_spans.len();
        *per_sample.entry(n).or_insert(0) += 1;
        if let Ok(level) = classify(DifficultyFeatures::of(s)) {
            *levels.entry(level).or_insert(0) += 1;
        }
        for g in &s.grounded_spans {
            let t = tokenize_words(&g.text).len();
            *per_box.entry(t).or_insert(0) += 1;
            *joint.entry((n, t)).or_insert(0) += 1;
            boxes += 1;
        }
    }
    CorpusStats {
        samples: corpus.len(),
        boxes,
        bbox_count: buckets(per_sample, corpus.len()),
        token_length: buckets(per_box, boxes),
        joint: joint
            .into_iter()
            .map(|((n_box, tokens), count)| JointCell {
                n_box,
                tokens,
                count,
                percent: 100.0 * count as f64 / boxes as f64,
            })
            .collect(),
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GroundedSpan, NormBox, Source};

    fn f(n_box: usize, w_max: usize) -> DifficultyFeatures {
        DifficultyFeatures { n_box, w_max }
    }

    pub(crate) fn sample_with_spans(id: &str, spans: &[&str]) -> SampleRecord {
        let nb = NormBox::new(0, 0, 10, 10).unwrap();
        SampleRecord {
            id: id.into(),
            image_ref: format!("mem://{id}"),
            width: 512,
            height: 512,
            prompt: String::new(),
            ocr_words: Vec::new(),
            grounded_spans: spans.iter().map(|t| GroundedSpan::new(*t, nb, vec![0]).unwrap()).collect(),
            source: Source::Public,
            topic_path: None,
        }
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(f(2, 4)), Ok(Level::Easy));
        assert_eq!(classify(f(3, 4)), Ok(Level::Medium));
        assert_eq!(classify(f(2, 5)), Ok(Level::Medium));
        assert_eq!(classify(f(3, 5)), Ok(Level::Hard));
        assert_eq!(classify(f(0, 3)), Err(StratifyError::NotBenchmarkable));
    }

    #[test]
    fn classify_is_monotone() {
        for n in 1..=20 {
            for w in 1..=20 {
                let base = classify(f(n, w)).unwrap();
                assert!(classify(f(n + 1, w)).unwrap() >= base);
                assert!(classify(f(n, w + 1)).unwrap() >= base);
            }
        }
    }

    #[test]
    fn features_use_whitespace_tokens() {
        let s = sample_with_spans("a", &["Summer Sale, 50% OFF", "OPEN"]);
        assert_eq!(DifficultyFeatures::of(&s), f(2, 4));
    }

    #[test]
    fn zero_quota_is_empty() {
        let corpus = vec![sample_with_spans("a", &["x"])];
        let m = build_bench(&corpus, 0, 1);
        assert!(m.levels.values().all(Vec::is_empty));
        assert!(m.shortfalls.is_empty());
    }

    #[test]
    fn shortfall_is_recorded() {
        let corpus: Vec<_> = (0..5).map(|i| sample_with_spans(&format!("h{i}"), &["a b c d e", "x", "y"])).collect();
        let m = build_bench(&corpus, 10, 1);
        assert_eq!(m.levels[&Level::Hard].len(), 5);
        assert!(m.shortfalls.contains(&Shortfall { level: Level::Hard, requested: 10, available: 5 }));
    }

    #[test]
    fn bench_is_deterministic_and_permutation_stable() {
        let mut corpus: Vec<_> = (0..40).map(|i| sample_with_spans(&format!("s{i:02}"), &["a"])).collect();
        corpus.push(sample_with_spans("empty", &[]));
        let a = build_bench(&corpus, 7, 9);
        assert_eq!(a, build_bench(&corpus, 7, 9));
        corpus.reverse();
        assert_eq!(a, build_bench(&corpus, 7, 9));
        assert_eq!(a.counts[&Level::Easy], 7);
        assert_eq!(a.excluded, vec!["empty".to_string()]);
        assert_ne!(a.levels, build_bench(&corpus, 7, 10).levels);
    }

    #[test]
    fn stats_examples() {
        assert_eq!(corpus_stats(&[]).bbox_count, vec![]);
        let one = corpus_stats(&[sample_with_spans("a", &["x"])]);
        assert_eq!(one.bbox_count, vec![Bucket { key: 1, count: 1, percent: 100.0 }]);

        let corpus = vec![
            sample_with_spans("a", &["x"]),
            sample_with_spans("b", &["x y", "z"]),
            sample_with_spans("c", &["p q", "r s t u v", "w"]),
            sample_with_spans("d", &["x"]),
        ];
        let st = corpus_stats(&corpus);
        let counts: Vec<(usize, usize)> = st.bbox_count.iter().map(|b| (b.key, b.count)).collect();
        assert_eq!(counts, vec![(1, 2), (2, 1), (3, 1)]);
        let tokens: Vec<(usize, usize)> = st.token_length.iter().map(|b| (b.key, b.count)).collect();
        assert_eq!(tokens, vec![(1, 4), (2, 2), (5, 1)]);
        let total: f64 = st.bbox_count.iter().map(|b| b.percent).sum();
        assert!((total - 100.0).abs() < 1e-9);
        assert_eq!(st.joint.iter().map(|c| c.count).sum::<usize>(), st.boxes);
        assert_eq!(st.levels[&Level::Easy], 3);
        assert_eq!(st.levels[&Level::Hard], 1);
    }
}
