//! Query generation from a topic taxonomy and lexical retrieval over a
//! candidate pool.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{call_json, ClientError, LineTransport};
use crate::text::{match_tokens, normalize_text};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtopic {
    pub label: String,
    pub objects: Vec<String>,
    pub contexts: Vec<String>,
    #[serde(default)]
    pub modifiers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub label: String,
    pub subtopics: Vec<Subtopic>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub label: String,
    pub topics: Vec<Topic>,
}

/// Domain, topic and subtopic tree. Owned nesting makes it acyclic.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueryTaxonomy {
    pub domains: Vec<Domain>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("empty label at {0}")]
    EmptyLabel(String),
    #[error("subtopic {0} needs at least one object and one context")]
    EmptySubtopic(String),
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

impl QueryTaxonomy {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        for d in &self.domains {
            if blank(&d.label) {
                return Err(TaxonomyError::EmptyLabel("domain".into()));
            }
            for t in &d.topics {
                if blank(&t.label) {
                    return Err(TaxonomyError::EmptyLabel(d.label.clone()));
                }
                for s in &t.subtopics {
                    let path = format!("{}/{}/{}", d.label, t.label, s.label);
                    if blank(&s.label) {
                        return Err(TaxonomyError::EmptyLabel(path));
                    }
                    if s.objects.is_empty() || s.contexts.is_empty() {
                        return Err(TaxonomyError::EmptySubtopic(path));
                    }
                    if s.objects.iter().chain(&s.contexts).chain(&s.modifiers).any(|x| blank(x)) {
                        return Err(TaxonomyError::EmptyLabel(path));
                    }
                }
            }
        }
        Ok(())
    }

    fn subtopics(&self) -> impl Iterator<Item = (Vec<String>, &Subtopic)> {
        self.domains.iter().flat_map(|d| {
            d.topics.iter().flat_map(move |t| {
                t.subtopics.iter().map(move |s| (vec![d.label.clone(), t.label.clone(), s.label.clone()], s))
            })
        })
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// `"{Modifier} {object} on a/an {context}"` with the first letter raised.
pub fn compose_query(object: &str, context: &str, modifier: Option<&str>) -> String {
    let head = match modifier {
        Some(m) => format!("{} {}", m.trim(), object.trim()),
        None => object.trim().to_string(),
    };
    let context = context.trim();
    let article = match context.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("{} on {article} {context}", capitalize(&head))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub topic_path: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandRequest {
    pub topic_path: Vec<String>,
    pub objects: Vec<String>,
    pub contexts: Vec<String>,
    pub modifiers: Vec<String>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandResponse {
    pub queries: Vec<String>,
}

/// External language model that writes queries for a subtopic.
pub trait LlmClient: Send + Sync {
    fn expand(&self, request: &ExpandRequest) -> Result<ExpandResponse, ClientError>;
}

pub struct RemoteExpander<T: LineTransport>(pub T);

impl<T: LineTransport> LlmClient for RemoteExpander<T> {
    fn expand(&self, request: &ExpandRequest) -> Result<ExpandResponse, ClientError> {
        call_json(&self.0, request)
    }
}

fn template_queries(path: &[String], s: &Subtopic, per_subtopic: usize, seed: u64) -> Vec<String> {
    let modifiers: Vec<Option<&str>> =
        std::iter::once(None).chain(s.modifiers.iter().map(|m| Some(m.as_str()))).collect();
    let mut combos = Vec::new();
    for o in &s.objects {
        for c in &s.contexts {
            combos.extend(modifiers.iter().map(|m| compose_query(o, c, *m)));
        }
    }
    let mut rng = ChaCha8Rng::from_seed(super::stream_seed("queries", seed, &path.join("/")));
    combos.shuffle(&mut rng);
    let mut seen = HashSet::new();
    combos.retain(|q| seen.insert(q.clone()));
    combos.truncate(per_subtopic);
    combos
}

/// Up to `per_subtopic` queries per subtopic, in taxonomy order, with
/// duplicates removed across the whole list. An expander's answers are
/// trimmed and blank ones dropped; when it fails or returns nothing usable,
/// the templates are used instead.
pub fn generate_queries(
    taxonomy: &QueryTaxonomy,
    per_subtopic: usize,
    seed: u64,
    expander: Option<&dyn LlmClient>,
) -> Result<Vec<Query>, TaxonomyError> {
    taxonomy.validate()?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    if per_subtopic == 0 {
        return Ok(out);
    }
    for (path, s) in taxonomy.subtopics() {
        let expanded = expander.and_then(|client| {
            let request = ExpandRequest {
                topic_path: path.clone(),
                objects: s.objects.clone(),
                contexts: s.contexts.clone(),
                modifiers: s.modifiers.clone(),
                count: per_subtopic,
            };
            match client.expand(&request) {
                Ok(r) => {
                    let valid: Vec<String> =
                        r.queries.iter().map(|q| q.trim().to_string()).filter(|q| !q.is_empty()).collect();
                    if valid.is_empty() {
                        log::warn!("expander returned no usable queries for {}; using templates", path.join("/"));
                        None
                    } else {
                        Some(valid)
                    }
                }
                Err(e) => {
                    log::warn!("expander failed for {}: {e}; using templates", path.join("/"));
                    None
                }
            }
        });
        let texts = expanded.unwrap_or_else(|| template_queries(&path, s, per_subtopic, seed));
        for text in texts.into_iter().take(per_subtopic) {
            if seen.insert(text.clone()) {
                out.push(Query { text, topic_path: path.clone() });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub context_text: String,
    pub ocr_text: String,
    pub width: u32,
    pub height: u32,
}

/// Admission gate for "high-resolution, text-heavy" candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalGate {
    /// Minimum of width and height, in pixels.
    pub min_side: u32,
    /// Minimum number of whitespace-separated OCR words.
    pub min_ocr_words: usize,
}

impl Default for RetrievalGate {
    fn default() -> Self {
        Self { min_side: 512, min_ocr_words: 3 }
    }
}

impl RetrievalGate {
    pub fn admits(&self, c: &Candidate) -> bool {
        c.width.min(c.height) >= self.min_side && c.ocr_text.split_whitespace().count() >= self.min_ocr_words
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedMatch {
    pub query_index: usize,
    pub candidate_id: String,
    /// Number of distinct query tokens present in the candidate text.
    pub score: usize,
    /// 1-based rank within the query.
    pub rank: usize,
}

fn token_set(s: &str) -> BTreeSet<String> {
    match_tokens(&normalize_text(s)).into_iter().collect()
}

/// For each query, admitted candidates sharing at least one token, by
/// descending overlap and then ascending id, truncated to `top_k`.
pub fn retrieve(
    queries: &[String],
    pool: &[Candidate],
    gate: &RetrievalGate,
    top_k: Option<usize>,
) -> Vec<RankedMatch> {
    let admitted: Vec<(&Candidate, BTreeSet<String>)> = pool
        .iter()
        .filter(|c| gate.admits(c))
        .map(|c| (c, token_set(&format!("{} {}", c.context_text, c.ocr_text))))
        .collect();
    let mut out = Vec::new();
    for (qi, q) in queries.iter().enumerate() {
        let qt = token_set(q);
        let mut scored: Vec<(usize, &str)> = admitted
            .iter()
            .map(|(c, toks)| (qt.intersection(toks).count(), c.id.as_str()))
            .filter(|(s, _)| *s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        scored.truncate(top_k.unwrap_or(usize::MAX));
        out.extend(scored.into_iter().enumerate().map(|(r, (score, id))| RankedMatch {
            query_index: qi,
            candidate_id: id.to_string(),
            score,
            rank: r + 1,
        }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy(objects: &[&str], contexts: &[&str], modifiers: &[&str]) -> QueryTaxonomy {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        QueryTaxonomy {
            domains: vec![Domain {
                label: "transport".into(),
                topics: vec![Topic {
                    label: "roads".into(),
                    subtopics: vec![Subtopic {
                        label: "signage".into(),
                        objects: v(objects),
                        contexts: v(contexts),
                        modifiers: v(modifiers),
                    }],
                }],
            }],
        }
    }

    #[test]
    fn template_shape() {
        assert_eq!(compose_query("exit sign", "quiet suburban road", None), "Exit sign on a quiet suburban road");
        assert_eq!(
            compose_query("exit sign", "quiet suburban road", Some("highway")),
            "Highway exit sign on a quiet suburban road"
        );
        assert_eq!(compose_query("menu", "old café wall", None), "Menu on an old café wall");
        let t = taxonomy(&["exit sign"], &["quiet suburban road"], &[]);
        let q = generate_queries(&t, 5, 0, None).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].text, "Exit sign on a quiet suburban road");
        assert_eq!(q[0].topic_path, vec!["transport", "roads", "signage"]);
    }

    #[test]
    fn zero_per_subtopic_is_empty() {
        let t = taxonomy(&["a"], &["b"], &[]);
        assert!(generate_queries(&t, 0, 0, None).unwrap().is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        let t = taxonomy(&["exit sign", "Exit sign"], &["road", "road"], &[]);
        let q = generate_queries(&t, 10, 3, None).unwrap();
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn generation_is_seeded() {
        let t = taxonomy(&["a", "b", "c"], &["d", "e", "f"], &["g", "h"]);
        let a = generate_queries(&t, 5, 1, None).unwrap();
        assert_eq!(a, generate_queries(&t, 5, 1, None).unwrap());
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn invalid_taxonomy() {
        assert!(generate_queries(&taxonomy(&[], &["x"], &[]), 1, 0, None).is_err());
        assert!(generate_queries(&taxonomy(&[" "], &["x"], &[]), 1, 0, None).is_err());
    }

    struct Failing;
    impl LlmClient for Failing {
        fn expand(&self, _: &ExpandRequest) -> Result<ExpandResponse, ClientError> {
            Err(ClientError::Transport("offline".into()))
        }
    }

    struct Echo;
    impl LlmClient for Echo {
        fn expand(&self, r: &ExpandRequest) -> Result<ExpandResponse, ClientError> {
            Ok(ExpandResponse {
                queries: vec![format!(" {} at dusk ", r.objects[0]), "  ".into(), "x".into(), "x".into()],
            })
        }
    }

    #[test]
    fn expander_results_and_fallback() {
        let t = taxonomy(&["exit sign"], &["road"], &[]);
        let fallback = generate_queries(&t, 3, 0, Some(&Failing)).unwrap();
        assert_eq!(fallback, generate_queries(&t, 3, 0, None).unwrap());
        let echoed: Vec<String> =
            generate_queries(&t, 3, 0, Some(&Echo)).unwrap().into_iter().map(|q| q.text).collect();
        assert_eq!(echoed, vec!["exit sign at dusk", "x"]);
    }

    fn cand(id: &str, context: &str, ocr: &str, side: u32) -> Candidate {
        Candidate { id: id.into(), context_text: context.into(), ocr_text: ocr.into(), width: side, height: side }
    }

    #[test]
    fn retrieval_ranks_by_overlap_then_id() {
        let pool = vec![
            cand("c", "exit sign road", "EXIT 12 NORTH", 1024),
            cand("b", "a quiet road", "SLOW DOWN NOW", 1024),
            cand("a", "exit sign on a quiet suburban road", "EXIT 4 ONLY", 1024),
            cand("z", "exit sign on a quiet suburban road", "EXIT 4 ONLY", 100),
        ];
        let m = retrieve(&["Exit sign on a quiet suburban road".into()], &pool, &RetrievalGate::default(), None);
        let ids: Vec<&str> = m.iter().map(|r| r.candidate_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!((m[1].score, m[2].score), (3, 3));
        assert_eq!(m[0].score, 7);
        assert!(retrieve(&["x".into()], &[], &RetrievalGate::default(), None).is_empty());
    }
}
