//! The curation pipeline: extract spans, align them to OCR words, filter in
//! three stages and stratify the survivors into a benchmark.
//!
//! Stages run one after another over the whole corpus; within a stage,
//! samples are processed in parallel on a bounded pool and results are kept
//! in id order, so the worker count never changes the output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_spans, grounded_spans_from_alignment, AlignConfig, AlignmentResult, GroundingError};
use crate::client::RetryPolicy;
use crate::filter::{
    stage1_filter, stage2_verdict, stage3_semantic_audit, AuditError, FilterConfig, FilterVerdict, VlmAuditClient,
};
use crate::geometry::SampleRecord;
use crate::stratify::{build_bench, corpus_digest, corpus_stats, BenchManifest, CorpusStats, Level, Shortfall};
use crate::text::{extract_spans_with_diagnostics, QuotedSpan, SpanDiagnostic};

use super::corpus::{load_corpus, write_corpus, CorpusError, CorpusManifest};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seeds downsampling and benchmark selection; replaces `filter.seed`.
    pub seed: u64,
    /// Worker threads; 0 uses one per core. Never affects the output.
    pub workers: usize,
    pub align: AlignConfig,
    pub filter: FilterConfig,
    pub retry: RetryPolicy,
    /// Benchmark samples drawn per difficulty level.
    pub bench_quota: usize,
    pub on_audit_error: OnAuditError,
}

/// What happens to a sample whose audit still fails after every retry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnAuditError {
    /// Stop the run and report the failure.
    #[default]
    Abort,
    /// Leave the sample out of the output without counting it as dropped.
    Skip,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            align: AlignConfig::default(),
            filter: FilterConfig::default(),
            retry: RetryPolicy::default(),
            bench_quota: 100,
            on_audit_error: OnAuditError::Abort,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extract,
    Align,
    Heuristic,
    Downsample,
    Audit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Samples whose external check failed; `input = kept + dropped + skipped`.
    #[serde(default)]
    pub skipped: usize,
    /// Dropped samples per reason. A sample dropped for several reasons
    /// counts once under each.
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed { stage: Stage, error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub seed: u64,
    pub input_digest: String,
    pub input_count: usize,
    pub span_diagnostics: usize,
    pub stages: Vec<StageReport>,
    pub output_count: usize,
    pub levels: BTreeMap<Level, usize>,
    pub shortfalls: Vec<Shortfall>,
    pub stats: CorpusStats,
    pub status: RunStatus,
}

/// Where and why one input sample left the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleDecision {
    pub id: String,
    /// `None` when the sample reached the output corpus.
    pub dropped_at: Option<Stage>,
    pub reasons: Vec<String>,
    /// Set when the sample was skipped at `dropped_at` rather than dropped;
    /// `reasons` then holds the error.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub skipped: bool,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("audit stage failed: {source}")]
    Audit { report: Box<PipelineReport>, source: AuditError },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("building worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub id: String,
    pub spans: Vec<QuotedSpan>,
    pub diagnostics: Vec<SpanDiagnostic>,
}

pub fn extract(sample: &SampleRecord) -> ExtractRecord {
    let (spans, diagnostics) = extract_spans_with_diagnostics(&sample.prompt);
    ExtractRecord { id: sample.id.clone(), spans, diagnostics }
}

/// Aligns `spans` to the sample's OCR words and replaces its grounded spans
/// with the result.
pub fn ground(
    sample: &SampleRecord,
    spans: &[QuotedSpan],
    cfg: &AlignConfig,
) -> Result<(SampleRecord, AlignmentResult), GroundingError> {
    let alignment = align_spans(spans, &sample.ocr_words, cfg);
    let grounded = grounded_spans_from_alignment(&alignment, spans, &sample.ocr_words, sample.width, sample.height)?;
    Ok((SampleRecord { grounded_spans: grounded, ..sample.clone() }, alignment))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub corpus: Vec<SampleRecord>,
    pub bench: BenchManifest,
    pub report: PipelineReport,
    pub decisions: Vec<SampleDecision>,
}

struct Item {
    sample: SampleRecord,
    spans: Vec<QuotedSpan>,
    alignment: AlignmentResult,
}

struct Tally {
    stages: Vec<StageReport>,
    decisions: BTreeMap<String, SampleDecision>,
}

enum Outcome {
    Keep,
    Drop(Vec<String>),
    Skip(String),
}

impl Outcome {
    fn drop_if(cond: bool, reason: &str) -> Self {
        if cond {
            Outcome::Drop(vec![reason.to_string()])
        } else {
            Outcome::Keep
        }
    }

    fn of(v: &FilterVerdict) -> Self {
        if v.is_keep() {
            Outcome::Keep
        } else {
            Outcome::Drop(reason_names(&v.reasons))
        }
    }
}

impl Tally {
    /// Applies one stage's per-item outcomes and returns the survivors.
    fn apply<T>(&mut self, stage: Stage, items: Vec<(T, Outcome)>, id: impl Fn(&T) -> &str) -> Vec<T> {
        let mut report =
            StageReport { stage, input: items.len(), kept: 0, dropped: 0, skipped: 0, reasons: BTreeMap::new() };
        let mut kept = Vec::with_capacity(items.len());
        for (item, outcome) in items {
            let (reasons, skipped) = match outcome {
                Outcome::Keep => {
                    report.kept += 1;
                    kept.push(item);
                    continue;
                }
                Outcome::Drop(reasons) => {
                    report.dropped += 1;
                    for r in &reasons {
                        *report.reasons.entry(r.clone()).or_insert(0) += 1;
                    }
                    (reasons, false)
                }
                Outcome::Skip(error) => {
                    report.skipped += 1;
                    (vec![error], true)
                }
            };
            let d = self.decisions.get_mut(id(&item)).expect("every input has a decision");
            d.dropped_at = Some(stage);
            d.reasons = reasons;
            d.skipped = skipped;
        }
        self.stages.push(report);
        kept
    }
}

fn reason_names(reasons: &[crate::filter::Reason]) -> Vec<String> {
    reasons
        .iter()
        .map(|r| serde_json::to_value(r).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
        .collect()
}

fn run_stages(
    cfg: &PipelineConfig,
    mut corpus: Vec<SampleRecord>,
    auditor: &dyn VlmAuditClient,
) -> Result<PipelineOutput, PipelineError> {
    corpus.sort_by(|a, b| a.id.cmp(&b.id));
    let filter = FilterConfig { seed: cfg.seed, ..cfg.filter };
    let mut tally = Tally {
        stages: Vec::new(),
        decisions: corpus
            .iter()
            .map(|s| {
                (
                    s.id.clone(),
                    SampleDecision { id: s.id.clone(), dropped_at: None, reasons: Vec::new(), skipped: false },
                )
            })
            .collect(),
    };
    let mut report = PipelineReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        input_digest: corpus_digest(&corpus),
        input_count: corpus.len(),
        span_diagnostics: 0,
        stages: Vec::new(),
        output_count: 0,
        levels: BTreeMap::new(),
        shortfalls: Vec::new(),
        stats: CorpusStats::default(),
        status: RunStatus::Complete,
    };

    let extracted: Vec<(ExtractRecord, SampleRecord)> = corpus.into_par_iter().map(|s| (extract(&s), s)).collect();
    report.span_diagnostics = extracted.iter().map(|(e, _)| e.diagnostics.len()).sum();
    let verdicts = extracted
        .into_iter()
        .map(|(e, s)| {
            let v = Outcome::drop_if(e.spans.is_empty(), "no_quoted_span");
            ((s, e.spans), v)
        })
        .collect();
    let items = tally.apply(Stage::Extract, verdicts, |(s, _)| &s.id);

    let grounded: Vec<(Item, Outcome)> = items
        .into_par_iter()
        .map(|(sample, spans)| match ground(&sample, &spans, &cfg.align) {
            Ok((g, alignment)) => {
                let v = Outcome::drop_if(g.grounded_spans.is_empty(), "no_grounded_span");
                (Item { sample: g, spans, alignment }, v)
            }
            Err(e) => {
                log::debug!("grounding {} failed: {e}", sample.id);
                (
                    Item { sample, spans, alignment: AlignmentResult::default() },
                    Outcome::drop_if(true, "grounding_error"),
                )
            }
        })
        .collect();
    let items = tally.apply(Stage::Align, grounded, |i| &i.sample.id);

    let checked: Vec<(Item, Outcome)> = items
        .into_par_iter()
        .map(|i| {
            let v = Outcome::of(&stage1_filter(&i.sample, &i.alignment, &filter));
            (i, v)
        })
        .collect();
    let items = tally.apply(Stage::Heuristic, checked, |i| &i.sample.id);

    let sampled: Vec<(Item, Outcome)> = items
        .into_iter()
        .map(|i| {
            let v = Outcome::of(&stage2_verdict(&i.sample, &filter));
            (i, v)
        })
        .collect();
    let items = tally.apply(Stage::Downsample, sampled, |i| &i.sample.id);

    let audited: Result<Vec<(Item, Outcome)>, AuditError> = items
        .into_par_iter()
        .map(|i| {
            let v = match stage3_semantic_audit(&i.sample, &i.spans, auditor, &cfg.retry) {
                Ok(v) => Outcome::of(&v),
                Err(e) if cfg.on_audit_error == OnAuditError::Skip => {
                    log::warn!("skipping {}: {e}", i.sample.id);
                    Outcome::Skip(format!("audit_error: {}", e.source))
                }
                Err(e) => return Err(e),
            };
            Ok((i, v))
        })
        .collect();
    let audited = match audited {
        Ok(a) => a,
        Err(source) => {
            report.stages = tally.stages;
            report.status = RunStatus::Failed { stage: Stage::Audit, error: source.to_string() };
            return Err(PipelineError::Audit { report: Box::new(report), source });
        }
    };
    let items = tally.apply(Stage::Audit, audited, |i| &i.sample.id);

    let output: Vec<SampleRecord> = items.into_iter().map(|i| i.sample).collect();
    let bench = build_bench(&output, cfg.bench_quota, cfg.seed);
    report.stages = tally.stages;
    report.output_count = output.len();
    report.levels = bench.counts.clone();
    report.shortfalls = bench.shortfalls.clone();
    report.stats = corpus_stats(&output);
    Ok(PipelineOutput { corpus: output, bench, report, decisions: tally.decisions.into_values().collect() })
}

/// Runs every stage on an in-memory corpus.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    corpus: Vec<SampleRecord>,
    auditor: &dyn VlmAuditClient,
) -> Result<PipelineOutput, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    pool.install(|| run_stages(cfg, corpus, auditor))
}

/// File names written by [`run_pipeline_files`] inside the output directory.
pub const OUTPUT_CORPUS: &str = "corpus.jsonl";
pub const OUTPUT_BENCH: &str = "bench.json";
pub const OUTPUT_REPORT: &str = "report.json";
pub const OUTPUT_DECISIONS: &str = "decisions.jsonl";

/// Reads a corpus file, runs the pipeline and writes the output corpus (with
/// its manifest), benchmark manifest, report and per-sample decisions. On an
/// audit failure the partial report is still written.
pub fn run_pipeline_files(
    cfg: &PipelineConfig,
    input: &Path,
    out_dir: &Path,
    auditor: &dyn VlmAuditClient,
) -> Result<(PipelineReport, CorpusManifest), PipelineError> {
    let corpus = load_corpus(input)?;
    std::fs::create_dir_all(out_dir).map_err(|source| PipelineError::Io { path: out_dir.into(), source })?;
    let write = |name: &str, f: &dyn Fn(&Path) -> std::io::Result<()>| {
        let path = out_dir.join(name);
        f(&path).map_err(|source| PipelineError::Io { path, source })
    };
    let out = match run_pipeline(cfg, corpus, auditor) {
        Ok(out) => out,
        Err(PipelineError::Audit { report, source }) => {
            write(OUTPUT_REPORT, &|p| super::write_json(p, &report))?;
            return Err(PipelineError::Audit { report, source });
        }
        Err(e) => return Err(e),
    };
    let manifest = write_corpus(&out_dir.join(OUTPUT_CORPUS), &out.corpus)?;
    write(OUTPUT_BENCH, &|p| super::write_json(p, &out.bench))?;
    write(OUTPUT_REPORT, &|p| super::write_json(p, &out.report))?;
    write(OUTPUT_DECISIONS, &|p| super::write_jsonl(p, &out.decisions))?;
    Ok((out.report, manifest))
}
