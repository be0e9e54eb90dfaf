//! One function per subcommand.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use textground_core::align::AlignConfig;
use textground_core::filter::{MockAuditor, RemoteAuditor, VlmAuditClient};
use textground_core::geometry::SampleRecord;
use textground_core::io::corpus::{load_corpus, read_corpus, write_corpus};
use textground_core::io::mine::{generate_queries, retrieve, Candidate, QueryTaxonomy, RemoteExpander};
use textground_core::io::ocr::mock_ocr;
use textground_core::io::pipeline::{
    extract, ground, run_pipeline, run_pipeline_files, PipelineConfig, PipelineError, OUTPUT_BENCH, OUTPUT_CORPUS,
};
use textground_core::io::synth::{synth_corpus, SynthConfig};
use textground_core::io::{placeholder_image_tokens, write_json, write_jsonl};
use textground_core::metrics::{evaluate, render_table, HypothesisOcr, RemoteClipScorer};
use textground_core::stratify::{build_bench, corpus_digest, corpus_stats, BenchManifest, MANIFEST_SCHEMA_VERSION};
use textground_core::target::{build_target, BuildConfig, TargetSequence, VocabLayout};
use textground_core::toy::{make_glyph_task, reference_model, train, TrainConfig};

use crate::config::{spawn_client, FileConfig};
use crate::{
    AlignArgs, AlignFlags, AuditFlags, BuildTargetsArgs, Cli, Command, EvaluateArgs, FilterArgs, InOut, MineArgs,
    MockOcrArgs, PipelineArgs, StratifyArgs, SynthArgs, TrainToyArgs, Usage,
};

struct Ctx {
    file: FileConfig,
    seed: u64,
    workers: usize,
}

impl Ctx {
    fn align(&self, flags: &AlignFlags) -> anyhow::Result<AlignConfig> {
        let base = self.file.align;
        let cfg = AlignConfig {
            partial_threshold: flags.partial_threshold.unwrap_or(base.partial_threshold),
            fuzzy_threshold: flags.fuzzy_threshold.unwrap_or(base.fuzzy_threshold),
            max_window_slack: flags.max_window_slack.unwrap_or(base.max_window_slack),
        };
        for (name, v) in [("partial threshold", cfg.partial_threshold), ("fuzzy threshold", cfg.fuzzy_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                bail!(Usage(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(cfg)
    }

    fn pipeline(&self, align: &AlignFlags, audit: &AuditFlags, quota: Option<usize>) -> anyhow::Result<PipelineConfig> {
        let mut cfg = self.file.pipeline(self.seed, self.workers);
        cfg.align = self.align(align)?;
        if let Some(a) = audit.on_audit_error {
            cfg.on_audit_error = a.into();
        }
        if let Some(q) = quota {
            cfg.bench_quota = q;
        }
        Ok(cfg)
    }

    fn auditor(&self, flags: &AuditFlags) -> anyhow::Result<Box<dyn VlmAuditClient>> {
        Ok(match spawn_client(flags.auditor.as_deref(), self.file.clients.auditor.as_deref())? {
            Some(t) => Box::new(RemoteAuditor(t)),
            None => Box::new(MockAuditor),
        })
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.global.seed.or(file.seed).unwrap_or(0),
        workers: cli.global.workers.or(file.workers).unwrap_or(0),
        file,
    };
    rayon::ThreadPoolBuilder::new().num_threads(ctx.workers).build_global().context("building worker pool")?;
    match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Extract(a) => extract_spans(a),
        Command::Align(a) => align(&ctx, a),
        Command::Filter(a) => filter(&ctx, a),
        Command::Stratify(a) => stratify(&ctx, a),
        Command::MockOcr(a) => simulate_ocr(&ctx, a),
        Command::Evaluate(a) => evaluate_bench(&ctx, a),
        Command::BuildTargets(a) => build_targets(&ctx, a),
        Command::TrainToy(a) => train_toy(&ctx, a),
        Command::Mine(a) => mine(&ctx, a),
        Command::RunPipeline(a) => pipeline(&ctx, a),
    }
}

fn write_json_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl_file<'a, T: Serialize + 'a>(path: &Path, values: impl IntoIterator<Item = &'a T>) -> anyhow::Result<()> {
    write_jsonl(path, values).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

/// Records of a line-delimited JSON file; blank lines are skipped.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let defect_rate = if a.clean { 0.0 } else { a.defect_rate };
    if !(0.0..=1.0).contains(&defect_rate) {
        bail!(Usage(format!("--defect-rate {defect_rate} outside [0, 1]")));
    }
    let cfg = SynthConfig { n_samples: a.samples, seed: ctx.seed, defect_rate, ..SynthConfig::default() };
    let manifest = write_corpus(&a.out, &synth_corpus(&cfg))?;
    log::info!("wrote {} samples to {}", manifest.count, a.out.display());
    Ok(())
}

fn extract_spans(a: InOut) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    let (mut samples, mut spans, mut diagnostics) = (0, 0, 0);
    for sample in read_corpus(&a.input)? {
        let rec = extract(&sample?);
        samples += 1;
        spans += rec.spans.len();
        diagnostics += rec.diagnostics.len();
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    log::info!("{samples} captions: {spans} spans, {diagnostics} diagnostics");
    Ok(())
}

fn align(ctx: &Ctx, a: AlignArgs) -> anyhow::Result<()> {
    let cfg = ctx.align(&a.align)?;
    let corpus = load_corpus(&a.io.input)?;
    let results: Vec<_> = corpus
        .par_iter()
        .map(|s| {
            let spans = extract(s).spans;
            (s.id.as_str(), ground(s, &spans, &cfg))
        })
        .collect();
    let mut grounded = Vec::with_capacity(results.len());
    let mut alignments = Vec::new();
    for (id, r) in results {
        match r {
            Ok((sample, alignment)) => {
                grounded.push(sample);
                alignments.push(serde_json::json!({ "id": id, "alignment": alignment }));
            }
            Err(e) => log::warn!("skipping {id}: {e}"),
        }
    }
    let skipped = corpus.len() - grounded.len();
    write_corpus(&a.io.out, &grounded)?;
    if let Some(path) = &a.alignments {
        write_jsonl_file(path, &alignments)?;
    }
    let spans: usize = grounded.iter().map(|s| s.grounded_spans.len()).sum();
    log::info!("grounded {spans} spans in {} samples ({skipped} skipped)", grounded.len());
    Ok(())
}

fn filter(ctx: &Ctx, a: FilterArgs) -> anyhow::Result<()> {
    let cfg = ctx.pipeline(&a.align, &a.audit, None)?;
    let auditor = ctx.auditor(&a.audit)?;
    let corpus = load_corpus(&a.io.input)?;
    let out = match run_pipeline(&cfg, corpus, auditor.as_ref()) {
        Ok(out) => out,
        Err(PipelineError::Audit { report, source }) => {
            if let Some(path) = &a.report {
                write_json_file(path, &report)?;
            }
            return Err(PipelineError::Audit { report, source }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_corpus(&a.io.out, &out.corpus)?;
    if let Some(path) = &a.report {
        write_json_file(path, &out.report)?;
    }
    if let Some(path) = &a.decisions {
        write_jsonl_file(path, &out.decisions)?;
    }
    log::info!("kept {} of {}", out.report.output_count, out.report.input_count);
    Ok(())
}

fn stratify(ctx: &Ctx, a: StratifyArgs) -> anyhow::Result<()> {
    let quota = a.quota.or(ctx.file.bench_quota).unwrap_or(PipelineConfig::default().bench_quota);
    let corpus = load_corpus(&a.io.input)?;
    let bench = build_bench(&corpus, quota, ctx.seed);
    write_json_file(&a.io.out, &bench)?;
    if let Some(path) = &a.stats {
        write_json_file(path, &corpus_stats(&corpus))?;
    }
    for s in &bench.shortfalls {
        log::warn!("level {:?}: {} requested, {} available", s.level, s.requested, s.available);
    }
    log::info!("benchmark: {:?}", bench.counts);
    Ok(())
}

fn simulate_ocr(ctx: &Ctx, a: MockOcrArgs) -> anyhow::Result<()> {
    let mut noise = ctx.file.noise;
    noise.char_sub_rate = a.char_sub_rate.unwrap_or(noise.char_sub_rate);
    noise.box_jitter_px = a.box_jitter_px.unwrap_or(noise.box_jitter_px);
    noise.validate().map_err(|e| Usage(e.to_string()))?;
    let corpus = load_corpus(&a.io.input)?;
    let hyps: Vec<HypothesisOcr> = corpus.iter().map(|s| mock_ocr(s, &noise, ctx.seed)).collect::<Result<_, _>>()?;
    write_jsonl_file(&a.io.out, &hyps)?;
    log::info!("wrote {} hypotheses", hyps.len());
    Ok(())
}

fn evaluate_bench(ctx: &Ctx, a: EvaluateArgs) -> anyhow::Result<()> {
    let manifest: BenchManifest = read_json(&a.bench)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        bail!(
            "{}: manifest schema version {} (supported: {MANIFEST_SCHEMA_VERSION})",
            a.bench.display(),
            manifest.schema_version
        );
    }
    let records = load_corpus(&a.corpus)?;
    if corpus_digest(&records) != manifest.corpus_digest {
        log::warn!("{} differs from the corpus the benchmark was drawn from", a.corpus.display());
    }
    let corpus: HashMap<String, SampleRecord> = records.into_iter().map(|s| (s.id.clone(), s)).collect();
    let mut hyps = HashMap::new();
    for h in read_jsonl::<HypothesisOcr>(&a.hyp)? {
        if hyps.contains_key(&h.id) {
            bail!("{}: duplicate hypothesis for {}", a.hyp.display(), h.id);
        }
        hyps.insert(h.id.clone(), h);
    }
    let scorer = spawn_client(a.scorer.as_deref(), ctx.file.clients.scorer.as_deref())?.map(RemoteClipScorer);
    let report = evaluate(&manifest, &corpus, &hyps, scorer.as_ref().map(|s| s as _))?;
    write_json_file(&a.out, &report)?;
    let table = render_table(&report);
    let table_path = a.out.with_extension("txt");
    std::fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    if report.incomplete {
        log::warn!("{} benchmark samples lack a record or hypothesis", report.missing.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct TargetRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    target: TargetSequence,
}

fn build_targets(ctx: &Ctx, a: BuildTargetsArgs) -> anyhow::Result<()> {
    if a.image_tokens == 0 || a.image_vocab == 0 {
        bail!(Usage("--image-tokens and --image-vocab must be positive".into()));
    }
    let corpus = load_corpus(&a.io.input)?;
    let extra: BTreeSet<char> = corpus
        .iter()
        .flat_map(|s| s.grounded_spans.iter().flat_map(|g| g.text.chars()))
        .filter(|c| !(' '..='~').contains(c))
        .collect();
    let vocab = VocabLayout::new(a.image_vocab, (' '..='~').chain(extra));
    let cfg = BuildConfig { variant: a.variant.into(), order: a.order.into(), ..BuildConfig::default() };
    let mut w = BufWriter::new(File::create(&a.io.out).with_context(|| format!("creating {}", a.io.out.display()))?);
    let mut ungrounded = 0;
    for s in &corpus {
        ungrounded += usize::from(s.grounded_spans.is_empty());
        let image = placeholder_image_tokens(&s.id, a.image_tokens, a.image_vocab, ctx.seed);
        let target =
            build_target(&image, &s.grounded_spans, &cfg, &vocab).with_context(|| format!("sample {}", s.id))?;
        serde_json::to_writer(&mut w, &TargetRecord { id: &s.id, target })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let vocab_path = a.vocab.unwrap_or_else(|| sidecar(&a.io.out, "vocab.json"));
    write_json_file(&vocab_path, &vocab)?;
    if ungrounded > 0 {
        log::warn!("{ungrounded} samples have no grounded spans; run `align` first");
    }
    log::info!("wrote {} targets, vocabulary of {} tokens", corpus.len(), vocab.size());
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct TrainSummary {
    variant: String,
    order: String,
    alpha: f64,
    seed: u64,
    samples: usize,
    config: TrainConfig,
    initial: textground_core::toy::SegmentedLoss,
    final_loss: textground_core::toy::SegmentedLoss,
    /// Final over initial total loss.
    ratio: f64,
}

fn train_toy(ctx: &Ctx, a: TrainToyArgs) -> anyhow::Result<()> {
    if !(a.alpha.is_finite() && a.alpha >= 0.0) {
        bail!(Usage(format!("--alpha {} must be finite and non-negative", a.alpha)));
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        bail!(Usage(format!("--lr {} must be finite and positive", a.lr)));
    }
    if a.samples == 0 {
        bail!(Usage("--samples must be positive".into()));
    }
    let build = BuildConfig { variant: a.variant.into(), order: a.order.into(), alpha: a.alpha };
    let task = make_glyph_task(ctx.seed, a.samples, &build)?;
    let mut model = reference_model(ctx.seed);
    let cfg = TrainConfig {
        steps: a.steps,
        learning_rate: a.lr,
        batch_size: (a.batch > 0).then_some(a.batch),
        seed: ctx.seed,
        alpha: a.alpha,
    };
    let outcome = train(&mut model, &task.examples, &cfg)?;

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let csv_path = a.out_dir.join("loss.csv");
    let mut csv = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    for row in &outcome.curve {
        csv.serialize(row)?;
    }
    csv.flush()?;
    let summary = TrainSummary {
        variant: format!("{:?}", build.variant),
        order: format!("{:?}", build.order),
        alpha: a.alpha,
        seed: ctx.seed,
        samples: a.samples,
        config: cfg,
        initial: outcome.initial,
        final_loss: outcome.final_loss,
        ratio: outcome.final_loss.total / outcome.initial.total,
    };
    write_json_file(&a.out_dir.join("summary.json"), &summary)?;
    log::info!(
        "loss {:.4} -> {:.4} ({:.3}) over {} steps",
        summary.initial.total,
        summary.final_loss.total,
        summary.ratio,
        a.steps
    );
    Ok(())
}

fn mine(ctx: &Ctx, a: MineArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&a.taxonomy).with_context(|| format!("reading {}", a.taxonomy.display()))?;
    let taxonomy: QueryTaxonomy = if a.taxonomy.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", a.taxonomy.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.taxonomy.display()))?
    };
    let expander = spawn_client(a.expander.as_deref(), ctx.file.clients.expander.as_deref())?.map(RemoteExpander);
    let queries = generate_queries(&taxonomy, a.per_subtopic, ctx.seed, expander.as_ref().map(|e| e as _))?;
    write_jsonl_file(&a.out, &queries)?;
    log::info!("{} queries", queries.len());

    if let (Some(pool_path), Some(matches_path)) = (&a.pool, &a.matches) {
        let pool: Vec<Candidate> = read_jsonl(pool_path)?;
        let mut ids = HashSet::new();
        if let Some(c) = pool.iter().find(|c| !ids.insert(c.id.as_str())) {
            bail!("{}: duplicate candidate {}", pool_path.display(), c.id);
        }
        let mut gate = ctx.file.gate;
        gate.min_side = a.min_side.unwrap_or(gate.min_side);
        gate.min_ocr_words = a.min_ocr_words.unwrap_or(gate.min_ocr_words);
        let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
        let matches = retrieve(&texts, &pool, &gate, a.top_k);
        write_jsonl_file(matches_path, &matches)?;
        log::info!("{} matches from a pool of {}", matches.len(), pool.len());
    }
    Ok(())
}

fn pipeline(ctx: &Ctx, a: PipelineArgs) -> anyhow::Result<()> {
    let cfg = ctx.pipeline(&a.align, &a.audit, a.quota)?;
    let auditor = ctx.auditor(&a.audit)?;
    let (report, _) = run_pipeline_files(&cfg, &a.input, &a.out_dir, auditor.as_ref())?;
    for s in &report.stages {
        log::info!("{:?}: {} in, {} kept, {} dropped {:?}", s.stage, s.input, s.kept, s.dropped, s.reasons);
    }
    log::info!(
        "{} of {} samples kept; {} and {} written to {}",
        report.output_count,
        report.input_count,
        OUTPUT_CORPUS,
        OUTPUT_BENCH,
        a.out_dir.display()
    );
    Ok(())
}
