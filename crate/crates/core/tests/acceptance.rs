//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use textground_core::align::AlignmentResult;
use textground_core::align::{levenshtein, normalized_similarity};
use textground_core::filter::{
    stage1_filter, stage2_downsample, surviving_words, union_text_area_ratio, FilterConfig, FilterVerdict, MockAuditor,
    Reason,
};
use textground_core::geometry::{reading_order, GroundedSpan, NormBox, OcrWord, PixelBox, SampleRecord, Source};
use textground_core::io::corpus::{manifest_path, write_corpus};
use textground_core::io::ocr::{mock_ocr, OcrNoise};
use textground_core::io::pipeline::{
    extract, ground, run_pipeline_files, PipelineConfig, OUTPUT_BENCH, OUTPUT_CORPUS, OUTPUT_DECISIONS, OUTPUT_REPORT,
};
use textground_core::io::synth::{synth_corpus, SynthConfig};
use textground_core::metrics::{prompt_coverage, sample_metrics, HypothesisOcr};
use textground_core::stratify::{classify, DifficultyFeatures, Level};
use textground_core::target::{
    build_target, dequantize_box, parse_target, quantize_box, BuildConfig, Order, TargetSequence, Variant, VocabLayout,
};
use textground_core::toy::{
    forward_nll, gradient_check, make_glyph_task, reference_model, train, ToyModel, TrainConfig, REFERENCE_CONTEXT,
    REFERENCE_DIM, REFERENCE_SAMPLES,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed < Duration::from_secs(limit_s), || format!("took {elapsed:.2?}, limit {limit_s}s"))
}

// 1. Ground truth scored against itself.
fn metric_identity() -> Outcome {
    let start = Instant::now();
    let corpus = synth_corpus(&SynthConfig::clean(1000, 11));
    let mut scored = 0;
    for raw in &corpus {
        let spans = extract(raw).spans;
        let (sample, _) = ground(raw, &spans, &Default::default()).map_err(|e| e.to_string())?;
        check(sample.grounded_spans.len() == spans.len(), || format!("{}: not every span grounded", sample.id))?;
        let level = classify(DifficultyFeatures::of(&sample)).map_err(|e| e.to_string())?;
        let hyp = mock_ocr(&sample, &OcrNoise::default(), 0).map_err(|e| e.to_string())?;
        let m = sample_metrics(&sample, &hyp, level);
        let perfect = m.acc == 1.0 && m.f1 == 1.0 && m.cer == 0.0 && m.layout_iou == Some(1.0) && m.pc == Some(1.0);
        check(perfect, || format!("{}: {m:?}", sample.id))?;
        scored += 1;
    }
    let elapsed = start.elapsed();
    within(elapsed, 10)?;
    Ok(format!("{scored} samples perfect in {elapsed:.2?}"))
}

fn lev_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut [Option<usize>], cols: usize) -> usize {
        let (i, j) = (a.len(), b.len());
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(v) = memo[i * cols + j] {
            return v;
        }
        let sub = go(&a[..i - 1], &b[..j - 1], memo, cols) + usize::from(a[i - 1] != b[j - 1]);
        let del = go(&a[..i - 1], b, memo, cols) + 1;
        let ins = go(a, &b[..j - 1], memo, cols) + 1;
        let v = sub.min(del).min(ins);
        memo[i * cols + j] = Some(v);
        v
    }
    let cols = b.len() + 1;
    let mut memo = vec![None; (a.len() + 1) * cols];
    go(a, b, &mut memo, cols)
}

fn all_strings(alphabet: &[char], max_len: usize) -> Vec<Vec<char>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let next: Vec<Vec<char>> = frontier
            .iter()
            .flat_map(|s: &Vec<char>| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

// 2. Edit distance against the recursive definition.
fn levenshtein_oracle() -> Outcome {
    let strings = all_strings(&['a', 'b', 'c'], 7);
    let texts: Vec<String> = strings.iter().map(|s| s.iter().collect()).collect();
    let mut pairs = 0u64;
    for (a, at) in strings.iter().zip(&texts) {
        for (b, bt) in strings.iter().zip(&texts) {
            let (got, want) = (levenshtein(at, bt), lev_oracle(a, b));
            check(got == want, || format!("lev({at:?}, {bt:?}) = {got}, oracle {want}"))?;
            pairs += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alphabet = ['a', 'b', 'c', 'd', 'é', 'ß', ' ', '7'];
    for _ in 0..10_000 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<char> {
            let n = rng.random_range(8..=40);
            (0..n).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let (at, bt): (String, String) = (a.iter().collect(), b.iter().collect());
        let (got, want) = (levenshtein(&at, &bt), lev_oracle(&a, &b));
        check(got == want, || format!("lev({at:?}, {bt:?}) = {got}, oracle {want}"))?;
        pairs += 1;
    }
    Ok(format!("{pairs} pairs, 0 mismatches"))
}

fn hyp_of(texts: &[&str]) -> HypothesisOcr {
    let words = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let x = 100.0 * i as f64;
            OcrWord::new(*t, PixelBox::new(x, 0.0, x + 90.0, 40.0).unwrap(), 0.99).unwrap()
        })
        .collect();
    HypothesisOcr { id: "h".into(), words }
}

// 3. Similarity at the fuzzy threshold.
fn fuzzy_boundary() -> Outcome {
    let s = normalized_similarity("SUMMER", "SUMER");
    check((s - (1.0 - 1.0 / 6.0)).abs() <= 1e-12, || format!("sim(SUMMER, SUMER) = {s}"))?;
    let pc = prompt_coverage(&["SUMMER"], &hyp_of(&["SUMER"]));
    check(pc.matched_flags == vec![true], || "SUMER does not cover SUMMER".into())?;
    let z = normalized_similarity("OPEN", "SHUT");
    check(z == 0.0, || format!("sim(OPEN, SHUT) = {z}"))?;
    let pc = prompt_coverage(&["OPEN"], &hyp_of(&["SHUT"]));
    check(pc.matched_flags == vec![false], || "SHUT covers OPEN".into())?;
    Ok(format!("sim(SUMMER,SUMER)={s:.15}, sim(OPEN,SHUT)={z}"))
}

// 4. Difficulty levels partition the feature grid.
fn difficulty_partition() -> Outcome {
    let mut counts = [0usize; 3];
    for n in 1..=50 {
        for w in 1..=50 {
            let predicates = [n <= 2 && w <= 4, !(n <= 2 && w <= 4) && !(n >= 3 && w >= 5), n >= 3 && w >= 5];
            check(predicates.iter().filter(|&&p| p).count() == 1, || format!("({n},{w}) not in exactly one level"))?;
            let expected = Level::ALL[predicates.iter().position(|&p| p).unwrap()];
            let got = classify(DifficultyFeatures { n_box: n, w_max: w }).map_err(|e| e.to_string())?;
            check(got == expected, || format!("({n},{w}) -> {got:?}, expected {expected:?}"))?;
            counts[got as usize] += 1;
        }
    }
    for (n, w, l) in [(2, 4, Level::Easy), (3, 4, Level::Medium), (2, 5, Level::Medium), (3, 5, Level::Hard)] {
        let got = classify(DifficultyFeatures { n_box: n, w_max: w }).unwrap();
        check(got == l, || format!("({n},{w}) -> {got:?}"))?;
    }
    Ok(format!("2500 cells: easy {}, medium {}, hard {}", counts[0], counts[1], counts[2]))
}

fn filter_sample(width: u32, height: u32, words: Vec<OcrWord>) -> SampleRecord {
    SampleRecord {
        id: "boundary".into(),
        image_ref: "synthetic://boundary".into(),
        width,
        height,
        prompt: String::new(),
        ocr_words: words,
        grounded_spans: Vec::new(),
        source: Source::Public,
        topic_path: None,
    }
}

fn filter_word(text: &str, b: [f64; 4], conf: f64) -> OcrWord {
    OcrWord::new(text, PixelBox::try_from(b).unwrap(), conf).unwrap()
}

// 5. Each threshold on both sides of its boundary.
fn filter_thresholds() -> Outcome {
    let cfg = FilterConfig::default();
    let none = AlignmentResult::default();
    let verdict = |s: &SampleRecord, a: &AlignmentResult| stage1_filter(s, a, &cfg);
    let drop = |r: Reason| FilterVerdict::from_reasons(vec![r]);
    let full = |w: u32, h: u32| vec![filter_word("SALE", [0.0, 0.0, w as f64, h as f64], 0.9)];

    let cases: Vec<(&str, FilterVerdict, FilterVerdict)> = vec![
        ("dims 255", verdict(&filter_sample(255, 255, full(255, 255)), &none), drop(Reason::MinDim)),
        ("dims 256", verdict(&filter_sample(256, 256, full(256, 256)), &none), FilterVerdict::keep()),
        ("aspect 0.669", verdict(&filter_sample(669, 1000, full(669, 1000)), &none), drop(Reason::AspectRatio)),
        ("aspect 0.67", verdict(&filter_sample(670, 1000, full(670, 1000)), &none), FilterVerdict::keep()),
        ("area 0.099", verdict(&filter_sample(1000, 1000, full(1000, 99)), &none), drop(Reason::TextArea)),
        ("area 0.10", verdict(&filter_sample(1000, 1000, full(1000, 100)), &none), FilterVerdict::keep()),
    ];
    for (name, got, want) in &cases {
        check(got == want, || format!("{name}: {got:?}, expected {want:?}"))?;
    }

    for (conf, kept) in [(0.69, false), (0.70, true)] {
        let words = vec![
            filter_word("SALE", [0.0, 0.0, 1000.0, 500.0], 0.9),
            filter_word("OPEN", [0.0, 600.0, 1000.0, 700.0], conf),
        ];
        let survivors = surviving_words(&words, &cfg);
        let want: &[usize] = if kept { &[0, 1] } else { &[0] };
        check(survivors == want, || format!("confidence {conf}: survivors {survivors:?}"))?;
        let got = verdict(&filter_sample(1000, 1000, words), &none);
        check(got == FilterVerdict::keep(), || format!("confidence {conf}: {got:?}"))?;
    }

    let rows: Vec<OcrWord> = (0..100)
        .map(|i| filter_word(&format!("w{i}"), [0.0, 10.0 * i as f64, 1000.0, 10.0 * i as f64 + 10.0], 0.9))
        .collect();
    let s = filter_sample(1000, 1000, rows);
    for (k, want) in [(71, drop(Reason::UnmatchedRatio)), (70, FilterVerdict::keep())] {
        let a = AlignmentResult { unmatched_word_indices: (0..k).collect(), ..Default::default() };
        let got = verdict(&s, &a);
        check(got == want, || format!("unmatched {k}/100: {got:?}"))?;
    }
    Ok("5 boundaries, 10 cases exact".into())
}

fn boxed_sample(id: String, n_boxes: usize) -> SampleRecord {
    let spans = (0..n_boxes)
        .map(|i| GroundedSpan::new(format!("s{i}"), NormBox::new(0, 0, 10, 10).unwrap(), vec![i]).unwrap())
        .collect();
    let words = (0..n_boxes)
        .map(|i| OcrWord::new(format!("s{i}"), PixelBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0.9).unwrap())
        .collect();
    SampleRecord { grounded_spans: spans, ocr_words: words, ..filter_sample(512, 512, Vec::new()) }.with_id(id)
}

trait WithId {
    fn with_id(self, id: String) -> Self;
}

impl WithId for SampleRecord {
    fn with_id(mut self, id: String) -> Self {
        self.image_ref = format!("synthetic://{id}");
        self.id = id;
        self
    }
}

fn kept_ids(samples: Vec<SampleRecord>, cfg: &FilterConfig) -> BTreeSet<String> {
    stage2_downsample(samples, cfg).filter(|(_, v)| v.is_keep()).map(|(s, _)| s.id).collect()
}

// 6. Seeded downsampling rates and stability.
fn downsampling() -> Outcome {
    let cfg = FilterConfig { seed: 2024, ..FilterConfig::default() };
    let mut report = Vec::new();
    for (n_boxes, lo, hi) in [(1, 0.38, 0.42), (2, 0.58, 0.62)] {
        let samples: Vec<SampleRecord> =
            (0..10_000).map(|i| boxed_sample(format!("ds{n_boxes}-{i:05}"), n_boxes)).collect();
        let kept = kept_ids(samples.clone(), &cfg);
        let frac = kept.len() as f64 / samples.len() as f64;
        check((lo..=hi).contains(&frac), || format!("{n_boxes}-box kept fraction {frac}"))?;
        check(kept == kept_ids(samples.clone(), &cfg), || "rerun changed the keep set".into())?;
        let mut shuffled = samples;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(n_boxes as u64));
        check(kept == kept_ids(shuffled, &cfg), || "permutation changed the keep set".into())?;
        report.push(format!("{n_boxes}-box kept {frac:.4}"));
    }
    Ok(report.join(", "))
}

// 7. Union area against unit-cell counting.
fn union_area() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let (w, h) = (rng.random_range(1..=64u32), rng.random_range(1..=64u32));
        let n = rng.random_range(0..=10);
        let boxes: Vec<[u32; 4]> = (0..n)
            .map(|_| {
                let x0 = rng.random_range(0..w);
                let y0 = rng.random_range(0..h);
                // Some boxes run past the image edge and must be clipped.
                [x0, y0, rng.random_range(x0 + 1..=w + 8), rng.random_range(y0 + 1..=h + 8)]
            })
            .collect();
        let mut cells = 0u64;
        for y in 0..h {
            for x in 0..w {
                if boxes.iter().any(|b| b[0] <= x && x < b[2] && b[1] <= y && y < b[3]) {
                    cells += 1;
                }
            }
        }
        let words: Vec<OcrWord> =
            boxes.iter().map(|b| filter_word("x", [b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64], 1.0)).collect();
        let got = union_text_area_ratio(&words, w, h);
        let want = cells as f64 / (w as f64 * h as f64);
        check(got == want, || format!("case {case}: {got} vs {want} for {boxes:?} in {w}x{h}"))?;
    }
    Ok("1000 configurations exact".into())
}

fn random_spans(rng: &mut ChaCha8Rng) -> Vec<GroundedSpan> {
    let alphabet: Vec<char> = (0x20u8..0x7f).map(char::from).collect();
    (0..rng.random_range(0..=6))
        .map(|i| {
            let text: String = loop {
                let t: String =
                    (0..rng.random_range(1..=12)).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
                if !t.trim().is_empty() {
                    break t;
                }
            };
            let x0 = rng.random_range(0..512u16);
            let y0 = rng.random_range(0..512u16);
            let b = NormBox::new(x0, y0, rng.random_range(x0 + 1..=512), rng.random_range(y0 + 1..=512)).unwrap();
            GroundedSpan::new(text, b, vec![i]).unwrap()
        })
        .collect()
}

// 8. Build then parse returns the input.
fn target_round_trip() -> Outcome {
    let vocab = VocabLayout::ascii(64);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let configs: Vec<BuildConfig> = [Variant::TextOnly, Variant::BBoxOnly, Variant::TextAndBBox]
        .into_iter()
        .flat_map(|variant| [Order::PostImage, Order::PreImage].map(|order| BuildConfig { variant, order, alpha: 1.0 }))
        .collect();
    for cfg in &configs {
        for _ in 0..10_000 {
            let image: Vec<u32> = (0..rng.random_range(1..=32)).map(|_| rng.random_range(0..64)).collect();
            let spans = random_spans(&mut rng);
            let t = build_target(&image, &spans, cfg, &vocab).map_err(|e| e.to_string())?;
            let p = parse_target(&t, &vocab).map_err(|e| e.to_string())?;
            let ordered: Vec<&GroundedSpan> = reading_order(&spans).into_iter().map(|i| &spans[i]).collect();
            let ok = p.image_tokens == image
                && p.order == cfg.order
                && p.variant == (!spans.is_empty()).then_some(cfg.variant)
                && p.spans.len() == spans.len()
                && p.spans.iter().zip(&ordered).all(|(ps, s)| {
                    (if cfg.variant.has_text() { ps.text == s.text } else { ps.text.is_empty() })
                        && ps.bbox == cfg.variant.has_box().then_some(s.bbox)
                });
            check(ok, || format!("{cfg:?}: {spans:?} parsed as {p:?}"))?;
            let masks_ok = t.img_mask.len() == t.len()
                && t.text_mask.len() == t.len()
                && t.img_mask.iter().zip(&t.text_mask).all(|(a, b)| a ^ b)
                && t.img_mask.iter().filter(|&&m| m).count() == image.len();
            check(masks_ok, || format!("{cfg:?}: masks not a disjoint cover"))?;
            if cfg.order == Order::PostImage {
                let prefix = TargetSequence {
                    tokens: t.tokens[..image.len()].to_vec(),
                    img_mask: t.img_mask[..image.len()].to_vec(),
                    text_mask: t.text_mask[..image.len()].to_vec(),
                };
                check(prefix == TargetSequence::unsupervised(&image), || "truncated prefix differs".into())?;
            }
        }
    }
    Ok(format!("{} configs x 10000 span sets", configs.len()))
}

// 9. Quantization example and round-trip error bound.
fn quantization() -> Outcome {
    let q = quantize_box(&PixelBox::new(128.0, 256.0, 512.0, 768.0).unwrap(), 1024, 1024).map_err(|e| e.to_string())?;
    check(q.coords() == [64, 128, 256, 384], || format!("got {:?}", q.coords()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bumped = 0;
    for _ in 0..100_000 {
        let (w, h) = (rng.random_range(1..=4096u32), rng.random_range(1..=4096u32));
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let x1 = if rng.random_bool(0.2) { (x0 + 0.3).min(w as f64) } else { rng.random_range(x0..=w as f64) };
        let y1 = rng.random_range(y0..=h as f64);
        let Ok(b) = PixelBox::new(x0, y0, x1, y1) else { continue };
        let q = quantize_box(&b, w, h).map_err(|e| e.to_string())?;
        let d = dequantize_box(&q, w, h);
        let round = |v: f64, dim: u32| (v * 512.0 / dim as f64 + 0.5).floor().clamp(0.0, 512.0);
        let axes = [(b.x_min(), b.x_max(), d.x_min(), d.x_max(), w), (b.y_min(), b.y_max(), d.y_min(), d.y_max(), h)];
        for (lo, hi, dlo, dhi, dim) in axes {
            let collapsed = round(lo, dim) == round(hi, dim);
            bumped += usize::from(collapsed);
            let unit = dim as f64 / 512.0;
            let limit = dim as f64 / 1024.0 + if collapsed { unit } else { 0.0 } + 1e-9 * dim as f64;
            let err = (dlo - lo).abs().max((dhi - hi).abs());
            check(err <= limit, || format!("{b:?} in {w}x{h}: error {err} > {limit}"))?;
        }
    }
    Ok(format!("example exact, 100000 random boxes within bound ({bumped} collapsed axes)"))
}

// 10. The toy objective: gradients, closed forms and training.
fn toy_objective() -> Outcome {
    let start = Instant::now();
    let task = make_glyph_task(0, REFERENCE_SAMPLES, &BuildConfig::default()).map_err(|e| e.to_string())?;
    let model = reference_model(0);

    let (mut worst, mut below, mut floor) = (0.0f64, 0, 0.0f64);
    for (i, ex) in task.examples.iter().take(3).enumerate() {
        let gc = gradient_check(&model, ex, 1.0, 50, 1e-5, i as u64).map_err(|e| e.to_string())?;
        check(gc.entries.len() == 50, || format!("{} coordinates checked", gc.entries.len()))?;
        worst = worst.max(gc.max_relative_error);
        below += gc.below_resolution(1e-4);
        floor = floor.max(gc.resolution);
    }
    check(worst <= 1e-4, || format!("max relative gradient error {worst:e}"))?;

    let v = task.vocab.size() as usize;
    let uniform = ToyModel::uniform(v, REFERENCE_DIM, REFERENCE_CONTEXT, 0);
    for ex in &task.examples {
        let l = forward_nll(&uniform, &ex.prompt, &ex.target, 1.0).map_err(|e| e.to_string())?;
        let want = ex.target.len() as f64 * (v as f64).ln();
        check((l.total - want).abs() <= 1e-6, || format!("uniform NLL {} vs L ln V {want}", l.total))?;
        let z = forward_nll(&model, &ex.prompt, &ex.target, 0.0).map_err(|e| e.to_string())?;
        check(z.total == z.l_img, || format!("alpha=0: total {} != l_img {}", z.total, z.l_img))?;
    }

    let cfg = TrainConfig::default();
    let run = || {
        let mut m = reference_model(0);
        train(&mut m, &task.examples, &cfg)
    };
    let a = run().map_err(|e| e.to_string())?;
    let ratio = a.final_loss.total / a.initial.total;
    check(ratio <= 0.5, || format!("loss ratio {ratio:.3} after {} steps", cfg.steps))?;
    let b = run().map_err(|e| e.to_string())?;
    check(a.curve == b.curve, || "loss curves differ between runs with the same seed".into())?;
    let elapsed = start.elapsed();
    within(elapsed, 60)?;
    Ok(format!(
        "grad rel err {worst:.1e} on 3x50 coords ({below} below the {floor:.1e} rounding floor), loss {:.2} -> {:.2} ({ratio:.3}), {elapsed:.2?}",
        a.initial.total, a.final_loss.total
    ))
}

// 11. Byte-identical pipeline outputs across reruns and worker counts.
fn pipeline_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("bundled.jsonl");
    write_corpus(&input, &synth_corpus(&SynthConfig::default())).map_err(|e| e.to_string())?;
    let files = [
        OUTPUT_CORPUS.to_string(),
        manifest_path(Path::new(OUTPUT_CORPUS)).to_string_lossy().into_owned(),
        OUTPUT_BENCH.to_string(),
        OUTPUT_REPORT.to_string(),
        OUTPUT_DECISIONS.to_string(),
    ];
    let mut runs = Vec::new();
    for (name, workers) in [("w1", 1), ("w8", 8), ("w1-again", 1)] {
        let out = dir.path().join(name);
        let cfg = PipelineConfig { seed: 1, workers, ..PipelineConfig::default() };
        let (report, _) = run_pipeline_files(&cfg, &input, &out, &MockAuditor).map_err(|e| e.to_string())?;
        let bytes: Vec<Vec<u8>> =
            files.iter().map(|f| std::fs::read(out.join(f))).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        runs.push((name, report.output_count, bytes));
    }
    for (name, _, bytes) in &runs[1..] {
        for (f, (a, b)) in files.iter().zip(runs[0].2.iter().zip(bytes)) {
            check(a == b, || format!("{f} differs between w1 and {name}"))?;
        }
    }
    Ok(format!("2000 inputs -> {} kept, {} files identical across 3 runs", runs[0].1, files.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("metric identity", metric_identity),
        ("levenshtein oracle", levenshtein_oracle),
        ("fuzzy threshold boundary", fuzzy_boundary),
        ("difficulty partition", difficulty_partition),
        ("filter thresholds", filter_thresholds),
        ("downsampling statistics", downsampling),
        ("union area", union_area),
        ("target round-trip", target_round_trip),
        ("quantization", quantization),
        ("toy objective", toy_objective),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
