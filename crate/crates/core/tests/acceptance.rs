//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamgate::metrics::{otg_localize, tim_cover, tim_diff, tim_redun};
use streamgate::peak_end::{self, MemoryRecord, PeakEndConfig};
use streamgate::replay::{run_replay, run_session, RunConfig, ScorerSpec};
use streamgate::scam::{build_interleaved_sequence, build_scam_mask, ClipTurns, SequenceLayout, SpanKind};
use streamgate::scorer::{
    fingerprint, perplexity, ContextView, ScoreResult, ScorerConfig, ScorerError, TableScorer, TokenScorer,
};
use streamgate::stream_model::{
    validate_timeline, Block, BlockId, BlockKind, ContextBuffer, FrameBlock, SemanticClip, TokenId,
};
use streamgate::synth::{ramp_stream, scene_stream, SceneStreamConfig, Synthetic};
use streamgate::trace::save_trace;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// SCAM oracle equivalence
// ---------------------------------------------------------------------------

/// Visibility written directly from the rule: a key is visible if it is an
/// earlier frame token, a token of an earlier clip's final caption, or an
/// earlier-or-equal token of the query's own span.
fn rule_allows(layout: &SequenceLayout, q: usize, k: usize) -> bool {
    if k > q {
        return false;
    }
    let span_of = |p: usize| layout.spans().iter().position(|s| s.begin <= p && p < s.end).unwrap();
    let (sq, sk) = (span_of(q), span_of(k));
    let (qs, ks) = (&layout.spans()[sq], &layout.spans()[sk]);
    sq == sk || ks.kind == SpanKind::Frame || (ks.is_clip_final_caption && ks.clip_id < qs.clip_id)
}

/// Drop every non-final caption span and apply a plain causal mask to what
/// is left. A dropped query sees the surviving keys before its span plus
/// its own span.
fn reduced_causal_allows(layout: &SequenceLayout, q: usize, k: usize) -> bool {
    if k > q {
        return false;
    }
    let survives = |p: usize| {
        let s = layout.spans().iter().find(|s| s.begin <= p && p < s.end).unwrap();
        s.kind == SpanKind::Frame || s.is_clip_final_caption
    };
    let q_span = layout.spans().iter().find(|s| s.begin <= q && q < s.end).unwrap();
    if survives(q) {
        if !survives(k) {
            return false;
        }
        // A surviving final caption of q's own clip can only precede q
        // inside q's own span.
        let k_span = layout.spans().iter().find(|s| s.begin <= k && k < s.end).unwrap();
        k_span.kind == SpanKind::Frame || k_span.clip_id < q_span.clip_id || k_span == q_span
    } else {
        (k >= q_span.begin) || (survives(k) && {
            let k_span = layout.spans().iter().find(|s| s.begin <= k && k < s.end).unwrap();
            k_span.kind == SpanKind::Frame || k_span.clip_id < q_span.clip_id
        })
    }
}

fn scam_layouts() -> Vec<SequenceLayout> {
    let mut frame_counts: Vec<Vec<usize>> = Vec::new();
    for clips in 1..=3 {
        for code in 0..(1 << clips) {
            frame_counts.push((0..clips).map(|c| 1 + (code >> c & 1)).collect());
        }
    }
    let mut layouts = Vec::new();
    for counts in frame_counts {
        let turns: usize = counts.iter().sum();
        // Every frame and caption span is 1 or 2 tokens long.
        for lens in 0u32..(1 << (2 * turns)) {
            let mut bit = 0;
            let mut next_len = || {
                let l = 1 + (lens >> bit & 1) as usize;
                bit += 1;
                l
            };
            let clips: Vec<ClipTurns> = counts
                .iter()
                .enumerate()
                .map(|(c, &n)| {
                    let mut frames = Vec::new();
                    let mut captions = Vec::new();
                    for _ in 0..n {
                        frames.push(vec![1; next_len()]);
                        captions.push(vec![2; next_len()]);
                    }
                    ClipTurns {
                        clip_id: c as u64,
                        frames,
                        captions,
                    }
                })
                .collect();
            layouts.push(build_interleaved_sequence(&clips).unwrap().layout);
        }
    }
    layouts
}

fn scam_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let layouts = scam_layouts();
    let mut cells = 0usize;
    for layout in &layouts {
        let mask = build_scam_mask(layout);
        let n = layout.total_len();
        for q in 0..n {
            for k in 0..n {
                let got = mask.allowed(q, k);
                let rule = rule_allows(layout, q, k);
                let reduced = reduced_causal_allows(layout, q, k);
                ensure(got == rule && rule == reduced, || {
                    format!("q={q} k={k}: mask {got}, rule {rule}, reduced {reduced} in {layout:?}")
                })?;
                cells += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} layouts, {cells} cells, {elapsed:.2?}", layouts.len()))
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

fn perplexity_formula() -> Outcome {
    let half = 0.5f64.ln();
    let two = perplexity(&[half, half]).map_err(|e| e.to_string())?;
    ensure(two == 2.0, || format!("perplexity([ln .5, ln .5]) = {two:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| -rng.gen::<f64>() * 8.0).collect();
        let b: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| -rng.gen::<f64>() * 8.0).collect();
        let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let pa = perplexity(&a).unwrap();
        let pb = perplexity(&b).unwrap();
        let pj = perplexity(&joined).unwrap();
        // ppl(a ++ b)^(na + nb) = ppl(a)^na * ppl(b)^nb, taken as a geometric mean.
        let expected = ((na * pa.ln() + nb * pb.ln()) / (na + nb)).exp();
        worst = worst.max(((pj - expected) / expected).abs());
    }
    ensure(worst <= 1e-9, || format!("worst relative error {worst:e}"))?;
    Ok(format!("exactly 2.0; worst concatenation error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Gate scenario
// ---------------------------------------------------------------------------

fn default_config() -> RunConfig {
    RunConfig::new(ScorerSpec::Reference("scenario.json".into()))
}

fn gate_scenario() -> Outcome {
    let synthetic = scene_stream(&SceneStreamConfig {
        scene_frames: vec![6, 6],
        in_clip_prob: 0.9,
        boundary_prob: 0.5,
        ..SceneStreamConfig::default()
    });
    let scorer = TableScorer::from_scenario(&synthetic.scenario).map_err(|e| e.to_string())?;
    let config = default_config();
    ensure(config.alpha == 1.03, || "default alpha is not 1.03".into())?;
    let first = run_session::<f64>(&synthetic.trace, &scorer, &config).map_err(|e| e.to_string())?;
    let onsets: Vec<f64> = synthetic.trace.timeline.clips().iter().map(|c| c.t_start).collect();
    let times = first.responses.timestamps();
    ensure(times == onsets, || format!("responses at {times:?}, onsets {onsets:?}"))?;

    let timeline = &synthetic.trace.timeline;
    let frame_period = 1.0 / config.fps;
    let diff = tim_diff(&times, timeline).unwrap();
    let cover = tim_cover(&times, timeline).unwrap();
    let redun = tim_redun(&times, timeline).unwrap();
    ensure(diff.abs() <= frame_period, || format!("tim_diff {diff}"))?;
    ensure(cover == 1.0, || format!("tim_cover {cover}"))?;
    ensure(redun == 0.0, || format!("tim_redun {redun}"))?;

    for run in 1..100 {
        let again = run_session::<f64>(&synthetic.trace, &scorer, &config).map_err(|e| e.to_string())?;
        ensure(again.decisions == first.decisions, || format!("rerun {run} diverged"))?;
    }
    Ok(format!(
        "responses at {times:?}; tim_diff {diff}, tim_cover {cover}, tim_redun {redun}; 100 identical runs"
    ))
}

// ---------------------------------------------------------------------------
// Gate monotonicity
// ---------------------------------------------------------------------------

fn response_count(s: &Synthetic, scorer: &TableScorer, alpha: f64) -> Result<usize, String> {
    let config = RunConfig {
        alpha,
        tokens_per_frame: s.trace.frames[0].tokens.len(),
        ..default_config()
    };
    run_session::<f64>(&s.trace, scorer, &config)
        .map(|o| o.responses.len())
        .map_err(|e| e.to_string())
}

fn gate_monotonicity() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|i| 1.0 + i as f64 / 100.0).collect();
    let mut spread = 0;
    for seed in 0..50 {
        let s = ramp_stream(40, 0.03, seed);
        let scorer = TableScorer::from_scenario(&s.scenario).map_err(|e| e.to_string())?;
        let counts = grid
            .iter()
            .map(|&a| response_count(&s, &scorer, a))
            .collect::<Result<Vec<_>, _>>()?;
        ensure(counts.windows(2).all(|w| w[1] <= w[0]), || {
            format!("trace {seed}: counts {counts:?} over alpha {grid:?}")
        })?;
        spread += counts[0] - counts[counts.len() - 1];
    }
    ensure(spread > 0, || "alpha never changed the response count".into())?;
    Ok(format!("50 traces x 11 alphas, non-increasing; {spread} responses removed across the grid"))
}

// ---------------------------------------------------------------------------
// Cache semantics-freedom
// ---------------------------------------------------------------------------

/// Delegates to the table scorer and checks every cached prefix state it is
/// offered against a from-scratch fingerprint of that prefix.
struct PrefixAudit<'a> {
    inner: &'a TableScorer,
    offered: AtomicUsize,
    wrong: AtomicUsize,
}

impl PrefixAudit<'_> {
    fn audit(&self, view: &ContextView<'_>) {
        if let Some(p) = view.prefix {
            self.offered.fetch_add(1, Ordering::Relaxed);
            if p.len > view.tokens.len() || fingerprint(&view.tokens[..p.len]) != p.state {
                self.wrong.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

impl TokenScorer<f64> for PrefixAudit<'_> {
    fn config(&self) -> &ScorerConfig {
        TokenScorer::<f64>::config(self.inner)
    }

    fn score_continuation(&self, ctx: &[TokenId], cont: &[TokenId]) -> Result<ScoreResult<f64>, ScorerError> {
        self.inner.score_continuation(ctx, cont)
    }

    fn generate_caption(
        &self,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<f64>), ScorerError> {
        self.inner.generate_caption(ctx, max_len)
    }

    fn score_with(&self, view: ContextView<'_>, cont: &[TokenId]) -> Result<ScoreResult<f64>, ScorerError> {
        self.audit(&view);
        self.inner.score_with(view, cont)
    }

    fn generate_with(
        &self,
        view: ContextView<'_>,
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<f64>), ScorerError> {
        self.audit(&view);
        self.inner.generate_with(view, max_len)
    }
}

fn cache_semantics_freedom() -> Outcome {
    let mut traces = vec![scene_stream(&SceneStreamConfig::default())];
    for seed in 0..10 {
        traces.push(scene_stream(&SceneStreamConfig {
            scene_frames: vec![30, 45, 20],
            tokens_per_frame: 4,
            variants: 8,
            seed,
            ..SceneStreamConfig::default()
        }));
        traces.push(ramp_stream(30, 0.03, seed));
    }
    let mut worst_ratio = 0.0f64;
    let mut offered = 0;
    for (i, s) in traces.iter().enumerate() {
        let table = TableScorer::from_scenario(&s.scenario).map_err(|e| e.to_string())?;
        let audit = PrefixAudit {
            inner: &table,
            offered: AtomicUsize::new(0),
            wrong: AtomicUsize::new(0),
        };
        let base = RunConfig {
            tokens_per_frame: s.trace.frames[0].tokens.len(),
            // Small enough that the longer traces prune, exercising cache
            // invalidation on deletion.
            context_budget: 300,
            ..default_config()
        };
        let cached = run_session::<f64>(&s.trace, &audit, &base).map_err(|e| e.to_string())?;
        let plain = run_session::<f64>(
            &s.trace,
            &table,
            &RunConfig {
                kv_cache: false,
                ..base.clone()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(cached.decisions == plain.decisions, || format!("trace {i}: decisions differ"))?;
        let wrong = audit.wrong.load(Ordering::Relaxed);
        ensure(wrong == 0, || format!("trace {i}: {wrong} stale prefix states offered"))?;
        offered += audit.offered.load(Ordering::Relaxed);
        let ratio = cached.cache_stats.recompute_ratio();
        ensure(ratio < 1.0, || format!("trace {i}: recompute_ratio {ratio}"))?;
        ensure(plain.cache_stats.recompute_ratio() == 1.0, || "cache-disabled run served tokens".into())?;
        worst_ratio = worst_ratio.max(ratio);
    }
    Ok(format!(
        "{} traces identical; {offered} prefix states verified; recompute_ratio <= {worst_ratio:.3}",
        traces.len()
    ))
}

// ---------------------------------------------------------------------------
// Peak-end statistics
// ---------------------------------------------------------------------------

fn peak_end_statistics() -> Outcome {
    let config = PeakEndConfig::<f64>::default();
    ensure(config.window_frames == 40, || "default window is not 40 frames".into())?;

    // Two clips of seven frames, two seconds apart, plus two recent frames
    // inside the window.
    let ppl = [1.30, 1.10, 1.55, 1.20, 1.90, 1.45, 1.70, 2.4, 2.1, 2.0, 2.9, 2.2, 2.6, 2.5, 1.8, 2.7];
    let times: Vec<f64> = (0..14).map(|i| i as f64 * 2.0).chain([30.0, 35.0]).collect();
    let now = 40.0;
    let mut ctx = ContextBuffer::new(usize::MAX);
    let mut records = Vec::new();
    for (i, (&t, &p)) in times.iter().zip(&ppl).enumerate() {
        let id = BlockId(i as u64);
        ctx.push(Block {
            id,
            kind: BlockKind::Frame(FrameBlock::new(t, i as u64, vec![1])),
        })
        .unwrap();
        records.push(MemoryRecord {
            block_id: id,
            frame_index: i as u64,
            timestamp_s: t,
            clip_id: if i < 7 { 0 } else { 1 },
            frame_ppl: p,
            protected: false,
        });
    }
    let keys = [
        peak_end::protect_keyframe(&mut records, 0).unwrap(),
        peak_end::protect_keyframe(&mut records, 1).unwrap(),
    ];
    ensure(keys == [BlockId(1), BlockId(14)], || format!("keyframes {keys:?}"))?;

    // Deletion probability computed independently of the library.
    let expected_p: Vec<f64> = records
        .iter()
        .map(|r| {
            let clip: Vec<f64> = records.iter().filter(|o| o.clip_id == r.clip_id).map(|o| o.frame_ppl).collect();
            let lo = clip.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = clip.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let age = (now - r.timestamp_s) * 3.0;
            if r.protected || age <= 40.0 {
                0.0
            } else {
                0.9 * (r.frame_ppl - lo) / (hi - lo + 1e-9) * ((age - 40.0) / 40.0).min(1.0)
            }
        })
        .collect();

    const TRIALS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut survived = vec![0usize; records.len()];
    for _ in 0..TRIALS {
        let out = peak_end::prune(&ctx, &records, now, &config, &mut rng);
        for (i, r) in records.iter().enumerate() {
            if !out.deleted.contains(&r.block_id) {
                survived[i] += 1;
            }
        }
    }
    let mut worst_z = 0.0f64;
    for (i, r) in records.iter().enumerate() {
        let freq = survived[i] as f64 / TRIALS as f64;
        let p = expected_p[i];
        if r.protected {
            ensure(survived[i] == TRIALS, || format!("protected frame {i} deleted"))?;
            continue;
        }
        let sigma = (p * (1.0 - p) / TRIALS as f64).sqrt();
        if sigma == 0.0 {
            ensure(freq == 1.0 - p, || format!("frame {i}: survival {freq}, expected {}", 1.0 - p))?;
            continue;
        }
        let z = (freq - (1.0 - p)).abs() / sigma;
        ensure(z <= 3.0, || format!("frame {i}: survival {freq}, expected {} (z = {z:.2})", 1.0 - p))?;
        worst_z = worst_z.max(z);
    }
    Ok(format!(
        "{TRIALS} trials; protected frames always survive; {} unprotected frames within {worst_z:.2} sigma",
        records.len() - 2
    ))
}

// ---------------------------------------------------------------------------
// Metric golden values
// ---------------------------------------------------------------------------

fn scene(id: u64, t0: f64, t1: f64, anchor: f64) -> SemanticClip {
    SemanticClip {
        clip_id: id,
        t_start: t0,
        t_end: t1,
        anchor_s: anchor,
        caption_pool: vec!["c".into()],
        caption_tokens: None,
    }
}

fn brute_force_otg(series: &[f64], w: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for start in 0..=series.len() - w {
        let mean = series[start..start + w].iter().sum::<f64>() / w as f64;
        if mean < best.0 {
            best = (mean, start);
        }
    }
    best.1
}

fn metric_golden_values() -> Outcome {
    let tl = validate_timeline(vec![scene(0, 0.0, 10.0, 4.0), scene(1, 10.0, 20.0, 15.0)]).unwrap();
    let checks: [(&str, f64, f64); 9] = [
        ("tim_diff {5,16}", tim_diff(&[5.0, 16.0], &tl).unwrap(), 1.0),
        ("tim_diff {5}", tim_diff(&[5.0], &tl).unwrap(), 5.5),
        ("tim_diff at anchors", tim_diff(&[4.0, 15.0], &tl).unwrap(), 0.0),
        ("tim_redun one each", tim_redun(&[4.0, 15.0], &tl).unwrap(), 0.0),
        ("tim_redun 3 + 1", tim_redun(&[1.0, 2.0, 3.0, 15.0], &tl).unwrap(), 1.0),
        ("tim_redun none", tim_redun(&[], &tl).unwrap(), 0.0),
        ("tim_cover all", tim_cover(&[4.0, 15.0], &tl).unwrap(), 1.0),
        ("tim_cover half", tim_cover(&[4.0], &tl).unwrap(), 0.5),
        ("tim_cover none", tim_cover(&[], &tl).unwrap(), 0.0),
    ];
    for (name, got, want) in checks {
        ensure(got == want, || format!("{name}: {got} != {want}"))?;
    }

    let fixed = [
        (vec![3.0, 1.0, 1.0, 3.0], 2, 1),
        (vec![2.0; 7], 3, 0),
        (vec![4.0, 5.0, 6.0], 3, 0),
    ];
    for (series, w, start) in fixed {
        let got = otg_localize(&series, w).unwrap();
        ensure(got == (start..start + w), || format!("otg {series:?} w={w}: {got:?}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut cases = 0;
    for len in 1..=20 {
        for _ in 0..100 {
            // Small integers produce plenty of ties.
            let series: Vec<f64> = if rng.gen_bool(0.5) {
                (0..len).map(|_| rng.gen_range(1..4) as f64).collect()
            } else {
                (0..len).map(|_| 1.0 + rng.gen::<f64>()).collect()
            };
            for w in 1..=len {
                let got = otg_localize(&series, w).unwrap();
                let want = brute_force_otg(&series, w);
                ensure(got == (want..want + w), || format!("otg {series:?} w={w}: {got:?}, expected start {want}"))?;
                cases += 1;
            }
        }
    }
    Ok(format!("9 timing examples exact; otg matches enumeration on {cases} cases"))
}

// ---------------------------------------------------------------------------
// Full-pipeline determinism and throughput
// ---------------------------------------------------------------------------

fn write_synthetic(dir: &Path, s: &Synthetic) -> (std::path::PathBuf, std::path::PathBuf) {
    let trace = dir.join("trace.ndjson");
    let scenario = dir.join("scenario.json");
    save_trace(&s.trace, &trace).unwrap();
    s.scenario.save(&scenario).unwrap();
    (trace, scenario)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn full_pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;

    let small = scene_stream(&SceneStreamConfig {
        scene_frames: vec![90, 90, 60],
        tokens_per_frame: 4,
        variants: 8,
        seed: 7,
        ..SceneStreamConfig::default()
    });
    let (trace, scenario) = write_synthetic(tmp.path(), &small);
    let config = RunConfig {
        tokens_per_frame: 4,
        context_budget: 400,
        seed: 11,
        ..RunConfig::new(ScorerSpec::Reference(scenario))
    };
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    run_replay(&config, &trace, &a).map_err(|e| e.to_string())?;
    run_replay(&config, &trace, &b).map_err(|e| e.to_string())?;
    let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
    ensure(fa.len() == 4, || format!("expected 4 artifacts, found {}", fa.len()))?;
    ensure(fa == fb, || "artifacts differ between identical runs".into())?;
    let events = String::from_utf8_lossy(&fa.iter().find(|(n, _)| n == "events.ndjson").unwrap().1).into_owned();
    ensure(events.contains("pruned_frames"), || "determinism run never pruned".into())?;

    let long_dir = tmp.path().join("long");
    std::fs::create_dir_all(&long_dir).unwrap();
    let long = scene_stream(&SceneStreamConfig::long(10.0, 1));
    ensure(long.trace.frames.len() == 1800, || "long trace is not 1800 frames".into())?;
    ensure(long.trace.frames.iter().all(|f| f.tokens.len() == 16), || "frames are not 16 tokens".into())?;
    let (trace, scenario) = write_synthetic(&long_dir, &long);
    let config = RunConfig::new(ScorerSpec::Reference(scenario));
    let start = Instant::now();
    let report = run_replay(&config, &trace, &long_dir.join("out")).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("10-minute trace took {elapsed:?}"))?;
    ensure(report.tim_cover == 1.0, || format!("10-minute trace tim_cover {}", report.tim_cover))?;
    Ok(format!(
        "4 artifacts byte-identical; 1800 x 16-token frames in {elapsed:.2?} ({} responses, {} scenes)",
        report.responses,
        long.trace.timeline.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("SCAM oracle equivalence", scam_oracle_equivalence),
        ("Perplexity formula", perplexity_formula),
        ("Gate scenario", gate_scenario),
        ("Gate monotonicity", gate_monotonicity),
        ("Cache semantics-freedom", cache_semantics_freedom),
        ("Peak-end statistics", peak_end_statistics),
        ("Metric golden values", metric_golden_values),
        ("Full-pipeline determinism", full_pipeline_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name}: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
