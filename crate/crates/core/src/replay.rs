//! End-to-end replay of a trace through a gated session, plus parameter
//! sweeps.
//!
//! A replay writes four artifacts into its output directory:
//!
//! - `events.ndjson`: one record per ingested frame plus one per pruning pass
//! - `responses.ndjson`: emitted captions with their trigger timestamps
//! - `report.json`: timing metrics, token accuracy, judge scores, cache stats
//! - `per_scene.csv`: one row per ground-truth scene
//!
//! All artifacts are a pure function of the configuration, the trace and the
//! scorer, so two runs with the same seed are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cache::CacheStats;
use crate::metrics::{
    evaluate_timing, Judge, JudgeScores, MetricError, OverlapJudge, Rubric, SceneRow, TimingReport,
};
use crate::num::Real;
use crate::peak_end::PeakEndConfig;
use crate::rng::{substream, POOL_SAMPLING, PRUNING};
use crate::scam::sample_caption;
use crate::scorer::{BridgeEndpoint, BridgeScorer, ContextView, ScorerConfig, ScorerError, TableScorer, TokenScorer};
use crate::stream_model::{Block, BlockKind, SemanticClip, TokenId, TIME_TOLERANCE_S};
use crate::sved::{
    GateConfig, GateDecision, GateError, InferenceMask, ResponseLog, SessionEvent, SvedSession,
};
use crate::trace::{parse_trace, Trace, TraceError, TraceErrorKind};
use crate::metrics::DeviationReference;

/// Which scorer a run talks to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    /// In-process table scorer loaded from a scenario file.
    Reference(PathBuf),
    /// External scorer process speaking the wire protocol.
    Bridge(BridgeEndpoint),
}

impl FromStr for ScorerSpec {
    type Err = ReplayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("reference:") {
            if path.is_empty() {
                return Err(ReplayError::Config("reference scorer needs a scenario path".into()));
            }
            return Ok(Self::Reference(PathBuf::from(path)));
        }
        if let Some(endpoint) = s.strip_prefix("bridge:") {
            return endpoint
                .parse()
                .map(Self::Bridge)
                .map_err(|e: ScorerError| ReplayError::Config(e.to_string()));
        }
        Err(ReplayError::Config(format!(
            "scorer must be reference:<scenario> or bridge:<endpoint>, got {s:?}"
        )))
    }
}

impl std::fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScorerSpec::Reference(p) => write!(f, "reference:{}", p.display()),
            ScorerSpec::Bridge(BridgeEndpoint::Tcp(addr)) => write!(f, "bridge:tcp:{addr}"),
            ScorerSpec::Bridge(BridgeEndpoint::Stdio { program, args }) => {
                write!(f, "bridge:stdio:{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
        }
    }
}

impl ScorerSpec {
    /// Open the scorer. Bridge connections get a permissive vocabulary and
    /// leave token validation to the remote side.
    pub fn open(&self, context_budget: usize) -> Result<Box<dyn TokenScorer<f64>>, ScorerError> {
        match self {
            ScorerSpec::Reference(path) => Ok(Box::new(TableScorer::load(path)?)),
            ScorerSpec::Bridge(endpoint) => {
                let config = ScorerConfig {
                    vocabulary_size: u32::MAX,
                    deterministic: true,
                    max_generation_len: 32,
                    max_context_len: context_budget,
                };
                Ok(Box::new(BridgeScorer::connect(endpoint, config)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub alpha: f64,
    pub window_frames: usize,
    pub pool_size: usize,
    pub tokens_per_frame: usize,
    pub fps: f64,
    pub context_budget: usize,
    pub scorer: ScorerSpec,
    pub seed: u64,
    pub p_max: f64,
    pub kv_cache: bool,
    pub inference_mask: InferenceMask,
    pub deviation_reference: DeviationReference,
}

impl RunConfig {
    pub fn new(scorer: ScorerSpec) -> Self {
        Self {
            alpha: 1.03,
            window_frames: 40,
            pool_size: 1,
            tokens_per_frame: 16,
            fps: 3.0,
            context_budget: 8192,
            scorer,
            seed: 0,
            p_max: 0.9,
            kv_cache: true,
            inference_mask: InferenceMask::Causal,
            deviation_reference: DeviationReference::Anchor,
        }
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let bad = |m: String| Err(ReplayError::Config(m));
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return bad(format!("--alpha must be a finite value >= 1, got {}", self.alpha));
        }
        if self.window_frames == 0 {
            return bad("--window-frames must be positive".into());
        }
        if self.pool_size == 0 {
            return bad("--pool-size must be positive".into());
        }
        if self.tokens_per_frame == 0 {
            return bad("--tokens-per-frame must be positive".into());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("--fps must be positive, got {}", self.fps));
        }
        if self.context_budget <= self.tokens_per_frame {
            return bad(format!(
                "--context-budget {} cannot hold a single frame of {} tokens",
                self.context_budget, self.tokens_per_frame
            ));
        }
        self.peak_end::<f64>().validate().map_err(|e| ReplayError::Config(e.to_string()))
    }

    pub fn gate<R: Real>(&self) -> GateConfig<R> {
        GateConfig {
            alpha: R::of(self.alpha),
            tokens_per_frame: self.tokens_per_frame,
            context_budget: self.context_budget,
            kv_cache: self.kv_cache,
            inference_mask: self.inference_mask,
        }
    }

    pub fn peak_end<R: Real>(&self) -> PeakEndConfig<R> {
        PeakEndConfig {
            window_frames: self.window_frames,
            fps: self.fps,
            p_max: R::of(self.p_max),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("scorer: {0}")]
    Scorer(#[from] ScorerError),
    #[error("{0}")]
    Gate(#[from] GateError),
    #[error("frame {frame_index}: context budget still exceeded after pruning ({needed} > {budget} tokens)")]
    BudgetUnrecoverable {
        frame_index: u64,
        needed: usize,
        budget: usize,
    },
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ReplayError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ReplayError::Config(_) | ReplayError::Output { .. } | ReplayError::BudgetUnrecoverable { .. } => 2,
            // An unreadable trace path is a usage error, not a bad trace.
            ReplayError::Trace(TraceError {
                kind: TraceErrorKind::Io { .. },
                ..
            }) => 2,
            ReplayError::Trace(_) | ReplayError::Metric(_) => 3,
            ReplayError::Scorer(_) => 4,
            ReplayError::Gate(GateError::Scorer { .. }) => 4,
            ReplayError::Gate(GateError::FrameShape { .. } | GateError::NonMonotone { .. }) => 3,
            ReplayError::Gate(GateError::InvalidAlpha(_)) => 2,
            ReplayError::Gate(_) => 5,
        }
    }
}

/// Everything a session produced, before any metric is computed.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome<R> {
    pub decisions: Vec<GateDecision<R>>,
    pub events: Vec<SessionEvent>,
    pub responses: ResponseLog,
    pub cache_stats: CacheStats,
    /// Per scene with reference tokens: teacher-forced predictions and the
    /// reference they were forced with.
    pub teacher_forced: Vec<(u64, Vec<TokenId>, Vec<TokenId>)>,
}

/// Index of the paraphrase each scene is evaluated against, drawn
/// uniformly from the first `pool_size` entries of its pool.
pub fn choose_references(trace: &Trace, pool_size: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, POOL_SAMPLING);
    trace
        .timeline
        .clips()
        .iter()
        .map(|clip| {
            let available = clip.caption_pool.len().min(pool_size).max(1);
            let indices: Vec<usize> = (0..available).collect();
            *sample_caption(&indices, &mut rng).expect("non-empty index list")
        })
        .collect()
}

fn teacher_force<R: Real>(
    scorer: &dyn TokenScorer<R>,
    ctx: &[TokenId],
    reference: &[TokenId],
) -> Result<Vec<TokenId>, ScorerError> {
    let mut input = ctx.to_vec();
    let mut predicted = Vec::with_capacity(reference.len());
    for &tok in reference {
        let (next, _) = scorer.generate_with(ContextView::causal(&input), 1)?;
        // An empty generation means the model predicted end of caption.
        predicted.push(next.first().copied().unwrap_or(TokenId::MAX));
        input.push(tok);
    }
    Ok(predicted)
}

/// Context tokens up to and including the latest frame.
fn context_before_caption(blocks: &[Block]) -> Vec<TokenId> {
    let end = match blocks.last().map(|b| &b.kind) {
        Some(BlockKind::Caption(_)) => blocks.len() - 1,
        _ => blocks.len(),
    };
    blocks[..end].iter().flat_map(|b| b.tokens().iter().copied()).collect()
}

/// Run every frame of `trace` through a fresh session.
pub fn run_session<R: Real>(
    trace: &Trace,
    scorer: &dyn TokenScorer<R>,
    config: &RunConfig,
) -> Result<SessionOutcome<R>, ReplayError> {
    config.validate()?;
    let mut session = SvedSession::new(config.gate::<R>())?;
    let prune_cfg = config.peak_end::<R>();
    let mut prune_rng = substream(config.seed, PRUNING);
    let references = choose_references(trace, config.pool_size, config.seed);

    let clips = trace.timeline.clips();
    let mut pending: Vec<(usize, Vec<TokenId>)> = clips
        .iter()
        .zip(&references)
        .enumerate()
        .filter_map(|(k, (c, &i))| {
            let pool = c.caption_tokens.as_ref()?;
            pool.get(i).or(pool.first()).map(|r| (k, r.clone()))
        })
        .collect();
    pending.reverse();
    let mut teacher_forced = Vec::new();
    let mut decisions = Vec::with_capacity(trace.frames.len());

    for frame in &trace.frames {
        let decision = match session.ingest_frame(frame, scorer) {
            Err(GateError::BudgetExceeded { .. }) => {
                let report = session.prune_memory(&prune_cfg, &mut prune_rng)?;
                log::info!(
                    "t={:.3}: pruned {} frames, {} tokens remain",
                    frame.timestamp_s,
                    report.pruned_frames.len(),
                    report.survivor_tokens
                );
                session.ingest_frame(frame, scorer).map_err(|e| match e {
                    GateError::BudgetExceeded {
                        frame_index,
                        needed,
                        budget,
                    } => ReplayError::BudgetUnrecoverable {
                        frame_index,
                        needed,
                        budget,
                    },
                    other => other.into(),
                })?
            }
            other => other?,
        };
        decisions.push(decision);

        // Token accuracy is measured from the context at the first frame
        // at or after each scene's anchor.
        while let Some((k, _)) = pending.last() {
            let clip = &clips[*k];
            if frame.timestamp_s + TIME_TOLERANCE_S < clip.anchor_s {
                break;
            }
            let (k, reference) = pending.pop().expect("peeked");
            if frame.timestamp_s >= clips[k].t_end - TIME_TOLERANCE_S {
                // No frame inside the scene reached the anchor.
                continue;
            }
            let ctx = context_before_caption(session.state().ctx().blocks());
            let predicted = teacher_force(scorer, &ctx, &reference)?;
            teacher_forced.push((clips[k].clip_id, predicted, reference));
        }
    }

    Ok(SessionOutcome {
        decisions,
        events: session.events().to_vec(),
        cache_stats: session.cache_stats(),
        responses: session.finalize(),
        teacher_forced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeReport {
    pub semcor: Vec<SceneJudge>,
    pub semcor_mean: Option<f64>,
    pub sumfluen: Option<JudgeScores<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneJudge {
    pub clip_id: u64,
    pub scores: JudgeScores<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheReport {
    pub enabled: bool,
    pub tokens_scored_total: u64,
    pub tokens_served_from_cache: u64,
    pub recompute_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub window_frames: usize,
    pub pool_size: usize,
    pub tokens_per_frame: usize,
    pub fps: f64,
    pub context_budget: usize,
    pub seed: u64,
    pub deviation_reference: DeviationReference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub config: ReportConfig,
    pub frames: usize,
    pub responses: usize,
    pub tim_diff: f64,
    pub tim_redun: f64,
    pub tim_cover: f64,
    pub tok_acc: Option<f64>,
    pub per_scene: Vec<SceneRow>,
    pub judge: JudgeReport,
    pub cache: CacheReport,
}

fn caption_text(clip: &SemanticClip, tokens: &[TokenId]) -> String {
    let known = clip
        .caption_tokens
        .as_ref()
        .and_then(|pool| pool.iter().position(|p| p == tokens))
        .and_then(|i| clip.caption_pool.get(i));
    match known {
        Some(text) => text.clone(),
        None => tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
    }
}

fn judge_responses(trace: &Trace, log: &ResponseLog, config: &RunConfig) -> JudgeReport {
    let judge = OverlapJudge;
    let references = choose_references(trace, config.pool_size, config.seed);
    let mut semcor = Vec::new();
    let mut said = Vec::new();
    let mut reference = Vec::new();
    for (clip, &i) in trace.timeline.clips().iter().zip(&references) {
        let Some(ref_text) = clip.caption_pool.get(i) else {
            continue;
        };
        let response = log
            .responses
            .iter()
            .find(|r| clip.contains(r.t))
            .map(|r| caption_text(clip, &r.tokens))
            .unwrap_or_default();
        if let Ok(scores) = judge.score(Rubric::SemCor, &response, ref_text) {
            semcor.push(SceneJudge {
                clip_id: clip.clip_id,
                scores,
            });
        }
        if !response.is_empty() {
            said.push(response);
        }
        reference.push(ref_text.clone());
    }
    let semcor_mean = (!semcor.is_empty())
        .then(|| semcor.iter().map(|s| s.scores.mean).sum::<f64>() / semcor.len() as f64);
    let sumfluen = judge
        .score(Rubric::SumFluen, &said.join(" "), &reference.join(" "))
        .ok();
    JudgeReport {
        semcor,
        semcor_mean,
        sumfluen,
    }
}

/// Compute the report for a finished session.
pub fn build_report(
    trace: &Trace,
    outcome: &SessionOutcome<f64>,
    config: &RunConfig,
) -> Result<Report, ReplayError> {
    let TimingReport {
        tim_diff,
        tim_redun,
        tim_cover,
        per_scene,
    } = evaluate_timing(&outcome.responses.timestamps(), &trace.timeline, config.deviation_reference)?;

    let (hits, total) = outcome
        .teacher_forced
        .iter()
        .fold((0usize, 0usize), |(h, n), (_, p, r)| {
            (h + p.iter().zip(r).filter(|(a, b)| a == b).count(), n + r.len())
        });
    let stats = outcome.cache_stats;
    Ok(Report {
        config: ReportConfig {
            alpha: config.alpha,
            window_frames: config.window_frames,
            pool_size: config.pool_size,
            tokens_per_frame: config.tokens_per_frame,
            fps: config.fps,
            context_budget: config.context_budget,
            seed: config.seed,
            deviation_reference: config.deviation_reference,
        },
        frames: trace.frames.len(),
        responses: outcome.responses.len(),
        tim_diff,
        tim_redun,
        tim_cover,
        tok_acc: (total > 0).then(|| hits as f64 / total as f64),
        per_scene,
        judge: judge_responses(trace, &outcome.responses, config),
        cache: CacheReport {
            enabled: config.kv_cache,
            tokens_scored_total: stats.tokens_scored_total,
            tokens_served_from_cache: stats.tokens_served_from_cache,
            recompute_ratio: stats.recompute_ratio(),
        },
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ReplayError> {
    let file = fs::File::create(path).map_err(|source| ReplayError::Output {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(contents)
        .and_then(|_| w.flush())
        .map_err(|source| ReplayError::Output {
            path: path.to_path_buf(),
            source,
        })
}

fn ndjson<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("plain data serializes");
        out.push(b'\n');
    }
    out
}

pub fn per_scene_csv(rows: &[SceneRow]) -> String {
    let mut out = String::from("clip_id,t_start,t_end,anchor,n_responses,n_orphans,deviation,redundant,covered\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.clip_id, r.t_start, r.t_end, r.anchor, r.n_responses, r.n_orphans, r.deviation, r.redundant, r.covered
        )
        .expect("writing to a String");
    }
    out
}

/// Write all replay artifacts for a finished session into `out_dir`.
pub fn write_artifacts(
    out_dir: &Path,
    outcome: &SessionOutcome<f64>,
    report: &Report,
) -> Result<(), ReplayError> {
    fs::create_dir_all(out_dir).map_err(|source| ReplayError::Output {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_file(&out_dir.join("events.ndjson"), &ndjson(&outcome.events))?;
    write_file(&out_dir.join("responses.ndjson"), &ndjson(&outcome.responses.responses))?;
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    write_file(&out_dir.join("report.json"), &json)?;
    write_file(&out_dir.join("per_scene.csv"), per_scene_csv(&report.per_scene).as_bytes())
}

/// Load the trace, run the session, and write every artifact.
pub fn run_replay(config: &RunConfig, trace_path: &Path, out_dir: &Path) -> Result<Report, ReplayError> {
    config.validate()?;
    let trace = parse_trace(trace_path)?;
    let scorer = config.scorer.open(config.context_budget)?;
    let outcome = run_session::<f64>(&trace, scorer.as_ref(), config)?;
    let report = build_report(&trace, &outcome, config)?;
    write_artifacts(out_dir, &outcome, &report)?;
    Ok(report)
}

/// One `(trace, alpha, window)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub trace: String,
    pub alpha: f64,
    pub window_frames: usize,
    pub result: Result<SweepMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetrics {
    pub responses: usize,
    pub tim_diff: f64,
    pub tim_redun: f64,
    pub tim_cover: f64,
    pub tok_acc: Option<f64>,
    pub recompute_ratio: f64,
}

fn sweep_cell(base: &RunConfig, trace: &Path, alpha: f64, window_frames: usize) -> Result<SweepMetrics, ReplayError> {
    let config = RunConfig {
        alpha,
        window_frames,
        ..base.clone()
    };
    config.validate()?;
    let trace = parse_trace(trace)?;
    let scorer = config.scorer.open(config.context_budget)?;
    let outcome = run_session::<f64>(&trace, scorer.as_ref(), &config)?;
    let report = build_report(&trace, &outcome, &config)?;
    Ok(SweepMetrics {
        responses: report.responses,
        tim_diff: report.tim_diff,
        tim_redun: report.tim_redun,
        tim_cover: report.tim_cover,
        tok_acc: report.tok_acc,
        recompute_ratio: report.cache.recompute_ratio,
    })
}

/// Run the `alphas x windows` grid over every trace. Rows come out
/// trace-major, then by alpha, then by window, whatever `jobs` is; a failed
/// cell is reported in its row and the sweep continues.
pub fn sweep(
    base: &RunConfig,
    alphas: &[f64],
    windows: &[usize],
    traces: &[PathBuf],
    jobs: usize,
) -> Result<Vec<SweepRow>, ReplayError> {
    if alphas.is_empty() || windows.is_empty() {
        return Err(ReplayError::Config("sweep grid is empty".into()));
    }
    if traces.is_empty() {
        return Err(ReplayError::Config("sweep needs at least one trace".into()));
    }
    let cells: Vec<(&PathBuf, f64, usize)> = traces
        .iter()
        .flat_map(|t| alphas.iter().flat_map(move |&a| windows.iter().map(move |&w| (t, a, w))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ReplayError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|&(trace, alpha, window_frames)| SweepRow {
                trace: trace.display().to_string(),
                alpha,
                window_frames,
                result: sweep_cell(base, trace, alpha, window_frames).map_err(|e| e.to_string()),
            })
            .collect()
    }))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("trace,alpha,window_frames,responses,tim_diff,tim_redun,tim_cover,tok_acc,recompute_ratio,error\n");
    for row in rows {
        let metrics = match &row.result {
            Ok(m) => format!(
                "{},{},{},{},{},{},",
                m.responses,
                m.tim_diff,
                m.tim_redun,
                m.tim_cover,
                m.tok_acc.map(|v| v.to_string()).unwrap_or_default(),
                m.recompute_ratio
            ),
            Err(e) => format!(",,,,,,{}", csv_field(e)),
        };
        writeln!(out, "{},{},{},{}", csv_field(&row.trace), row.alpha, row.window_frames, metrics)
            .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{scene_stream, SceneStreamConfig};

    fn config() -> RunConfig {
        RunConfig::new(ScorerSpec::Reference("unused".into()))
    }

    #[test]
    fn defaults() {
        let c = config();
        assert_eq!(
            (c.alpha, c.window_frames, c.pool_size, c.tokens_per_frame, c.fps, c.context_budget),
            (1.03, 40, 1, 16, 3.0, 8192)
        );
        assert!(c.validate().is_ok());
    }

    #[test]
    fn low_alpha_is_a_config_error() {
        let c = RunConfig { alpha: 0.5, ..config() };
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn scorer_spec_parsing() {
        assert_eq!(
            "reference:a/b.json".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Reference("a/b.json".into())
        );
        assert_eq!(
            "bridge:tcp:127.0.0.1:9".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Bridge(BridgeEndpoint::Tcp("127.0.0.1:9".into()))
        );
        assert!("model:x".parse::<ScorerSpec>().is_err());
        let spec = "bridge:stdio:python3 -m bridge".parse::<ScorerSpec>().unwrap();
        assert_eq!(spec.to_string(), "bridge:stdio:python3 -m bridge");
    }

    #[test]
    fn two_scene_session_hits_both_onsets() {
        let s = scene_stream(&SceneStreamConfig::default());
        let scorer = TableScorer::from_scenario(&s.scenario).unwrap();
        let out = run_session::<f64>(&s.trace, &scorer, &config()).unwrap();
        assert_eq!(out.responses.timestamps(), vec![0.0, 2.0]);
        let report = build_report(&s.trace, &out, &config()).unwrap();
        assert_eq!(report.tim_cover, 1.0);
        assert_eq!(report.tim_diff, 0.0);
        assert_eq!(report.tim_redun, 0.0);
        assert_eq!(report.tok_acc, Some(1.0));
        assert_eq!(report.judge.semcor_mean, Some(10.0));
    }

    #[test]
    fn tiny_budget_forces_pruning() {
        let s = scene_stream(&SceneStreamConfig {
            scene_frames: vec![90, 90],
            tokens_per_frame: 4,
            variants: 8,
            ..SceneStreamConfig::default()
        });
        let scorer = TableScorer::from_scenario(&s.scenario).unwrap();
        let c = RunConfig {
            tokens_per_frame: 4,
            context_budget: 600,
            ..config()
        };
        let out = run_session::<f64>(&s.trace, &scorer, &c).unwrap();
        assert!(out.events.iter().any(|e| matches!(e, SessionEvent::Prune { .. })));
        assert_eq!(out.responses.len(), 2);
    }

    #[test]
    fn empty_grid_rejected() {
        let err = sweep(&config(), &[], &[40], &["t".into()], 1).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sweep_records_failures_in_row() {
        let rows = sweep(&config(), &[1.0, 1.1], &[40], &["/nonexistent/trace.ndjson".into()], 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.result.is_err()));
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
    }
}
