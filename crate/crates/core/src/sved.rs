//! Streaming verification decoding: the response-silence gate.
//!
//! For every incoming frame the session appends the frame to the context
//! and, if a caption is held, re-scores that caption as if it followed the
//! new frame. When the caption's perplexity exceeds `alpha` times the
//! perplexity it had when it was decoded, a new caption is generated and
//! emitted; otherwise the held caption is moved behind the frame and the
//! model stays silent.
//!
//! The session also keeps the per-frame perplexity records used by
//! peak-end pruning and, optionally, a [`StreamingCache`] ledger that lets
//! the scorer resume from cached prefix states.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::cache::{CacheError, CacheStats, StreamingCache};
use crate::num::Real;
use crate::peak_end::{self, MemoryRecord, PeakEndConfig};
use crate::scam::{build_scam_mask, AttentionMask, SequenceLayout, Span};
use crate::scorer::{ContextView, ScoreResult, ScorerError, TokenScorer};
use crate::stream_model::{
    Block, BlockId, BlockKind, CaptionBlock, ContextBuffer, ContextError, FrameBlock, TokenId,
    TIME_TOLERANCE_S,
};

/// Which attention mask the engine hands to scorers at inference time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum InferenceMask {
    #[default]
    Causal,
    /// Build the streaming causal mask over the live context. Scorers that
    /// ignore masks behave identically under both settings.
    Scam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateConfig<R> {
    pub alpha: R,
    pub tokens_per_frame: usize,
    pub context_budget: usize,
    pub kv_cache: bool,
    pub inference_mask: InferenceMask,
}

impl<R: Real> Default for GateConfig<R> {
    fn default() -> Self {
        Self {
            alpha: R::of(1.03),
            tokens_per_frame: 16,
            context_budget: 8192,
            kv_cache: true,
            inference_mask: InferenceMask::Causal,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("alpha must be >= 1, got {0}")]
    InvalidAlpha(f64),
    #[error("frame {frame_index}: expected {expected} tokens, got {got}")]
    FrameShape {
        frame_index: u64,
        expected: usize,
        got: usize,
    },
    #[error("frame {frame_index}: timestamp {next} does not follow {prev}")]
    NonMonotone { frame_index: u64, prev: f64, next: f64 },
    #[error("frame {frame_index}: scorer failed: {source}")]
    Scorer {
        frame_index: u64,
        #[source]
        source: ScorerError,
    },
    #[error("frame {frame_index}: context budget exceeded ({needed} > {budget} tokens); prune and retry")]
    BudgetExceeded {
        frame_index: u64,
        needed: usize,
        budget: usize,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl From<CacheError> for GateError {
    fn from(e: CacheError) -> Self {
        GateError::Invariant(e.to_string())
    }
}

impl From<ContextError> for GateError {
    fn from(e: ContextError) -> Self {
        GateError::Invariant(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    #[serde(rename = "initial")]
    InitialDecode,
    Redecode,
    Silent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<R> {
    pub kind: DecisionKind,
    pub timestamp_s: f64,
    pub frame_index: u64,
    /// Caption tokens, present unless the gate stayed silent.
    pub emitted: Option<Vec<TokenId>>,
    pub verify_ppl: Option<R>,
    pub threshold: Option<R>,
    /// Reference perplexity after this decision.
    pub ref_ppl: Option<R>,
}

/// One line of the session event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SessionEvent {
    Gate {
        t: f64,
        frame_index: u64,
        decision: DecisionKind,
        verify_ppl: Option<f64>,
        threshold: Option<f64>,
        ref_ppl: Option<f64>,
    },
    Prune {
        t: f64,
        pruned_frames: Vec<u64>,
        survivor_tokens: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseEntry {
    pub t: f64,
    pub frame_index: u64,
    pub kind: DecisionKind,
    pub tokens: Vec<TokenId>,
}

/// Emitted captions with their trigger timestamps, in emission order.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ResponseLog {
    pub responses: Vec<ResponseEntry>,
}

impl ResponseLog {
    pub fn timestamps(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.t).collect()
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub deleted: Vec<BlockId>,
    pub pruned_frames: Vec<u64>,
    pub survivor_tokens: usize,
}

/// Gate state: the context, the held caption and its reference perplexity.
#[derive(Debug, Clone, PartialEq)]
pub struct SvedState<R> {
    ctx: ContextBuffer,
    dec: Option<(BlockId, CaptionBlock)>,
    ref_ppl: Option<R>,
    ref_time_s: f64,
    alpha: R,
}

impl<R: Real> SvedState<R> {
    pub fn ctx(&self) -> &ContextBuffer {
        &self.ctx
    }

    pub fn dec(&self) -> Option<&CaptionBlock> {
        self.dec.as_ref().map(|(_, c)| c)
    }

    pub fn dec_block(&self) -> Option<BlockId> {
        self.dec.as_ref().map(|(id, _)| *id)
    }

    pub fn ref_ppl(&self) -> Option<R> {
        self.ref_ppl
    }

    pub fn ref_time_s(&self) -> f64 {
        self.ref_time_s
    }

    pub fn alpha(&self) -> R {
        self.alpha
    }
}

/// A single-threaded streaming session.
#[derive(Debug, Clone)]
pub struct SvedSession<R> {
    config: GateConfig<R>,
    state: SvedState<R>,
    cache: Option<StreamingCache>,
    stats: CacheStats,
    records: Vec<MemoryRecord<R>>,
    events: Vec<SessionEvent>,
    responses: ResponseLog,
    next_block: u64,
    epoch: u64,
    last_frame_s: Option<f64>,
}

impl<R: Real> SvedSession<R> {
    pub fn new(config: GateConfig<R>) -> Result<Self, GateError> {
        if !(config.alpha >= R::one()) {
            return Err(GateError::InvalidAlpha(config.alpha.to_f64_lossy()));
        }
        Ok(Self {
            state: SvedState {
                ctx: ContextBuffer::new(config.context_budget),
                dec: None,
                ref_ppl: None,
                ref_time_s: 0.0,
                alpha: config.alpha,
            },
            cache: config.kv_cache.then(StreamingCache::new),
            stats: CacheStats::default(),
            records: Vec::new(),
            events: Vec::new(),
            responses: ResponseLog::default(),
            next_block: 0,
            epoch: 0,
            last_frame_s: None,
            config,
        })
    }

    pub fn config(&self) -> &GateConfig<R> {
        &self.config
    }

    pub fn state(&self) -> &SvedState<R> {
        &self.state
    }

    pub fn cache(&self) -> Option<&StreamingCache> {
        self.cache.as_ref()
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.stats
    }

    pub fn records(&self) -> &[MemoryRecord<R>] {
        &self.records
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn responses(&self) -> &ResponseLog {
        &self.responses
    }

    /// Change the gate's scaling factor for subsequent frames.
    pub fn set_alpha(&mut self, alpha: R) -> Result<(), GateError> {
        if !(alpha >= R::one()) {
            return Err(GateError::InvalidAlpha(alpha.to_f64_lossy()));
        }
        self.config.alpha = alpha;
        self.state.alpha = alpha;
        Ok(())
    }

    /// Consume the session, returning every emitted caption.
    pub fn finalize(self) -> ResponseLog {
        self.responses
    }

    fn new_block(&mut self, kind: BlockKind) -> Block {
        let id = BlockId(self.next_block);
        self.next_block += 1;
        Block { id, kind }
    }

    /// Process one frame. On [`GateError::BudgetExceeded`] the session is
    /// left untouched so the caller can prune and retry.
    pub fn ingest_frame<S>(&mut self, frame: &FrameBlock, scorer: &S) -> Result<GateDecision<R>, GateError>
    where
        S: TokenScorer<R> + ?Sized,
    {
        let fi = frame.frame_index;
        if frame.tokens.len() != self.config.tokens_per_frame {
            return Err(GateError::FrameShape {
                frame_index: fi,
                expected: self.config.tokens_per_frame,
                got: frame.tokens.len(),
            });
        }
        if let Some(prev) = self.last_frame_s {
            if frame.timestamp_s - prev <= TIME_TOLERANCE_S {
                return Err(GateError::NonMonotone {
                    frame_index: fi,
                    prev,
                    next: frame.timestamp_s,
                });
            }
        }
        let max_gen = scorer.config().max_generation_len;
        let needed = self.state.ctx.token_len() + frame.tokens.len() + max_gen;
        if needed > self.config.context_budget {
            return Err(GateError::BudgetExceeded {
                frame_index: fi,
                needed,
                budget: self.config.context_budget,
            });
        }
        // Roll back on failure so a scorer error leaves the session intact.
        let checkpoint = (
            self.state.clone(),
            self.cache.clone(),
            self.stats,
            self.records.clone(),
            self.next_block,
            self.epoch,
        );
        let decision = match self.step(frame, scorer) {
            Ok(d) => d,
            Err(e) => {
                (self.state, self.cache, self.stats, self.records, self.next_block, self.epoch) = checkpoint;
                return Err(e);
            }
        };
        let t = frame.timestamp_s;
        self.last_frame_s = Some(t);
        self.events.push(SessionEvent::Gate {
            t,
            frame_index: fi,
            decision: decision.kind,
            verify_ppl: decision.verify_ppl.map(Real::to_f64_lossy),
            threshold: decision.threshold.map(Real::to_f64_lossy),
            ref_ppl: self.state.ref_ppl.map(Real::to_f64_lossy),
        });
        if let Some(tokens) = &decision.emitted {
            self.responses.responses.push(ResponseEntry {
                t,
                frame_index: fi,
                kind: decision.kind,
                tokens: tokens.clone(),
            });
        }
        Ok(decision)
    }

    fn step<S>(&mut self, frame: &FrameBlock, scorer: &S) -> Result<GateDecision<R>, GateError>
    where
        S: TokenScorer<R> + ?Sized,
    {
        let fi = frame.frame_index;
        let scorer_err = |source| GateError::Scorer {
            frame_index: fi,
            source,
        };
        let frame_block = self.new_block(BlockKind::Frame(frame.clone()));
        let frame_id = frame_block.id;
        self.state.ctx.push(frame_block)?;
        if let Some(cache) = self.cache.as_mut() {
            cache.append(frame_id, frame.tokens.len(), None)?;
        }

        let t = frame.timestamp_s;
        let decision = match self.state.dec.clone() {
            None => match self.decode(t, scorer).map_err(scorer_err)? {
                Some((tokens, ppl)) => {
                    self.record_frame(frame, frame_id, self.epoch, ppl);
                    GateDecision {
                        kind: DecisionKind::InitialDecode,
                        timestamp_s: t,
                        frame_index: fi,
                        emitted: Some(tokens),
                        verify_ppl: None,
                        threshold: None,
                        ref_ppl: Some(ppl),
                    }
                }
                None => {
                    log::warn!("frame {fi}: initial decode produced an empty caption; staying silent");
                    self.record_frame(frame, frame_id, self.epoch, R::one());
                    self.silent(t, fi, None, None)
                }
            },
            Some((_, dec)) => {
                // Verify the held caption placed right after the new frame.
                self.swap_tail()?;
                let n = self.state.ctx.len();
                let scores = self.score_tail(n - 1, &dec.tokens, scorer).map_err(scorer_err)?;
                let verify = scores.perplexity().map_err(scorer_err)?;
                let ref_ppl = self
                    .state
                    .ref_ppl
                    .ok_or_else(|| GateError::Invariant("caption held without reference perplexity".into()))?;
                let threshold = self.state.alpha * ref_ppl;
                if verify > threshold {
                    self.swap_tail()?;
                    let finished_epoch = self.epoch;
                    match self.decode(t, scorer).map_err(scorer_err)? {
                        Some((tokens, ppl)) => {
                            self.record_frame(frame, frame_id, self.epoch, ppl);
                            peak_end::protect_keyframe(&mut self.records, finished_epoch);
                            if let Some(cache) = self.cache.as_mut() {
                                // Everything before the triggering frame is a
                                // finished dialogue turn.
                                let n = self.state.ctx.len();
                                cache.promote_prefix(n - 2);
                            }
                            GateDecision {
                                kind: DecisionKind::Redecode,
                                timestamp_s: t,
                                frame_index: fi,
                                emitted: Some(tokens),
                                verify_ppl: Some(verify),
                                threshold: Some(threshold),
                                ref_ppl: Some(ppl),
                            }
                        }
                        None => {
                            log::warn!("frame {fi}: redecode produced an empty caption; staying silent");
                            self.swap_tail()?;
                            self.record_frame(frame, frame_id, self.epoch, verify);
                            self.silent(t, fi, Some(verify), Some(threshold))
                        }
                    }
                } else {
                    self.record_frame(frame, frame_id, self.epoch, verify);
                    self.silent(t, fi, Some(verify), Some(threshold))
                }
            }
        };
        Ok(decision)
    }

    fn silent(&self, t: f64, fi: u64, verify: Option<R>, threshold: Option<R>) -> GateDecision<R> {
        GateDecision {
            kind: DecisionKind::Silent,
            timestamp_s: t,
            frame_index: fi,
            emitted: None,
            verify_ppl: verify,
            threshold,
            ref_ppl: self.state.ref_ppl,
        }
    }

    fn record_frame(&mut self, frame: &FrameBlock, id: BlockId, epoch: u64, ppl: R) {
        self.records.push(MemoryRecord {
            block_id: id,
            frame_index: frame.frame_index,
            timestamp_s: frame.timestamp_s,
            clip_id: epoch,
            frame_ppl: ppl,
            protected: false,
        });
    }

    fn swap_tail(&mut self) -> Result<(), GateError> {
        self.state.ctx.swap_tail()?;
        if let Some(cache) = self.cache.as_mut() {
            cache.swap_tail()?;
        }
        Ok(())
    }

    /// Generate from the full context; append and adopt the caption when
    /// it is non-empty.
    fn decode<S>(&mut self, t: f64, scorer: &S) -> Result<Option<(Vec<TokenId>, R)>, ScorerError>
    where
        S: TokenScorer<R> + ?Sized,
    {
        let n = self.state.ctx.len();
        let tokens = self.state.ctx.token_ids();
        let mask = self.inference_mask(n, 0);
        let (prefix, served) = self.prepare_prefix(n, &tokens, scorer);
        let view = ContextView {
            tokens: &tokens,
            prefix,
            mask: mask.as_ref(),
        };
        let max_gen = scorer.config().max_generation_len;
        let (generated, scores) = scorer.generate_with(view, max_gen)?;
        let recomputed = self.account(n, &tokens, served, scorer);
        self.stats.record(recomputed + generated.len(), served);
        if generated.is_empty() {
            return Ok(None);
        }
        let ppl = scores.perplexity()?;
        self.epoch += 1;
        let caption = CaptionBlock {
            tokens: generated.clone(),
            emitted_at_s: t,
            clip_hint: Some(self.epoch),
        };
        let block = self.new_block(BlockKind::Caption(caption.clone()));
        let id = block.id;
        self.state
            .ctx
            .push(block)
            .map_err(|e| ScorerError::Protocol(format!("generated caption overflowed the context: {e}")))?;
        if let Some(cache) = self.cache.as_mut() {
            let prev = cache.entries().last().and_then(|e| e.payload);
            let payload = scorer.extend_state(prev, &generated);
            cache
                .append(id, generated.len(), Some(payload))
                .expect("fresh block id");
        }
        self.state.dec = Some((id, caption));
        self.state.ref_ppl = Some(ppl);
        self.state.ref_time_s = t;
        Ok(Some((generated, ppl)))
    }

    /// Score the tokens of block `n_ctx` (the held caption) against the
    /// first `n_ctx` blocks.
    fn score_tail<S>(&mut self, n_ctx: usize, cont: &[TokenId], scorer: &S) -> Result<ScoreResult<R>, ScorerError>
    where
        S: TokenScorer<R> + ?Sized,
    {
        let tokens = self.state.ctx.prefix_ids(n_ctx);
        let mask = self.inference_mask(n_ctx, cont.len());
        let (prefix, served) = self.prepare_prefix(n_ctx, &tokens, scorer);
        let view = ContextView {
            tokens: &tokens,
            prefix,
            mask: mask.as_ref(),
        };
        let scores = scorer.score_with(view, cont)?;
        let recomputed = self.account(n_ctx, &tokens, served, scorer);
        self.stats.record(recomputed + cont.len(), served);
        if let Some(cache) = self.cache.as_mut() {
            let prev = if n_ctx == 0 { None } else { cache.entries()[n_ctx - 1].payload };
            cache.refresh(n_ctx, scorer.extend_state(prev, cont));
        }
        Ok(scores)
    }

    /// Fresh cached prefix usable for a call over the first `n_blocks`.
    fn prepare_prefix<S>(&self, n_blocks: usize, _tokens: &[TokenId], _scorer: &S) -> (Option<crate::scorer::PrefixState>, usize)
    where
        S: TokenScorer<R> + ?Sized,
    {
        match &self.cache {
            Some(cache) => {
                let (_, prefix) = cache.fresh_prefix(n_blocks);
                (prefix, prefix.map_or(0, |p| p.len))
            }
            None => (None, 0),
        }
    }

    /// Bring cache payloads for the first `n_blocks` up to date and return
    /// how many context tokens the scorer had to process.
    fn account<S>(&mut self, n_blocks: usize, tokens: &[TokenId], served: usize, scorer: &S) -> usize
    where
        S: TokenScorer<R> + ?Sized,
    {
        match self.cache.as_mut() {
            Some(cache) => {
                let recomputed = cache.refresh_prefix(tokens, n_blocks, |prev, t| scorer.extend_state(prev, t));
                debug_assert_eq!(recomputed + served, tokens.len());
                recomputed
            }
            None => tokens.len(),
        }
    }

    fn inference_mask(&self, n_blocks: usize, cont_len: usize) -> Option<AttentionMask> {
        if self.config.inference_mask != InferenceMask::Scam {
            return None;
        }
        let mut spans = Vec::new();
        let mut pos = 0;
        let mut clip = 0;
        for block in &self.state.ctx.blocks()[..n_blocks] {
            let len = block.len();
            match &block.kind {
                BlockKind::Frame(_) => {
                    let epoch = self
                        .records
                        .iter()
                        .find(|r| r.block_id == block.id)
                        .map_or(self.epoch, |r| r.clip_id);
                    clip = clip.max(epoch);
                    spans.push(Span::frame(clip, pos..pos + len));
                }
                BlockKind::Caption(c) => {
                    clip = clip.max(c.clip_hint.unwrap_or(clip));
                    spans.push(Span::caption(clip, pos..pos + len, true));
                }
            }
            pos += len;
        }
        if cont_len > 0 {
            spans.push(Span::caption(clip.max(self.epoch), pos..pos + cont_len, true));
        }
        // Inference contexts hold one caption per decode epoch, so every
        // caption is final and the layout is always valid.
        SequenceLayout::new(spans).ok().map(|l| build_scam_mask(&l))
    }

    /// Run one peak-end pruning pass over the frames in the context.
    pub fn prune_memory<G: Rng + ?Sized>(
        &mut self,
        config: &PeakEndConfig<R>,
        rng: &mut G,
    ) -> Result<PruneReport, GateError> {
        let now = self.last_frame_s.unwrap_or(0.0);
        let outcome = peak_end::prune(&self.state.ctx, &self.records, now, config, rng);
        if let Some(cache) = self.cache.as_mut() {
            cache.prune(&outcome.deleted)?;
        }
        let pruned_frames: Vec<u64> = self
            .records
            .iter()
            .filter(|r| outcome.deleted.contains(&r.block_id))
            .map(|r| r.frame_index)
            .collect();
        self.records.retain(|r| !outcome.deleted.contains(&r.block_id));
        self.state.ctx = outcome.ctx;
        let survivor_tokens = self.state.ctx.token_len();
        self.events.push(SessionEvent::Prune {
            t: now,
            pruned_frames: pruned_frames.clone(),
            survivor_tokens,
        });
        Ok(PruneReport {
            deleted: outcome.deleted,
            pruned_frames,
            survivor_tokens,
        })
    }
}
