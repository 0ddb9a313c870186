//! Core domain types shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance, in seconds, for every timestamp comparison.
pub const TIME_TOLERANCE_S: f64 = 1e-6;

/// Raw token id as seen by a scorer.
pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    FrameTok,
    TextTok,
}

/// A token id tagged with the modality it came from. Frame and text id
/// spaces may overlap; `kind` disambiguates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub id: TokenId,
    pub kind: TokenKind,
}

/// One pre-tokenized video frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBlock {
    pub timestamp_s: f64,
    pub frame_index: u64,
    pub tokens: Vec<TokenId>,
}

impl FrameBlock {
    pub fn new(timestamp_s: f64, frame_index: u64, tokens: Vec<TokenId>) -> Self {
        Self {
            timestamp_s,
            frame_index,
            tokens,
        }
    }
}

/// A generated (or ground-truth) caption placed in the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionBlock {
    pub tokens: Vec<TokenId>,
    /// Timestamp of the frame that triggered this caption.
    pub emitted_at_s: f64,
    pub clip_hint: Option<u64>,
}

/// Stable identity of a block for the lifetime of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    Frame(FrameBlock),
    Caption(CaptionBlock),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: BlockId,
    pub kind: BlockKind,
}

impl Block {
    pub fn tokens(&self) -> &[TokenId] {
        match &self.kind {
            BlockKind::Frame(f) => &f.tokens,
            BlockKind::Caption(c) => &c.tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens().len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens().is_empty()
    }

    pub fn token_kind(&self) -> TokenKind {
        match self.kind {
            BlockKind::Frame(_) => TokenKind::FrameTok,
            BlockKind::Caption(_) => TokenKind::TextTok,
        }
    }

    pub fn as_frame(&self) -> Option<&FrameBlock> {
        match &self.kind {
            BlockKind::Frame(f) => Some(f),
            BlockKind::Caption(_) => None,
        }
    }

    pub fn as_caption(&self) -> Option<&CaptionBlock> {
        match &self.kind {
            BlockKind::Caption(c) => Some(c),
            BlockKind::Frame(_) => None,
        }
    }

    /// Timestamp the block is anchored at (frame time or emission time).
    pub fn timestamp_s(&self) -> f64 {
        match &self.kind {
            BlockKind::Frame(f) => f.timestamp_s,
            BlockKind::Caption(c) => c.emitted_at_s,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("context budget exceeded: {needed} tokens needed, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("cannot swap tail of a context with {0} block(s)")]
    SwapTooShort(usize),
    #[error("unknown block {0:?}")]
    UnknownBlock(BlockId),
}

/// The accumulated multimodal context: an ordered list of frame and
/// caption blocks. Block order is the positional order used for scoring
/// and caching.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBuffer {
    blocks: Vec<Block>,
    token_len: usize,
    budget: usize,
}

impl ContextBuffer {
    pub fn new(budget: usize) -> Self {
        Self {
            blocks: Vec::new(),
            token_len: 0,
            budget,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn token_len(&self) -> usize {
        self.token_len
    }

    pub fn last(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Whether `extra` more tokens fit without exceeding the budget.
    pub fn fits(&self, extra: usize) -> bool {
        self.token_len + extra <= self.budget
    }

    pub fn push(&mut self, block: Block) -> Result<(), ContextError> {
        let needed = self.token_len + block.len();
        if needed > self.budget {
            return Err(ContextError::BudgetExceeded {
                needed,
                budget: self.budget,
            });
        }
        self.token_len = needed;
        self.blocks.push(block);
        Ok(())
    }

    /// Exchange the final two blocks.
    pub fn swap_tail(&mut self) -> Result<(), ContextError> {
        let n = self.blocks.len();
        if n < 2 {
            return Err(ContextError::SwapTooShort(n));
        }
        self.blocks.swap(n - 2, n - 1);
        Ok(())
    }

    /// Remove the given blocks, preserving the relative order of the rest.
    pub fn remove(&mut self, ids: &[BlockId]) -> Result<(), ContextError> {
        if let Some(&missing) = ids.iter().find(|id| self.get(**id).is_none()) {
            return Err(ContextError::UnknownBlock(missing));
        }
        self.blocks.retain(|b| !ids.contains(&b.id));
        self.token_len = self.blocks.iter().map(Block::len).sum();
        Ok(())
    }

    /// Flattened token ids of the first `n_blocks` blocks.
    pub fn prefix_ids(&self, n_blocks: usize) -> Vec<TokenId> {
        self.blocks[..n_blocks]
            .iter()
            .flat_map(|b| b.tokens().iter().copied())
            .collect()
    }

    pub fn token_ids(&self) -> Vec<TokenId> {
        self.prefix_ids(self.blocks.len())
    }

    pub fn tokens(&self) -> impl Iterator<Item = Token> + '_ {
        self.blocks.iter().flat_map(|b| {
            let kind = b.token_kind();
            b.tokens().iter().map(move |&id| Token { id, kind })
        })
    }
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// A ground-truth scene: the interval `[t_start, t_end)` sharing one caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticClip {
    pub clip_id: u64,
    pub t_start: f64,
    pub t_end: f64,
    /// Reference response instant used by the timing metrics.
    pub anchor_s: f64,
    pub caption_pool: Vec<String>,
    /// Tokenized paraphrase pool, when the trace supplies one.
    pub caption_tokens: Option<Vec<Vec<TokenId>>>,
}

impl SemanticClip {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Half-open membership test with the global timestamp tolerance.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start - TIME_TOLERANCE_S && t < self.t_end - TIME_TOLERANCE_S
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("clip {clip_id}: empty clip interval [{t_start}, {t_end})")]
    EmptyInterval { clip_id: u64, t_start: f64, t_end: f64 },
    #[error("clip {clip_id}: anchor {anchor} outside [{t_start}, {t_end})")]
    AnchorOutside {
        clip_id: u64,
        anchor: f64,
        t_start: f64,
        t_end: f64,
    },
    #[error("clips {first} and {second}: overlap at t={from}..{to}")]
    Overlap {
        first: u64,
        second: u64,
        from: f64,
        to: f64,
    },
    #[error("clip {0}: empty pool")]
    EmptyPool(u64),
    #[error("duplicate clip_id {0}")]
    DuplicateId(u64),
}

impl TimelineError {
    /// The clip the error should be reported against.
    pub fn clip_id(&self) -> u64 {
        match *self {
            TimelineError::EmptyInterval { clip_id, .. }
            | TimelineError::AnchorOutside { clip_id, .. } => clip_id,
            TimelineError::Overlap { second, .. } => second,
            TimelineError::EmptyPool(id) | TimelineError::DuplicateId(id) => id,
        }
    }
}

/// Check a single clip's interval and anchor.
pub fn validate_clip(clip: &SemanticClip) -> Result<(), TimelineError> {
    if clip.t_end - clip.t_start <= TIME_TOLERANCE_S {
        return Err(TimelineError::EmptyInterval {
            clip_id: clip.clip_id,
            t_start: clip.t_start,
            t_end: clip.t_end,
        });
    }
    if !clip.contains(clip.anchor_s) {
        return Err(TimelineError::AnchorOutside {
            clip_id: clip.clip_id,
            anchor: clip.anchor_s,
            t_start: clip.t_start,
            t_end: clip.t_end,
        });
    }
    Ok(())
}

/// A validated, sorted, non-overlapping list of scenes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    clips: Vec<SemanticClip>,
}

impl Timeline {
    pub fn clips(&self) -> &[SemanticClip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn into_clips(self) -> Vec<SemanticClip> {
        self.clips
    }
}

/// Sort clips by start, then verify intervals, anchors, pools, ids and
/// pairwise disjointness.
pub fn validate_timeline(mut clips: Vec<SemanticClip>) -> Result<Timeline, TimelineError> {
    clips.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    let mut seen = std::collections::HashSet::new();
    for clip in &clips {
        validate_clip(clip)?;
        if clip.caption_pool.is_empty() {
            return Err(TimelineError::EmptyPool(clip.clip_id));
        }
        if matches!(&clip.caption_tokens, Some(pool) if pool.is_empty()) {
            return Err(TimelineError::EmptyPool(clip.clip_id));
        }
        if !seen.insert(clip.clip_id) {
            return Err(TimelineError::DuplicateId(clip.clip_id));
        }
    }
    for pair in clips.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.t_end > b.t_start + TIME_TOLERANCE_S {
            return Err(TimelineError::Overlap {
                first: a.clip_id,
                second: b.clip_id,
                from: b.t_start,
                to: a.t_end.min(b.t_end),
            });
        }
    }
    Ok(Timeline { clips })
}
