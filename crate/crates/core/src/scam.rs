//! Interleaved frame-caption training sequences and the streaming causal
//! attention mask.
//!
//! A sequence is a run of turns, one per frame: the frame's tokens followed
//! by a caption of the frame's clip. Every turn of a clip carries a caption
//! with the same meaning, so the mask hides all non-final captions from
//! later positions. A position in clip `k` may attend to:
//!
//! - every earlier frame token,
//! - the final caption of every earlier clip,
//! - earlier tokens of its own span.
//!
//! Everything else, including earlier captions of its own clip, is blocked.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_model::{Token, TokenId, TokenKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("empty caption pool")]
    EmptyPool,
    #[error("clip {0} has zero frames")]
    NoFrames(u64),
    #[error("clip {0} has an empty caption")]
    EmptyCaption(u64),
    #[error("clip {clip}: {captions} captions for {frames} frames")]
    CaptionCount { clip: u64, frames: usize, captions: usize },
    #[error("span {index} does not start at position {expected}")]
    NotContiguous { index: usize, expected: usize },
    #[error("span {0} is empty")]
    EmptySpan(usize),
    #[error("span {index} goes back from clip {prev} to clip {clip}")]
    ClipOrder { index: usize, prev: u64, clip: u64 },
    #[error("clip {0}: final caption must be its last caption span")]
    FinalNotLast(u64),
}

/// Uniformly draw one caption from a paraphrase pool.
pub fn sample_caption<'a, T, G: Rng + ?Sized>(pool: &'a [T], rng: &mut G) -> Result<&'a T, LayoutError> {
    match pool.len() {
        0 => Err(LayoutError::EmptyPool),
        1 => Ok(&pool[0]),
        n => Ok(&pool[rng.gen_range(0..n)]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanKind {
    Frame,
    Caption,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub kind: SpanKind,
    pub clip_id: u64,
    pub is_clip_final_caption: bool,
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn range(&self) -> Range<usize> {
        self.begin..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.begin
    }

    pub fn frame(clip_id: u64, range: Range<usize>) -> Self {
        Self {
            kind: SpanKind::Frame,
            clip_id,
            is_clip_final_caption: false,
            begin: range.start,
            end: range.end,
        }
    }

    pub fn caption(clip_id: u64, range: Range<usize>, is_final: bool) -> Self {
        Self {
            kind: SpanKind::Caption,
            clip_id,
            is_clip_final_caption: is_final,
            begin: range.start,
            end: range.end,
        }
    }
}

/// Ordered, contiguous span table covering `[0, total_len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceLayout {
    spans: Vec<Span>,
}

impl SequenceLayout {
    /// Validate a span table. Clips appear in non-decreasing order, spans
    /// are non-empty and contiguous, and a flagged final caption is the last
    /// caption span of its clip. A clip may lack captions entirely (a clip
    /// still in progress at inference time).
    pub fn new(spans: Vec<Span>) -> Result<Self, LayoutError> {
        let mut pos = 0;
        for (index, s) in spans.iter().enumerate() {
            if s.begin != pos {
                return Err(LayoutError::NotContiguous {
                    index,
                    expected: pos,
                });
            }
            if s.is_empty() {
                return Err(LayoutError::EmptySpan(index));
            }
            if index > 0 && spans[index - 1].clip_id > s.clip_id {
                return Err(LayoutError::ClipOrder {
                    index,
                    prev: spans[index - 1].clip_id,
                    clip: s.clip_id,
                });
            }
            pos = s.end;
        }
        for (i, s) in spans.iter().enumerate() {
            if s.is_clip_final_caption {
                let later_caption = spans[i + 1..]
                    .iter()
                    .take_while(|t| t.clip_id == s.clip_id)
                    .any(|t| t.kind == SpanKind::Caption);
                if s.kind != SpanKind::Caption || later_caption {
                    return Err(LayoutError::FinalNotLast(s.clip_id));
                }
            }
        }
        Ok(Self { spans })
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn total_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    /// Index of the span containing `pos`.
    pub fn span_at(&self, pos: usize) -> Option<usize> {
        self.spans
            .binary_search_by(|s| {
                if pos < s.begin {
                    std::cmp::Ordering::Greater
                } else if pos >= s.end {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .ok()
    }
}

/// One clip's input to sequence construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTurns {
    pub clip_id: u64,
    pub frames: Vec<Vec<TokenId>>,
    /// One caption for every frame turn, or a single caption repeated.
    pub captions: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub tokens: Vec<Token>,
    pub layout: SequenceLayout,
}

impl InterleavedSequence {
    pub fn token_ids(&self) -> Vec<TokenId> {
        self.tokens.iter().map(|t| t.id).collect()
    }
}

/// Lay out `frame, caption, frame, caption, ...` per clip. The caption
/// after each clip's last frame is flagged as the clip-final caption.
pub fn build_interleaved_sequence(clips: &[ClipTurns]) -> Result<InterleavedSequence, LayoutError> {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for clip in clips {
        let n = clip.frames.len();
        if n == 0 {
            return Err(LayoutError::NoFrames(clip.clip_id));
        }
        if clip.captions.len() != 1 && clip.captions.len() != n {
            return Err(LayoutError::CaptionCount {
                clip: clip.clip_id,
                frames: n,
                captions: clip.captions.len(),
            });
        }
        for (i, frame) in clip.frames.iter().enumerate() {
            let caption = &clip.captions[if clip.captions.len() == 1 { 0 } else { i }];
            if caption.is_empty() {
                return Err(LayoutError::EmptyCaption(clip.clip_id));
            }
            let start = tokens.len();
            tokens.extend(frame.iter().map(|&id| Token {
                id,
                kind: TokenKind::FrameTok,
            }));
            spans.push(Span::frame(clip.clip_id, start..tokens.len()));
            let start = tokens.len();
            tokens.extend(caption.iter().map(|&id| Token {
                id,
                kind: TokenKind::TextTok,
            }));
            spans.push(Span::caption(clip.clip_id, start..tokens.len(), i + 1 == n));
        }
    }
    Ok(InterleavedSequence {
        tokens,
        layout: SequenceLayout::new(spans)?,
    })
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Boolean `n x n` matrix stored as bit-packed rows. `allowed(q, k)` means
/// query position `q` may attend to key position `k`.
#[derive(Clone, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for AttentionMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "AttentionMask({}x{})", self.n, self.n)?;
        if self.n <= 64 {
            for q in 0..self.n {
                let row: String = (0..self.n)
                    .map(|k| if self.allowed(q, k) { '1' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

impl AttentionMask {
    pub fn empty(n: usize) -> Self {
        let words_per_row = n.div_ceil(64);
        Self {
            n,
            words_per_row,
            bits: vec![0; words_per_row * n],
        }
    }

    /// Plain lower-triangular causal mask.
    pub fn causal(n: usize) -> Self {
        let mut m = Self::empty(n);
        for q in 0..n {
            m.set_range(q, 0..q + 1);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        assert!(q < self.n && k < self.n, "mask index out of range");
        self.bits[q * self.words_per_row + k / 64] >> (k % 64) & 1 == 1
    }

    pub fn set(&mut self, q: usize, k: usize, value: bool) {
        let word = &mut self.bits[q * self.words_per_row + k / 64];
        if value {
            *word |= 1 << (k % 64);
        } else {
            *word &= !(1 << (k % 64));
        }
    }

    fn row_mut(&mut self, q: usize) -> &mut [u64] {
        let w = self.words_per_row;
        &mut self.bits[q * w..(q + 1) * w]
    }

    fn set_range(&mut self, q: usize, keys: Range<usize>) {
        let row = self.row_mut(q);
        for k in keys {
            row[k / 64] |= 1 << (k % 64);
        }
    }

    /// Row-major bits, `q * n + k` numbering, least significant bit first
    /// within each byte; the final byte is zero-padded.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        pack_bits((0..self.n * self.n).map(|i| self.allowed(i / self.n, i % self.n)))
    }

    pub fn from_packed_bytes(n: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != (n * n).div_ceil(8) {
            return None;
        }
        let mut m = Self::empty(n);
        for i in 0..n * n {
            if bytes[i / 8] >> (i % 8) & 1 == 1 {
                m.set(i / n, i % n, true);
            }
        }
        Some(m)
    }
}

/// Pack booleans LSB-first into bytes.
pub fn pack_bits(bits: impl IntoIterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.into_iter().enumerate() {
        if i % 8 == 0 {
            out.push(0u8);
        }
        if b {
            *out.last_mut().expect("pushed above") |= 1 << (i % 8);
        }
    }
    out
}

pub fn build_scam_mask(layout: &SequenceLayout) -> AttentionMask {
    let n = layout.total_len();
    let mut mask = AttentionMask::empty(n);
    let spans = layout.spans();
    // Keys visible to every query of span i from spans strictly before it.
    let words = n.div_ceil(64);
    let mut visible_before = vec![0u64; words];
    for (i, span) in spans.iter().enumerate() {
        if i > 0 {
            let prev = &spans[i - 1];
            let prev_visible = match prev.kind {
                SpanKind::Frame => true,
                SpanKind::Caption => prev.is_clip_final_caption && prev.clip_id < span.clip_id,
            };
            if prev_visible {
                for k in prev.range() {
                    visible_before[k / 64] |= 1 << (k % 64);
                }
            }
            // Final captions of the previous clip become visible only once
            // the query has moved on to a later clip; earlier non-final
            // captions never do.
            if prev.clip_id < span.clip_id {
                for s in spans[..i - 1].iter().rev().take_while(|s| s.clip_id == prev.clip_id) {
                    if s.kind == SpanKind::Caption && s.is_clip_final_caption {
                        for k in s.range() {
                            visible_before[k / 64] |= 1 << (k % 64);
                        }
                    }
                }
            }
        }
        for q in span.range() {
            let row = mask.row_mut(q);
            row.copy_from_slice(&visible_before);
            for k in span.begin..=q {
                row[k / 64] |= 1 << (k % 64);
            }
        }
    }
    mask
}

/// Positions where the training loss applies: caption tokens only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask(pub Vec<bool>);

pub fn build_loss_mask(layout: &SequenceLayout) -> LossMask {
    let mut out = vec![false; layout.total_len()];
    for s in layout.spans() {
        if s.kind == SpanKind::Caption {
            out[s.range()].iter_mut().for_each(|b| *b = true);
        }
    }
    LossMask(out)
}
