//! Dual-level streaming key-value cache ledger.
//!
//! The ledger mirrors the [`ContextBuffer`] block for block. Each entry
//! records the block's flat position range and an opaque payload handle
//! supplied by the scorer; a payload is only valid while the positions of
//! every token before and inside the block are unchanged. Swaps and prunes
//! therefore invalidate the moved entries, which are recomputed on the next
//! scorer call.
//!
//! Entries start at [`CacheLevel::IntraDialogue`]; completed dialogue turns
//! are promoted to [`CacheLevel::InterDialogue`], which survives
//! [`StreamingCache::reset_intra`].

use std::fmt;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use crate::scorer::PrefixState;
use crate::stream_model::{BlockId, ContextBuffer, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CacheLevel {
    IntraDialogue,
    InterDialogue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub block_id: BlockId,
    pub start: usize,
    pub len: usize,
    /// `None` once the entry's positions changed and the state is stale.
    pub payload: Option<u64>,
    pub level: CacheLevel,
}

impl CacheEntry {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn is_fresh(&self) -> bool {
        self.payload.is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("position collision: block {0:?} is already cached")]
    PositionCollision(BlockId),
    #[error("swap needs at least 2 entries, cache has {0}")]
    SwapTooShort(usize),
    #[error("unknown block {0:?}")]
    UnknownBlock(BlockId),
    #[error("cannot prune the tail entry {0:?}")]
    PruneTail(BlockId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EntryCount { entries: usize, blocks: usize },
    BlockMismatch { index: usize, expected: BlockId, found: BlockId },
    Gap { position: usize },
    Overlap { position: usize },
    LengthMismatch { block: BlockId, entry_len: usize, block_len: usize },
    Stale { block: BlockId },
    ChecksumMismatch { block: BlockId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EntryCount { entries, blocks } => {
                write!(f, "{entries} cache entries for {blocks} context blocks")
            }
            Violation::BlockMismatch {
                index,
                expected,
                found,
            } => write!(f, "entry {index} is {found:?}, context has {expected:?}"),
            Violation::Gap { position } => write!(f, "gap at position {position}"),
            Violation::Overlap { position } => write!(f, "overlap at position {position}"),
            Violation::LengthMismatch {
                block,
                entry_len,
                block_len,
            } => write!(f, "{block:?}: entry covers {entry_len} tokens, block has {block_len}"),
            Violation::Stale { block } => write!(f, "{block:?}: stale payload"),
            Violation::ChecksumMismatch { block } => {
                write!(f, "{block:?}: payload differs from recomputation")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Token accounting for scorer calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    /// Tokens the scorer had to process (recomputed context + continuations).
    pub tokens_scored_total: u64,
    /// Context tokens whose cached state was reused.
    pub tokens_served_from_cache: u64,
}

impl CacheStats {
    pub fn record(&mut self, scored: usize, served: usize) {
        self.tokens_scored_total += scored as u64;
        self.tokens_served_from_cache += served as u64;
    }

    /// Fraction of requested tokens that had to be computed; 1.0 without a
    /// cache.
    pub fn recompute_ratio(&self) -> f64 {
        let requested = self.tokens_scored_total + self.tokens_served_from_cache;
        if requested == 0 {
            1.0
        } else {
            self.tokens_scored_total as f64 / requested as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamingCache {
    entries: Vec<CacheEntry>,
}

impl StreamingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.start + e.len)
    }

    pub fn append(
        &mut self,
        block_id: BlockId,
        len: usize,
        payload: Option<u64>,
    ) -> Result<(), CacheError> {
        if self.entries.iter().any(|e| e.block_id == block_id) {
            return Err(CacheError::PositionCollision(block_id));
        }
        let start = self.token_len();
        self.entries.push(CacheEntry {
            block_id,
            start,
            len,
            payload,
            level: CacheLevel::IntraDialogue,
        });
        Ok(())
    }

    /// Exchange the last two entries; both become stale.
    pub fn swap_tail(&mut self) -> Result<(), CacheError> {
        let n = self.entries.len();
        if n < 2 {
            return Err(CacheError::SwapTooShort(n));
        }
        let base = self.entries[n - 2].start;
        self.entries.swap(n - 2, n - 1);
        let first_len = self.entries[n - 2].len;
        for (e, start) in self.entries[n - 2..]
            .iter_mut()
            .zip([base, base + first_len])
        {
            e.start = start;
            e.payload = None;
        }
        Ok(())
    }

    /// Drop entries and shift everything after them left. Shifted entries
    /// become stale.
    pub fn prune(&mut self, deleted: &[BlockId]) -> Result<(), CacheError> {
        if deleted.is_empty() {
            return Ok(());
        }
        for id in deleted {
            if !self.entries.iter().any(|e| e.block_id == *id) {
                return Err(CacheError::UnknownBlock(*id));
            }
        }
        if let Some(tail) = self.entries.last() {
            if deleted.contains(&tail.block_id) {
                return Err(CacheError::PruneTail(tail.block_id));
            }
        }
        self.entries.retain(|e| !deleted.contains(&e.block_id));
        self.relayout();
        Ok(())
    }

    /// Promote the first `n_blocks` entries to the inter-dialogue level.
    pub fn promote_prefix(&mut self, n_blocks: usize) {
        for e in self.entries.iter_mut().take(n_blocks) {
            e.level = CacheLevel::InterDialogue;
        }
    }

    /// Discard intra-dialogue entries, returning their block ids.
    pub fn reset_intra(&mut self) -> Vec<BlockId> {
        let dropped = self
            .entries
            .iter()
            .filter(|e| e.level == CacheLevel::IntraDialogue)
            .map(|e| e.block_id)
            .collect();
        self.entries.retain(|e| e.level == CacheLevel::InterDialogue);
        self.relayout();
        dropped
    }

    fn relayout(&mut self) {
        let mut pos = 0;
        for e in &mut self.entries {
            if e.start != pos {
                e.start = pos;
                e.payload = None;
            }
            pos += e.len;
        }
    }

    /// Longest run of leading fresh entries, capped at `max_blocks`.
    /// Returns the block count and the state covering those tokens.
    pub fn fresh_prefix(&self, max_blocks: usize) -> (usize, Option<PrefixState>) {
        let mut state = None;
        let mut n = 0;
        for e in self.entries.iter().take(max_blocks) {
            match e.payload {
                Some(p) => {
                    state = Some(PrefixState {
                        len: e.start + e.len,
                        state: p,
                    });
                    n += 1;
                }
                None => break,
            }
        }
        (n, state)
    }

    /// Store a recomputed payload for entry `index`.
    pub fn refresh(&mut self, index: usize, payload: u64) {
        self.entries[index].payload = Some(payload);
    }

    /// Recompute every stale payload in the first `n_blocks` entries from
    /// the context tokens, returning the number of tokens recomputed.
    pub fn refresh_prefix(
        &mut self,
        ctx_tokens: &[TokenId],
        n_blocks: usize,
        mut extend: impl FnMut(Option<u64>, &[TokenId]) -> u64,
    ) -> usize {
        let mut recomputed = 0;
        let mut prev = None;
        for e in self.entries.iter_mut().take(n_blocks) {
            let payload = match e.payload {
                Some(p) => p,
                None => {
                    recomputed += e.len;
                    let p = extend(prev, &ctx_tokens[e.range()]);
                    e.payload = Some(p);
                    p
                }
            };
            prev = Some(payload);
        }
        recomputed
    }

    /// Verify the ledger against the context: bijection with blocks,
    /// contiguity, freshness, and (when `recompute` is given) that every
    /// fresh payload equals a from-scratch recomputation over its prefix.
    pub fn consistency_check(
        &self,
        ctx: &ContextBuffer,
        recompute: Option<&dyn Fn(&[TokenId]) -> u64>,
    ) -> ConsistencyReport {
        let mut violations = Vec::new();
        let blocks = ctx.blocks();
        if blocks.len() != self.entries.len() {
            violations.push(Violation::EntryCount {
                entries: self.entries.len(),
                blocks: blocks.len(),
            });
        }
        let tokens = ctx.token_ids();
        let mut block_end = 0;
        for (index, (entry, block)) in self.entries.iter().zip(blocks).enumerate() {
            if entry.block_id != block.id {
                violations.push(Violation::BlockMismatch {
                    index,
                    expected: block.id,
                    found: entry.block_id,
                });
            }
            if entry.len != block.len() {
                violations.push(Violation::LengthMismatch {
                    block: block.id,
                    entry_len: entry.len,
                    block_len: block.len(),
                });
            }
            // Positions are checked against the context layout, so one
            // displaced entry yields exactly one violation.
            let expected_start = block_end;
            if entry.start > expected_start {
                violations.push(Violation::Gap {
                    position: expected_start,
                });
            } else if entry.start < expected_start {
                violations.push(Violation::Overlap {
                    position: entry.start,
                });
            }
            block_end += block.len();
            match (entry.payload, recompute) {
                (None, _) => violations.push(Violation::Stale { block: entry.block_id }),
                (Some(p), Some(f)) => {
                    if f(&tokens[..block_end]) != p {
                        violations.push(Violation::ChecksumMismatch {
                            block: entry.block_id,
                        });
                    }
                }
                (Some(_), None) => {}
            }
        }
        ConsistencyReport { violations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::fingerprint;
    use crate::stream_model::{Block, BlockKind, FrameBlock};

    fn ctx_of(lens: &[(u64, usize)]) -> ContextBuffer {
        let mut ctx = ContextBuffer::new(usize::MAX);
        for &(id, len) in lens {
            ctx.push(Block {
                id: BlockId(id),
                kind: BlockKind::Frame(FrameBlock::new(id as f64, id, (0..len as u32).map(|t| t + id as u32).collect())),
            })
            .unwrap();
        }
        ctx
    }

    fn fresh_cache(ctx: &ContextBuffer) -> StreamingCache {
        let tokens = ctx.token_ids();
        let mut cache = StreamingCache::new();
        let mut end = 0;
        for b in ctx.blocks() {
            end += b.len();
            cache.append(b.id, b.len(), Some(fingerprint(&tokens[..end]))).unwrap();
        }
        cache
    }

    fn ranges(cache: &StreamingCache) -> Vec<(u64, Range<usize>)> {
        cache.entries().iter().map(|e| (e.block_id.0, e.range())).collect()
    }

    #[test]
    fn appends_are_contiguous() {
        let mut c = StreamingCache::new();
        c.append(BlockId(0), 16, Some(1)).unwrap();
        assert_eq!(ranges(&c), vec![(0, 0..16)]);
        c.append(BlockId(1), 4, Some(2)).unwrap();
        assert_eq!(ranges(&c), vec![(0, 0..16), (1, 16..20)]);
        assert_eq!(
            c.append(BlockId(1), 4, None),
            Err(CacheError::PositionCollision(BlockId(1)))
        );
    }

    #[test]
    fn swap_recomputes_ranges_by_length() {
        let mut c = StreamingCache::new();
        c.append(BlockId(0), 16, Some(1)).unwrap();
        c.append(BlockId(1), 2, Some(2)).unwrap();
        c.swap_tail().unwrap();
        assert_eq!(ranges(&c), vec![(1, 0..2), (0, 2..18)]);

        let mut c = StreamingCache::new();
        c.append(BlockId(9), 100, Some(0)).unwrap();
        c.append(BlockId(0), 16, Some(1)).unwrap();
        c.append(BlockId(1), 2, Some(2)).unwrap();
        c.swap_tail().unwrap();
        assert_eq!(ranges(&c), vec![(9, 0..100), (1, 100..102), (0, 102..118)]);
        assert!(c.entries()[0].is_fresh());
        assert!(!c.entries()[1].is_fresh() && !c.entries()[2].is_fresh());
    }

    #[test]
    fn double_swap_restores_order() {
        let mut c = StreamingCache::new();
        c.append(BlockId(0), 16, Some(1)).unwrap();
        c.append(BlockId(1), 2, Some(2)).unwrap();
        c.swap_tail().unwrap();
        c.swap_tail().unwrap();
        assert_eq!(ranges(&c), vec![(0, 0..16), (1, 16..18)]);
        assert!(c.entries().iter().all(|e| !e.is_fresh()));
    }

    #[test]
    fn swap_needs_two_entries() {
        let mut c = StreamingCache::new();
        c.append(BlockId(0), 16, Some(1)).unwrap();
        assert_eq!(c.swap_tail(), Err(CacheError::SwapTooShort(1)));
    }

    #[test]
    fn prune_shifts_and_invalidates() {
        let ctx = ctx_of(&[(0, 16), (1, 16), (2, 2)]);
        let mut c = fresh_cache(&ctx);
        c.prune(&[BlockId(1)]).unwrap();
        assert_eq!(ranges(&c), vec![(0, 0..16), (2, 16..18)]);
        assert!(c.entries()[0].is_fresh());
        assert!(!c.entries()[1].is_fresh());
    }

    #[test]
    fn empty_prune_is_a_no_op() {
        let ctx = ctx_of(&[(0, 16), (1, 2)]);
        let mut c = fresh_cache(&ctx);
        let before = c.clone();
        c.prune(&[]).unwrap();
        assert_eq!(c, before);
    }

    #[test]
    fn prune_rejects_tail_and_unknown() {
        let ctx = ctx_of(&[(0, 16), (1, 2)]);
        let mut c = fresh_cache(&ctx);
        assert_eq!(c.prune(&[BlockId(1)]), Err(CacheError::PruneTail(BlockId(1))));
        assert_eq!(c.prune(&[BlockId(7)]), Err(CacheError::UnknownBlock(BlockId(7))));
    }

    #[test]
    fn fresh_cache_is_consistent() {
        let ctx = ctx_of(&[(0, 3), (1, 5), (2, 2)]);
        let c = fresh_cache(&ctx);
        let report = c.consistency_check(&ctx, Some(&|t: &[TokenId]| fingerprint(t)));
        assert!(report.is_clean(), "{:?}", report.violations);
    }

    #[test]
    fn corrupted_position_reports_gap() {
        let ctx = ctx_of(&[(0, 3), (1, 5), (2, 2)]);
        let mut c = fresh_cache(&ctx);
        c.entries[1].start = 4;
        let report = c.consistency_check(&ctx, None);
        assert_eq!(report.violations, vec![Violation::Gap { position: 3 }]);
        assert_eq!(report.violations[0].to_string(), "gap at position 3");
    }

    #[test]
    fn post_swap_reports_exactly_two_stale_entries() {
        let mut ctx = ctx_of(&[(0, 3), (1, 5), (2, 2)]);
        let mut c = fresh_cache(&ctx);
        ctx.swap_tail().unwrap();
        c.swap_tail().unwrap();
        let report = c.consistency_check(&ctx, Some(&|t: &[TokenId]| fingerprint(t)));
        assert_eq!(
            report.violations,
            vec![
                Violation::Stale { block: BlockId(2) },
                Violation::Stale { block: BlockId(1) }
            ]
        );
        let tokens = ctx.token_ids();
        let recomputed = c.refresh_prefix(&tokens, 3, |prev, t| {
            crate::scorer::fingerprint_extend(prev.unwrap_or(crate::scorer::FINGERPRINT_SEED), t)
        });
        assert_eq!(recomputed, 7);
        assert!(c.consistency_check(&ctx, Some(&|t: &[TokenId]| fingerprint(t))).is_clean());
    }

    #[test]
    fn wrong_payload_reports_checksum_mismatch() {
        let ctx = ctx_of(&[(0, 3), (1, 5)]);
        let mut c = fresh_cache(&ctx);
        c.refresh(1, 42);
        let report = c.consistency_check(&ctx, Some(&|t: &[TokenId]| fingerprint(t)));
        assert_eq!(
            report.violations,
            vec![Violation::ChecksumMismatch { block: BlockId(1) }]
        );
    }

    #[test]
    fn inter_dialogue_entries_survive_reset() {
        let ctx = ctx_of(&[(0, 3), (1, 5), (2, 2), (3, 4)]);
        let mut c = fresh_cache(&ctx);
        c.promote_prefix(2);
        let dropped = c.reset_intra();
        assert_eq!(dropped, vec![BlockId(2), BlockId(3)]);
        assert_eq!(ranges(&c), vec![(0, 0..3), (1, 3..8)]);
        assert!(c.entries().iter().all(|e| e.is_fresh() && e.level == CacheLevel::InterDialogue));
    }

    #[test]
    fn fresh_prefix_stops_at_first_stale() {
        let ctx = ctx_of(&[(0, 3), (1, 5), (2, 2)]);
        let mut c = fresh_cache(&ctx);
        c.swap_tail().unwrap();
        let (n, state) = c.fresh_prefix(3);
        assert_eq!(n, 1);
        assert_eq!(state.unwrap().len, 3);
        assert_eq!(c.fresh_prefix(0), (0, None));
    }

    #[test]
    fn stats_ratio() {
        let mut s = CacheStats::default();
        assert_eq!(s.recompute_ratio(), 1.0);
        s.record(10, 30);
        assert_eq!(s.recompute_ratio(), 0.25);
    }
}
