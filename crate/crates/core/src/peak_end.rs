//! Peak-end memory compression.
//!
//! Frames older than a window of `W` frames are deleted at random, with a
//! probability that grows with the frame's perplexity relative to the rest
//! of its clip and with its age beyond the window:
//!
//! ```text
//! age    = (now - t) * fps                      (in frames)
//! p      = 0                                    if protected or age <= W
//! p      = p_max * rel * min(1, (age - W) / W)  otherwise
//! rel    = (ppl - clip_min) / (clip_max - clip_min + 1e-9)
//! ```
//!
//! The lowest-perplexity frame of each completed clip (its keyframe) and all
//! caption blocks are never deleted.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::stream_model::{BlockId, ContextBuffer};

/// Prune bookkeeping for one frame in the context.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord<R> {
    pub block_id: BlockId,
    pub frame_index: u64,
    pub timestamp_s: f64,
    /// Decode epoch the frame belongs to.
    pub clip_id: u64,
    /// Perplexity of the current caption observed when this frame arrived.
    pub frame_ppl: R,
    pub protected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEndConfig<R> {
    pub window_frames: usize,
    pub fps: f64,
    pub p_max: R,
}

impl<R: Real> Default for PeakEndConfig<R> {
    fn default() -> Self {
        Self {
            window_frames: 40,
            fps: 3.0,
            p_max: R::of(0.9),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeakEndError {
    #[error("fps must be positive, got {0}")]
    Fps(f64),
    #[error("window must be at least one frame")]
    Window,
    #[error("p_max must lie in [0, 1], got {0}")]
    PMax(f64),
}

impl<R: Real> PeakEndConfig<R> {
    pub fn validate(&self) -> Result<(), PeakEndError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(PeakEndError::Fps(self.fps));
        }
        if self.window_frames == 0 {
            return Err(PeakEndError::Window);
        }
        if !(self.p_max >= R::zero() && self.p_max <= R::one()) {
            return Err(PeakEndError::PMax(self.p_max.to_f64_lossy()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipPplRange<R> {
    pub min: R,
    pub max: R,
}

/// Per-clip perplexity extremes over the given records.
pub fn clip_ranges<R: Real>(records: &[MemoryRecord<R>]) -> HashMap<u64, ClipPplRange<R>> {
    let mut out: HashMap<u64, ClipPplRange<R>> = HashMap::new();
    for r in records {
        out.entry(r.clip_id)
            .and_modify(|range| {
                range.min = range.min.min(r.frame_ppl);
                range.max = range.max.max(r.frame_ppl);
            })
            .or_insert(ClipPplRange {
                min: r.frame_ppl,
                max: r.frame_ppl,
            });
    }
    out
}

pub fn deletion_probability<R: Real>(
    record: &MemoryRecord<R>,
    range: ClipPplRange<R>,
    now_s: f64,
    config: &PeakEndConfig<R>,
) -> R {
    let window = config.window_frames as f64;
    let age_frames = (now_s - record.timestamp_s) * config.fps;
    if record.protected || age_frames <= window {
        return R::zero();
    }
    let rel = (record.frame_ppl - range.min) / (range.max - range.min + R::of(1e-9));
    let age_factor = R::of(((age_frames - window) / window).min(1.0));
    (config.p_max * rel * age_factor).max(R::zero()).min(R::one())
}

/// The keyframe of a clip: its lowest-perplexity frame, earliest on ties.
pub fn select_keyframe<'a, R: Real>(
    records: impl IntoIterator<Item = &'a MemoryRecord<R>>,
) -> Option<BlockId> {
    records
        .into_iter()
        .min_by(|a, b| {
            a.frame_ppl
                .partial_cmp(&b.frame_ppl)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.timestamp_s.total_cmp(&b.timestamp_s))
        })
        .map(|r| r.block_id)
}

/// Mark the keyframe of `clip_id` as protected.
pub fn protect_keyframe<R: Real>(records: &mut [MemoryRecord<R>], clip_id: u64) -> Option<BlockId> {
    let key = select_keyframe(records.iter().filter(|r| r.clip_id == clip_id))?;
    if let Some(r) = records.iter_mut().find(|r| r.block_id == key) {
        r.protected = true;
    }
    Some(key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub ctx: ContextBuffer,
    /// Deleted frames, in ascending timestamp order.
    pub deleted: Vec<BlockId>,
}

/// One probabilistic pruning pass over the frames described by `records`.
///
/// Records are visited in ascending timestamp order and one uniform draw is
/// taken for each record with a non-zero deletion probability. Only frame
/// blocks are ever removed.
pub fn prune<R: Real, G: Rng + ?Sized>(
    ctx: &ContextBuffer,
    records: &[MemoryRecord<R>],
    now_s: f64,
    config: &PeakEndConfig<R>,
    rng: &mut G,
) -> PruneOutcome {
    let ranges = clip_ranges(records);
    let mut order: Vec<&MemoryRecord<R>> = records.iter().collect();
    order.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));

    let mut deleted = Vec::new();
    for record in order {
        let is_frame = ctx
            .get(record.block_id)
            .is_some_and(|b| b.as_frame().is_some());
        if !is_frame {
            continue;
        }
        let p = deletion_probability(record, ranges[&record.clip_id], now_s, config).to_f64_lossy();
        if p > 0.0 && rng.gen::<f64>() < p {
            deleted.push(record.block_id);
        }
    }

    let mut pruned = ctx.clone();
    pruned
        .remove(&deleted)
        .expect("deleted ids were looked up in this context");
    PruneOutcome {
        ctx: pruned,
        deleted,
    }
}
