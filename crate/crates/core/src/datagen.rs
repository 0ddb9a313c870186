//! Training-sequence export.
//!
//! Each ground-truth scene of a trace becomes one clip of frame turns; whole
//! clips are packed greedily into sequences no longer than the token budget,
//! and each sequence is written as one file: a JSON header line followed by
//! a binary payload (see `docs/datagen-format.md`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, POOL_SAMPLING};
use crate::scam::{
    build_interleaved_sequence, build_loss_mask, build_scam_mask, pack_bits, sample_caption, ClipTurns,
    InterleavedSequence, LayoutError, Span, SpanKind,
};
use crate::stream_model::TokenId;
use crate::trace::Trace;

pub const FORMAT_NAME: &str = "streamgate-scam";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("clip {0} has no tokenized captions")]
    MissingCaptionTokens(u64),
    #[error("clip {clip} needs {needed} tokens, more than the budget of {budget}")]
    ClipTooLong { clip: u64, needed: usize, budget: usize },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed sequence file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub kind: SpanKind,
    pub clip_id: u64,
    pub begin: usize,
    pub end: usize,
    #[serde(rename = "final")]
    pub is_final: bool,
}

impl From<&Span> for SpanRecord {
    fn from(s: &Span) -> Self {
        Self {
            kind: s.kind,
            clip_id: s.clip_id,
            begin: s.begin,
            end: s.end,
            is_final: s.is_clip_final_caption,
        }
    }
}

/// First line of a sequence file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceHeader {
    pub format: String,
    pub version: u32,
    pub n_tokens: usize,
    pub spans: Vec<SpanRecord>,
    pub tokens_bytes: usize,
    pub loss_mask_bytes: usize,
    pub attention_mask_bytes: usize,
}

/// Group the trace's frames into clip turns, drawing one caption per turn
/// from the first `pool_size` paraphrases. Frames outside every scene and
/// scenes without frames are skipped.
pub fn clip_turns(trace: &Trace, pool_size: usize, seed: u64) -> Result<Vec<ClipTurns>, DatagenError> {
    let mut rng = substream(seed, POOL_SAMPLING);
    let mut out = Vec::new();
    for clip in trace.timeline.clips() {
        let frames: Vec<Vec<TokenId>> = trace
            .frames
            .iter()
            .filter(|f| clip.contains(f.timestamp_s))
            .map(|f| f.tokens.clone())
            .collect();
        if frames.is_empty() {
            log::warn!("clip {}: no frames inside the scene; skipped", clip.clip_id);
            continue;
        }
        let pool = clip
            .caption_tokens
            .as_ref()
            .filter(|p| !p.is_empty())
            .ok_or(DatagenError::MissingCaptionTokens(clip.clip_id))?;
        let pool = &pool[..pool.len().min(pool_size.max(1))];
        let captions = frames
            .iter()
            .map(|_| sample_caption(pool, &mut rng).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ClipTurns {
            clip_id: clip.clip_id,
            frames,
            captions,
        });
    }
    Ok(out)
}

fn turns_len(c: &ClipTurns) -> usize {
    c.frames
        .iter()
        .zip(c.captions.iter().cycle())
        .map(|(f, cap)| f.len() + cap.len())
        .sum()
}

/// Pack whole clips into sequences of at most `budget` tokens.
pub fn pack_sequences(clips: &[ClipTurns], budget: usize) -> Result<Vec<InterleavedSequence>, DatagenError> {
    let mut out = Vec::new();
    let mut current: Vec<ClipTurns> = Vec::new();
    let mut used = 0;
    for clip in clips {
        let len = turns_len(clip);
        if len > budget {
            return Err(DatagenError::ClipTooLong {
                clip: clip.clip_id,
                needed: len,
                budget,
            });
        }
        if used + len > budget {
            out.push(build_interleaved_sequence(&current)?);
            current.clear();
            used = 0;
        }
        current.push(clip.clone());
        used += len;
    }
    if !current.is_empty() {
        out.push(build_interleaved_sequence(&current)?);
    }
    Ok(out)
}

/// Serialize one sequence: header line, then tokens (u32 little-endian),
/// loss mask bits, attention mask bits.
pub fn encode_sequence(seq: &InterleavedSequence) -> Vec<u8> {
    let n = seq.layout.total_len();
    let loss = pack_bits(build_loss_mask(&seq.layout).0);
    let attention = build_scam_mask(&seq.layout).to_packed_bytes();
    let header = SequenceHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        n_tokens: n,
        spans: seq.layout.spans().iter().map(SpanRecord::from).collect(),
        tokens_bytes: 4 * n,
        loss_mask_bytes: loss.len(),
        attention_mask_bytes: attention.len(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for t in seq.token_ids() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out.extend_from_slice(&loss);
    out.extend_from_slice(&attention);
    out
}

/// A decoded sequence file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSequence {
    pub header: SequenceHeader,
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub attention_mask: Vec<u8>,
}

pub fn decode_sequence(bytes: &[u8]) -> Result<DecodedSequence, DatagenError> {
    let bad = |m: &str| DatagenError::Malformed(m.to_owned());
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no header line"))?;
    let header: SequenceHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| DatagenError::Malformed(e.to_string()))?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(bad("unsupported format"));
    }
    let n = header.n_tokens;
    let payload = &bytes[nl + 1..];
    let expected = 4 * n + n.div_ceil(8) + (n * n).div_ceil(8);
    if payload.len() != expected
        || header.tokens_bytes != 4 * n
        || header.loss_mask_bytes != n.div_ceil(8)
        || header.attention_mask_bytes != (n * n).div_ceil(8)
    {
        return Err(bad("payload size does not match header"));
    }
    let (tok_bytes, rest) = payload.split_at(4 * n);
    let (loss_bytes, attention) = rest.split_at(n.div_ceil(8));
    let tokens = tok_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let loss_mask = (0..n).map(|i| loss_bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(DecodedSequence {
        header,
        tokens,
        loss_mask,
        attention_mask: attention.to_vec(),
    })
}

/// Write `seq_00000.bin`, `seq_00001.bin`, ... into `out_dir` and return
/// the written paths.
pub fn write_sequences(out_dir: &Path, sequences: &[InterleavedSequence]) -> Result<Vec<PathBuf>, DatagenError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatagenError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut paths = Vec::new();
    for (i, seq) in sequences.iter().enumerate() {
        let path = out_dir.join(format!("seq_{i:05}.bin"));
        let mut f = fs::File::create(&path).map_err(io(&path))?;
        f.write_all(&encode_sequence(seq)).map_err(io(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
