//! Stream-trace files: newline-delimited JSON holding pre-tokenized frames
//! and the ground-truth scene timeline.
//!
//! ```text
//! {"type":"frame","t":0.0,"frame_index":0,"tokens":[3,4]}
//! {"type":"gt_clip","clip_id":0,"t_start":0.0,"t_end":5.0,"anchor":1.0,"captions":["a dog runs"]}
//! {"type":"gt_caption_tokens","clip_id":0,"pool":[[7,8]]}
//! ```
//!
//! Unknown record types are skipped with a warning.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream_model::{
    validate_clip, validate_timeline, FrameBlock, SemanticClip, Timeline, TimelineError, TokenId,
    TIME_TOLERANCE_S,
};

/// A parsed trace: frames in timestamp order plus the validated timeline.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub frames: Vec<FrameBlock>,
    pub timeline: Timeline,
}

#[derive(Debug, Error)]
pub enum TraceErrorKind {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("non-monotone timestamps: {next} after {prev}")]
    NonMonotone { prev: f64, next: f64 },
    #[error("caption tokens for unknown clip {0}")]
    UnknownClip(u64),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

#[derive(Debug, Error)]
pub struct TraceError {
    /// 1-based line number of the offending record, when one exists.
    pub line: Option<usize>,
    pub kind: TraceErrorKind,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl TraceError {
    fn at(line: usize, kind: impl Into<TraceErrorKind>) -> Self {
        Self {
            line: Some(line),
            kind: kind.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    t: f64,
    frame_index: u64,
    tokens: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipRecord {
    clip_id: u64,
    t_start: f64,
    t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchor: Option<f64>,
    captions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionTokensRecord {
    clip_id: u64,
    pool: Vec<Vec<TokenId>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Frame(FrameRecord),
    GtClip(ClipRecord),
    GtCaptionTokens(CaptionTokensRecord),
}

const KNOWN_TYPES: [&str; 3] = ["frame", "gt_clip", "gt_caption_tokens"];

pub fn parse_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TraceError {
        line: None,
        kind: TraceErrorKind::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    read_trace(BufReader::new(file))
}

/// Parse a trace from any line-oriented reader.
pub fn read_trace(reader: impl BufRead) -> Result<Trace, TraceError> {
    let mut frames: Vec<FrameBlock> = Vec::new();
    let mut clips = Vec::new();
    let mut clip_lines = HashMap::new();
    let mut pools: Vec<(usize, CaptionTokensRecord)> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| TraceError::at(lineno, TraceErrorKind::Json(e.to_string())))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| TraceError::at(lineno, TraceErrorKind::Json(e.to_string())))?;
        let ty = value.get("type").and_then(|t| t.as_str()).map(str::to_owned);
        match ty.as_deref() {
            Some(t) if KNOWN_TYPES.contains(&t) => {}
            Some(t) => {
                log::warn!("line {lineno}: skipping unknown record type {t:?}");
                continue;
            }
            None => {
                return Err(TraceError::at(
                    lineno,
                    TraceErrorKind::Json("record has no string \"type\" field".into()),
                ))
            }
        }
        let record: Record = serde_json::from_value(value)
            .map_err(|e| TraceError::at(lineno, TraceErrorKind::Json(e.to_string())))?;
        match record {
            Record::Frame(r) => {
                if let Some(prev) = frames.last() {
                    if r.t - prev.timestamp_s <= TIME_TOLERANCE_S {
                        return Err(TraceError::at(
                            lineno,
                            TraceErrorKind::NonMonotone {
                                prev: prev.timestamp_s,
                                next: r.t,
                            },
                        ));
                    }
                }
                frames.push(FrameBlock::new(r.t, r.frame_index, r.tokens));
            }
            Record::GtClip(r) => {
                let clip = SemanticClip {
                    clip_id: r.clip_id,
                    t_start: r.t_start,
                    t_end: r.t_end,
                    anchor_s: r.anchor.unwrap_or(r.t_start),
                    caption_pool: r.captions,
                    caption_tokens: None,
                };
                validate_clip(&clip).map_err(|e| TraceError::at(lineno, e))?;
                clip_lines.entry(clip.clip_id).or_insert(lineno);
                clips.push(clip);
            }
            Record::GtCaptionTokens(r) => pools.push((lineno, r)),
        }
    }

    for (lineno, pool) in pools {
        let clip = clips
            .iter_mut()
            .find(|c| c.clip_id == pool.clip_id)
            .ok_or_else(|| TraceError::at(lineno, TraceErrorKind::UnknownClip(pool.clip_id)))?;
        clip.caption_tokens = Some(pool.pool);
    }

    let timeline = validate_timeline(clips).map_err(|e| TraceError {
        line: clip_lines.get(&e.clip_id()).copied(),
        kind: e.into(),
    })?;
    Ok(Trace { frames, timeline })
}

/// Serialize a trace in the format accepted by [`read_trace`].
pub fn write_trace(trace: &Trace, mut out: impl Write) -> std::io::Result<()> {
    let mut emit = |record: Record| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")
    };
    for f in &trace.frames {
        emit(Record::Frame(FrameRecord {
            t: f.timestamp_s,
            frame_index: f.frame_index,
            tokens: f.tokens.clone(),
        }))?;
    }
    for c in trace.timeline.clips() {
        emit(Record::GtClip(ClipRecord {
            clip_id: c.clip_id,
            t_start: c.t_start,
            t_end: c.t_end,
            anchor: Some(c.anchor_s),
            captions: c.caption_pool.clone(),
        }))?;
    }
    for c in trace.timeline.clips() {
        if let Some(pool) = &c.caption_tokens {
            emit(Record::GtCaptionTokens(CaptionTokensRecord {
                clip_id: c.clip_id,
                pool: pool.clone(),
            }))?;
        }
    }
    Ok(())
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(trace, &mut w)?;
    w.flush()
}
