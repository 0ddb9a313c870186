//! Response-silence decoding for streaming video captioning.
//!
//! A session ingests pre-tokenized frames one at a time and decides, per
//! frame, whether the caption it holds still describes the stream or a new
//! caption must be emitted. The decision compares the caption's perplexity
//! after the new frame with its perplexity at decode time. Around the gate
//! sit a bounded context with peak-end pruning, a prefix-state cache ledger,
//! attention-mask construction for training data and timing metrics.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod cache;
pub mod datagen;
pub mod metrics;
pub mod num;
pub mod peak_end;
pub mod replay;
pub mod rng;
pub mod scam;
pub mod scorer;
pub mod stream_model;
pub mod sved;
pub mod synth;
pub mod trace;

pub use num::Real;

pub type Session = sved::SvedSession<f64>;
pub type GateConfig = sved::GateConfig<f64>;
pub type GateDecision = sved::GateDecision<f64>;
pub type SvedState = sved::SvedState<f64>;
pub type MemoryRecord = peak_end::MemoryRecord<f64>;
pub type PeakEndConfig = peak_end::PeakEndConfig<f64>;
pub type ScoreResult = scorer::ScoreResult<f64>;
pub type JudgeScores = metrics::JudgeScores<f64>;
