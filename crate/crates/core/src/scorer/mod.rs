//! The token-scorer contract consumed by the gate, plus the perplexity
//! kernel.
//!
//! A scorer maps `(context, continuation)` to per-token natural-log
//! probabilities and can greedily generate a caption. Implementations:
//!
//! - [`TableScorer`]: deterministic, table-driven, used for scripted tests
//!   and synthetic runs.
//! - [`BridgeScorer`]: a client for the NDJSON wire protocol served by an
//!   out-of-process host runtime.

mod bridge;
pub mod protocol;
mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Real;
use crate::scam::AttentionMask;
use crate::stream_model::TokenId;

pub use bridge::{BridgeEndpoint, BridgeScorer};
pub use reference::{Scenario, ScenarioEntry, TableScorer};

// ---------------------------------------------------------------------------
// Fingerprints and cache payloads
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit offset basis: the fingerprint of the empty sequence.
pub const FINGERPRINT_SEED: u64 = 0xcbf2_9ce4_8422_2325;

/// Continue an FNV-1a 64 hash over token ids, each fed as 4 little-endian
/// bytes.
pub fn fingerprint_extend(state: u64, tokens: &[TokenId]) -> u64 {
    use std::hash::Hasher;
    let mut h = fnv::FnvHasher::with_key(state);
    for t in tokens {
        h.write(&t.to_le_bytes());
    }
    h.finish()
}

pub fn fingerprint(tokens: &[TokenId]) -> u64 {
    fingerprint_extend(FINGERPRINT_SEED, tokens)
}

/// A scoring context: the flattened tokens plus optional hints.
///
/// `mask`, when present, covers the context followed by the continuation
/// (for scoring) or the context alone (for generation; generated tokens
/// attend causally). Without a mask the plain causal mask applies.
#[derive(Debug, Clone, Copy)]
pub struct ContextView<'a> {
    pub tokens: &'a [TokenId],
    pub prefix: Option<PrefixState>,
    pub mask: Option<&'a AttentionMask>,
}

impl<'a> ContextView<'a> {
    pub fn causal(tokens: &'a [TokenId]) -> Self {
        Self {
            tokens,
            prefix: None,
            mask: None,
        }
    }
}

/// Opaque per-prefix state a scorer can resume from. `len` tokens of the
/// context are covered by `state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefixState {
    pub len: usize,
    pub state: u64,
}

// ---------------------------------------------------------------------------
// Results and config
// ---------------------------------------------------------------------------

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("context of {len} tokens exceeds the scorer limit of {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("token id {id} out of range for vocabulary of {vocabulary_size}")]
    TokenOutOfRange { id: TokenId, vocabulary_size: u32 },
    #[error("perplexity of an empty logprob list")]
    EmptyLogprobs,
    #[error("invalid logprob {0} (must be finite and <= 0)")]
    InvalidLogprob(f64),
    #[error("max_len {requested} exceeds max_generation_len {limit}")]
    GenerationTooLong { requested: usize, limit: usize },
    #[error("invalid scorer config: {0}")]
    Config(String),
    #[error("scorer transport: {0}")]
    Transport(String),
    #[error("scorer protocol violation: {0}")]
    Protocol(String),
    #[error("remote scorer error: {0}")]
    Remote(String),
}

/// Per-token natural-log probabilities of a continuation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreResult<R> {
    logprobs: Vec<R>,
}

impl<R: Real> ScoreResult<R> {
    pub fn new(logprobs: Vec<R>) -> Result<Self, ScorerError> {
        if let Some(bad) = logprobs.iter().find(|lp| !(lp.is_finite() && **lp <= R::zero())) {
            return Err(ScorerError::InvalidLogprob(bad.to_f64_lossy()));
        }
        Ok(Self { logprobs })
    }

    pub fn empty() -> Self {
        Self {
            logprobs: Vec::new(),
        }
    }

    pub fn logprobs(&self) -> &[R] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn total(&self) -> R {
        self.logprobs.iter().fold(R::zero(), |acc, &lp| acc + lp)
    }

    pub fn perplexity(&self) -> Result<R, ScorerError> {
        perplexity(&self.logprobs)
    }
}

/// `exp(-(1/N) * sum(logprobs))`, i.e. the N-th root of `1/P(continuation)`.
pub fn perplexity<R: Real>(logprobs: &[R]) -> Result<R, ScorerError> {
    if logprobs.is_empty() {
        return Err(ScorerError::EmptyLogprobs);
    }
    let n = R::from_usize(logprobs.len()).expect("length fits a float");
    let total = logprobs.iter().fold(R::zero(), |acc, &lp| acc + lp);
    Ok((-total / n).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub vocabulary_size: u32,
    pub deterministic: bool,
    pub max_generation_len: usize,
    /// Longest context the scorer accepts, in tokens.
    pub max_context_len: usize,
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        if self.vocabulary_size < 2 {
            return Err(ScorerError::Config(format!(
                "vocabulary_size must be >= 2, got {}",
                self.vocabulary_size
            )));
        }
        if self.max_generation_len == 0 {
            return Err(ScorerError::Config("max_generation_len must be positive".into()));
        }
        Ok(())
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ScorerError> {
        match tokens.iter().find(|&&t| t >= self.vocabulary_size) {
            Some(&id) => Err(ScorerError::TokenOutOfRange {
                id,
                vocabulary_size: self.vocabulary_size,
            }),
            None => Ok(()),
        }
    }

    pub fn check_context(&self, ctx: &[TokenId]) -> Result<(), ScorerError> {
        if ctx.len() > self.max_context_len {
            return Err(ScorerError::ContextOverflow {
                len: ctx.len(),
                limit: self.max_context_len,
            });
        }
        self.check_tokens(ctx)
    }

    pub fn check_generation(&self, max_len: usize) -> Result<(), ScorerError> {
        if max_len > self.max_generation_len {
            return Err(ScorerError::GenerationTooLong {
                requested: max_len,
                limit: self.max_generation_len,
            });
        }
        Ok(())
    }
}

/// A language model seen purely through token scoring.
///
/// Implementations must be safe for concurrent read-only scoring unless
/// [`TokenScorer::concurrent_safe`] returns `false`; callers serialize
/// calls per session either way.
pub trait TokenScorer<R: Real>: Send + Sync {
    fn config(&self) -> &ScorerConfig;

    /// Score `cont` autoregressively after `ctx`.
    fn score_continuation(
        &self,
        ctx: &[TokenId],
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError>;

    /// Greedy decode up to `max_len` tokens or the end-of-caption sentinel.
    /// The returned scores equal `score_continuation(ctx, tokens)`.
    fn generate_caption(
        &self,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError>;

    /// Cache payload for `prev` extended by `tokens`. The default is the
    /// FNV-1a checksum of the whole prefix.
    fn extend_state(&self, prev: Option<u64>, tokens: &[TokenId]) -> u64 {
        fingerprint_extend(prev.unwrap_or(FINGERPRINT_SEED), tokens)
    }

    /// Score against a [`ContextView`], which may carry a cached prefix
    /// state and an attention mask. Scorers that cannot use either fall
    /// back to [`score_continuation`](Self::score_continuation).
    fn score_with(
        &self,
        view: ContextView<'_>,
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        self.score_continuation(view.tokens, cont)
    }

    fn generate_with(
        &self,
        view: ContextView<'_>,
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        self.generate_caption(view.tokens, max_len)
    }

    /// Whether several sessions may score through this instance at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

impl<R: Real, S: TokenScorer<R> + ?Sized> TokenScorer<R> for Box<S> {
    fn config(&self) -> &ScorerConfig {
        (**self).config()
    }
    fn score_continuation(
        &self,
        ctx: &[TokenId],
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        (**self).score_continuation(ctx, cont)
    }
    fn generate_caption(
        &self,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        (**self).generate_caption(ctx, max_len)
    }
    fn extend_state(&self, prev: Option<u64>, tokens: &[TokenId]) -> u64 {
        (**self).extend_state(prev, tokens)
    }
    fn score_with(
        &self,
        view: ContextView<'_>,
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        (**self).score_with(view, cont)
    }
    fn generate_with(
        &self,
        view: ContextView<'_>,
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        (**self).generate_with(view, max_len)
    }
    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn certain_token_has_unit_perplexity() {
        assert_eq!(perplexity(&[0.0f64]).unwrap(), 1.0);
    }

    #[test]
    fn two_halves_give_two() {
        let h = 0.5f64.ln();
        assert_eq!(perplexity(&[h, h]).unwrap(), 2.0);
    }

    #[test]
    fn matches_root_form() {
        // (1/0.81)^(1/2)
        let lp = 0.9f64.ln();
        let expected = (1.0 / (0.9f64 * 0.9)).sqrt();
        assert!((perplexity(&[lp, lp]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 1.111_111_111_111_111).abs() < 1e-12);
    }

    #[test]
    fn f32_path_agrees() {
        let lp = 0.5f32.ln();
        assert!((perplexity(&[lp, lp]).unwrap() - 2.0f32).abs() < 1e-6);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(perplexity::<f64>(&[]), Err(ScorerError::EmptyLogprobs));
    }

    #[test]
    fn positive_logprob_rejected() {
        assert!(matches!(
            ScoreResult::new(vec![0.1f64]),
            Err(ScorerError::InvalidLogprob(_))
        ));
        assert!(ScoreResult::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn fingerprint_resumes() {
        let all = fingerprint(&[1, 2, 3, 4]);
        let split = fingerprint_extend(fingerprint(&[1, 2]), &[3, 4]);
        assert_eq!(all, split);
        assert_eq!(fingerprint(&[]), FINGERPRINT_SEED);
        // FNV-1a of the single byte 0x00 repeated four times.
        let mut h: u64 = FINGERPRINT_SEED;
        for _ in 0..4 {
            h ^= 0;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        assert_eq!(fingerprint(&[0]), h);
    }

    proptest! {
        #[test]
        fn monotone_in_each_entry(
            lps in proptest::collection::vec(-20.0f64..0.0, 1..16),
            idx in 0usize..16,
            bump in 0.001f64..5.0,
        ) {
            let i = idx % lps.len();
            let mut higher = lps.clone();
            higher[i] = (higher[i] + bump).min(0.0);
            prop_assume!(higher[i] > lps[i]);
            prop_assert!(perplexity(&higher).unwrap() < perplexity(&lps).unwrap());
        }

        #[test]
        fn concatenation_identity(
            a in proptest::collection::vec(-10.0f64..0.0, 1..32),
            b in proptest::collection::vec(-10.0f64..0.0, 1..32),
        ) {
            let joined: Vec<f64> = a.iter().chain(&b).copied().collect();
            let lhs = perplexity(&joined).unwrap().powi(joined.len() as i32);
            let rhs = perplexity(&a).unwrap().powi(a.len() as i32)
                * perplexity(&b).unwrap().powi(b.len() as i32);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-9);
        }
    }
}
