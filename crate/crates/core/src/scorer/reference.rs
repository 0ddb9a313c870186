//! Table-driven reference scorer.
//!
//! A scenario maps `(context fingerprint, token)` to a natural-log
//! probability; every unscripted pair falls back to `ln(1/vocabulary_size)`.
//! The fingerprint is FNV-1a over the context token ids, or over only the
//! last `fingerprint_window` ids when a window is configured (which keeps
//! long synthetic streams scriptable).
//!
//! Greedy generation only considers scripted entries: at each step the
//! highest-logprob entry for the current context wins (ties go to the lower
//! token id), and decoding stops at the end-of-caption token, at `max_len`,
//! or when the context has no scripted continuation.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    fingerprint, fingerprint_extend, ContextView, PrefixState, ScoreResult, ScorerConfig, ScorerError,
    TokenScorer, FINGERPRINT_SEED,
};
use crate::num::Real;
use crate::stream_model::TokenId;

/// One scripted `(context, token) -> logprob` row. The context is given
/// either as explicit token ids or as a precomputed fingerprint, and the
/// probability either as `logprob` or `prob`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ctx: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<u64>,
    pub token: TokenId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

impl ScenarioEntry {
    pub fn with_prob(ctx: Vec<TokenId>, token: TokenId, prob: f64) -> Self {
        Self {
            ctx: Some(ctx),
            fp: None,
            token,
            logprob: None,
            prob: Some(prob),
        }
    }

    fn resolve_logprob(&self) -> Result<f64, ScorerError> {
        let lp = match (self.logprob, self.prob) {
            (Some(lp), None) => lp,
            (None, Some(p)) if p > 0.0 && p <= 1.0 => p.ln(),
            (None, Some(p)) => {
                return Err(ScorerError::Config(format!("probability {p} outside (0, 1]")))
            }
            _ => {
                return Err(ScorerError::Config(
                    "entry needs exactly one of logprob or prob".into(),
                ))
            }
        };
        if !(lp.is_finite() && lp <= 0.0) {
            return Err(ScorerError::InvalidLogprob(lp));
        }
        Ok(lp)
    }
}

/// Scenario file contents (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub vocabulary_size: u32,
    /// End-of-caption sentinel.
    pub eos_token: TokenId,
    #[serde(default = "default_max_generation_len")]
    pub max_generation_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_context_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint_window: Option<usize>,
    pub entries: Vec<ScenarioEntry>,
}

fn default_max_generation_len() -> usize {
    32
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScorerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScorerError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ScorerError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")
    }
}

#[derive(Debug, Clone)]
pub struct TableScorer {
    config: ScorerConfig,
    eos: TokenId,
    window: Option<usize>,
    fallback: f64,
    table: HashMap<(u64, TokenId), f64>,
    /// Per context: scripted candidates sorted by (logprob desc, id asc).
    ranked: HashMap<u64, Vec<(TokenId, f64)>>,
}

impl TableScorer {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, ScorerError> {
        let config = ScorerConfig {
            vocabulary_size: scenario.vocabulary_size,
            deterministic: true,
            max_generation_len: scenario.max_generation_len,
            max_context_len: scenario.max_context_len.unwrap_or(usize::MAX),
        };
        config.validate()?;
        config.check_tokens(&[scenario.eos_token])?;
        if scenario.fingerprint_window == Some(0) {
            return Err(ScorerError::Config("fingerprint_window must be >= 1".into()));
        }

        let mut table = HashMap::new();
        for entry in &scenario.entries {
            config.check_tokens(&[entry.token])?;
            let fp = match (&entry.ctx, entry.fp) {
                (Some(ctx), None) => {
                    config.check_tokens(ctx)?;
                    let tail = match scenario.fingerprint_window {
                        Some(w) if ctx.len() > w => &ctx[ctx.len() - w..],
                        _ => &ctx[..],
                    };
                    fingerprint(tail)
                }
                (None, Some(fp)) => fp,
                _ => {
                    return Err(ScorerError::Config(
                        "entry needs exactly one of ctx or fp".into(),
                    ))
                }
            };
            table.insert((fp, entry.token), entry.resolve_logprob()?);
        }

        let mut ranked: HashMap<u64, Vec<(TokenId, f64)>> = HashMap::new();
        for (&(fp, tok), &lp) in &table {
            ranked.entry(fp).or_default().push((tok, lp));
        }
        for list in ranked.values_mut() {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }

        Ok(Self {
            fallback: -(scenario.vocabulary_size as f64).ln(),
            config,
            eos: scenario.eos_token,
            window: scenario.fingerprint_window,
            table,
            ranked,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScorerError> {
        Self::from_scenario(&Scenario::load(path)?)
    }

    pub fn eos_token(&self) -> TokenId {
        self.eos
    }

    /// Scripted or fallback logprob of `token` after a context whose
    /// fingerprint is `fp`.
    pub fn lookup(&self, fp: u64, token: TokenId) -> f64 {
        self.table.get(&(fp, token)).copied().unwrap_or(self.fallback)
    }

    fn greedy(&self, fp: u64) -> Option<(TokenId, f64)> {
        self.ranked.get(&fp).and_then(|l| l.first().copied())
    }

    /// Walks a growing context and yields fingerprints for lookups.
    fn cursor(&self, prefix: Option<PrefixState>, ctx: &[TokenId]) -> Cursor {
        match self.window {
            Some(w) => {
                let start = ctx.len().saturating_sub(w);
                Cursor::Window {
                    width: w,
                    tail: ctx[start..].to_vec(),
                }
            }
            None => {
                let (state, rest) = match prefix {
                    Some(p) if p.len <= ctx.len() => (p.state, &ctx[p.len..]),
                    _ => (FINGERPRINT_SEED, ctx),
                };
                Cursor::Full(fingerprint_extend(state, rest))
            }
        }
    }

    fn score_impl<R: Real>(
        &self,
        prefix: Option<PrefixState>,
        ctx: &[TokenId],
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        self.config.check_context(ctx)?;
        self.config.check_tokens(cont)?;
        let mut cursor = self.cursor(prefix, ctx);
        let mut out = Vec::with_capacity(cont.len());
        for &tok in cont {
            out.push(R::of(self.lookup(cursor.fp(), tok)));
            cursor.push(tok);
        }
        ScoreResult::new(out)
    }

    fn generate_impl<R: Real>(
        &self,
        prefix: Option<PrefixState>,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        self.config.check_context(ctx)?;
        self.config.check_generation(max_len)?;
        let mut cursor = self.cursor(prefix, ctx);
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        while tokens.len() < max_len {
            match self.greedy(cursor.fp()) {
                Some((tok, lp)) if tok != self.eos => {
                    tokens.push(tok);
                    logprobs.push(R::of(lp));
                    cursor.push(tok);
                }
                _ => break,
            }
        }
        Ok((tokens, ScoreResult::new(logprobs)?))
    }
}

enum Cursor {
    Full(u64),
    Window { width: usize, tail: Vec<TokenId> },
}

impl Cursor {
    fn fp(&self) -> u64 {
        match self {
            Cursor::Full(state) => *state,
            Cursor::Window { tail, .. } => fingerprint(tail),
        }
    }

    fn push(&mut self, tok: TokenId) {
        match self {
            Cursor::Full(state) => *state = fingerprint_extend(*state, &[tok]),
            Cursor::Window { width, tail } => {
                tail.push(tok);
                if tail.len() > *width {
                    tail.remove(0);
                }
            }
        }
    }
}

impl<R: Real> TokenScorer<R> for TableScorer {
    fn config(&self) -> &ScorerConfig {
        &self.config
    }

    fn score_continuation(
        &self,
        ctx: &[TokenId],
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        self.score_impl(None, ctx, cont)
    }

    fn generate_caption(
        &self,
        ctx: &[TokenId],
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        self.generate_impl(None, ctx, max_len)
    }

    fn score_with(
        &self,
        view: ContextView<'_>,
        cont: &[TokenId],
    ) -> Result<ScoreResult<R>, ScorerError> {
        self.score_impl(view.prefix, view.tokens, cont)
    }

    fn generate_with(
        &self,
        view: ContextView<'_>,
        max_len: usize,
    ) -> Result<(Vec<TokenId>, ScoreResult<R>), ScorerError> {
        self.generate_impl(view.prefix, view.tokens, max_len)
    }
}
