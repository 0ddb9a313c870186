//! Caption-quality judging.
//!
//! [`OverlapJudge`] is a deterministic stand-in for an LLM judge: it scores
//! the multiset token-overlap F1 between response and reference, scaled to
//! 0..10, and reports that value on every rubric dimension.

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::num::Real;

/// Scoring rubric and its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Rubric {
    /// Semantic correctness of per-scene captions.
    SemCor,
    /// Fluency of a whole-video summary.
    SumFluen,
}

impl Rubric {
    pub fn dimensions(self) -> &'static [&'static str] {
        match self {
            Rubric::SemCor => &["semantic_accuracy", "language_quality", "information_completeness"],
            Rubric::SumFluen => &[
                "writing_logicality",
                "language_fluency",
                "writing_conciseness",
                "semantic_consistency",
                "narrative_completeness",
            ],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("empty reference")]
    EmptyReference,
    #[error("judge backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionScore<R> {
    pub name: &'static str,
    pub score: R,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeScores<R> {
    pub rubric: Rubric,
    pub dimensions: Vec<DimensionScore<R>>,
    pub mean: R,
}

pub trait Judge<R: Real>: Send + Sync {
    fn score(&self, rubric: Rubric, response: &str, reference: &str) -> Result<JudgeScores<R>, JudgeError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapJudge;

fn bag(text: &str) -> HashMap<String, usize> {
    let mut out = HashMap::new();
    for w in text.split_whitespace() {
        *out.entry(w.to_lowercase()).or_insert(0) += 1;
    }
    out
}

/// Multiset token-overlap F1 in `[0, 1]`.
pub fn overlap_f1(response: &str, reference: &str) -> f64 {
    let (resp, refr) = (bag(response), bag(reference));
    let resp_n: usize = resp.values().sum();
    let ref_n: usize = refr.values().sum();
    if resp_n == 0 || ref_n == 0 {
        return 0.0;
    }
    let common: usize = resp
        .iter()
        .map(|(w, &c)| c.min(refr.get(w).copied().unwrap_or(0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / resp_n as f64;
    let recall = common as f64 / ref_n as f64;
    2.0 * precision * recall / (precision + recall)
}

impl<R: Real> Judge<R> for OverlapJudge {
    fn score(&self, rubric: Rubric, response: &str, reference: &str) -> Result<JudgeScores<R>, JudgeError> {
        if reference.split_whitespace().next().is_none() {
            return Err(JudgeError::EmptyReference);
        }
        let value = R::of(10.0 * overlap_f1(response, reference));
        Ok(JudgeScores {
            rubric,
            dimensions: rubric
                .dimensions()
                .iter()
                .map(|&name| DimensionScore { name, score: value })
                .collect(),
            mean: value,
        })
    }
}
