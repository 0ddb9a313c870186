//! Online evaluation: response timing against a scene timeline, teacher-forced
//! token accuracy, perplexity-based temporal grounding and a judge interface.
//!
//! Timing metrics are scene means. A response inside scene `k` deviates by
//! `|r - a_k|` from the scene's anchor; a scene without responses costs its
//! full duration. Responses that fall outside every scene are charged to the
//! scene whose anchor is nearest (earlier scene on ties): they add their
//! deviation to that scene and count as redundant there, but never cover it.

mod judge;

pub use judge::{DimensionScore, Judge, JudgeError, JudgeScores, OverlapJudge, Rubric};

use serde::Serialize;
use thiserror::Error;

use crate::num::Real;
use crate::stream_model::{SemanticClip, Timeline, TokenId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("timeline has no scenes")]
    EmptyTimeline,
    #[error("predicted length {predicted} differs from reference length {reference}")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("empty reference")]
    EmptyReference,
    #[error("window of {window} frames does not fit a series of {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window must cover at least one frame")]
    EmptyWindow,
}

/// Point a response's deviation is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationReference {
    #[default]
    Anchor,
    SceneStart,
}

impl DeviationReference {
    fn point(self, clip: &SemanticClip) -> f64 {
        match self {
            DeviationReference::Anchor => clip.anchor_s,
            DeviationReference::SceneStart => clip.t_start,
        }
    }
}

/// Responses attributed to one scene.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneRow {
    pub clip_id: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub anchor: f64,
    /// Responses inside the scene.
    pub n_responses: usize,
    /// Responses outside every scene charged to this one.
    pub n_orphans: usize,
    pub deviation: f64,
    pub redundant: usize,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub tim_diff: f64,
    pub tim_redun: f64,
    pub tim_cover: f64,
    pub per_scene: Vec<SceneRow>,
}

fn nearest_scene(clips: &[SemanticClip], t: f64, reference: DeviationReference) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (k, clip) in clips.iter().enumerate() {
        let d = (t - reference.point(clip)).abs();
        if d < best_dist {
            best = k;
            best_dist = d;
        }
    }
    best
}

/// All three timing metrics plus per-scene rows.
pub fn evaluate_timing(
    responses: &[f64],
    timeline: &Timeline,
    reference: DeviationReference,
) -> Result<TimingReport, MetricError> {
    let clips = timeline.clips();
    if clips.is_empty() {
        return Err(MetricError::EmptyTimeline);
    }
    let mut inside: Vec<Vec<f64>> = vec![Vec::new(); clips.len()];
    let mut orphans: Vec<Vec<f64>> = vec![Vec::new(); clips.len()];
    for &r in responses {
        match clips.iter().position(|c| c.contains(r)) {
            Some(k) => inside[k].push(r),
            None => orphans[nearest_scene(clips, r, reference)].push(r),
        }
    }

    let per_scene: Vec<SceneRow> = clips
        .iter()
        .zip(inside.iter().zip(&orphans))
        .map(|(clip, (hits, strays))| {
            let point = reference.point(clip);
            // Sort so the summation order, and therefore the result, does
            // not depend on response order.
            let mut deviations: Vec<f64> = hits.iter().chain(strays).map(|r| (r - point).abs()).collect();
            deviations.sort_by(f64::total_cmp);
            let stray_cost: f64 = {
                let mut s: Vec<f64> = strays.iter().map(|r| (r - point).abs()).collect();
                s.sort_by(f64::total_cmp);
                s.iter().sum()
            };
            let deviation = if hits.is_empty() {
                clip.duration() + stray_cost
            } else {
                deviations.iter().sum()
            };
            SceneRow {
                clip_id: clip.clip_id,
                t_start: clip.t_start,
                t_end: clip.t_end,
                anchor: clip.anchor_s,
                n_responses: hits.len(),
                n_orphans: strays.len(),
                deviation,
                redundant: hits.len().saturating_sub(1) + strays.len(),
                covered: !hits.is_empty(),
            }
        })
        .collect();

    let k = per_scene.len() as f64;
    Ok(TimingReport {
        tim_diff: per_scene.iter().map(|s| s.deviation).sum::<f64>() / k,
        tim_redun: per_scene.iter().map(|s| s.redundant as f64).sum::<f64>() / k,
        tim_cover: per_scene.iter().filter(|s| s.covered).count() as f64 / k,
        per_scene,
    })
}

/// Mean per-scene absolute response-time deviation, in seconds.
pub fn tim_diff(responses: &[f64], timeline: &Timeline) -> Result<f64, MetricError> {
    Ok(evaluate_timing(responses, timeline, DeviationReference::Anchor)?.tim_diff)
}

/// Mean number of unnecessary responses per scene.
pub fn tim_redun(responses: &[f64], timeline: &Timeline) -> Result<f64, MetricError> {
    Ok(evaluate_timing(responses, timeline, DeviationReference::Anchor)?.tim_redun)
}

/// Fraction of scenes with at least one response.
pub fn tim_cover(responses: &[f64], timeline: &Timeline) -> Result<f64, MetricError> {
    Ok(evaluate_timing(responses, timeline, DeviationReference::Anchor)?.tim_cover)
}

/// Fraction of positions where the teacher-forced prediction matches.
pub fn token_accuracy(predicted: &[TokenId], reference: &[TokenId]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if predicted.len() != reference.len() {
        return Err(MetricError::LengthMismatch {
            predicted: predicted.len(),
            reference: reference.len(),
        });
    }
    let hits = predicted.iter().zip(reference).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / reference.len() as f64)
}

/// Start of the `window_len`-frame window with the lowest mean perplexity,
/// earliest on ties. The window is `[start, start + window_len)`.
pub fn otg_localize<R: Real>(ppl_series: &[R], window_len: usize) -> Result<std::ops::Range<usize>, MetricError> {
    if window_len == 0 {
        return Err(MetricError::EmptyWindow);
    }
    if ppl_series.len() < window_len {
        return Err(MetricError::WindowTooLong {
            window: window_len,
            len: ppl_series.len(),
        });
    }
    let n = R::of(window_len as f64);
    let mut best = 0;
    let mut best_mean = R::infinity();
    for start in 0..=ppl_series.len() - window_len {
        let sum = ppl_series[start..start + window_len]
            .iter()
            .fold(R::zero(), |acc, &v| acc + v);
        let mean = sum / n;
        if mean < best_mean {
            best = start;
            best_mean = mean;
        }
    }
    Ok(best..best + window_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream_model::validate_timeline;

    fn scene(id: u64, t0: f64, t1: f64, a: f64) -> SemanticClip {
        SemanticClip {
            clip_id: id,
            t_start: t0,
            t_end: t1,
            anchor_s: a,
            caption_pool: vec!["x".into()],
            caption_tokens: None,
        }
    }

    fn two_scenes() -> Timeline {
        validate_timeline(vec![scene(0, 0.0, 10.0, 4.0), scene(1, 10.0, 20.0, 15.0)]).unwrap()
    }

    #[test]
    fn tim_diff_examples() {
        let tl = two_scenes();
        assert_eq!(tim_diff(&[5.0, 16.0], &tl).unwrap(), 1.0);
        assert_eq!(tim_diff(&[5.0], &tl).unwrap(), 5.5);
        assert_eq!(tim_diff(&[4.0, 15.0], &tl).unwrap(), 0.0);
    }

    #[test]
    fn tim_redun_examples() {
        let tl = two_scenes();
        assert_eq!(tim_redun(&[4.0, 15.0], &tl).unwrap(), 0.0);
        assert_eq!(tim_redun(&[1.0, 2.0, 3.0, 15.0], &tl).unwrap(), 1.0);
        assert_eq!(tim_redun(&[], &tl).unwrap(), 0.0);
    }

    #[test]
    fn tim_cover_examples() {
        let tl = two_scenes();
        assert_eq!(tim_cover(&[4.0, 15.0], &tl).unwrap(), 1.0);
        assert_eq!(tim_cover(&[4.0], &tl).unwrap(), 0.5);
        assert_eq!(tim_cover(&[], &tl).unwrap(), 0.0);
    }

    #[test]
    fn empty_timeline_rejected() {
        let tl = Timeline::default();
        assert_eq!(tim_diff(&[1.0], &tl), Err(MetricError::EmptyTimeline));
        assert_eq!(tim_redun(&[], &tl), Err(MetricError::EmptyTimeline));
        assert_eq!(tim_cover(&[], &tl), Err(MetricError::EmptyTimeline));
    }

    #[test]
    fn orphans_charge_the_nearest_anchor() {
        // Gap between the scenes: [0,5) a=1 and [10,20) a=12.
        let tl = validate_timeline(vec![scene(0, 0.0, 5.0, 1.0), scene(1, 10.0, 20.0, 12.0)]).unwrap();
        let r = evaluate_timing(&[1.0, 12.0, 7.0], &tl, DeviationReference::Anchor).unwrap();
        // 7 is 6 from anchor 1 and 5 from anchor 12.
        assert_eq!(r.per_scene[1].n_orphans, 1);
        assert_eq!(r.per_scene[1].deviation, 5.0);
        assert_eq!(r.tim_diff, 2.5);
        assert_eq!(r.tim_redun, 0.5);
        assert_eq!(r.tim_cover, 1.0);
    }

    #[test]
    fn orphan_tie_goes_to_earlier_scene() {
        let tl = validate_timeline(vec![scene(0, 0.0, 5.0, 2.0), scene(1, 10.0, 20.0, 12.0)]).unwrap();
        let r = evaluate_timing(&[7.0], &tl, DeviationReference::Anchor).unwrap();
        assert_eq!(r.per_scene[0].n_orphans, 1);
        assert!(!r.per_scene[0].covered);
        // Missed scene: duration plus the orphan's deviation.
        assert_eq!(r.per_scene[0].deviation, 10.0);
    }

    #[test]
    fn scene_start_reference() {
        let tl = two_scenes();
        let r = evaluate_timing(&[5.0, 16.0], &tl, DeviationReference::SceneStart).unwrap();
        assert_eq!(r.tim_diff, (5.0 + 6.0) / 2.0);
    }

    #[test]
    fn token_accuracy_examples() {
        assert_eq!(token_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(token_accuracy(&[1, 2, 3, 9, 9], &[1, 2, 3, 4, 5]).unwrap(), 0.6);
        assert_eq!(token_accuracy(&[], &[]), Err(MetricError::EmptyReference));
        assert!(matches!(token_accuracy(&[1], &[1, 2]), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn otg_examples() {
        assert_eq!(otg_localize(&[3.0, 1.0, 1.0, 3.0], 2).unwrap(), 1..3);
        assert_eq!(otg_localize(&[2.0f32; 6], 3).unwrap(), 0..3);
        assert_eq!(otg_localize(&[5.0, 4.0, 6.0], 3).unwrap(), 0..3);
        assert!(otg_localize(&[1.0], 2).is_err());
        assert!(otg_localize::<f64>(&[1.0], 0).is_err());
    }
}
