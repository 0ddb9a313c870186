//! Synthetic traces with matching reference-scorer scenarios.
//!
//! [`scene_stream`] builds a multi-scene stream. Every frame ends in a
//! marker token naming its scene (and a small per-frame variant); the
//! scenario makes the scene's two-token caption likely after its own
//! markers and much less likely after the next scene's markers, so the gate
//! fires once per scene onset. The scorer only fingerprints the last token,
//! which keeps the table small for arbitrarily long streams.
//!
//! [`ramp_stream`] builds single-token captions whose verification
//! perplexity grows with a hidden monotone score, so the number of
//! responses can only shrink as `alpha` grows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scorer::{Scenario, ScenarioEntry};
use crate::stream_model::{validate_timeline, FrameBlock, SemanticClip, TokenId};
use crate::trace::Trace;

pub const EOS: TokenId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStreamConfig {
    /// Frames per scene.
    pub scene_frames: Vec<usize>,
    pub tokens_per_frame: usize,
    pub fps: f64,
    /// Per-frame marker variants; variant `v` lowers the caption's first
    /// token probability by `variant_step * v`.
    pub variants: u32,
    pub variant_step: f64,
    pub in_clip_prob: f64,
    pub boundary_prob: f64,
    pub seed: u64,
}

impl Default for SceneStreamConfig {
    fn default() -> Self {
        Self {
            scene_frames: vec![6, 6],
            tokens_per_frame: 16,
            fps: 3.0,
            variants: 1,
            variant_step: 0.006,
            in_clip_prob: 0.9,
            boundary_prob: 0.5,
            seed: 0,
        }
    }
}

impl SceneStreamConfig {
    /// `minutes` of stream at `fps`, split into scenes of 20 to 60 seconds.
    pub fn long(minutes: f64, seed: u64) -> Self {
        let fps = 3.0;
        let total = (minutes * 60.0 * fps).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene_frames = Vec::new();
        let mut left = total;
        while left > 0 {
            let n = rng.gen_range(60..=180).min(left);
            scene_frames.push(n);
            left -= n;
        }
        Self {
            scene_frames,
            fps,
            variants: 8,
            seed,
            ..Self::default()
        }
    }
}

/// A trace, the scenario that scripts it, and the scene onsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub trace: Trace,
    pub scenario: Scenario,
}

struct SceneVocab {
    scenes: u32,
    variants: u32,
    filler: u32,
}

impl SceneVocab {
    fn marker(&self, scene: u32, variant: u32) -> TokenId {
        1 + self.filler + scene * self.variants + variant
    }

    fn caption(&self, scene: u32) -> [TokenId; 2] {
        let base = 1 + self.filler + self.scenes * self.variants;
        [base + 2 * scene, base + 2 * scene + 1]
    }

    fn size(&self) -> u32 {
        1 + self.filler + self.scenes * self.variants + 2 * self.scenes
    }
}

pub fn scene_stream(config: &SceneStreamConfig) -> Synthetic {
    assert!(config.tokens_per_frame >= 1 && config.variants >= 1 && config.fps > 0.0);
    let vocab = SceneVocab {
        scenes: config.scene_frames.len() as u32,
        variants: config.variants,
        filler: 32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::new();
    let mut clips = Vec::new();
    let mut index = 0u64;
    for (scene, &n) in config.scene_frames.iter().enumerate() {
        let scene = scene as u32;
        let t_start = index as f64 / config.fps;
        for k in 0..n {
            let mut tokens: Vec<TokenId> = (1..config.tokens_per_frame)
                .map(|_| rng.gen_range(1..=vocab.filler))
                .collect();
            // Scene onsets use the most confident variant so in-scene
            // variation never exceeds the decode-time perplexity by much.
            let variant = if k == 0 { 0 } else { rng.gen_range(0..config.variants) };
            tokens.push(vocab.marker(scene, variant));
            frames.push(FrameBlock::new(index as f64 / config.fps, index, tokens));
            index += 1;
        }
        let [a, b] = vocab.caption(scene);
        clips.push(SemanticClip {
            clip_id: scene as u64,
            t_start,
            t_end: index as f64 / config.fps,
            anchor_s: t_start,
            caption_pool: vec![format!("scene {scene} caption")],
            caption_tokens: Some(vec![vec![a, b]]),
        });
    }

    let mut entries = Vec::new();
    for scene in 0..vocab.scenes {
        let [a, b] = vocab.caption(scene);
        for v in 0..config.variants {
            let p = config.in_clip_prob * (1.0 - config.variant_step * v as f64);
            entries.push(ScenarioEntry::with_prob(vec![vocab.marker(scene, v)], a, p));
            if scene > 0 {
                let [prev_a, _] = vocab.caption(scene - 1);
                entries.push(ScenarioEntry::with_prob(
                    vec![vocab.marker(scene, v)],
                    prev_a,
                    config.boundary_prob,
                ));
            }
        }
        entries.push(ScenarioEntry::with_prob(vec![a], b, config.in_clip_prob));
        entries.push(ScenarioEntry::with_prob(vec![b], EOS, 0.99));
    }

    Synthetic {
        trace: Trace {
            frames,
            timeline: validate_timeline(clips).expect("scenes are contiguous and non-empty"),
        },
        scenario: Scenario {
            vocabulary_size: vocab.size(),
            eos_token: EOS,
            max_generation_len: 4,
            max_context_len: None,
            fingerprint_window: Some(1),
            entries,
        },
    }
}

/// A single-token-per-frame stream of `n_frames` frames where the caption
/// decoded at frame `i` has probability `0.95 * exp(-(s_j - s_i))` after
/// frame `j >= i`, for a random increasing score `s`. Increments are drawn
/// uniformly from `[0, max_step)`.
pub fn ramp_stream(n_frames: usize, max_step: f64, seed: u64) -> Synthetic {
    assert!(n_frames >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut score = vec![0.0f64; n_frames];
    for j in 1..n_frames {
        score[j] = score[j - 1] + rng.gen::<f64>() * max_step;
    }
    let n = n_frames as u32;
    let frame_tok = |j: usize| 1 + j as TokenId;
    let caption_tok = |i: usize| 1 + n + i as TokenId;

    let mut entries = Vec::new();
    for j in 0..n_frames {
        for i in 0..=j {
            let p = 0.95 * (-(score[j] - score[i])).exp();
            entries.push(ScenarioEntry::with_prob(vec![frame_tok(j)], caption_tok(i), p));
        }
        entries.push(ScenarioEntry::with_prob(vec![caption_tok(j)], EOS, 0.99));
    }
    let frames = (0..n_frames)
        .map(|j| FrameBlock::new(j as f64 / 3.0, j as u64, vec![frame_tok(j)]))
        .collect();
    let clip = SemanticClip {
        clip_id: 0,
        t_start: 0.0,
        t_end: n_frames as f64 / 3.0,
        anchor_s: 0.0,
        caption_pool: vec!["ramp".into()],
        caption_tokens: None,
    };
    Synthetic {
        trace: Trace {
            frames,
            timeline: validate_timeline(vec![clip]).expect("single clip"),
        },
        scenario: Scenario {
            vocabulary_size: 1 + 2 * n,
            eos_token: EOS,
            max_generation_len: 2,
            max_context_len: None,
            fingerprint_window: Some(1),
            entries,
        },
    }
}
