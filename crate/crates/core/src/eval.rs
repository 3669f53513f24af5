//! Keyframe localization, multi-view inference and dataset reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameStack;
use crate::model::Parameters;
use crate::synth::{resize_crop, sample_frames, CropAnchor, CropMode, VideoClipSample};
use crate::train::ordered_map;

/// Position of the highest score; the first one wins ties.
pub fn localize_pnr(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Argument("no frame scores".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("frame score {i} is not finite")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// `|pred − gt| / fps` seconds.
pub fn abs_temporal_error(pred: usize, gt: usize, fps: f64) -> f64 {
    pred.abs_diff(gt) as f64 / fps
}

/// Temporal offsets times crop anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSpec {
    pub temporal_offsets: Vec<usize>,
    pub spatial_crops: Vec<CropAnchor>,
}

impl ViewSpec {
    pub fn single() -> Self {
        ViewSpec {
            temporal_offsets: vec![0],
            spatial_crops: vec![CropAnchor::Center],
        }
    }

    /// `n_t` offsets spread over `[0, (F − T)/2]` and `n_s ≤ 3` anchors.
    pub fn grid(n_temporal: usize, n_spatial: usize, raw_frames: usize, frames: usize) -> Result<Self> {
        if n_temporal == 0 || n_spatial == 0 {
            return Err(Error::Argument("need at least one view".into()));
        }
        let spatial_crops = match n_spatial {
            1 => vec![CropAnchor::Center],
            2 => vec![CropAnchor::Left, CropAnchor::Right],
            3 => vec![CropAnchor::Left, CropAnchor::Center, CropAnchor::Right],
            n => return Err(Error::Argument(format!("at most 3 spatial views, got {n}"))),
        };
        if raw_frames < frames {
            return Err(Error::Argument(format!("{raw_frames} raw frames cannot supply {frames} samples")));
        }
        let reach = (raw_frames - frames) / 2;
        let temporal_offsets = if n_temporal == 1 {
            vec![0]
        } else {
            (0..n_temporal)
                .map(|k| (k as f64 * reach as f64 / (n_temporal - 1) as f64).round() as usize)
                .collect()
        };
        Ok(ViewSpec {
            temporal_offsets,
            spatial_crops,
        })
    }

    /// Parses `<n_temporal>x<n_spatial>`.
    pub fn parse_counts(text: &str) -> Result<(usize, usize)> {
        let bad = || Error::Argument(format!("views must look like 2x3, got {text:?}"));
        let (a, b) = text.split_once('x').ok_or_else(bad)?;
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || b == 0 {
            return Err(bad());
        }
        Ok((a, b))
    }
}

/// Scores of one view, keyed by raw frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewScores {
    pub raw_indices: Vec<usize>,
    /// Per-frame probabilities.
    pub scores: Vec<f64>,
    pub osc_probability: f64,
}

/// Raw index of the single highest score over all views (smallest raw
/// index on ties) and the mean state-change probability.
pub fn aggregate_views(views: &[ViewScores]) -> Result<(usize, f64)> {
    if views.is_empty() {
        return Err(Error::Argument("no views to aggregate".into()));
    }
    let mut best: Option<(f64, usize)> = None;
    for v in views {
        if v.raw_indices.len() != v.scores.len() || v.scores.is_empty() {
            return Err(Error::Argument("view scores and indices differ in length".into()));
        }
        for (&i, &s) in v.raw_indices.iter().zip(&v.scores) {
            if !s.is_finite() {
                return Err(Error::Numeric(format!("score at raw frame {i} is not finite")));
            }
            best = match best {
                Some((bs, bi)) if bs > s || (bs == s && bi <= i) => Some((bs, bi)),
                _ => Some((s, i)),
            };
        }
    }
    // Sorted so the float sum does not depend on view order.
    let mut probs: Vec<f64> = views.iter().map(|v| v.osc_probability).collect();
    probs.sort_by(f64::total_cmp);
    let osc = probs.iter().sum::<f64>() / views.len() as f64;
    Ok((best.expect("nonempty").1, osc))
}

/// Anything that turns sampled frames into per-frame and state-change logits.
pub trait ClipScorer: Sync {
    fn score(&self, frames: &FrameStack, raw_indices: &[usize]) -> Result<(Vec<f64>, f64)>;
}

impl ClipScorer for Parameters {
    fn score(&self, frames: &FrameStack, _raw_indices: &[usize]) -> Result<(Vec<f64>, f64)> {
        self.score_clip(frames)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How eval inputs are shaped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalInput {
    pub frames: usize,
    pub crop_size: usize,
    pub scale_range: (usize, usize),
}

/// Scores every view of `clip` and aggregates them.
pub fn multiview_infer(
    scorer: &dyn ClipScorer,
    clip: &VideoClipSample,
    views: &ViewSpec,
    input: &EvalInput,
) -> Result<(usize, f64)> {
    let raw = clip.frames.count;
    let mut all = Vec::new();
    for &offset in &views.temporal_offsets {
        if offset + input.frames > raw {
            return Err(Error::Argument(format!(
                "offset {offset} leaves fewer than {} of {raw} frames",
                input.frames
            )));
        }
        let raw_indices = sample_frames(offset, raw - 1, input.frames)?;
        let picked = clip.frames.select(&raw_indices);
        for &anchor in &views.spatial_crops {
            let frames = resize_crop(&picked, input.crop_size, input.scale_range, CropMode::Eval(anchor))?;
            let (logits, osc) = scorer.score(&frames, &raw_indices)?;
            all.push(ViewScores {
                raw_indices: raw_indices.clone(),
                scores: logits.iter().map(|&l| sigmoid(l)).collect(),
                osc_probability: sigmoid(osc),
            });
        }
    }
    aggregate_views(&all)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub clip: String,
    pub predicted_index: usize,
    pub gt_index: usize,
    pub error_seconds: f64,
    pub exact: bool,
    pub osc_label: u8,
    pub osc_probability: f64,
    pub osc_correct: bool,
    /// Whether the clip has a state change and so counts toward localization.
    pub localized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Over localized clips.
    pub mean_abs_error_seconds: f64,
    /// Over localized clips.
    pub exact_frame_accuracy: f64,
    /// Over all clips, threshold 0.5.
    pub osc_accuracy: f64,
    pub sample_count: usize,
    pub localized_count: usize,
    pub samples: Vec<SampleRecord>,
}

impl EvalReport {
    /// Aggregates per-sample records, in order.
    pub fn from_samples(samples: Vec<SampleRecord>) -> Self {
        let localized: Vec<&SampleRecord> = samples.iter().filter(|s| s.localized).collect();
        let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| if n == 0 { 0.0 } else { xs.sum::<f64>() / n as f64 };
        let n_loc = localized.len();
        let mae = mean(&mut localized.iter().map(|s| s.error_seconds), n_loc);
        let exact = mean(&mut localized.iter().map(|s| f64::from(u8::from(s.exact))), n_loc);
        let osc = mean(&mut samples.iter().map(|s| f64::from(u8::from(s.osc_correct))), samples.len());
        EvalReport {
            mean_abs_error_seconds: mae,
            exact_frame_accuracy: exact,
            osc_accuracy: osc,
            sample_count: samples.len(),
            localized_count: n_loc,
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One scored clip.
pub fn evaluate_clip(
    scorer: &dyn ClipScorer,
    id: &str,
    clip: &VideoClipSample,
    views: &ViewSpec,
    input: &EvalInput,
) -> Result<SampleRecord> {
    let (pred, osc_p) = multiview_infer(scorer, clip, views, input)?;
    let predicted_change = osc_p >= 0.5;
    Ok(SampleRecord {
        clip: id.to_string(),
        predicted_index: pred,
        gt_index: clip.pnr_index,
        error_seconds: abs_temporal_error(pred, clip.pnr_index, clip.fps),
        exact: pred == clip.pnr_index,
        osc_label: clip.osc_label,
        osc_probability: osc_p,
        osc_correct: predicted_change == (clip.osc_label == 1),
        localized: clip.osc_label == 1,
    })
}

/// Scores every clip and merges records in input order.
pub fn evaluate(
    scorer: &dyn ClipScorer,
    clips: &[(String, VideoClipSample)],
    views: &ViewSpec,
    input: &EvalInput,
    threads: usize,
) -> Result<EvalReport> {
    let samples = ordered_map(clips, threads, |(id, clip)| evaluate_clip(scorer, id, clip, views, input))?;
    Ok(EvalReport::from_samples(samples))
}
