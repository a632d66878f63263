use std::collections::BTreeSet;

use crate::identity::match_to_gt;
use crate::rng::SimRng;

use super::scenario::{Detection, Scenario};

/// A detection inside a training clip with its ground-truth label and the
/// (possibly augmented) label used to assemble trajectory history.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipObservation {
    pub det: Detection,
    pub identity: Option<u32>,
    pub iou: f64,
    pub track_label: Option<u32>,
    /// Whether the observation enters trajectory history.
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipFrame {
    pub frame: u32,
    pub obs: Vec<ClipObservation>,
}

/// Consecutive sampled frames of one scenario; the last frame is the anchor
/// whose identities are predicted from the earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainClip {
    pub scenario: usize,
    pub frames: Vec<ClipFrame>,
}

/// Labels the detections of the given 1-based frames against ground truth.
pub fn build_clip(sc: &Scenario, scenario: usize, frames: &[u32]) -> TrainClip {
    let frames = frames
        .iter()
        .map(|&f| {
            let t = f as usize - 1;
            let dets = &sc.detections[t];
            let boxes: Vec<_> = dets.iter().map(|d| d.bbox).collect();
            let labels = match_to_gt(&boxes, &sc.gt_pairs(t));
            let obs = dets
                .iter()
                .zip(labels)
                .map(|(d, m)| ClipObservation {
                    det: d.clone(),
                    identity: m.map(|x| x.0),
                    iou: m.map_or(0.0, |x| x.1),
                    track_label: m.map(|x| x.0),
                    visible: true,
                })
                .collect();
            ClipFrame { frame: f, obs }
        })
        .collect();
    TrainClip { scenario, frames }
}

/// Frame indices `start, start + s₁, …` with each gap drawn from
/// `1..=max_interval`, or `None` if the clip would run past the sequence.
pub fn sample_clip_frames(n_frames: usize, len: usize, max_interval: usize, rng: &mut SimRng) -> Option<Vec<u32>> {
    let gaps: Vec<usize> = (1..len).map(|_| 1 + rng.below(max_interval.max(1))).collect();
    let span: usize = gaps.iter().sum();
    if span + 1 > n_frames {
        return None;
    }
    let start = 1 + rng.below(n_frames - span);
    let mut out = vec![start as u32];
    for g in gaps {
        out.push(out.last().unwrap() + g as u32);
    }
    Some(out)
}

/// Trajectory augmentation. Occlusion hides labeled observations of
/// non-anchor frames from history; switching exchanges the history labels
/// of two identities co-present in the clip over a contiguous span of
/// non-anchor frames. Ground-truth labels are left untouched.
pub fn augment_batch(batch: &[TrainClip], occlusion_prob: f64, switch_prob: f64, seed: u64) -> Vec<TrainClip> {
    let mut rng = SimRng::new(seed);
    batch
        .iter()
        .map(|clip| {
            let mut clip = clip.clone();
            let history = clip.frames.len().saturating_sub(1);
            for f in &mut clip.frames[..history] {
                for o in &mut f.obs {
                    if o.identity.is_some() && rng.bernoulli(occlusion_prob) {
                        o.visible = false;
                    }
                }
            }
            if history >= 1 && rng.bernoulli(switch_prob) {
                switch_span(&mut clip, history, &mut rng);
            }
            clip
        })
        .collect()
}

fn switch_span(clip: &mut TrainClip, history: usize, rng: &mut SimRng) {
    let s = rng.below(history);
    let e = s + rng.below(history - s);
    let labels = |f: &ClipFrame| -> BTreeSet<u32> { f.obs.iter().filter_map(|o| o.track_label).collect() };
    // identities present in every frame of the span
    let mut common = labels(&clip.frames[s]);
    for f in &clip.frames[s + 1..=e] {
        common = common.intersection(&labels(f)).copied().collect();
    }
    let ids: Vec<u32> = common.into_iter().collect();
    if ids.len() < 2 {
        return;
    }
    let a = ids[rng.below(ids.len())];
    let mut b = ids[rng.below(ids.len() - 1)];
    if b >= a {
        b = ids[ids.iter().position(|&x| x == b).unwrap() + 1];
    }
    for f in &mut clip.frames[s..=e] {
        for o in &mut f.obs {
            if o.track_label == Some(a) {
                o.track_label = Some(b);
            } else if o.track_label == Some(b) {
                o.track_label = Some(a);
            }
        }
    }
}
