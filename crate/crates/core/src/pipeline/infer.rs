use crate::diffcore::Graph;
use crate::error::Result;
use crate::metrics::{similarity_matrix, top_k_similarity_distribution, SimilarityHistogram};
use crate::simkit::{Detection, Scenario};
use crate::tracker::{track_sequence, FrameInput, LatestPresent, TaRefiner, TrackRecord, TrackerConfig};

use super::model::{prepare_frames, FdtaModel};

/// Embeds every frame's detections scoring at least `score_threshold`.
/// All detections of a frame still take part in the fusion pass.
pub fn embed_scenario(model: &FdtaModel, sc: &Scenario, score_threshold: f64) -> Result<Vec<FrameInput>> {
    model.check_scenario(&sc.cfg)?;
    let frames = prepare_frames(sc, model.bins())?;
    let mut out = Vec::with_capacity(frames.len());
    for (t, prepared) in frames.iter().enumerate() {
        let dets: Vec<&Detection> = sc.detections[t].iter().collect();
        let mut input = FrameInput { frame: t as u32 + 1, detections: Vec::new() };
        if !dets.is_empty() {
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, false);
            let tokens = model.vision_tokens(&mut g, &p, &prepared.image)?;
            let depth = model.depth_pass(&mut g, &p, tokens)?;
            let fo = model.forward_objects(&mut g, &p, &dets, tokens, depth.as_ref())?;
            let e = g.value(fo.embeddings);
            for (i, d) in dets.iter().enumerate() {
                if d.score >= score_threshold {
                    input.detections.push((d.bbox, d.score, e.row(i).to_vec()));
                }
            }
        }
        out.push(input);
    }
    Ok(out)
}

/// Tracker settings matching the model's trajectory window.
pub fn tracker_config(model: &FdtaModel) -> TrackerConfig {
    TrackerConfig { window: model.cfg.window, ..TrackerConfig::default() }
}

/// Runs the online tracker over already embedded frames, refining
/// trajectories with the model's temporal adapter when it has one.
pub fn track_frames(model: &FdtaModel, frames: &[FrameInput], cfg: &TrackerConfig) -> Result<Vec<TrackRecord>> {
    match &model.ta {
        Some(ta) => track_sequence(frames, cfg, &TaRefiner { adapter: ta, store: &model.store }),
        None => track_sequence(frames, cfg, &LatestPresent),
    }
}

pub fn track_scenario(model: &FdtaModel, sc: &Scenario, cfg: &TrackerConfig) -> Result<Vec<TrackRecord>> {
    let frames = embed_scenario(model, sc, cfg.score_threshold)?;
    track_frames(model, &frames, cfg)
}

fn embedding_sets(frames: &[FrameInput]) -> Vec<Vec<Vec<f64>>> {
    frames.iter().map(|f| f.detections.iter().map(|d| d.2.clone()).collect()).collect()
}

/// Top-`k` inter-object cosine distribution over embedded frames.
pub fn similarity_distribution(frames: &[FrameInput], k: usize) -> Result<SimilarityHistogram> {
    top_k_similarity_distribution(&embedding_sets(frames), k)
}

/// Cosine matrix between the embedded detections of one frame.
pub fn frame_similarity(frame: &FrameInput) -> Result<Vec<Vec<f64>>> {
    similarity_matrix(&frame.detections.iter().map(|d| d.2.clone()).collect::<Vec<_>>())
}
