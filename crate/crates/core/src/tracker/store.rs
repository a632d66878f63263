use std::collections::BTreeMap;

use crate::diffcore::{Graph, ParamStore};
use crate::error::{bail, Result};
use crate::geometry::{hungarian, Box2D};
use crate::temporal::{TemporalAdapter, TrajectoryWindow};

use super::record::TrackRecord;

pub const DEFAULT_WINDOW: usize = 30;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_MISSES: usize = 30;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub window: usize,
    pub similarity_threshold: f64,
    pub max_misses: usize,
    pub score_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            max_misses: DEFAULT_MAX_MISSES,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
        }
    }
}

/// Live identities with their trajectory windows and miss counters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStore {
    pub windows: BTreeMap<u32, TrajectoryWindow>,
    pub misses: BTreeMap<u32, usize>,
    /// Last observed embedding per identity, the reference once a miss
    /// streak longer than the window has emptied it.
    pub last_observed: BTreeMap<u32, Vec<f64>>,
    pub next_id: u32,
    pub capacity: usize,
    pub max_misses: usize,
}

impl TrackStore {
    pub fn new(capacity: usize, max_misses: usize) -> Self {
        Self { windows: BTreeMap::new(), misses: BTreeMap::new(), last_observed: BTreeMap::new(), next_id: 1, capacity, max_misses }
    }

    pub fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Reference embedding per live identity, in id order.
    pub fn references(&self, refiner: &dyn Refiner) -> Result<Vec<(u32, Vec<f64>)>> {
        let ids: Vec<u32> = self.windows.keys().copied().collect();
        let windows: Vec<&TrajectoryWindow> = self.windows.values().collect();
        Ok(ids
            .into_iter()
            .zip(refiner.refine(&windows)?)
            .map(|(id, r)| (id, r.unwrap_or_else(|| self.last_observed[&id].clone())))
            .collect())
    }
}

/// Turns trajectory windows into the embedding each identity is matched by,
/// or `None` for a window without any observed slot.
pub trait Refiner {
    fn refine(&self, windows: &[&TrajectoryWindow]) -> Result<Vec<Option<Vec<f64>>>>;
}

/// No temporal refinement: the most recent observed embedding.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatestPresent;

impl Refiner for LatestPresent {
    fn refine(&self, windows: &[&TrajectoryWindow]) -> Result<Vec<Option<Vec<f64>>>> {
        Ok(windows.iter().map(|w| w.latest_present().map(<[f64]>::to_vec)).collect())
    }
}

/// Temporal-adapter refinement: the encoder output at the newest observed
/// slot. An absent slot under the dual mask only sees the `[empty]` token,
/// so it carries nothing to match against.
pub struct TaRefiner<'a> {
    pub adapter: &'a TemporalAdapter,
    pub store: &'a ParamStore,
}

impl Refiner for TaRefiner<'_> {
    fn refine(&self, windows: &[&TrajectoryWindow]) -> Result<Vec<Option<Vec<f64>>>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        windows
            .iter()
            .map(|w| {
                let presence = w.presence();
                let Some(last) = presence.iter().rposition(|&b| b) else { return Ok(None) };
                let raw = g.constant(w.raw_matrix(self.adapter.dim));
                let out = self.adapter.encode(&mut g, &p, raw, &presence)?;
                Ok(Some(g.value(out).row(last).to_vec()))
            })
            .collect()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na.sqrt() * nb.sqrt())
    }
}

/// Hungarian on `1 − cos` between current embeddings and identity
/// references; matches under `threshold` similarity are rejected. `None`
/// means the detection starts a new identity.
pub fn predict_ids(current: &[Vec<f64>], references: &[(u32, Vec<f64>)], threshold: f64) -> Vec<Option<u32>> {
    let sim: Vec<Vec<f64>> = current.iter().map(|c| references.iter().map(|(_, r)| cosine(c, r)).collect()).collect();
    let cost: Vec<Vec<f64>> = sim.iter().map(|r| r.iter().map(|s| 1.0 - s).collect()).collect();
    let mut out = vec![None; current.len()];
    if references.is_empty() {
        return out;
    }
    for (i, j) in hungarian(&cost).expect("cosine costs are finite").pairs {
        if sim[i][j] >= threshold {
            out[i] = Some(references[j].0);
        }
    }
    out
}

/// Appends this frame to every live window: matched identities get their
/// embedding, the rest an absent slot and one more miss. Identities whose
/// miss count reaches `max_misses` are retired; unknown ids are born.
pub fn update_store(store: &mut TrackStore, assignments: &[(u32, Vec<f64>)], frame: u32) {
    let mut matched: BTreeMap<u32, &Vec<f64>> = BTreeMap::new();
    for (id, e) in assignments {
        matched.insert(*id, e);
    }
    let live: Vec<u32> = store.windows.keys().copied().collect();
    for id in live {
        let w = store.windows.get_mut(&id).unwrap();
        match matched.remove(&id) {
            Some(e) => {
                w.push(frame, Some(e.clone()));
                store.misses.insert(id, 0);
                store.last_observed.insert(id, e.clone());
            }
            None => {
                w.push(frame, None);
                let m = store.misses.entry(id).or_insert(0);
                *m += 1;
                if *m >= store.max_misses {
                    store.windows.remove(&id);
                    store.misses.remove(&id);
                    store.last_observed.remove(&id);
                }
            }
        }
    }
    for (id, e) in matched {
        let mut w = TrajectoryWindow::new(id, store.capacity);
        w.push(frame, Some(e.clone()));
        store.windows.insert(id, w);
        store.misses.insert(id, 0);
        store.last_observed.insert(id, e.clone());
        store.next_id = store.next_id.max(id + 1);
    }
}

/// Detections of one frame with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame: u32,
    pub detections: Vec<(Box2D, f64, Vec<f64>)>,
}

/// Runs the online tracker over ordered frames. Detections under the score
/// threshold are ignored; every other detection yields one record.
pub fn track_sequence(frames: &[FrameInput], cfg: &TrackerConfig, refiner: &dyn Refiner) -> Result<Vec<TrackRecord>> {
    if frames.windows(2).any(|w| w[1].frame <= w[0].frame) {
        bail!(InvalidArgument, "frames must be strictly increasing");
    }
    let mut store = TrackStore::new(cfg.window, cfg.max_misses);
    let mut out = Vec::new();
    for f in frames {
        let dets: Vec<&(Box2D, f64, Vec<f64>)> = f.detections.iter().filter(|d| d.1 >= cfg.score_threshold).collect();
        let current: Vec<Vec<f64>> = dets.iter().map(|d| d.2.clone()).collect();
        let refs = store.references(refiner)?;
        let ids = predict_ids(&current, &refs, cfg.similarity_threshold);
        let mut assigned = Vec::with_capacity(dets.len());
        for (d, id) in dets.iter().zip(ids) {
            let id = id.unwrap_or_else(|| store.fresh_id());
            assigned.push((id, d.2.clone()));
            out.push(TrackRecord::new(f.frame, id, d.0, d.1));
        }
        update_store(&mut store, &assigned, f.frame);
    }
    Ok(out)
}
