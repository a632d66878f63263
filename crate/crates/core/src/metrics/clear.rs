use super::sequence::{prepare, Sequence};
use crate::error::Result;
use crate::geometry::hungarian;
use crate::tracker::TrackRecord;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Bonus that makes last frame's matches win any tie-free contest.
const CONTINUITY_BONUS: f64 = 1000.0;

/// CLEAR counts; they add across sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClearCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub idsw: u64,
}

impl ClearCounts {
    pub fn merge(&mut self, o: &ClearCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
    }

    pub fn num_gt(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `1 − (FN + FP + IDSW) / #GT`.
    pub fn mota(&self) -> f64 {
        1.0 - (self.fn_ + self.fp + self.idsw) as f64 / self.num_gt().max(1) as f64
    }
}

pub fn clear_mota(gt: &[TrackRecord], pred: &[TrackRecord], iou_threshold: f64) -> Result<ClearCounts> {
    Ok(clear_counts(&prepare(gt, pred)?, iou_threshold))
}

pub(crate) fn clear_counts(seq: &Sequence, threshold: f64) -> ClearCounts {
    let eps = f64::EPSILON;
    let mut c = ClearCounts::default();
    // last matched pred id per gt id, and the match from the previous frame only
    let mut last: Vec<Option<usize>> = vec![None; seq.num_gt_ids];
    let mut prev_step: Vec<Option<usize>> = vec![None; seq.num_gt_ids];
    for f in &seq.frames {
        if f.gt.is_empty() {
            c.fp += f.pred.len() as u64;
            continue;
        }
        if f.pred.is_empty() {
            c.fn_ += f.gt.len() as u64;
            continue;
        }
        let score: Vec<Vec<f64>> = f
            .gt
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                f.pred
                    .iter()
                    .enumerate()
                    .map(|(j, &p)| {
                        let s = f.sim[i][j];
                        if s < threshold - eps {
                            0.0
                        } else if prev_step[g] == Some(p) {
                            CONTINUITY_BONUS + s
                        } else {
                            s
                        }
                    })
                    .collect()
            })
            .collect();
        let neg: Vec<Vec<f64>> = score.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let a = hungarian(&neg).expect("scores are finite");
        prev_step.iter_mut().for_each(|v| *v = None);
        let mut matches = 0u64;
        for (i, j) in a.pairs {
            if score[i][j] <= eps {
                continue;
            }
            let (g, p) = (f.gt[i], f.pred[j]);
            if last[g].is_some_and(|q| q != p) {
                c.idsw += 1;
            }
            last[g] = Some(p);
            prev_step[g] = Some(p);
            matches += 1;
        }
        c.tp += matches;
        c.fn_ += f.gt.len() as u64 - matches;
        c.fp += f.pred.len() as u64 - matches;
    }
    c
}
