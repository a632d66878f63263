use super::sequence::{prepare, Sequence};
use crate::error::Result;
use crate::geometry::hungarian;
use crate::tracker::TrackRecord;

/// Identity-level counts from the best global one-to-one id matching.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdCounts {
    pub fn merge(&mut self, o: &IdCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }

    /// `2·IDTP / (2·IDTP + IDFP + IDFN)`, 0 when nothing was counted.
    pub fn idf1(&self) -> f64 {
        let den = 2 * self.idtp + self.idfp + self.idfn;
        if den == 0 {
            0.0
        } else {
            2.0 * self.idtp as f64 / den as f64
        }
    }
}

pub fn idf1(gt: &[TrackRecord], pred: &[TrackRecord], iou_threshold: f64) -> Result<IdCounts> {
    Ok(id_counts(&prepare(gt, pred)?, iou_threshold))
}

/// Matching every gt trajectory to at most one predicted trajectory so the
/// number of co-located frames is maximal; everything else is IDFP/IDFN.
pub(crate) fn id_counts(seq: &Sequence, threshold: f64) -> IdCounts {
    let mut overlap = vec![vec![0u64; seq.num_pred_ids]; seq.num_gt_ids];
    let mut pred_dets = 0u64;
    for f in &seq.frames {
        pred_dets += f.pred.len() as u64;
        for (i, &g) in f.gt.iter().enumerate() {
            for (j, &p) in f.pred.iter().enumerate() {
                if f.sim[i][j] >= threshold {
                    overlap[g][p] += 1;
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = overlap.iter().map(|r| r.iter().map(|&v| -(v as f64)).collect()).collect();
    let a = hungarian(&cost).expect("overlap counts are finite");
    let idtp: u64 = a.pairs.iter().map(|&(g, p)| overlap[g][p]).sum();
    let gt_dets = seq.num_gt_dets as u64;
    IdCounts { idtp, idfp: pred_dets - idtp, idfn: gt_dets - idtp }
}
