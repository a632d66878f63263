use super::sequence::{prepare, Sequence};
use crate::error::Result;
use crate::geometry::hungarian;
use crate::tracker::TrackRecord;

pub const NUM_ALPHAS: usize = 19;

/// Localization thresholds `0.05, 0.10, …, 0.95`.
pub fn alphas() -> [f64; NUM_ALPHAS] {
    std::array::from_fn(|i| 0.05 + i as f64 * 0.05)
}

/// Per-threshold sums; they add across sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct HotaCounts {
    pub tp: [u64; NUM_ALPHAS],
    pub fp: [u64; NUM_ALPHAS],
    pub fn_: [u64; NUM_ALPHAS],
    /// `Σ_{c ∈ TP} A(c)` per threshold.
    pub ass_sum: [f64; NUM_ALPHAS],
}

impl Default for HotaCounts {
    fn default() -> Self {
        Self { tp: [0; NUM_ALPHAS], fp: [0; NUM_ALPHAS], fn_: [0; NUM_ALPHAS], ass_sum: [0.0; NUM_ALPHAS] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
}

impl HotaCounts {
    pub fn merge(&mut self, o: &HotaCounts) {
        for a in 0..NUM_ALPHAS {
            self.tp[a] += o.tp[a];
            self.fp[a] += o.fp[a];
            self.fn_[a] += o.fn_[a];
            self.ass_sum[a] += o.ass_sum[a];
        }
    }

    pub fn at(&self, a: usize) -> HotaScores {
        let det_a = self.tp[a] as f64 / (self.tp[a] + self.fp[a] + self.fn_[a]).max(1) as f64;
        let ass_a = self.ass_sum[a] / self.tp[a].max(1) as f64;
        HotaScores { hota: (det_a * ass_a).sqrt(), det_a, ass_a }
    }

    /// Means over the thresholds.
    pub fn scores(&self) -> HotaScores {
        let per: Vec<HotaScores> = (0..NUM_ALPHAS).map(|a| self.at(a)).collect();
        let mean = |f: fn(&HotaScores) -> f64| per.iter().map(f).sum::<f64>() / NUM_ALPHAS as f64;
        HotaScores { hota: mean(|s| s.hota), det_a: mean(|s| s.det_a), ass_a: mean(|s| s.ass_a) }
    }
}

pub fn hota(gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<HotaCounts> {
    Ok(hota_counts(&prepare(gt, pred)?))
}

pub(crate) fn hota_counts(seq: &Sequence) -> HotaCounts {
    let eps = f64::EPSILON;
    let (ng, np) = (seq.num_gt_ids, seq.num_pred_ids);
    let mut gt_count = vec![0.0; ng];
    let mut pred_count = vec![0.0; np];
    let mut potential = vec![vec![0.0; np]; ng];
    for f in &seq.frames {
        let col: Vec<f64> = (0..f.pred.len()).map(|j| f.sim.iter().map(|r| r[j]).sum()).collect();
        for (i, &g) in f.gt.iter().enumerate() {
            let row: f64 = f.sim[i].iter().sum();
            for (j, &p) in f.pred.iter().enumerate() {
                let den = row + col[j] - f.sim[i][j];
                if den > eps {
                    potential[g][p] += f.sim[i][j] / den;
                }
            }
            gt_count[g] += 1.0;
        }
        for &p in &f.pred {
            pred_count[p] += 1.0;
        }
    }
    // global alignment score between every pair of trajectories
    let gas: Vec<Vec<f64>> = (0..ng)
        .map(|g| (0..np).map(|p| potential[g][p] / (gt_count[g] + pred_count[p] - potential[g][p])).collect())
        .collect();

    let alphas = alphas();
    let mut out = HotaCounts::default();
    let mut matches = vec![vec![vec![0.0; np]; ng]; NUM_ALPHAS];
    for f in &seq.frames {
        if f.gt.is_empty() || f.pred.is_empty() {
            for a in 0..NUM_ALPHAS {
                out.fp[a] += f.pred.len() as u64;
                out.fn_[a] += f.gt.len() as u64;
            }
            continue;
        }
        let cost: Vec<Vec<f64>> = f
            .gt
            .iter()
            .enumerate()
            .map(|(i, &g)| f.pred.iter().enumerate().map(|(j, &p)| -(gas[g][p] * f.sim[i][j])).collect())
            .collect();
        let pairs = hungarian(&cost).expect("scores are finite").pairs;
        for (a, &alpha) in alphas.iter().enumerate() {
            let mut n = 0u64;
            for &(i, j) in &pairs {
                if f.sim[i][j] >= alpha - eps {
                    matches[a][f.gt[i]][f.pred[j]] += 1.0;
                    n += 1;
                }
            }
            out.tp[a] += n;
            out.fn_[a] += f.gt.len() as u64 - n;
            out.fp[a] += f.pred.len() as u64 - n;
        }
    }
    for a in 0..NUM_ALPHAS {
        let mut s = 0.0;
        for g in 0..ng {
            for p in 0..np {
                let m = matches[a][g][p];
                if m > 0.0 {
                    // every TP of this pair shares A(c) = TPA / (TPA + FNA + FPA)
                    s += m * m / (gt_count[g] + pred_count[p] - m).max(1.0);
                }
            }
        }
        out.ass_sum[a] = s;
    }
    out
}
