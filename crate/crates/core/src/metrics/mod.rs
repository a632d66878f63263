//! Tracking evaluation (CLEAR MOTA, IDF1, HOTA with DetA/AssA) and
//! embedding-similarity analyses.

mod clear;
mod hota;
mod identity;
mod sequence;
mod similarity;

pub use clear::{clear_mota, ClearCounts, DEFAULT_IOU_THRESHOLD};
pub use hota::{alphas, hota, HotaCounts, HotaScores, NUM_ALPHAS};
pub use identity::{idf1, IdCounts};
pub use similarity::{similarity_matrix, top_k_similarity_distribution, SimilarityHistogram, BIN_WIDTH, NUM_BINS};

use crate::error::Result;
use crate::tracker::TrackRecord;

/// Summary scores in percent plus the raw counts behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub idf1: f64,
    pub mota: f64,
    pub clear: ClearCounts,
    pub ids: IdCounts,
    pub hota_counts: HotaCounts,
}

/// Count accumulator; sequences are combined by summing counts, never by
/// averaging their scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluator {
    clear: ClearCounts,
    ids: IdCounts,
    hota: HotaCounts,
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sequence(&mut self, gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<()> {
        let seq = sequence::prepare(gt, pred)?;
        self.clear.merge(&clear::clear_counts(&seq, DEFAULT_IOU_THRESHOLD));
        self.ids.merge(&identity::id_counts(&seq, DEFAULT_IOU_THRESHOLD));
        self.hota.merge(&hota::hota_counts(&seq));
        Ok(())
    }

    pub fn result(&self) -> EvalResult {
        let s = self.hota.scores();
        EvalResult {
            hota: 100.0 * s.hota,
            det_a: 100.0 * s.det_a,
            ass_a: 100.0 * s.ass_a,
            idf1: 100.0 * self.ids.idf1(),
            mota: 100.0 * self.clear.mota(),
            clear: self.clear,
            ids: self.ids,
            hota_counts: self.hota.clone(),
        }
    }
}

pub fn evaluate(gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<EvalResult> {
    let mut e = Evaluator::new();
    e.add_sequence(gt, pred)?;
    Ok(e.result())
}

impl EvalResult {
    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let rows: [(&str, String); 12] = [
            ("HOTA", format!("{:.3}", self.hota)),
            ("DetA", format!("{:.3}", self.det_a)),
            ("AssA", format!("{:.3}", self.ass_a)),
            ("IDF1", format!("{:.3}", self.idf1)),
            ("MOTA", format!("{:.3}", self.mota)),
            ("TP", self.clear.tp.to_string()),
            ("FP", self.clear.fp.to_string()),
            ("FN", self.clear.fn_.to_string()),
            ("IDSW", self.clear.idsw.to_string()),
            ("IDTP", self.ids.idtp.to_string()),
            ("IDFP", self.ids.idfp.to_string()),
            ("IDFN", self.ids.idfn.to_string()),
        ];
        let mut s = String::from("metric,value\n");
        for (k, v) in rows {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box2D;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn rec(frame: u32, id: u32, x: f64, y: f64) -> TrackRecord {
        TrackRecord::new(frame, id, Box2D { x, y, w: 10.0, h: 20.0 }, 1.0)
    }

    fn random_instance(rng: &mut SimRng) -> (Vec<TrackRecord>, Vec<TrackRecord>) {
        let mut gt = Vec::new();
        let mut pred = Vec::new();
        let frames = 1 + rng.below(4) as u32;
        for f in 1..=frames {
            for id in 1..=3u32 {
                if rng.bernoulli(0.8) {
                    let (x, y) = (10.0 * id as f64 + rng.range(-3.0, 3.0), rng.range(0.0, 6.0));
                    gt.push(rec(f, id, x, y));
                    if rng.bernoulli(0.85) {
                        let pid = 1 + rng.below(4) as u32;
                        if !pred.iter().any(|r: &TrackRecord| r.frame == f && r.id == pid) {
                            pred.push(rec(f, pid, x + rng.range(-4.0, 4.0), y + rng.range(-6.0, 6.0)));
                        }
                    }
                }
            }
        }
        if gt.is_empty() {
            gt.push(rec(1, 1, 0.0, 0.0));
        }
        (gt, pred)
    }

    #[test]
    fn perfect_input_scores_hundred() {
        let gt: Vec<_> = (1..=5).flat_map(|f| (1..=3).map(move |i| rec(f, i, 30.0 * i as f64 + f as f64, 0.0))).collect();
        let r = evaluate(&gt, &gt).unwrap();
        for v in [r.hota, r.det_a, r.ass_a, r.idf1, r.mota] {
            assert_eq!(v, 100.0);
        }
        assert_eq!((r.clear.fp, r.clear.fn_, r.clear.idsw), (0, 0, 0));
        let one = [rec(1, 1, 0.0, 0.0)];
        assert_eq!(evaluate(&one, &one).unwrap().hota, 100.0);
    }

    #[test]
    fn mota_with_one_miss() {
        let gt: Vec<_> = (1..=10).map(|f| rec(f, 1, 0.0, 0.0)).collect();
        let pred = &gt[1..];
        let c = clear_mota(&gt, pred, 0.5).unwrap();
        assert_eq!(c.fn_, 1);
        assert!((c.mota() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn id_switch_counted() {
        let gt = [rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
        let pred = [rec(1, 1, 0.0, 0.0), rec(2, 2, 0.0, 0.0)];
        assert_eq!(clear_mota(&gt, &pred, 0.5).unwrap().idsw, 1);
    }

    #[test]
    fn idf1_split_track() {
        let gt: Vec<_> = (1..=4).map(|f| rec(f, 1, 0.0, 0.0)).collect();
        let pred: Vec<_> = (1..=4).map(|f| rec(f, if f <= 2 { 1 } else { 2 }, 0.0, 0.0)).collect();
        let c = idf1(&gt, &pred, 0.5).unwrap();
        assert_eq!((c.idtp, c.idfp, c.idfn), (2, 2, 2));
        assert_eq!(c.idf1(), 0.5);
        assert_eq!(idf1(&gt, &[], 0.5).unwrap().idf1(), 0.0);
    }

    #[test]
    fn hota_id_switch_by_hand() {
        // one object, two frames, perfect boxes, id changes
        let gt = [rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
        let pred = [rec(1, 1, 0.0, 0.0), rec(2, 2, 0.0, 0.0)];
        let r = evaluate(&gt, &pred).unwrap();
        // each TP: TPA = 1, FNA = 1 (other gt frame), FPA = 0 → A = 1/2
        assert!((r.det_a - 100.0).abs() < 1e-12);
        assert!((r.ass_a - 50.0).abs() < 1e-12);
        assert!((r.hota - 100.0 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_gt_is_an_error() {
        assert!(evaluate(&[], &[rec(1, 1, 0.0, 0.0)]).is_err());
        assert!(evaluate(&[rec(1, 1, 0.0, 0.0), rec(1, 1, 5.0, 0.0)], &[]).is_err());
        assert!(evaluate(&[rec(0, 1, 0.0, 0.0)], &[]).is_err());
    }

    #[test]
    fn no_predictions() {
        let gt = [rec(1, 1, 0.0, 0.0), rec(2, 1, 0.0, 0.0)];
        let r = evaluate(&gt, &[]).unwrap();
        assert_eq!((r.hota, r.idf1, r.mota), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sequences_sum_counts() {
        let mut rng = SimRng::new(8);
        let (g1, p1) = random_instance(&mut rng);
        let (g2, p2) = random_instance(&mut rng);
        let mut e = Evaluator::new();
        e.add_sequence(&g1, &p1).unwrap();
        e.add_sequence(&g2, &p2).unwrap();
        let r = e.result();
        let (a, b) = (evaluate(&g1, &p1).unwrap(), evaluate(&g2, &p2).unwrap());
        assert_eq!(r.clear.tp, a.clear.tp + b.clear.tp);
        assert_eq!(r.ids.idtp, a.ids.idtp + b.ids.idtp);
        let tp0 = a.hota_counts.tp[0] + b.hota_counts.tp[0];
        assert_eq!(r.hota_counts.tp[0], tp0);
    }

    #[test]
    fn deta_is_detection_jaccard_for_singleton_ids() {
        let mut rng = SimRng::new(3);
        for _ in 0..50 {
            let (gt, pred) = random_instance(&mut rng);
            let mut next = 0;
            let mut relabel = |v: &[TrackRecord]| -> Vec<TrackRecord> {
                v.iter().map(|r| {
                    next += 1;
                    TrackRecord { id: next, ..*r }
                }).collect()
            };
            let (gt, pred) = (relabel(&gt), relabel(&pred));
            let r = evaluate(&gt, &pred).unwrap();
            // per frame, max-IoU matching at each alpha then TP/(TP+FP+FN)
            let mut det = 0.0;
            for (a, alpha) in alphas().iter().enumerate() {
                let (tp, fp, fn_) = (r.hota_counts.tp[a], r.hota_counts.fp[a], r.hota_counts.fn_[a]);
                assert_eq!(tp + fn_, gt.len() as u64);
                assert_eq!(tp + fp, pred.len() as u64);
                // with singleton ids every TP has A = 1
                assert!((r.hota_counts.ass_sum[a] - tp as f64).abs() < 1e-12);
                let mut want = 0u64;
                for f in 1..=4 {
                    let g: Vec<_> = gt.iter().filter(|x| x.frame == f).collect();
                    let p: Vec<_> = pred.iter().filter(|x| x.frame == f).collect();
                    let cost: Vec<Vec<f64>> = g.iter().map(|x| p.iter().map(|y| -crate::geometry::iou(&x.bbox, &y.bbox)).collect()).collect();
                    want += crate::geometry::hungarian(&cost).unwrap().pairs.iter().filter(|&&(i, j)| -cost[i][j] >= alpha - f64::EPSILON).count() as u64;
                }
                assert_eq!(tp, want);
                det += tp as f64 / (tp + fp + fn_) as f64;
            }
            assert!((r.det_a - 100.0 * det / 19.0).abs() < 1e-9);
        }
    }

    fn assert_close(a: &EvalResult, b: &EvalResult) {
        assert_eq!((a.clear, a.ids), (b.clear, b.ids));
        assert_eq!((a.hota_counts.tp, a.hota_counts.fp, a.hota_counts.fn_), (b.hota_counts.tp, b.hota_counts.fp, b.hota_counts.fn_));
        for (x, y) in [(a.hota, b.hota), (a.det_a, b.det_a), (a.ass_a, b.ass_a), (a.idf1, b.idf1), (a.mota, b.mota)] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn invariant_to_pred_relabeling_and_row_order(seed in 0u64..5_000, perm_seed in 0u64..1_000) {
            let mut rng = SimRng::new(seed);
            let (gt, pred) = random_instance(&mut rng);
            let base = evaluate(&gt, &pred).unwrap();
            let mut prng = SimRng::new(perm_seed);
            // consistent relabeling of predicted ids
            let mut map: Vec<u32> = (1..=4).map(|i| i * 7 + 100).collect();
            for i in (1..map.len()).rev() {
                map.swap(i, prng.below(i + 1));
            }
            let relabeled: Vec<_> = pred.iter().map(|r| TrackRecord { id: map[r.id as usize - 1], ..*r }).collect();
            assert_close(&evaluate(&gt, &relabeled).unwrap(), &base);
            // shuffle rows keeping frame order
            let mut g2 = gt.clone();
            let mut p2 = relabeled.clone();
            for v in [&mut g2, &mut p2] {
                for i in (1..v.len()).rev() {
                    v.swap(i, prng.below(i + 1));
                }
                v.sort_by_key(|r| r.frame);
            }
            assert_close(&evaluate(&g2, &p2).unwrap(), &base);
        }
    }
}
