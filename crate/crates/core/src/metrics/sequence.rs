use std::collections::{BTreeMap, BTreeSet};

use crate::error::{bail, Result};
use crate::geometry::iou;
use crate::tracker::TrackRecord;

/// One frame with dense id indices and the `gt × pred` IoU matrix.
#[derive(Debug, Clone)]
pub(crate) struct Frame {
    pub gt: Vec<usize>,
    pub pred: Vec<usize>,
    pub sim: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Sequence {
    pub frames: Vec<Frame>,
    pub num_gt_ids: usize,
    pub num_pred_ids: usize,
    pub num_gt_dets: usize,
}

fn dense_ids(records: &[TrackRecord]) -> BTreeMap<u32, usize> {
    let ids: BTreeSet<u32> = records.iter().map(|r| r.id).collect();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

fn check(records: &[TrackRecord], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if r.frame < 1 || r.id < 1 {
            bail!(Format, "{what} record with frame {} id {} (both must be ≥ 1)", r.frame, r.id);
        }
        if !r.bbox.is_valid() {
            bail!(Format, "{what} record frame {} id {} has an invalid box", r.frame, r.id);
        }
        if !seen.insert((r.frame, r.id)) {
            bail!(Format, "{what} id {} appears twice in frame {}", r.id, r.frame);
        }
    }
    Ok(())
}

/// Groups records by frame. Rows inside a frame are ordered by id so results
/// never depend on input order. Empty ground truth is rejected.
pub(crate) fn prepare(gt: &[TrackRecord], pred: &[TrackRecord]) -> Result<Sequence> {
    if gt.is_empty() {
        bail!(InvalidArgument, "ground truth is empty");
    }
    check(gt, "ground-truth")?;
    check(pred, "predicted")?;
    let gid = dense_ids(gt);
    let pid = dense_ids(pred);
    let mut by_frame: BTreeMap<u32, (Vec<&TrackRecord>, Vec<&TrackRecord>)> = BTreeMap::new();
    for r in gt {
        by_frame.entry(r.frame).or_default().0.push(r);
    }
    for r in pred {
        by_frame.entry(r.frame).or_default().1.push(r);
    }
    let frames = by_frame
        .into_values()
        .map(|(mut g, mut p)| {
            g.sort_by_key(|r| r.id);
            p.sort_by_key(|r| r.id);
            Frame {
                gt: g.iter().map(|r| gid[&r.id]).collect(),
                pred: p.iter().map(|r| pid[&r.id]).collect(),
                sim: g.iter().map(|a| p.iter().map(|b| iou(&a.bbox, &b.bbox)).collect()).collect(),
            }
        })
        .collect();
    Ok(Sequence { frames, num_gt_ids: gid.len(), num_pred_ids: pid.len(), num_gt_dets: gt.len() })
}
