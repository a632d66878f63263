//! Exhaustive reference implementations of the tracking metrics for tiny
//! instances. Every matching step enumerates all partial assignments.

use std::collections::{BTreeMap, BTreeSet};

use fdta::geometry::{iou, Box2D};
use fdta::rng::SimRng;
use fdta::tracker::TrackRecord;

type FrameRows = (Vec<(u32, Box2D)>, Vec<(u32, Box2D)>);

fn frames(gt: &[TrackRecord], pred: &[TrackRecord]) -> Vec<FrameRows> {
    let mut m: BTreeMap<u32, FrameRows> = BTreeMap::new();
    for r in gt {
        m.entry(r.frame).or_default().0.push((r.id, r.bbox));
    }
    for r in pred {
        m.entry(r.frame).or_default().1.push((r.id, r.bbox));
    }
    m.into_values().collect()
}

/// Every partial injective map from `0..rows` into `0..cols`.
pub fn all_matchings(rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(r: usize, rows: usize, cols: usize, used: &mut Vec<bool>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if r == rows {
            out.push(cur.clone());
            return;
        }
        rec(r + 1, rows, cols, used, cur, out);
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                cur.push((r, c));
                rec(r + 1, rows, cols, used, cur, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, rows, cols, &mut vec![false; cols], &mut Vec::new(), &mut out);
    out
}

fn best_matching(score: &[Vec<f64>], cols: usize) -> Vec<(usize, usize)> {
    let mut best = Vec::new();
    let mut best_v = f64::NEG_INFINITY;
    for m in all_matchings(score.len(), cols) {
        let v: f64 = m.iter().map(|&(r, c)| score[r][c]).sum();
        if v > best_v {
            best_v = v;
            best = m;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleClear {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub idsw: u64,
}

pub fn clear(gt: &[TrackRecord], pred: &[TrackRecord], threshold: f64) -> OracleClear {
    let mut out = OracleClear { tp: 0, fp: 0, fn_: 0, idsw: 0 };
    let mut last: BTreeMap<u32, u32> = BTreeMap::new();
    let mut previous: BTreeMap<u32, u32> = BTreeMap::new();
    for (g, p) in frames(gt, pred) {
        if g.is_empty() || p.is_empty() {
            out.fp += p.len() as u64;
            out.fn_ += g.len() as u64;
            continue;
        }
        let score: Vec<Vec<f64>> = g
            .iter()
            .map(|(gi, gb)| {
                p.iter()
                    .map(|(pi, pb)| {
                        let s = iou(gb, pb);
                        if s < threshold - f64::EPSILON {
                            0.0
                        } else {
                            s + if previous.get(gi) == Some(pi) { 1000.0 } else { 0.0 }
                        }
                    })
                    .collect()
            })
            .collect();
        let m: Vec<_> = best_matching(&score, p.len()).into_iter().filter(|&(r, c)| score[r][c] > f64::EPSILON).collect();
        previous.clear();
        for &(r, c) in &m {
            let (gi, pi) = (g[r].0, p[c].0);
            if last.get(&gi).is_some_and(|&q| q != pi) {
                out.idsw += 1;
            }
            last.insert(gi, pi);
            previous.insert(gi, pi);
        }
        out.tp += m.len() as u64;
        out.fn_ += (g.len() - m.len()) as u64;
        out.fp += (p.len() - m.len()) as u64;
    }
    out
}

pub fn mota(c: &OracleClear) -> f64 {
    1.0 - (c.fn_ + c.fp + c.idsw) as f64 / (c.tp + c.fn_) as f64
}

/// `(IDTP, IDFP, IDFN)` by enumerating all trajectory matchings.
pub fn identity(gt: &[TrackRecord], pred: &[TrackRecord], threshold: f64) -> (u64, u64, u64) {
    let gids: Vec<u32> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pids: Vec<u32> = pred.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut best = 0u64;
    for m in all_matchings(gids.len(), pids.len()) {
        let mut tp = 0;
        for &(a, b) in &m {
            for x in gt.iter().filter(|r| r.id == gids[a]) {
                if pred.iter().any(|y| y.id == pids[b] && y.frame == x.frame && iou(&x.bbox, &y.bbox) >= threshold) {
                    tp += 1;
                }
            }
        }
        best = best.max(tp);
    }
    (best, pred.len() as u64 - best, gt.len() as u64 - best)
}

pub fn idf1(c: (u64, u64, u64)) -> f64 {
    let den = 2 * c.0 + c.1 + c.2;
    if den == 0 {
        0.0
    } else {
        2.0 * c.0 as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHota {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
}

pub fn hota(gt: &[TrackRecord], pred: &[TrackRecord]) -> OracleHota {
    let fr = frames(gt, pred);
    let count = |recs: &[TrackRecord], id: u32| recs.iter().filter(|r| r.id == id).count() as f64;
    // soft co-occurrence of every (gt id, pred id) pair
    let mut potential: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for (g, p) in &fr {
        for (gi, gb) in g {
            for (pi, pb) in p {
                let s = iou(gb, pb);
                let row: f64 = p.iter().map(|(_, b)| iou(gb, b)).sum();
                let col: f64 = g.iter().map(|(_, b)| iou(b, pb)).sum();
                let den = row + col - s;
                if den > f64::EPSILON {
                    *potential.entry((*gi, *pi)).or_default() += s / den;
                }
            }
        }
    }
    let gas = |gi: u32, pi: u32| {
        let pm = potential.get(&(gi, pi)).copied().unwrap_or(0.0);
        pm / (count(gt, gi) + count(pred, pi) - pm)
    };
    let mut out = OracleHota { tp: vec![], fp: vec![], fn_: vec![], hota: 0.0, det_a: 0.0, ass_a: 0.0 };
    let matched: Vec<Vec<(u32, u32, f64)>> = fr
        .iter()
        .map(|(g, p)| {
            let score: Vec<Vec<f64>> = g.iter().map(|(gi, gb)| p.iter().map(|(pi, pb)| gas(*gi, *pi) * iou(gb, pb)).collect()).collect();
            best_matching(&score, p.len()).into_iter().map(|(r, c)| (g[r].0, p[c].0, iou(&g[r].1, &p[c].1))).collect()
        })
        .collect();
    for k in 0..19 {
        let alpha = 0.05 + k as f64 * 0.05;
        let tps: Vec<(u32, u32)> = matched.iter().flatten().filter(|m| m.2 >= alpha - f64::EPSILON).map(|m| (m.0, m.1)).collect();
        let tp = tps.len() as u64;
        let fn_ = gt.len() as u64 - tp;
        let fp = pred.len() as u64 - tp;
        // A(c) = TPA / (TPA + FNA + FPA) for every true positive c
        let ass: f64 = tps
            .iter()
            .map(|&(gi, pi)| {
                let tpa = tps.iter().filter(|&&x| x == (gi, pi)).count() as f64;
                let fna = count(gt, gi) - tpa;
                let fpa = count(pred, pi) - tpa;
                tpa / (tpa + fna + fpa)
            })
            .sum();
        let ass_a = if tp == 0 { 0.0 } else { ass / tp as f64 };
        let det_a = tp as f64 / (tp + fn_ + fp).max(1) as f64;
        out.tp.push(tp);
        out.fp.push(fp);
        out.fn_.push(fn_);
        out.det_a += det_a / 19.0;
        out.ass_a += ass_a / 19.0;
        out.hota += (det_a * ass_a).sqrt() / 19.0;
    }
    out
}

/// Random instance with at most 3 objects and 4 frames; predicted ids are
/// drawn from a small pool so switches, merges and fragments all occur.
pub fn random_instance(rng: &mut SimRng) -> (Vec<TrackRecord>, Vec<TrackRecord>) {
    let objects = 1 + rng.below(3) as u32;
    let frames = 1 + rng.below(4) as u32;
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for f in 1..=frames {
        let mut used = BTreeSet::new();
        for id in 1..=objects {
            if !rng.bernoulli(0.85) {
                continue;
            }
            let b = Box2D { x: 12.0 * id as f64 + rng.range(-4.0, 4.0), y: rng.range(0.0, 8.0), w: 10.0 + rng.range(-2.0, 2.0), h: 20.0 };
            gt.push(TrackRecord::new(f, id, b, 1.0));
            if rng.bernoulli(0.8) {
                let pid = 1 + rng.below(4) as u32;
                if used.insert(pid) {
                    let j = Box2D { x: b.x + rng.range(-5.0, 5.0), y: b.y + rng.range(-8.0, 8.0), w: b.w, h: b.h };
                    pred.push(TrackRecord::new(f, pid, j, 1.0));
                }
            }
        }
        if rng.bernoulli(0.15) {
            let pid = 5 + rng.below(2) as u32;
            if used.insert(pid) {
                pred.push(TrackRecord::new(f, pid, Box2D { x: rng.range(0.0, 50.0), y: rng.range(0.0, 10.0), w: 10.0, h: 20.0 }, 1.0));
            }
        }
    }
    if gt.is_empty() {
        gt.push(TrackRecord::new(1, 1, Box2D { x: 0.0, y: 0.0, w: 10.0, h: 20.0 }, 1.0));
    }
    (gt, pred)
}
