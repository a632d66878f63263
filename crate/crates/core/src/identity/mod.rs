//! Identity labeling, contrastive pair sampling with IoU quality weights,
//! the projection head and the quality-aware InfoNCE objective.

use std::collections::BTreeMap;

use crate::diffcore::{Bound, Graph, Mlp, ParamStore, Tensor, Var, MASK_BIAS};
use crate::error::{bail, Result};
use crate::geometry::{hungarian, iou, Box2D};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.1;

/// One pooled embedding with its identity label and localization quality.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub embedding: Vec<f64>,
    pub frame: u32,
    pub identity: Option<u32>,
    /// IoU with the matched ground-truth box (0 when unmatched).
    pub iou: f64,
}

/// Matches detections to ground truth by Hungarian on `1 − IoU`; pairs with
/// zero overlap are dropped. Returns `(identity, iou)` per detection.
pub fn match_to_gt(detections: &[Box2D], gt: &[(Box2D, u32)]) -> Vec<Option<(u32, f64)>> {
    let mut out = vec![None; detections.len()];
    if detections.is_empty() || gt.is_empty() {
        return out;
    }
    let ious: Vec<Vec<f64>> = detections.iter().map(|d| gt.iter().map(|(b, _)| iou(d, b)).collect()).collect();
    let cost: Vec<Vec<f64>> = ious.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
    let a = hungarian(&cost).expect("IoU costs are finite");
    for (r, c) in a.pairs {
        if ious[r][c] > 0.0 {
            out[r] = Some((gt[c].1, ious[r][c]));
        }
    }
    out
}

pub fn assign_identities(frame: u32, detections: &[(Box2D, Vec<f64>)], gt: &[(Box2D, u32)]) -> Vec<LabeledEmbedding> {
    let boxes: Vec<Box2D> = detections.iter().map(|d| d.0).collect();
    match_to_gt(&boxes, gt)
        .into_iter()
        .zip(detections)
        .map(|(m, (_, e))| LabeledEmbedding {
            embedding: e.clone(),
            frame,
            identity: m.map(|x| x.0),
            iou: m.map_or(0.0, |x| x.1),
        })
        .collect()
}

/// Harmonic mean `2ab / (a + b)`.
pub fn pair_weight(a: f64, b: f64) -> Result<f64> {
    if a + b <= 0.0 {
        bail!(InvalidArgument, "harmonic mean of {a} and {b}");
    }
    Ok(2.0 * a * b / (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivePair {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Positive pairs and per-anchor negatives over indices into the pool.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    /// Pool indices that survived labeling and the IoU filter.
    pub kept: Vec<usize>,
    pub positives: Vec<PositivePair>,
    /// `negatives[i]` lists the negatives of pool index `i` (empty for
    /// samples that were not kept).
    pub negatives: Vec<Vec<usize>>,
}

/// Builds `𝒫` (same identity, different frame) and `𝒩` (different
/// identity, any frame) from labeled samples. With `iou_filter = Some(t)`
/// samples below `t` are dropped and positives are weighted by the harmonic
/// mean of their IoUs; with `None` every labeled sample is kept at weight 1.
pub fn sample_pairs(pool: &[LabeledEmbedding], iou_filter: Option<f64>) -> PairSet {
    let kept: Vec<usize> = (0..pool.len())
        .filter(|&i| pool[i].identity.is_some() && iou_filter.is_none_or(|t| pool[i].iou >= t))
        .collect();
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &i in &kept {
        by_id.entry(pool[i].identity.unwrap()).or_default().push(i);
    }
    let mut positives = Vec::new();
    for members in by_id.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                if pool[a].frame == pool[b].frame {
                    continue;
                }
                let weight = match iou_filter {
                    Some(_) => pair_weight(pool[a].iou, pool[b].iou).expect("kept samples have positive IoU"),
                    None => 1.0,
                };
                positives.push(PositivePair { a, b, weight });
            }
        }
    }
    let mut negatives = vec![Vec::new(); pool.len()];
    for &a in &kept {
        negatives[a] = kept.iter().copied().filter(|&b| pool[b].identity != pool[a].identity).collect();
    }
    PairSet { kept, positives, negatives }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `−ln( e^{z·z⁺/τ} / (e^{z·z⁺/τ} + Σ e^{z·z⁻/τ}) )`.
pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        bail!(InvalidArgument, "temperature {tau} must be positive");
    }
    let sp = dot(anchor, positive) / tau;
    let logits: Vec<f64> = std::iter::once(sp).chain(negatives.iter().map(|n| dot(anchor, n) / tau)).collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - sp)
}

/// Differentiable [`info_nce`] for one anchor row, one positive row and
/// `[m, dim]` negatives.
pub fn info_nce_var(g: &mut Graph, anchor: Var, positive: Var, negatives: Var, tau: f64) -> Result<Var> {
    if tau <= 0.0 {
        bail!(InvalidArgument, "temperature {tau} must be positive");
    }
    let (a, p, n) = (g.shape(anchor).to_vec(), g.shape(positive).to_vec(), g.shape(negatives).to_vec());
    if a.len() != 2 || a[0] != 1 || p != a || n.len() != 2 || n[1] != a[1] {
        bail!(Shape, "anchor {a:?}, positive {p:?}, negatives {n:?}");
    }
    let candidates = g.concat_rows(&[positive, negatives]);
    let s = g.matmul_nt(anchor, candidates);
    let s = g.scale(s, 1.0 / tau);
    let lse = g.logsumexp_rows(s, None);
    let sp = g.gather(s, &[0]);
    let d = g.sub(lse, sp);
    Ok(g.sum(d))
}

/// Quality-weighted mean InfoNCE over `𝒫` for projected embeddings `z`
/// (one per pool index). Each unordered pair is scored in both directions
/// and averaged. Returns 0 when `𝒫` is empty.
pub fn ia_loss(pairs: &PairSet, z: &[Vec<f64>], tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        bail!(InvalidArgument, "temperature {tau} must be positive");
    }
    if pairs.positives.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in &pairs.positives {
        let mut both = 0.0;
        for (a, b) in [(p.a, p.b), (p.b, p.a)] {
            let negs: Vec<&[f64]> = pairs.negatives[a].iter().map(|&n| z[n].as_slice()).collect();
            both += info_nce(&z[a], &z[b], &negs, tau)?;
        }
        total += p.weight * both / 2.0;
    }
    Ok(total / pairs.positives.len() as f64)
}

/// Differentiable [`ia_loss`] over `z`, an `[pool, dim]` node of unit rows.
/// `None` when `𝒫` is empty.
pub fn ia_loss_var(g: &mut Graph, z: Var, pairs: &PairSet, tau: f64) -> Result<Option<Var>> {
    if tau <= 0.0 {
        bail!(InvalidArgument, "temperature {tau} must be positive");
    }
    if pairs.positives.is_empty() {
        return Ok(None);
    }
    let n = g.shape(z)[0];
    if pairs.negatives.len() != n {
        bail!(Shape, "pair set over {} samples, embeddings for {n}", pairs.negatives.len());
    }
    let s = g.matmul_nt(z, z);
    let s = g.scale(s, 1.0 / tau);

    // anchors that have negatives, and their row in the log-sum-exp vector
    let anchors: Vec<usize> = (0..n).filter(|&a| !pairs.negatives[a].is_empty()).collect();
    let mut slot = vec![usize::MAX; n];
    for (r, &a) in anchors.iter().enumerate() {
        slot[a] = r;
    }
    let mut lse_idx = Vec::new();
    let mut pos_idx = Vec::new();
    let mut coef = Vec::new();
    for p in &pairs.positives {
        for (a, b) in [(p.a, p.b), (p.b, p.a)] {
            // anchors without negatives contribute exactly zero
            if slot[a] != usize::MAX {
                lse_idx.push(slot[a]);
                pos_idx.push(a * n + b);
                coef.push(p.weight / 2.0);
            }
        }
    }
    let scale = 1.0 / pairs.positives.len() as f64;
    if coef.is_empty() {
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(Some(zero));
    }
    let rows = g.gather_rows(s, &anchors);
    let mut bias = vec![MASK_BIAS; anchors.len() * n];
    for (r, &a) in anchors.iter().enumerate() {
        for &m in &pairs.negatives[a] {
            bias[r * n + m] = 0.0;
        }
    }
    let neg_lse = g.logsumexp_rows(rows, Some(&Tensor::new(vec![anchors.len(), n], bias)?));
    let l = g.gather(neg_lse, &lse_idx);
    let sp = g.gather(s, &pos_idx);
    let x = g.sub(l, sp);
    // softplus(x) = ln(1 + e^x)
    let e = g.exp(x);
    let e = g.add_scalar(e, 1.0);
    let terms = g.ln(e);
    let c = g.constant(Tensor::vector(coef.into_iter().map(|c| c * scale).collect()));
    let terms = g.mul(terms, c);
    Ok(Some(g.sum(terms)))
}

/// `φ(e)` (or `e` when `phi` is `None`) scaled to unit rows.
pub fn project(g: &mut Graph, p: &Bound, e: Var, phi: Option<&Mlp>) -> Result<Var> {
    let h = match phi {
        Some(m) => m.forward(g, p, e)?,
        None => e,
    };
    let v = g.value(h);
    if (0..v.rows()).any(|i| v.row(i).iter().all(|&x| x == 0.0)) {
        bail!(InvalidArgument, "cannot normalize a zero projection");
    }
    Ok(g.l2_normalize_rows(h))
}

/// Value-level [`project`] for a single embedding.
pub fn project_values(store: &ParamStore, phi: Option<&Mlp>, e: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(Tensor::new(vec![1, e.len()], e.to_vec())?);
    let z = project(&mut g, &p, x, phi)?;
    Ok(g.value(z).data().to_vec())
}
