use super::boxes::Box2D;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{bail, Result};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

/// Lower clamp applied to `p_t` before the logarithm.
const P_FLOOR: f64 = 1e-12;

/// `−α_t (1 − p_t)^γ ln p_t` with `p_t = p[target]`, clamped at `1e-12`.
pub fn focal_loss(p: &[f64], target: usize, alpha_t: f64, gamma: f64) -> Result<f64> {
    if target >= p.len() {
        bail!(InvalidArgument, "target {target} out of {} classes", p.len());
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        bail!(InvalidArgument, "probabilities must be finite and nonnegative");
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        bail!(InvalidArgument, "probabilities sum to {sum}");
    }
    let pt = p[target].clamp(P_FLOOR, 1.0);
    Ok(-alpha_t * (1.0 - pt).powf(gamma) * pt.ln())
}

/// Weighted focal loss summed over the rows of `logits` (`[n, C]`), with
/// class probabilities from a row softmax. Returns a scalar.
pub fn focal_loss_logits(
    g: &mut Graph,
    logits: Var,
    targets: &[usize],
    weights: Option<&[f64]>,
    alpha_t: f64,
    gamma: f64,
) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        bail!(Shape, "logits {shape:?} for {} targets", targets.len());
    }
    let c = shape[1];
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        bail!(InvalidArgument, "target {t} out of {c} classes");
    }
    if weights.is_some_and(|w| w.len() != targets.len()) {
        bail!(Shape, "weights length differs from targets");
    }
    let logp = g.log_softmax_rows(logits);
    let flat: Vec<usize> = targets.iter().enumerate().map(|(i, &t)| i * c + t).collect();
    let logp_t = g.gather(logp, &flat);
    let p_t = g.exp(logp_t);
    let q = g.rsub_scalar(1.0, p_t);
    let modulator = g.powf(q, gamma);
    let term = g.mul(modulator, logp_t);
    let term = match weights {
        Some(w) => {
            let wv = g.constant(Tensor::vector(w.to_vec()));
            g.mul(term, wv)
        }
        None => term,
    };
    let s = g.sum(term);
    Ok(g.scale(s, -alpha_t))
}

fn check_boxes(g: &Graph, pred: Var, target: &[Box2D]) -> Result<()> {
    let s = g.shape(pred);
    if s.len() != 2 || s[1] != 4 || s[0] != target.len() {
        bail!(Shape, "box predictions {s:?} for {} targets", target.len());
    }
    Ok(())
}

fn target_columns(g: &mut Graph, target: &[Box2D]) -> [Var; 4] {
    let n = target.len();
    let col = |f: fn(&Box2D) -> f64| Tensor::new(vec![n, 1], target.iter().map(f).collect()).unwrap();
    [g.constant(col(|b| b.x)), g.constant(col(|b| b.y)), g.constant(col(|b| b.w)), g.constant(col(|b| b.h))]
}

/// Summed L1 distance between `[n, 4]` predictions and target boxes.
pub fn l1_loss_var(g: &mut Graph, pred: Var, target: &[Box2D]) -> Result<Var> {
    check_boxes(g, pred, target)?;
    let t: Vec<f64> = target.iter().flat_map(|b| b.to_array()).collect();
    let t = g.constant(Tensor::new(vec![target.len(), 4], t)?);
    let d = g.sub(pred, t);
    let a = g.abs(d);
    Ok(g.sum(a))
}

/// Summed `1 − GIoU` between `[n, 4]` (x, y, w, h) predictions with positive
/// extents and target boxes.
pub fn giou_loss_var(g: &mut Graph, pred: Var, target: &[Box2D]) -> Result<Var> {
    check_boxes(g, pred, target)?;
    let [tx, ty, tw, th] = target_columns(g, target);
    let px = g.slice_cols(pred, 0, 1);
    let py = g.slice_cols(pred, 1, 2);
    let pw = g.slice_cols(pred, 2, 3);
    let ph = g.slice_cols(pred, 3, 4);
    let px2 = g.add(px, pw);
    let py2 = g.add(py, ph);
    let tx2 = g.add(tx, tw);
    let ty2 = g.add(ty, th);

    let ix1 = g.maximum(px, tx);
    let ix2 = g.minimum(px2, tx2);
    let iy1 = g.maximum(py, ty);
    let iy2 = g.minimum(py2, ty2);
    let iw = g.sub(ix2, ix1);
    let iw = g.relu(iw);
    let ih = g.sub(iy2, iy1);
    let ih = g.relu(ih);
    let inter = g.mul(iw, ih);

    let pa = g.mul(pw, ph);
    let ta = g.mul(tw, th);
    let union = g.add(pa, ta);
    let union = g.sub(union, inter);

    let ex1 = g.minimum(px, tx);
    let ex2 = g.maximum(px2, tx2);
    let ey1 = g.minimum(py, ty);
    let ey2 = g.maximum(py2, ty2);
    let ew = g.sub(ex2, ex1);
    let eh = g.sub(ey2, ey1);
    let enclosing = g.mul(ew, eh);

    let iou = g.div(inter, union);
    let gap = g.sub(enclosing, union);
    let gap = g.div(gap, enclosing);
    let giou = g.sub(iou, gap);
    let loss = g.rsub_scalar(1.0, giou);
    Ok(g.sum(loss))
}

#[cfg(test)]
mod tests {
    use super::super::{giou_loss, l1_box_loss};
    use super::*;
    use crate::diffcore::grad_check;
    use crate::rng::SimRng;

    #[test]
    fn focal_examples() {
        assert_eq!(focal_loss(&[0.0, 1.0], 1, 0.25, 2.0).unwrap(), 0.0);
        let l = focal_loss(&[0.5, 0.5], 0, 0.25, 2.0).unwrap();
        assert!((l - 0.0625 * 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.04332).abs() < 1e-5);
        let ce = focal_loss(&[0.3, 0.7], 0, 1.0, 0.0).unwrap();
        assert!((ce + 0.3f64.ln()).abs() < 1e-15);
        // p_t = 0 is clamped, not infinite
        let z = focal_loss(&[1.0, 0.0], 1, 0.25, 2.0).unwrap();
        assert!((z - 0.25 * -(1e-12f64.ln()) * (1.0 - 1e-12f64).powi(2)).abs() < 1e-9);
        assert!(focal_loss(&[0.5, 0.6], 0, 0.25, 2.0).is_err());
        assert!(focal_loss(&[1.0], 1, 0.25, 2.0).is_err());
    }

    #[test]
    fn focal_is_monotone_in_pt() {
        let mut prev = f64::INFINITY;
        for i in 1..=1000 {
            let pt = i as f64 / 1000.0;
            let l = focal_loss(&[pt, 1.0 - pt], 0, FOCAL_ALPHA, FOCAL_GAMMA).unwrap();
            assert!(l <= prev, "not monotone at {pt}");
            prev = l;
        }
    }

    #[test]
    fn graph_losses_match_scalar_versions() {
        let mut rng = SimRng::new(4);
        for _ in 0..20 {
            let n = 3;
            let logits: Vec<f64> = (0..n * 4).map(|_| rng.range(-2.0, 2.0)).collect();
            let targets: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
            let mut g = Graph::new();
            let lv = g.constant(Tensor::new(vec![n, 4], logits.clone()).unwrap());
            let out = focal_loss_logits(&mut g, lv, &targets, None, 0.25, 2.0).unwrap();
            let mut want = 0.0;
            for i in 0..n {
                let p = crate::diffcore::softmax(&logits[i * 4..(i + 1) * 4]).unwrap();
                want += focal_loss(&p, targets[i], 0.25, 2.0).unwrap();
            }
            assert!((g.value(out).item() - want).abs() < 1e-12);

            let pb: Vec<Box2D> = (0..n).map(|_| Box2D { x: rng.range(0.0, 5.0), y: rng.range(0.0, 5.0), w: rng.range(0.5, 4.0), h: rng.range(0.5, 4.0) }).collect();
            let tb: Vec<Box2D> = (0..n).map(|_| Box2D { x: rng.range(0.0, 5.0), y: rng.range(0.0, 5.0), w: rng.range(0.5, 4.0), h: rng.range(0.5, 4.0) }).collect();
            let mut g = Graph::new();
            let p = g.constant(Tensor::new(vec![n, 4], pb.iter().flat_map(|b| b.to_array()).collect()).unwrap());
            let gi = giou_loss_var(&mut g, p, &tb).unwrap();
            let l1 = l1_loss_var(&mut g, p, &tb).unwrap();
            let want_g: f64 = pb.iter().zip(&tb).map(|(a, b)| giou_loss(a, b).unwrap()).sum();
            let want_l: f64 = pb.iter().zip(&tb).map(|(a, b)| l1_box_loss(a, b)).sum();
            assert!((g.value(gi).item() - want_g).abs() < 1e-12);
            assert!((g.value(l1).item() - want_l).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let mut rng = SimRng::new(8);
        for _ in 0..20 {
            let logits = Tensor::new(vec![3, 5], (0..15).map(|_| rng.range(-2.0, 2.0)).collect()).unwrap();
            let targets: Vec<usize> = (0..3).map(|_| rng.below(5)).collect();
            let w = vec![1.0, 7.0, 2.5];
            let r = grad_check(|g, v| focal_loss_logits(g, v[0], &targets, Some(&w), 0.25, 2.0), &[logits], 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
        }
    }
}
