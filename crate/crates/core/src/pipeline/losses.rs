use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{bail, Result};

use super::config::LossWeights;

/// Loss components of one step, each already reduced to a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub cls: f64,
    pub bbox: f64,
    pub giou: f64,
    pub id: f64,
    pub depth: f64,
    pub ia: f64,
}

impl LossParts {
    pub fn det(&self, w: &LossWeights) -> f64 {
        det_loss(self.cls, self.bbox, self.giou, w)
    }

    pub fn total(&self, w: &LossWeights) -> Result<f64> {
        total_loss(self.det(w), self.id, self.depth, self.ia, w)
    }

    pub fn add(&mut self, o: &LossParts) {
        self.cls += o.cls;
        self.bbox += o.bbox;
        self.giou += o.giou;
        self.id += o.id;
        self.depth += o.depth;
        self.ia += o.ia;
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { cls: self.cls * c, bbox: self.bbox * c, giou: self.giou * c, id: self.id * c, depth: self.depth * c, ia: self.ia * c }
    }
}

/// `λ_cls·cls + λ_bbox·L1 + λ_giou·GIoU`.
pub fn det_loss(cls: f64, bbox: f64, giou: f64, w: &LossWeights) -> f64 {
    w.cls * cls + w.bbox * bbox + w.giou * giou
}

/// `L_det + λ_ID·L_ID + λ_depth·L_depth + λ_IA·L_IA`.
pub fn total_loss(det: f64, id: f64, depth: f64, ia: f64, w: &LossWeights) -> Result<f64> {
    for (k, v) in [("det", det), ("id", id), ("depth", depth), ("ia", ia)] {
        if !(v >= 0.0) {
            bail!(InvalidArgument, "{k} loss {v} must be ≥ 0");
        }
    }
    Ok(det + w.id * id + w.depth * depth + w.ia * ia)
}

/// Softmax cross-entropy of one detection over its candidate logits (live
/// identities, plus the new-object class when present).
pub fn id_loss(logits: &[f64], target: usize) -> Result<f64> {
    if logits.is_empty() {
        bail!(InvalidArgument, "no candidate identities and no new-object class");
    }
    if target >= logits.len() {
        bail!(InvalidArgument, "target {target} out of {} classes", logits.len());
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// Mean [`id_loss`] over the rows of `[n, C]` logits.
pub fn id_loss_var(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    let s = g.shape(logits).to_vec();
    if s.len() != 2 || s[0] != targets.len() || s[0] == 0 || s[1] == 0 {
        bail!(Shape, "id logits {s:?} for {} targets", targets.len());
    }
    if let Some(t) = targets.iter().find(|&&t| t >= s[1]) {
        bail!(InvalidArgument, "target {t} out of {} classes", s[1]);
    }
    let lp = g.log_softmax_rows(logits);
    let idx: Vec<usize> = targets.iter().enumerate().map(|(i, &t)| i * s[1] + t).collect();
    let picked = g.gather(lp, &idx);
    let m = g.mean(picked);
    Ok(g.neg(m))
}

/// `[n, k + 1]` logits: `scale · cos(e_i, r_j)` for every reference, then
/// one shared new-object logit. `scale` and `new_logit` are `[1, 1]` nodes.
pub fn id_logits(g: &mut Graph, e: Var, refs: Option<Var>, scale: Var, new_logit: Var) -> Var {
    let n = g.shape(e)[0];
    let ones = g.constant(Tensor::full(&[n, 1], 1.0));
    let new_col = g.matmul(ones, new_logit);
    let Some(refs) = refs else { return new_col };
    let en = g.l2_normalize_rows(e);
    let rn = g.l2_normalize_rows(refs);
    let cos = g.matmul_nt(en, rn);
    let s = g.matmul(ones, scale);
    let s = g.reshape(s, &[n]);
    let scaled = g.mul_col(cos, s);
    g.concat_cols(&[scaled, new_col])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use crate::rng::SimRng;

    #[test]
    fn total_loss_examples() {
        let w = LossWeights { cls: 1.0, bbox: 1.0, giou: 1.0, id: 1.0, depth: 1.0, ia: 1.0 };
        assert_eq!(total_loss(1.0, 1.0, 1.0, 1.0, &w).unwrap(), 4.0);
        let no_ia = LossWeights { ia: 0.0, ..w };
        assert_eq!(total_loss(1.0, 1.0, 1.0, 5.0, &no_ia).unwrap(), 3.0);
        assert_eq!(total_loss(0.7, 0.0, 0.0, 0.0, &LossWeights::default()).unwrap(), 0.7);
        assert!(total_loss(1.0, -0.1, 0.0, 0.0, &w).is_err());
        // 2·0.1 + 5·0.2 + 2·0.3
        assert!((det_loss(0.1, 0.2, 0.3, &LossWeights::default()) - 1.8).abs() < 1e-12);
    }

    #[test]
    fn id_loss_examples() {
        assert_eq!(id_loss(&[3.7], 0).unwrap(), 0.0);
        assert!((id_loss(&[0.4; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((id_loss(&[2.0, 0.0], 0).unwrap() - (1.0 + (-2f64).exp()).ln()).abs() < 1e-12);
        assert!((id_loss(&[2.0, 0.0], 0).unwrap() - 0.1269).abs() < 1e-4);
        assert!(id_loss(&[], 0).is_err());
        assert!(id_loss(&[1.0], 1).is_err());
    }

    #[test]
    fn graph_form_matches_plain() {
        let mut rng = SimRng::new(4);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(3)).collect();
        let targets = [0, 2, 1, 1, 0];
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let l = id_loss_var(&mut g, x, &targets).unwrap();
        let want: f64 = rows.iter().zip(targets).map(|(r, t)| id_loss(r, t).unwrap()).sum::<f64>() / 5.0;
        assert!((g.value(l).item() - want).abs() < 1e-12);
    }

    #[test]
    fn id_logits_layout_and_gradients() {
        let mut rng = SimRng::new(9);
        let e = Tensor::new(vec![3, 4], rng.normal_vec(12)).unwrap();
        let r = Tensor::new(vec![2, 4], rng.normal_vec(8)).unwrap();
        let (s, b) = (Tensor::new(vec![1, 1], vec![5.0]).unwrap(), Tensor::new(vec![1, 1], vec![0.3]).unwrap());
        let mut g = Graph::new();
        let (ev, rv, sv, bv) = (g.constant(e.clone()), g.constant(r.clone()), g.constant(s.clone()), g.constant(b.clone()));
        let l = id_logits(&mut g, ev, Some(rv), sv, bv);
        let v = g.value(l);
        assert_eq!(v.shape(), &[3, 3]);
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        for i in 0..3 {
            for j in 0..2 {
                assert!((v.get(i, j) - 5.0 * cos(e.row(i), r.row(j))).abs() < 1e-12);
            }
            assert_eq!(v.get(i, 2), 0.3);
        }
        let mut g2 = Graph::new();
        let (ev, sv, bv) = (g2.constant(e.clone()), g2.constant(s.clone()), g2.constant(b.clone()));
        let only_new = id_logits(&mut g2, ev, None, sv, bv);
        assert_eq!(g2.value(only_new).shape(), &[3, 1]);

        for seed in 0..20 {
            let mut rng = SimRng::new(100 + seed);
            let params = vec![
                Tensor::new(vec![3, 4], rng.normal_vec(12)).unwrap(),
                Tensor::new(vec![2, 4], rng.normal_vec(8)).unwrap(),
                Tensor::new(vec![1, 1], vec![rng.range(1.0, 8.0)]).unwrap(),
                Tensor::new(vec![1, 1], rng.normal_vec(1)).unwrap(),
            ];
            let rep = grad_check(
                |g, v| {
                    let l = id_logits(g, v[0], Some(v[1]), v[2], v[3]);
                    id_loss_var(g, l, &[0, 2, 1])
                },
                &params,
                1e-6,
            )
            .unwrap();
            assert!(rep.max_rel_error < 1e-4, "{rep:?}");
        }
    }
}
