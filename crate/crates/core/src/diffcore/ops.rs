use super::graph::{softmax_in_place, Graph, Var};
use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Additive logit bias for blocked attention positions.
pub const MASK_BIAS: f64 = -1e30;

/// Binary attention mask, `true` = blocked.
///
/// Square masks built with [`AttentionMask::new`] keep the diagonal open so
/// every query row has at least one admissible key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl AttentionMask {
    /// Square self-attention mask. Rejects a blocked diagonal.
    pub fn new(t: usize, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != t * t {
            bail!(Shape, "mask needs {} entries, got {}", t * t, blocked.len());
        }
        if (0..t).any(|j| blocked[j * t + j]) {
            bail!(InvalidArgument, "self-attention mask blocks its diagonal");
        }
        Ok(Self { rows: t, cols: t, blocked })
    }

    /// Rectangular cross-attention mask. Every row must keep one key open.
    pub fn cross(rows: usize, cols: usize, blocked: Vec<bool>) -> Result<Self> {
        if blocked.len() != rows * cols {
            bail!(Shape, "mask needs {} entries, got {}", rows * cols, blocked.len());
        }
        if (0..rows).any(|r| blocked[r * cols..(r + 1) * cols].iter().all(|&b| b)) {
            bail!(InvalidArgument, "cross-attention mask blocks an entire row");
        }
        Ok(Self { rows, cols, blocked })
    }

    pub fn unmasked(t: usize) -> Self {
        Self { rows: t, cols: t, blocked: vec![false; t * t] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_blocked(&self, j: usize, k: usize) -> bool {
        self.blocked[j * self.cols + k]
    }

    /// 0/1 matrix view, row-major.
    pub fn as_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|j| (0..self.cols).map(|k| self.is_blocked(j, k) as u8).collect()).collect()
    }

    pub fn additive(&self) -> Tensor {
        Tensor::from_parts(
            vec![self.rows, self.cols],
            self.blocked.iter().map(|&b| if b { MASK_BIAS } else { 0.0 }).collect(),
        )
    }
}

/// Numerically stable softmax of a finite vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        bail!(InvalidArgument, "softmax of an empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        bail!(NonFinite, "softmax input");
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Scaled dot-product attention: `softmax(QKᵀ/√d + mask) · V`.
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&AttentionMask>) -> Result<Var> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        bail!(Shape, "attention expects matrices, got {qs:?} {ks:?} {vs:?}");
    }
    if qs[1] != ks[1] {
        bail!(Shape, "query dim {} vs key dim {}", qs[1], ks[1]);
    }
    if ks[0] != vs[0] {
        bail!(Shape, "{} keys vs {} values", ks[0], vs[0]);
    }
    if let Some(m) = mask {
        if m.rows() != qs[0] || m.cols() != ks[0] {
            bail!(Shape, "mask {}x{} for {} queries, {} keys", m.rows(), m.cols(), qs[0], ks[0]);
        }
    }
    let scores = g.matmul_nt(q, k);
    let scores = g.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    let bias = mask.map(AttentionMask::additive);
    let weights = g.softmax_rows(scores, bias.as_ref());
    Ok(g.matmul(weights, v))
}

/// Attention weights only (for inspection and tests).
pub fn attention_weights(q: &Tensor, k: &Tensor, mask: Option<&AttentionMask>) -> Result<Tensor> {
    let mut g = Graph::new();
    let qv = g.constant(q.clone());
    let kv = g.constant(k.clone());
    if q.cols() != k.cols() {
        bail!(Shape, "query dim {} vs key dim {}", q.cols(), k.cols());
    }
    let s = g.matmul_nt(qv, kv);
    let s = g.scale(s, 1.0 / (q.cols() as f64).sqrt());
    let bias = mask.map(AttentionMask::additive);
    let w = g.softmax_rows(s, bias.as_ref());
    Ok(g.value(w).clone())
}

/// Sinusoidal position code: `pe[2i] = sin(p / 10000^(2i/d))`,
/// `pe[2i+1] = cos(p / 10000^(2i/d))`.
pub fn sinusoidal_pe(position: usize, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        bail!(InvalidArgument, "sinusoidal encoding needs an even dim, got {dim}");
    }
    let p = position as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        out.push((p * freq).sin());
        out.push((p * freq).cos());
    }
    Ok(out)
}

/// `[len, dim]` table of sinusoidal codes for positions `0..len`.
pub fn sinusoidal_table(len: usize, dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(len * dim);
    for p in 0..len {
        data.extend(sinusoidal_pe(p, dim)?);
    }
    Ok(Tensor::from_parts(vec![len, dim], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let u = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let c = 1.7;
        let two = softmax(&[c, c + 2f64.ln()]).unwrap();
        assert!((two[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((two[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(softmax(&[4.2]).unwrap(), vec![1.0]);
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[f64::NAN]).is_err());
    }

    #[test]
    fn mask_rejects_blocked_diagonal() {
        assert!(AttentionMask::new(2, vec![true, false, false, false]).is_err());
        assert!(AttentionMask::new(2, vec![false, true, false, false]).is_ok());
        assert!(AttentionMask::cross(1, 2, vec![true, true]).is_err());
    }

    #[test]
    fn single_token_attention_returns_value() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[vec![0.3, -1.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[vec![2.0, 0.5]]).unwrap());
        let v = g.constant(Tensor::from_rows(&[vec![7.0, 8.0, 9.0]]).unwrap());
        let out = attention(&mut g, q, k, v, None).unwrap();
        assert_eq!(g.value(out).data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn diagonal_only_row_returns_own_value() {
        let mut g = Graph::new();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.1, 0.2]]).unwrap();
        let vals = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let q = g.constant(x.clone());
        let k = g.constant(x);
        let v = g.constant(vals);
        let mut blocked = vec![false; 9];
        blocked[3] = true; // row 1 blocks key 0
        blocked[5] = true; // and key 2
        let mask = AttentionMask::new(3, blocked).unwrap();
        let out = attention(&mut g, q, k, v, Some(&mask)).unwrap();
        assert_eq!(g.value(out).get(1, 0), 2.0);
    }

    #[test]
    fn equal_logits_split_evenly() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let k = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w = attention_weights(&x, &k, None).unwrap();
        for v in w.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_mask_equals_no_mask() {
        let mut rng = crate::rng::SimRng::new(3);
        let t = 5;
        let mk = |rng: &mut crate::rng::SimRng| Tensor::new(vec![t, 4], rng.normal_vec(t * 4)).unwrap();
        let (qt, kt, vt) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let run = |mask: Option<&AttentionMask>| {
            let mut g = Graph::new();
            let q = g.constant(qt.clone());
            let k = g.constant(kt.clone());
            let v = g.constant(vt.clone());
            let o = attention(&mut g, q, k, v, mask).unwrap();
            g.value(o).clone()
        };
        assert_eq!(run(None), run(Some(&AttentionMask::unmasked(t))));
    }

    #[test]
    fn sinusoidal_examples() {
        let p0 = sinusoidal_pe(0, 6).unwrap();
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = sinusoidal_pe(1, 8).unwrap();
        assert!((p1[0] - 1f64.sin()).abs() < 1e-15);
        assert!((p1[0] - 0.8415).abs() < 1e-4);
        assert!(sinusoidal_pe(3, 5).is_err());
        for pos in [0, 1, 7, 29, 1000, 123_456] {
            assert!(sinusoidal_pe(pos, 16).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
