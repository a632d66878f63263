//! Minimal reverse-mode differentiable substrate: `f64` tensors, a tape,
//! layers, masked attention, sinusoidal codes and a finite-difference
//! gradient checker.

mod gradcheck;
mod graph;
mod nn;
mod ops;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use nn::{mlp_forward, Activation, EncoderLayer, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use ops::{attention, attention_weights, sinusoidal_pe, sinusoidal_table, softmax, AttentionMask, MASK_BIAS};
pub use params::{AdamW, Bound, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::rng::SimRng;

    fn rand_t(rng: &mut SimRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range(-2.0, 2.0)).collect()).unwrap()
    }

    fn check(name: &str, params: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
        let r = grad_check(f, &params, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{name}: {}", r.max_rel_error);
    }

    // Random weights so sum() of the op output is not trivially symmetric.
    fn weighted(g: &mut Graph, x: Var, seed: u64) -> Var {
        let shape = g.shape(x).to_vec();
        let w = rand_t(&mut SimRng::new(seed), &shape);
        let w = g.constant(w);
        let p = g.mul(x, w);
        g.sum(p)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = SimRng::new(11);
        for trial in 0..5 {
            let a = rand_t(&mut rng, &[3, 4]);
            let b = rand_t(&mut rng, &[3, 4]);
            let pos = a.map(|x| x.abs() + 0.5);
            let c = rand_t(&mut rng, &[4, 2]);
            let row = rand_t(&mut rng, &[4]);
            let col = rand_t(&mut rng, &[3]);
            let s = trial as u64;
            check("add", vec![a.clone(), b.clone()], |g, v| { let y = g.add(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("sub", vec![a.clone(), b.clone()], |g, v| { let y = g.sub(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("mul", vec![a.clone(), b.clone()], |g, v| { let y = g.mul(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("div", vec![a.clone(), pos.clone()], |g, v| { let y = g.div(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("matmul", vec![a.clone(), c.clone()], |g, v| { let y = g.matmul(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("matmul_nt", vec![a.clone(), b.clone()], |g, v| { let y = g.matmul_nt(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("transpose", vec![a.clone()], |g, v| { let y = g.transpose(v[0]); Ok(weighted(g, y, s)) });
            check("add_row", vec![a.clone(), row.clone()], |g, v| { let y = g.add_row(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("mul_row", vec![a.clone(), row.clone()], |g, v| { let y = g.mul_row(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("mul_col", vec![a.clone(), col.clone()], |g, v| { let y = g.mul_col(v[0], v[1]); Ok(weighted(g, y, s)) });
            check("exp", vec![a.clone()], |g, v| { let y = g.exp(v[0]); Ok(weighted(g, y, s)) });
            check("ln", vec![pos.clone()], |g, v| { let y = g.ln(v[0]); Ok(weighted(g, y, s)) });
            check("sqrt", vec![pos.clone()], |g, v| { let y = g.sqrt(v[0]); Ok(weighted(g, y, s)) });
            check("powf", vec![pos.clone()], |g, v| { let y = g.powf(v[0], 2.5); Ok(weighted(g, y, s)) });
            check("scale", vec![a.clone()], |g, v| { let y = g.scale(v[0], -1.7); Ok(weighted(g, y, s)) });
            check("rsub", vec![a.clone()], |g, v| { let y = g.rsub_scalar(1.0, v[0]); Ok(weighted(g, y, s)) });
            check("sum_rows", vec![a.clone()], |g, v| { let y = g.sum_rows(v[0]); Ok(weighted(g, y, s)) });
            check("mean", vec![a.clone()], |g, v| Ok(g.mean(v[0])));
            check("gather_rows", vec![a.clone()], |g, v| { let y = g.gather_rows(v[0], &[2, 0, 2]); Ok(weighted(g, y, s)) });
            check("gather", vec![a.clone()], |g, v| { let y = g.gather(v[0], &[1, 5, 5, 11]); Ok(weighted(g, y, s)) });
            check("concat_rows", vec![a.clone(), b.clone()], |g, v| { let y = g.concat_rows(&[v[0], v[1]]); Ok(weighted(g, y, s)) });
            check("concat_cols", vec![a.clone(), c.clone().reshaped(vec![4, 2]).unwrap()], |g, v| {
                let t = g.transpose(v[1]); // 2x4
                let t = g.slice_cols(t, 0, 3); // 2x3
                let t = g.transpose(t); // 3x2
                let y = g.concat_cols(&[v[0], t]);
                Ok(weighted(g, y, s))
            });
            check("softmax_rows", vec![a.clone()], |g, v| { let y = g.softmax_rows(v[0], None); Ok(weighted(g, y, s)) });
            check("logsumexp_rows", vec![a.clone()], |g, v| {
                let mut bias = Tensor::zeros(&[3, 4]);
                bias.data_mut()[1] = MASK_BIAS;
                let y = g.logsumexp_rows(v[0], Some(&bias));
                Ok(weighted(g, y, s))
            });
            check("log_softmax_rows", vec![a.clone()], |g, v| { let y = g.log_softmax_rows(v[0]); Ok(weighted(g, y, s)) });
            check("layer_norm_rows", vec![a.clone()], |g, v| { let y = g.layer_norm_rows(v[0], 1e-5); Ok(weighted(g, y, s)) });
            check("l2_normalize_rows", vec![a.clone()], |g, v| { let y = g.l2_normalize_rows(v[0]); Ok(weighted(g, y, s)) });
            check("reshape", vec![a.clone()], |g, v| { let y = g.reshape(v[0], &[12]); Ok(weighted(g, y, s)) });
        }
    }

    #[test]
    fn masked_attention_gradient() {
        let mut rng = SimRng::new(5);
        let t = 4;
        let mut blocked = vec![false; t * t];
        for j in 0..t {
            for k in 0..t {
                blocked[j * t + k] = k > j;
            }
        }
        let mask = AttentionMask::new(t, blocked).unwrap();
        let params = vec![rand_t(&mut rng, &[t, 3]), rand_t(&mut rng, &[t, 3]), rand_t(&mut rng, &[t, 2])];
        check("attention", params, |g, v| {
            let y = attention(g, v[0], v[1], v[2], Some(&mask))?;
            Ok(weighted(g, y, 9))
        });
    }

    #[test]
    fn deterministic_forward() {
        let mut store = ParamStore::new();
        let mut rng = SimRng::new(2);
        let layer = EncoderLayer::new(&mut store, "enc", 8, 2, 16, &mut rng);
        let x = rand_t(&mut rng, &[5, 8]);
        let run = || {
            let mut g = Graph::new();
            let b = store.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let y = layer.forward(&mut g, &b, xv, None).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run().data(), run().data());
    }
}
