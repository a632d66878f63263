//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles during the
//! forward pass. [`Graph::backward`] walks the record in reverse and returns
//! the accumulated gradients. Nodes whose inputs do not require gradients
//! store no backward closure, so inference-only graphs stay cheap.
//!
//! A graph is confined to one thread and is dropped after backward.

use super::tensor::{gemm, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Receives the upstream gradient, the parent values and the node's own
/// value; returns one gradient per parent (`None` for "no contribution").
type BackwardFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Smallest distance of any kinked-op input from its kink.
    kink_gap: Option<f64>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape if nothing flowed back.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Smallest distance of any `relu`, `abs`, `maximum`, `minimum` or
    /// `clamp_min` input from the point where the op is not differentiable;
    /// infinite when no such op was recorded.
    pub fn kink_gap(&self) -> f64 {
        self.kink_gap.unwrap_or(f64::INFINITY)
    }

    fn note_kink(&mut self, gap: f64) {
        self.kink_gap = Some(self.kink_gap().min(gap));
    }

    fn pair_gap(&self, a: Var, b: Var) -> f64 {
        self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| (x - y).abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.0).collect(),
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar output (seeded with 1).
    pub fn backward(&self, output: Var) -> Gradients {
        let seed = Tensor::full(self.nodes[output.0].value.shape(), 1.0);
        self.backward_with(output, seed)
    }

    pub fn backward_with(&self, output: Var, seed: Tensor) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let parent_vals: Vec<&Tensor> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let contributions = bw(&g, &parent_vals, &node.value);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (&p, c) in node.parents.iter().zip(contributions) {
                let Some(c) = c else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.data_mut().iter_mut().zip(c.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

fn assert_matrix(t: &Tensor, what: &str) -> (usize, usize) {
    assert_eq!(t.shape().len(), 2, "{what}: expected a matrix, got shape {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

// Elementwise and structural operations. Shape errors here are programming
// errors and panic; validated entry points live in `ops`/`nn`.
impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, &[a, b], |g, _, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, &[a, b], |g, _, _| vec![Some(g.clone()), Some(g.map(|x| -x))])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, &[a, b], |g, p, _| {
            vec![Some(zip_map(g, p[1], |g, y| g * y)), Some(zip_map(g, p[0], |g, x| g * x))]
        })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x / y);
        self.push(v, &[a, b], |g, p, out| {
            let ga = zip_map(g, p[1], |g, y| g / y);
            let gb = Tensor::from_parts(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(p[1].data())
                    .zip(out.data())
                    .map(|((g, y), o)| -g * o / y)
                    .collect(),
            );
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), f64::max);
        self.note_kink(self.pair_gap(a, b));
        self.push(v, &[a, b], |g, p, _| {
            let ga = Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(p[0].data().iter().zip(p[1].data())).map(|(g, (x, y))| if x >= y { *g } else { 0.0 }).collect(),
            );
            let gb = Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(p[0].data().iter().zip(p[1].data())).map(|(g, (x, y))| if x >= y { 0.0 } else { *g }).collect(),
            );
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), f64::min);
        self.note_kink(self.pair_gap(a, b));
        self.push(v, &[a, b], |g, p, _| {
            let ga = Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(p[0].data().iter().zip(p[1].data())).map(|(g, (x, y))| if x <= y { *g } else { 0.0 }).collect(),
            );
            let gb = Tensor::from_parts(
                g.shape().to_vec(),
                g.data().iter().zip(p[0].data().iter().zip(p[1].data())).map(|(g, (x, y))| if x <= y { 0.0 } else { *g }).collect(),
            );
            vec![Some(ga), Some(gb)]
        })
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, &[a], move |g, _, _| vec![Some(g.map(|x| x * c))])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, &[a], |g, _, _| vec![Some(g.clone())])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `c - a`
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let v = self.value(a).map(|x| c - x);
        self.push(v, &[a], |g, _, _| vec![Some(g.map(|x| -x))])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let gap = self.value(a).data().iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        self.note_kink(gap);
        self.push(v, &[a], |g, p, _| vec![Some(zip_map(g, p[0], |g, x| if x > 0.0 { g } else { 0.0 }))])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, &[a], |g, _, out| vec![Some(zip_map(g, out, |g, o| g * o))])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, &[a], |g, p, _| vec![Some(zip_map(g, p[0], |g, x| g / x))])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        let gap = v.data().iter().copied().fold(f64::INFINITY, f64::min);
        self.note_kink(gap);
        self.push(v, &[a], |g, p, _| vec![Some(zip_map(g, p[0], |g, x| g * x.signum() * (x != 0.0) as u8 as f64))])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, &[a], |g, _, out| vec![Some(zip_map(g, out, |g, o| g * 0.5 / o))])
    }

    pub fn powf(&mut self, a: Var, e: f64) -> Var {
        let v = self.value(a).map(|x| x.powf(e));
        self.push(v, &[a], move |g, p, _| {
            vec![Some(zip_map(g, p[0], |g, x| if e == 0.0 { 0.0 } else { g * e * x.powf(e - 1.0) }))]
        })
    }

    /// Clamps from below; the gradient is zero where the clamp is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Var {
        let v = self.value(a).map(|x| x.max(lo));
        let gap = self.value(a).data().iter().map(|x| (x - lo).abs()).fold(f64::INFINITY, f64::min);
        self.note_kink(gap);
        self.push(v, &[a], move |g, p, _| vec![Some(zip_map(g, p[0], |g, x| if x >= lo { g } else { 0.0 }))])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::scalar(s), &[a], move |g, _, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums of an `[n, m]` matrix as an `[n]` vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "sum_rows");
        let v: Vec<f64> = (0..n).map(|i| self.value(a).row(i).iter().sum()).collect();
        self.push(Tensor::from_parts(vec![n], v), &[a], move |g, _, _| {
            let mut out = Vec::with_capacity(n * m);
            for i in 0..n {
                out.extend(std::iter::repeat_n(g.data()[i], m));
            }
            vec![Some(Tensor::from_parts(vec![n, m], out))]
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let old = self.value(a).shape().to_vec();
        let v = self.value(a).clone().reshaped(shape.to_vec()).expect("reshape size mismatch");
        self.push(v, &[a], move |g, _, _| vec![Some(g.clone().reshaped(old.clone()).unwrap())])
    }

    /// `[n, k] · [k, m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = assert_matrix(self.value(a), "matmul lhs");
        let (k2, m) = assert_matrix(self.value(b), "matmul rhs");
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push(Tensor::from_parts(vec![n, m], out), &[a, b], move |g, p, _| {
            let mut ga = vec![0.0; n * k];
            gemm(n, m, k, g.data(), false, p[1].data(), true, &mut ga, false);
            let mut gb = vec![0.0; k * m];
            gemm(k, n, m, p[0].data(), true, g.data(), false, &mut gb, false);
            vec![Some(Tensor::from_parts(vec![n, k], ga)), Some(Tensor::from_parts(vec![k, m], gb))]
        })
    }

    /// `[n, k] · [m, k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = assert_matrix(self.value(a), "matmul_nt lhs");
        let (m, k2) = assert_matrix(self.value(b), "matmul_nt rhs");
        assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, self.value(a).data(), false, self.value(b).data(), true, &mut out, false);
        self.push(Tensor::from_parts(vec![n, m], out), &[a, b], move |g, p, _| {
            let mut ga = vec![0.0; n * k];
            gemm(n, m, k, g.data(), false, p[1].data(), false, &mut ga, false);
            let mut gb = vec![0.0; m * k];
            gemm(m, n, k, g.data(), true, p[0].data(), false, &mut gb, false);
            vec![Some(Tensor::from_parts(vec![n, k], ga)), Some(Tensor::from_parts(vec![m, k], gb))]
        })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "transpose");
        let t = transpose_data(self.value(a).data(), n, m);
        self.push(Tensor::from_parts(vec![m, n], t), &[a], move |g, _, _| {
            vec![Some(Tensor::from_parts(vec![n, m], transpose_data(g.data(), m, n)))]
        })
    }

    /// Adds a length-`m` vector to every row of an `[n, m]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "add_row");
        assert_eq!(self.value(row).len(), m, "add_row width");
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(a).data().to_vec();
        for i in 0..n {
            v[i * m..(i + 1) * m].iter_mut().zip(&rv).for_each(|(x, r)| *x += r);
        }
        let rshape = self.value(row).shape().to_vec();
        self.push(Tensor::from_parts(vec![n, m], v), &[a, row], move |g, _, _| {
            let mut gr = vec![0.0; m];
            for i in 0..n {
                gr.iter_mut().zip(&g.data()[i * m..(i + 1) * m]).for_each(|(a, b)| *a += b);
            }
            vec![Some(g.clone()), Some(Tensor::from_parts(rshape.clone(), gr))]
        })
    }

    /// Multiplies every row of an `[n, m]` matrix elementwise by a length-`m` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "mul_row");
        assert_eq!(self.value(row).len(), m, "mul_row width");
        let rv = self.value(row).data().to_vec();
        let mut v = self.value(a).data().to_vec();
        for i in 0..n {
            v[i * m..(i + 1) * m].iter_mut().zip(&rv).for_each(|(x, r)| *x *= r);
        }
        let rshape = self.value(row).shape().to_vec();
        self.push(Tensor::from_parts(vec![n, m], v), &[a, row], move |g, p, _| {
            let mut ga = g.data().to_vec();
            let mut gr = vec![0.0; m];
            for i in 0..n {
                for j in 0..m {
                    ga[i * m + j] = g.data()[i * m + j] * p[1].data()[j];
                    gr[j] += g.data()[i * m + j] * p[0].data()[i * m + j];
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga)), Some(Tensor::from_parts(rshape.clone(), gr))]
        })
    }

    /// Scales row `i` of an `[n, m]` matrix by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "mul_col");
        assert_eq!(self.value(col).len(), n, "mul_col height");
        let cv = self.value(col).data().to_vec();
        let mut v = self.value(a).data().to_vec();
        for i in 0..n {
            v[i * m..(i + 1) * m].iter_mut().for_each(|x| *x *= cv[i]);
        }
        let cshape = self.value(col).shape().to_vec();
        self.push(Tensor::from_parts(vec![n, m], v), &[a, col], move |g, p, _| {
            let mut ga = vec![0.0; n * m];
            let mut gc = vec![0.0; n];
            for i in 0..n {
                for j in 0..m {
                    ga[i * m + j] = g.data()[i * m + j] * p[1].data()[i];
                    gc[i] += g.data()[i * m + j] * p[0].data()[i * m + j];
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga)), Some(Tensor::from_parts(cshape.clone(), gc))]
        })
    }

    /// Picks rows of an `[n, m]` matrix (indices may repeat).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let (n, m) = assert_matrix(self.value(a), "gather_rows");
        let mut v = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            assert!(i < n, "gather_rows index {i} out of {n}");
            v.extend_from_slice(self.value(a).row(i));
        }
        let idx = idx.to_vec();
        self.push(Tensor::from_parts(vec![idx.len(), m], v), &[a], move |g, _, _| {
            let mut ga = vec![0.0; n * m];
            for (r, &i) in idx.iter().enumerate() {
                ga[i * m..(i + 1) * m].iter_mut().zip(&g.data()[r * m..(r + 1) * m]).for_each(|(a, b)| *a += b);
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Picks flat elements into a 1-D vector.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let src = self.value(a).data();
        let v: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let shape = self.value(a).shape().to_vec();
        let len = self.value(a).len();
        let idx = idx.to_vec();
        self.push(Tensor::from_parts(vec![idx.len()], v), &[a], move |g, _, _| {
            let mut ga = vec![0.0; len];
            for (r, &i) in idx.iter().enumerate() {
                ga[i] += g.data()[r];
            }
            vec![Some(Tensor::from_parts(shape.clone(), ga))]
        })
    }

    /// Stacks matrices with equal column counts (1-D inputs count as one row).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let m = self.value(parts[0]).cols();
        let mut v = Vec::new();
        let mut heights = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), m, "concat_rows width");
            heights.push((t.rows(), t.shape().to_vec()));
            v.extend_from_slice(t.data());
        }
        let total: usize = heights.iter().map(|h| h.0).sum();
        self.push(Tensor::from_parts(vec![total, m], v), parts, move |g, _, _| {
            let mut off = 0;
            heights
                .iter()
                .map(|(h, shape)| {
                    let t = Tensor::from_parts(shape.clone(), g.data()[off * m..(off + h) * m].to_vec());
                    off += h;
                    Some(t)
                })
                .collect()
        })
    }

    /// Joins `[n, m_i]` matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let shapes: Vec<Vec<usize>> = parts.iter().map(|&p| self.value(p).shape().to_vec()).collect();
        let total: usize = widths.iter().sum();
        let mut v = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            assert_eq!(t.rows(), n, "concat_cols height");
            for i in 0..n {
                v[i * total + off..i * total + off + w].copy_from_slice(t.row(i));
            }
            off += w;
        }
        self.push(Tensor::from_parts(vec![n, total], v), parts, move |g, _, _| {
            let mut off = 0;
            widths
                .iter()
                .zip(&shapes)
                .map(|(&w, shape)| {
                    let mut d = Vec::with_capacity(n * w);
                    for i in 0..n {
                        d.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                    }
                    off += w;
                    Some(Tensor::from_parts(shape.clone(), d))
                })
                .collect()
        })
    }

    /// Columns `[start, end)` of an `[n, m]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (n, m) = assert_matrix(self.value(a), "slice_cols");
        assert!(start <= end && end <= m, "slice_cols range");
        let w = end - start;
        let mut v = Vec::with_capacity(n * w);
        for i in 0..n {
            v.extend_from_slice(&self.value(a).row(i)[start..end]);
        }
        self.push(Tensor::from_parts(vec![n, w], v), &[a], move |g, _, _| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                ga[i * m + start..i * m + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Row-wise softmax with an optional additive bias (e.g. a −1e30 mask).
    pub fn softmax_rows(&mut self, a: Var, additive: Option<&Tensor>) -> Var {
        let (n, m) = assert_matrix(self.value(a), "softmax_rows");
        let mut v = self.value(a).data().to_vec();
        if let Some(b) = additive {
            assert_eq!(b.shape(), [n, m], "softmax mask shape");
            v.iter_mut().zip(b.data()).for_each(|(x, b)| *x += b);
        }
        for i in 0..n {
            softmax_in_place(&mut v[i * m..(i + 1) * m]);
        }
        self.push(Tensor::from_parts(vec![n, m], v), &[a], move |g, _, out| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                let o = &out.data()[i * m..(i + 1) * m];
                let gr = &g.data()[i * m..(i + 1) * m];
                let dot: f64 = o.iter().zip(gr).map(|(o, g)| o * g).sum();
                for j in 0..m {
                    ga[i * m + j] = o[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "log_softmax_rows");
        let mut v = self.value(a).data().to_vec();
        for i in 0..n {
            let row = &mut v[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        self.push(Tensor::from_parts(vec![n, m], v), &[a], move |g, _, out| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                let o = &out.data()[i * m..(i + 1) * m];
                let gr = &g.data()[i * m..(i + 1) * m];
                let gs: f64 = gr.iter().sum();
                for j in 0..m {
                    ga[i * m + j] = gr[j] - o[j].exp() * gs;
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Row-wise `ln Σ exp` as an `[n]` vector, with an optional additive
    /// bias. Every row must keep at least one unbiased entry.
    pub fn logsumexp_rows(&mut self, a: Var, additive: Option<&Tensor>) -> Var {
        let (n, m) = assert_matrix(self.value(a), "logsumexp_rows");
        let mut w = self.value(a).data().to_vec();
        if let Some(b) = additive {
            assert_eq!(b.shape(), [n, m], "logsumexp mask shape");
            w.iter_mut().zip(b.data()).for_each(|(x, b)| *x += b);
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut w[i * m..(i + 1) * m];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            out.push(mx + s.ln());
            softmax_in_place(row);
        }
        self.push(Tensor::from_parts(vec![n], out), &[a], move |g, _, _| {
            let ga: Vec<f64> = (0..n * m).map(|k| g.data()[k / m] * w[k]).collect();
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Normalizes each row to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (n, m) = assert_matrix(self.value(a), "layer_norm_rows");
        let mut v = self.value(a).data().to_vec();
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            let row = &mut v[i * m..(i + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            row.iter_mut().for_each(|x| *x = (*x - mean) * is);
        }
        self.push(Tensor::from_parts(vec![n, m], v), &[a], move |g, _, out| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                let y = &out.data()[i * m..(i + 1) * m];
                let gr = &g.data()[i * m..(i + 1) * m];
                let mg = gr.iter().sum::<f64>() / m as f64;
                let mgy = gr.iter().zip(y).map(|(g, y)| g * y).sum::<f64>() / m as f64;
                for j in 0..m {
                    ga[i * m + j] = inv_std[i] * (gr[j] - mg - y[j] * mgy);
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }

    /// Scales each row to unit L2 norm. Rows must be nonzero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let (n, m) = assert_matrix(self.value(a), "l2_normalize_rows");
        let mut v = self.value(a).data().to_vec();
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let row = &mut v[i * m..(i + 1) * m];
            let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            norms[i] = nrm;
            row.iter_mut().for_each(|x| *x /= nrm);
        }
        self.push(Tensor::from_parts(vec![n, m], v), &[a], move |g, _, out| {
            let mut ga = vec![0.0; n * m];
            for i in 0..n {
                let y = &out.data()[i * m..(i + 1) * m];
                let gr = &g.data()[i * m..(i + 1) * m];
                let dot: f64 = gr.iter().zip(y).map(|(g, y)| g * y).sum();
                for j in 0..m {
                    ga[i * m + j] = (gr[j] - y[j] * dot) / norms[i];
                }
            }
            vec![Some(Tensor::from_parts(vec![n, m], ga))]
        })
    }
}

fn transpose_data(d: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            t[j * n + i] = d[i * m + j];
        }
    }
    t
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}
