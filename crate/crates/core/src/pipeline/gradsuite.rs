//! Central-difference checks over every graph op, layer and loss, each on
//! freshly drawn random instances. Inputs of kinked ops are drawn at least
//! `KINK_MARGIN` from the kink, and composite instances whose forward pass
//! lands near one are redrawn, so a difference never straddles a kink.

use std::time::{Duration, Instant};

use crate::diffcore::{
    attention, grad_check_with, AttentionMask, Bound, EncoderLayer, GradCheckOptions, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention,
    ParamStore, Tensor, Var, MASK_BIAS,
};
use crate::error::{bail, Result};
use crate::geometry::{focal_loss_logits, giou_loss_var, l1_loss_var, Box2D, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::identity::{ia_loss_var, info_nce_var, sample_pairs, LabeledEmbedding};
use crate::rng::SimRng;
use crate::spatial::{box_region_mask, lid_bins, pyramid_average_var, weighted_depth_loss_var, DepthBranch, DepthContext, DepthPeTable, FusionBlock};
use crate::temporal::{MissingMode, TemporalAdapter};

use super::config::LossWeights;
use super::losses::{id_logits, id_loss_var};

pub const SUITE_INSTANCES: usize = 20;
pub const SUITE_TOLERANCE: f64 = 1e-4;
const EPSILON: f64 = 1e-5;
const KINK_MARGIN: f64 = 0.05;
/// Instances whose forward pass puts a kinked op closer than this to its
/// kink are redrawn; it is two orders above the difference step.
const MIN_KINK_GAP: f64 = 1e-3;
const MAX_DRAWS: usize = 50;
/// Coordinates sampled per parameter tensor in the layer cases.
const LAYER_COORDS: usize = 6;

type Objective = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

struct Instance {
    params: Vec<Tensor>,
    f: Objective,
    coords: Option<usize>,
}

type Builder = fn(&mut SimRng) -> Result<Instance>;

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.max_rel_error < tolerance)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("case,instances,coords,max_rel_error\n");
        for c in &self.cases {
            s.push_str(&format!("{},{},{},{:.3e}\n", c.name, c.instances, c.coords, c.max_rel_error));
        }
        s
    }
}

fn rand_t(rng: &mut SimRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range(lo, hi)).collect()).expect("shape matches data")
}

/// Values at least `KINK_MARGIN` from `kink` on a random side.
fn off_kink(rng: &mut SimRng, shape: &[usize], kink: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let d = rng.range(KINK_MARGIN, 2.0);
            if rng.bernoulli(0.5) {
                kink + d
            } else {
                kink - d
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// `b` differing from `a` by at least `KINK_MARGIN` everywhere.
fn separated(rng: &mut SimRng, a: &Tensor) -> Tensor {
    let offsets = off_kink(rng, a.shape(), 0.0);
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(offsets.data()).map(|(x, d)| x + d).collect()).expect("same shape")
}

/// Reduces a node to a scalar with fixed random weights, so that symmetric
/// errors cannot cancel in a plain sum.
fn project_out(g: &mut Graph, y: Var, w: &Tensor) -> Var {
    let wv = g.constant(w.clone());
    let p = g.mul(y, wv);
    g.sum(p)
}

/// Output shape of `op` on constant inputs.
fn shape_of(inputs: &[&Tensor], op: impl Fn(&mut Graph, &[Var]) -> Var) -> Vec<usize> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant((*t).clone())).collect();
    let y = op(&mut g, &vars);
    g.shape(y).to_vec()
}

fn unary(rng: &mut SimRng, x: Tensor, op: fn(&mut Graph, Var) -> Var) -> Instance {
    let w = rand_t(rng, &shape_of(&[&x], |g, v| op(g, v[0])), -1.0, 1.0);
    Instance { params: vec![x], f: Box::new(move |g, v| {
        let y = op(g, v[0]);
        Ok(project_out(g, y, &w))
    }), coords: None }
}

fn binary(rng: &mut SimRng, a: Tensor, b: Tensor, op: fn(&mut Graph, Var, Var) -> Var) -> Instance {
    let w = rand_t(rng, &shape_of(&[&a, &b], |g, v| op(g, v[0], v[1])), -1.0, 1.0);
    Instance { params: vec![a, b], f: Box::new(move |g, v| {
        let y = op(g, v[0], v[1]);
        Ok(project_out(g, y, &w))
    }), coords: None }
}

fn random_mask(rng: &mut SimRng, rows: usize, cols: usize) -> Result<AttentionMask> {
    // every row keeps at least one open key
    let blocked = (0..rows * cols).map(|i| i % cols != i / cols % cols && rng.bernoulli(0.4)).collect();
    AttentionMask::cross(rows, cols, blocked)
}

/// An instance over all parameters of `store`, redrawn at random, followed
/// by `inputs`; the objective sees the bound parameters and the input nodes.
/// Redrawing also moves zero-initialized biases, which would otherwise put
/// ReLUs fed by all-zero rows exactly on their kink.
fn with_store(
    rng: &mut SimRng,
    mut store: ParamStore,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Graph, &Bound, &[Var]) -> Result<Var> + 'static,
) -> Instance {
    jitter(&mut store, rng);
    let n = store.len();
    let mut params = store.values().to_vec();
    params.extend(inputs);
    Instance {
        params,
        f: Box::new(move |g, v| {
            let b = Bound::from_vars(v[..n].to_vec());
            f(g, &b, &v[n..])
        }),
        coords: Some(LAYER_COORDS),
    }
}

fn jitter(store: &mut ParamStore, rng: &mut SimRng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t = store.get(id).clone();
        store.set(id, rand_t(rng, t.shape(), -0.5, 0.5));
    }
}

fn boxes_near(rng: &mut SimRng, target: &[Box2D]) -> Tensor {
    // edges moved by 5–30% of the extent; overlaps stay positive and no
    // pair of edges coincides
    let mut data = Vec::with_capacity(target.len() * 4);
    for b in target {
        let mut shift = |extent: f64| {
            let d = rng.range(0.05, 0.3) * extent;
            if rng.bernoulli(0.5) {
                d
            } else {
                -d
            }
        };
        let (dx, dy) = (shift(b.w), shift(b.h));
        let (dw, dh) = (shift(b.w) * 0.5, shift(b.h) * 0.5);
        // right edge offset dx + dw stays away from zero
        let dw = if (dx + dw).abs() < KINK_MARGIN * b.w { dw + dx.signum() * 0.1 * b.w } else { dw };
        let dh = if (dy + dh).abs() < KINK_MARGIN * b.h { dh + dy.signum() * 0.1 * b.h } else { dh };
        data.extend([b.x + dx, b.y + dy, b.w + dw, b.h + dh]);
    }
    Tensor::new(vec![target.len(), 4], data).expect("four columns")
}

fn random_boxes(rng: &mut SimRng, n: usize) -> Vec<Box2D> {
    (0..n).map(|_| Box2D { x: rng.range(0.0, 5.0), y: rng.range(0.0, 5.0), w: rng.range(1.0, 4.0), h: rng.range(1.0, 4.0) }).collect()
}

/// Labeled pool over `frames × ids` with IoUs in [0.3, 1]; identity 1 stays
/// above the filter in the first two frames so `𝒫` is never empty.
fn labeled_pool(rng: &mut SimRng, frames: u32, ids: u32) -> Vec<LabeledEmbedding> {
    let mut pool = Vec::new();
    for f in 1..=frames {
        for id in 1..=ids {
            let iou = if id == 1 && f <= 2 { rng.range(0.6, 1.0) } else { rng.range(0.3, 1.0) };
            pool.push(LabeledEmbedding { embedding: Vec::new(), frame: f, identity: Some(id), iou });
        }
    }
    pool
}

fn any(rng: &mut SimRng, shape: &[usize]) -> Tensor {
    rand_t(rng, shape, -2.0, 2.0)
}

fn pos(rng: &mut SimRng, shape: &[usize]) -> Tensor {
    rand_t(rng, shape, 0.3, 2.5)
}

fn around0(rng: &mut SimRng, shape: &[usize]) -> Tensor {
    off_kink(rng, shape, 0.0)
}

/// Nonzero, at least 0.35 from zero.
fn nonzero(rng: &mut SimRng, shape: &[usize]) -> Tensor {
    off_kink(rng, shape, 0.0).map(|x| x + x.signum() * 0.3)
}

macro_rules! op1 {
    ($name:literal, $shape:expr, $gen:expr, $op:expr) => {
        ($name, (|rng: &mut SimRng| {
            let x = $gen(rng, &$shape);
            Ok(unary(rng, x, $op))
        }) as Builder)
    };
}

macro_rules! op2 {
    ($name:literal, $sa:expr, $sb:expr, $gb:expr, $op:expr) => {
        ($name, (|rng: &mut SimRng| {
            let a = any(rng, &$sa);
            let b = $gb(rng, &$sb);
            Ok(binary(rng, a, b, $op))
        }) as Builder)
    };
}

fn cases() -> Vec<(&'static str, Builder)> {
    vec![
        op2!("add", [3, 4], [3, 4], any, |g, a, b| g.add(a, b)),
        op2!("sub", [3, 4], [3, 4], any, |g, a, b| g.sub(a, b)),
        op2!("mul", [3, 4], [3, 4], any, |g, a, b| g.mul(a, b)),
        op2!("div", [3, 4], [3, 4], nonzero, |g, a, b| g.div(a, b)),
        ("maximum", |rng| {
            let a = rand_t(rng, &[3, 4], -2.0, 2.0);
            let b = separated(rng, &a);
            Ok(binary(rng, a, b, |g, a, b| g.maximum(a, b)))
        }),
        ("minimum", |rng| {
            let a = rand_t(rng, &[3, 4], -2.0, 2.0);
            let b = separated(rng, &a);
            Ok(binary(rng, a, b, |g, a, b| g.minimum(a, b)))
        }),
        op1!("scale", [3, 4], any, |g, x| g.scale(x, -1.7)),
        op1!("add_scalar", [3, 4], any, |g, x| g.add_scalar(x, 0.8)),
        op1!("neg", [3, 4], any, |g, x| g.neg(x)),
        op1!("rsub_scalar", [3, 4], any, |g, x| g.rsub_scalar(1.5, x)),
        op1!("relu", [3, 4], around0, |g, x| g.relu(x)),
        op1!("exp", [3, 4], any, |g, x| g.exp(x)),
        op1!("ln", [3, 4], pos, |g, x| g.ln(x)),
        op1!("abs", [3, 4], around0, |g, x| g.abs(x)),
        op1!("sqrt", [3, 4], pos, |g, x| g.sqrt(x)),
        op1!("powf", [3, 4], pos, |g, x| g.powf(x, 2.5)),
        ("clamp_min", |rng| {
            let x = off_kink(rng, &[3, 4], 0.4);
            Ok(unary(rng, x, |g, x| g.clamp_min(x, 0.4)))
        }),
        op1!("sum", [3, 4], any, |g, x| g.sum(x)),
        op1!("mean", [3, 4], any, |g, x| g.mean(x)),
        op1!("sum_rows", [3, 4], any, |g, x| g.sum_rows(x)),
        op1!("reshape", [3, 4], any, |g, x| g.reshape(x, &[2, 6])),
        op1!("transpose", [3, 4], any, |g, x| g.transpose(x)),
        op2!("matmul", [3, 4], [4, 2], any, |g, a, b| g.matmul(a, b)),
        op2!("matmul_nt", [3, 4], [5, 4], any, |g, a, b| g.matmul_nt(a, b)),
        op2!("add_row", [3, 4], [4], any, |g, a, b| g.add_row(a, b)),
        op2!("mul_row", [3, 4], [4], any, |g, a, b| g.mul_row(a, b)),
        op2!("mul_col", [3, 4], [3], any, |g, a, b| g.mul_col(a, b)),
        op1!("gather_rows", [3, 4], any, |g, x| g.gather_rows(x, &[2, 0, 2, 1])),
        op1!("gather", [3, 4], any, |g, x| {
            let y = g.gather(x, &[1, 5, 5, 11, 0]);
            g.reshape(y, &[1, 5])
        }),
        op2!("concat_rows", [3, 4], [2, 4], any, |g, a, b| g.concat_rows(&[a, b])),
        op2!("concat_cols", [3, 4], [3, 2], any, |g, a, b| g.concat_cols(&[a, b])),
        op1!("slice_cols", [3, 5], any, |g, x| g.slice_cols(x, 1, 4)),
        ("softmax_rows", |rng| {
            let x = rand_t(rng, &[3, 4], -2.0, 2.0);
            let mask = random_mask(rng, 3, 4)?.additive();
            let w = rand_t(rng, &[3, 4], -1.0, 1.0);
            Ok(Instance {
                params: vec![x],
                f: Box::new(move |g, v| {
                    let y = g.softmax_rows(v[0], Some(&mask));
                    Ok(project_out(g, y, &w))
                }),
                coords: None,
            })
        }),
        op1!("log_softmax_rows", [3, 4], any, |g, x| g.log_softmax_rows(x)),
        ("logsumexp_rows", |rng| {
            let x = rand_t(rng, &[3, 4], -2.0, 2.0);
            let mut bias = Tensor::zeros(&[3, 4]);
            bias.data_mut()[1] = MASK_BIAS;
            bias.data_mut()[6] = MASK_BIAS;
            let w = rand_t(rng, &[3], -1.0, 1.0);
            Ok(Instance {
                params: vec![x],
                f: Box::new(move |g, v| {
                    let y = g.logsumexp_rows(v[0], Some(&bias));
                    Ok(project_out(g, y, &w))
                }),
                coords: None,
            })
        }),
        op1!("layer_norm_rows", [3, 4], any, |g, x| g.layer_norm_rows(x, 1e-5)),
        op1!("l2_normalize_rows", [3, 4], any, |g, x| g.l2_normalize_rows(x)),
        ("attention", |rng| {
            let (q, k, val) = (rand_t(rng, &[4, 3], -1.0, 1.0), rand_t(rng, &[5, 3], -1.0, 1.0), rand_t(rng, &[5, 2], -1.0, 1.0));
            let mask = random_mask(rng, 4, 5)?;
            let w = rand_t(rng, &[4, 2], -1.0, 1.0);
            Ok(Instance {
                params: vec![q, k, val],
                f: Box::new(move |g, v| {
                    let y = attention(g, v[0], v[1], v[2], Some(&mask))?;
                    Ok(project_out(g, y, &w))
                }),
                coords: None,
            })
        }),
        ("linear", |rng| {
            let mut store = ParamStore::new();
            let layer = Linear::new(&mut store, "l", 4, 3, rng);
            let x = rand_t(rng, &[5, 4], -1.0, 1.0);
            let w = rand_t(rng, &[5, 3], -1.0, 1.0);
            Ok(with_store(rng, store, vec![x], move |g, b, v| {
                let y = layer.forward(g, b, v[0])?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("mlp", |rng| {
            let mut store = ParamStore::new();
            let mlp = Mlp::new(&mut store, "m", &[4, 6, 6, 3], rng);
            let x = rand_t(rng, &[5, 4], -1.0, 1.0);
            let w = rand_t(rng, &[5, 3], -1.0, 1.0);
            Ok(with_store(rng, store, vec![x], move |g, b, v| {
                let y = mlp.forward(g, b, v[0])?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("layer_norm", |rng| {
            let mut store = ParamStore::new();
            let ln = LayerNorm::new(&mut store, "n", 4);
            let x = rand_t(rng, &[3, 4], -1.0, 1.0);
            let w = rand_t(rng, &[3, 4], -1.0, 1.0);
            Ok(with_store(rng, store, vec![x], move |g, b, v| {
                let y = ln.forward(g, b, v[0]);
                Ok(project_out(g, y, &w))
            }))
        }),
        ("multi_head_attention", |rng| {
            let mut store = ParamStore::new();
            let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, rng);
            let (q, kv) = (rand_t(rng, &[3, 4], -1.0, 1.0), rand_t(rng, &[5, 4], -1.0, 1.0));
            let mask = random_mask(rng, 3, 5)?;
            let w = rand_t(rng, &[3, 4], -1.0, 1.0);
            Ok(with_store(rng, store, vec![q, kv], move |g, b, v| {
                let y = mha.forward(g, b, v[0], v[1], v[1], Some(&mask))?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("encoder_layer", |rng| {
            let mut store = ParamStore::new();
            let layer = EncoderLayer::new(&mut store, "e", 4, 2, 8, rng);
            let x = rand_t(rng, &[4, 4], -1.0, 1.0);
            let mask = crate::temporal::causal_mask(4);
            let w = rand_t(rng, &[4, 4], -1.0, 1.0);
            Ok(with_store(rng, store, vec![x], move |g, b, v| {
                let y = layer.forward(g, b, v[0], Some(&mask))?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("fusion_block", |rng| {
            let mut store = ParamStore::new();
            let block = FusionBlock::new(&mut store, "f", 4, 2, true, rng);
            let boxes = vec![Box2D { x: 0.0, y: 0.0, w: 5.0, h: 5.0 }, Box2D { x: 4.0, y: 3.0, w: 4.0, h: 5.0 }];
            let vmask = box_region_mask(&boxes, 2, 2, 8.0, 8.0)?;
            let inputs = vec![rand_t(rng, &[2, 4], -1.0, 1.0), rand_t(rng, &[4, 4], -1.0, 1.0), rand_t(rng, &[4, 4], -1.0, 1.0), rand_t(rng, &[4, 4], -0.3, 0.3)];
            let w = rand_t(rng, &[2, 4], -1.0, 1.0);
            Ok(with_store(rng, store, inputs, move |g, b, v| {
                let ctx = DepthContext { features: v[2], pe: Some(v[3]), mask: Some(&vmask) };
                let y = block.forward(g, b, v[0], v[1], Some(&vmask), Some(&ctx))?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("depth_branch", |rng| {
            let mut store = ParamStore::new();
            let bins = lid_bins(5, 0.0, 20.0)?;
            // the PE path is detached from the predicted depth, so it is
            // checked separately below
            let branch = DepthBranch::new(&mut store, "d", 4, 2, 1, bins, 8, false, rng)?;
            let x = rand_t(rng, &[4, 4], -1.0, 1.0);
            let (wl, wf) = (rand_t(rng, &[4, 6], -1.0, 1.0), rand_t(rng, &[4, 4], -1.0, 1.0));
            Ok(with_store(rng, store, vec![x], move |g, b, v| {
                let out = branch.forward(g, b, v[0])?;
                let l = project_out(g, out.logits, &wl);
                let f = project_out(g, out.features, &wf);
                Ok(g.add(l, f))
            }))
        }),
        ("depth_pe", |rng| {
            let mut store = ParamStore::new();
            let table = DepthPeTable::new(&mut store, "pe", 8, 4, 0.0, 20.0, rng)?;
            let depths: Vec<f64> = (0..5).map(|_| rng.range(-2.0, 22.0)).collect();
            let w = rand_t(rng, &[5, 4], -1.0, 1.0);
            Ok(with_store(rng, store, vec![], move |g, b, _| {
                let y = table.forward(g, b, &depths)?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("pyramid_average", |rng| {
            let inputs = vec![rand_t(rng, &[16, 2], -1.0, 1.0), rand_t(rng, &[4, 2], -1.0, 1.0), rand_t(rng, &[1, 2], -1.0, 1.0)];
            let w = rand_t(rng, &[16, 2], -1.0, 1.0);
            Ok(Instance {
                params: inputs,
                f: Box::new(move |g, v| {
                    let y = pyramid_average_var(g, (v[0], 4, 4), (v[1], 2, 2), (v[2], 1, 1));
                    Ok(project_out(g, y, &w))
                }),
                coords: None,
            })
        }),
        ("temporal_adapter", |rng| {
            let mut store = ParamStore::new();
            let ta = TemporalAdapter::new(&mut store, "ta", 4, 2, 2, MissingMode::Mask, rng);
            let t = 5;
            let mut presence: Vec<bool> = (0..t).map(|_| rng.bernoulli(0.7)).collect();
            presence[0] = true;
            let raw = rand_t(rng, &[t, 4], -1.0, 1.0);
            let w = rand_t(rng, &[t, 4], -1.0, 1.0);
            Ok(with_store(rng, store, vec![raw], move |g, b, v| {
                let y = ta.encode(g, b, v[0], &presence)?;
                Ok(project_out(g, y, &w))
            }))
        }),
        ("focal", |rng| {
            let n = 6;
            let targets: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.range(0.5, 2.0)).collect();
            Ok(Instance {
                params: vec![rand_t(rng, &[n, 2], -2.0, 2.0)],
                f: Box::new(move |g, v| focal_loss_logits(g, v[0], &targets, Some(&weights), FOCAL_ALPHA, FOCAL_GAMMA)),
                coords: None,
            })
        }),
        ("l1", |rng| {
            let target = random_boxes(rng, 4);
            let t: Vec<f64> = target.iter().flat_map(|b| b.to_array()).collect();
            let offsets = off_kink(rng, &[4, 4], 0.0);
            let pred = Tensor::new(vec![4, 4], t.iter().zip(offsets.data()).map(|(a, d)| a + d).collect())?;
            Ok(Instance { params: vec![pred], f: Box::new(move |g, v| l1_loss_var(g, v[0], &target)), coords: None })
        }),
        ("giou", |rng| {
            let target = random_boxes(rng, 4);
            let pred = boxes_near(rng, &target);
            Ok(Instance { params: vec![pred], f: Box::new(move |g, v| giou_loss_var(g, v[0], &target)), coords: None })
        }),
        ("weighted_depth", |rng| {
            let n = 8;
            let k = 6;
            let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let fg: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
            Ok(Instance {
                params: vec![rand_t(rng, &[n, k], -2.0, 2.0)],
                f: Box::new(move |g, v| weighted_depth_loss_var(g, v[0], &targets, &fg, 7.0)),
                coords: None,
            })
        }),
        ("info_nce", |rng| {
            let m = 1 + rng.below(5);
            let inputs = vec![rand_t(rng, &[1, 4], -1.0, 1.0), rand_t(rng, &[1, 4], -1.0, 1.0), rand_t(rng, &[m, 4], -1.0, 1.0)];
            Ok(Instance {
                params: inputs,
                f: Box::new(move |g, v| {
                    // on unit rows, as inside the identity adapter
                    let a = g.l2_normalize_rows(v[0]);
                    let p = g.l2_normalize_rows(v[1]);
                    let n = g.l2_normalize_rows(v[2]);
                    info_nce_var(g, a, p, n, 0.1)
                }),
                coords: None,
            })
        }),
        ("ia_loss", |rng| {
            let pool = labeled_pool(rng, 3, 3);
            let pairs = sample_pairs(&pool, Some(0.5));
            let z = rand_t(rng, &[pool.len(), 4], -1.0, 1.0);
            Ok(Instance {
                params: vec![z],
                f: Box::new(move |g, v| {
                    let z = g.l2_normalize_rows(v[0]);
                    Ok(ia_loss_var(g, z, &pairs, 0.1)?.expect("pool holds a positive pair"))
                }),
                coords: None,
            })
        }),
        ("id_loss", |rng| {
            let (n, k) = (4, 3);
            let targets: Vec<usize> = (0..n).map(|_| rng.below(k + 1)).collect();
            let inputs = vec![rand_t(rng, &[n, 4], -1.0, 1.0), rand_t(rng, &[k, 4], -1.0, 1.0), rand_t(rng, &[1, 1], 5.0, 15.0), rand_t(rng, &[1, 1], -1.0, 1.0)];
            Ok(Instance {
                params: inputs,
                f: Box::new(move |g, v| {
                    let logits = id_logits(g, v[0], Some(v[1]), v[2], v[3]);
                    id_loss_var(g, logits, &targets)
                }),
                coords: None,
            })
        }),
        ("total", |rng| {
            let w = LossWeights::default();
            let n = 4;
            let target = random_boxes(rng, n);
            let cls_t: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            let id_t: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
            let depth_t: Vec<usize> = (0..6).map(|_| rng.below(4)).collect();
            let fg: Vec<bool> = (0..6).map(|_| rng.bernoulli(0.5)).collect();
            let pool = labeled_pool(rng, 2, 2);
            let pairs = sample_pairs(&pool, Some(0.5));
            let inputs = vec![
                rand_t(rng, &[n, 2], -2.0, 2.0),
                boxes_near(rng, &target),
                rand_t(rng, &[n, 4], -1.0, 1.0),
                rand_t(rng, &[2, 4], -1.0, 1.0),
                rand_t(rng, &[6, 4], -2.0, 2.0),
                rand_t(rng, &[1, 1], 5.0, 15.0),
                rand_t(rng, &[1, 1], -1.0, 1.0),
            ];
            Ok(Instance {
                params: inputs,
                f: Box::new(move |g, v| {
                    let cls = focal_loss_logits(g, v[0], &cls_t, None, FOCAL_ALPHA, FOCAL_GAMMA)?;
                    let l1 = l1_loss_var(g, v[1], &target)?;
                    let gi = giou_loss_var(g, v[1], &target)?;
                    let logits = id_logits(g, v[2], Some(v[3]), v[5], v[6]);
                    let id = id_loss_var(g, logits, &id_t)?;
                    let depth = weighted_depth_loss_var(g, v[4], &depth_t, &fg, 7.0)?;
                    let z = g.l2_normalize_rows(v[2]);
                    let ia = ia_loss_var(g, z, &pairs, 0.1)?.expect("pool holds a positive pair");
                    let mut total = g.constant(Tensor::scalar(0.0));
                    for (c, t) in [(w.cls, cls), (w.bbox, l1), (w.giou, gi), (w.id, id), (w.depth, depth), (w.ia, ia)] {
                        let s = g.scale(t, c);
                        total = g.add(total, s);
                    }
                    Ok(total)
                }),
                coords: None,
            })
        }),
    ]
}

fn kink_gap(inst: &Instance) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inst.params.iter().map(|t| g.constant(t.clone())).collect();
    (inst.f)(&mut g, &vars)?;
    Ok(g.kink_gap())
}

fn draw(build: Builder, rng: &mut SimRng, name: &str) -> Result<Instance> {
    for _ in 0..MAX_DRAWS {
        let inst = build(rng)?;
        if kink_gap(&inst)? >= MIN_KINK_GAP {
            return Ok(inst);
        }
    }
    bail!(InvalidArgument, "{name}: no instance clear of kinks in {MAX_DRAWS} draws")
}

pub fn case_names() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _)| n).collect()
}

/// Runs `instances` random instances of every case whose name contains
/// `filter` (all cases for `None`).
pub fn run_grad_suite(instances: usize, seed: u64, filter: Option<&str>) -> Result<SuiteReport> {
    let start = Instant::now();
    let selected: Vec<_> = cases().into_iter().enumerate().filter(|(_, (name, _))| filter.is_none_or(|f| name.contains(f))).collect();
    if selected.is_empty() {
        bail!(InvalidArgument, "no gradient case matches {:?}", filter.unwrap_or(""));
    }
    let mut reports = Vec::with_capacity(selected.len());
    for (ci, (name, build)) in selected {
        let mut worst = 0.0f64;
        let mut coords = 0;
        for i in 0..instances {
            let mut rng = SimRng::derive(seed, ((ci as u64) << 32) | i as u64);
            let inst = draw(build, &mut rng, name)?;
            let opts = GradCheckOptions { epsilon: EPSILON, max_coords_per_param: inst.coords, seed: rng.next_u64() };
            let r = grad_check_with(&inst.f, &inst.params, &opts).map_err(|e| crate::error::Error::InvalidArgument(format!("{name} instance {i}: {e}")))?;
            worst = worst.max(r.max_rel_error);
            coords += r.coords_checked;
        }
        reports.push(CaseReport { name, instances, coords, max_rel_error: worst });
    }
    Ok(SuiteReport { cases: reports, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_are_unique() {
        let mut names = case_names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn filtered_run_reports_each_case() {
        let r = run_grad_suite(2, 3, Some("giou")).unwrap();
        assert_eq!(r.cases.len(), 1);
        assert!(r.passed(SUITE_TOLERANCE), "{}", r.to_csv());
        assert!(run_grad_suite(1, 0, Some("no-such-case")).is_err());
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        // x · stop_grad(x): the tape sees x, finite differences see 2x
        let r = grad_check_with(
            |g, v| {
                let c = g.constant(g.value(v[0]).clone());
                let y = g.mul(v[0], c);
                Ok(g.sum(y))
            },
            &[Tensor::vector(vec![0.5, -1.5])],
            &GradCheckOptions { epsilon: EPSILON, ..Default::default() },
        )
        .unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
