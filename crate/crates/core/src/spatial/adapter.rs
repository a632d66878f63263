use super::bins::DepthBins;
use super::pe::DepthPeTable;
use crate::diffcore::{AttentionMask, Bound, EncoderLayer, Graph, LayerNorm, Linear, Mlp, MultiHeadAttention, ParamStore, Var};
use crate::error::{bail, Result};
use crate::geometry::Box2D;
use crate::rng::SimRng;

/// Cross-attention mask restricting each object to the grid cells whose
/// centers fall inside its box (the nearest cell when none does).
pub fn box_region_mask(boxes: &[Box2D], rows: usize, cols: usize, width: f64, height: f64) -> Result<AttentionMask> {
    let (cw, ch) = (width / cols as f64, height / rows as f64);
    let n = rows * cols;
    let mut blocked = vec![true; boxes.len() * n];
    for (i, b) in boxes.iter().enumerate() {
        let row = &mut blocked[i * n..(i + 1) * n];
        let mut any = false;
        for r in 0..rows {
            for c in 0..cols {
                if b.contains((c as f64 + 0.5) * cw, (r as f64 + 0.5) * ch) {
                    row[r * cols + c] = false;
                    any = true;
                }
            }
        }
        if !any {
            let (cx, cy) = b.center();
            let c = ((cx / cw).floor().max(0.0) as usize).min(cols - 1);
            let r = ((cy / ch).floor().max(0.0) as usize).min(rows - 1);
            row[r * cols + c] = false;
        }
    }
    AttentionMask::cross(boxes.len(), n, blocked)
}

/// Depth inputs to one fusion pass.
pub struct DepthContext<'a> {
    /// Refined depth features `F_D`, `[N_tokens, dim]`.
    pub features: Var,
    /// Depth positional embeddings added to the keys, if enabled.
    pub pe: Option<Var>,
    pub mask: Option<&'a AttentionMask>,
}

/// Pre-norm decoder block: self-attention over objects, cross-attention to
/// visual tokens, optional cross-attention to depth tokens, then an FFN.
#[derive(Debug, Clone)]
pub struct FusionBlock {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_vision: LayerNorm,
    pub vision_attn: MultiHeadAttention,
    pub depth: Option<(LayerNorm, MultiHeadAttention)>,
    pub norm_ffn: LayerNorm,
    pub ffn: Mlp,
}

impl FusionBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, with_depth: bool, rng: &mut SimRng) -> Self {
        let depth = with_depth.then(|| {
            (
                LayerNorm::new(store, &format!("{name}.norm_depth"), dim),
                MultiHeadAttention::new(store, &format!("{name}.depth_attn"), dim, heads, rng),
            )
        });
        Self {
            norm_self: LayerNorm::new(store, &format!("{name}.norm_self"), dim),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng),
            norm_vision: LayerNorm::new(store, &format!("{name}.norm_vision"), dim),
            vision_attn: MultiHeadAttention::new(store, &format!("{name}.vision_attn"), dim, heads, rng),
            depth,
            norm_ffn: LayerNorm::new(store, &format!("{name}.norm_ffn"), dim),
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[dim, 2 * dim, dim], rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        objects: Var,
        vision: Var,
        vision_mask: Option<&AttentionMask>,
        depth: Option<&DepthContext>,
    ) -> Result<Var> {
        let dim = self.self_attn.query.in_dim;
        for (what, v) in [("objects", objects), ("vision", vision)] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != dim {
                bail!(Shape, "{what} {s:?} for model dim {dim}");
            }
        }
        let h = self.norm_self.forward(g, p, objects);
        let a = self.self_attn.forward(g, p, h, h, h, None)?;
        let x = g.add(objects, a);
        let h = self.norm_vision.forward(g, p, x);
        let a = self.vision_attn.forward(g, p, h, vision, vision, vision_mask)?;
        let mut x = g.add(x, a);
        if let (Some((norm, attn)), Some(ctx)) = (&self.depth, depth) {
            x = fuse_depth(g, p, x, norm, attn, ctx)?;
        }
        let h = self.norm_ffn.forward(g, p, x);
        let f = self.ffn.forward(g, p, h)?;
        Ok(g.add(x, f))
    }
}

/// `x + DepthAttn(LN(x), F_D + PE_d, F_D)`.
pub fn fuse_depth(g: &mut Graph, p: &Bound, x: Var, norm: &LayerNorm, attn: &MultiHeadAttention, ctx: &DepthContext) -> Result<Var> {
    if g.shape(ctx.features).get(1) != g.shape(x).get(1) {
        bail!(Shape, "depth features {:?} vs objects {:?}", g.shape(ctx.features), g.shape(x));
    }
    let keys = match ctx.pe {
        Some(pe) => {
            if g.shape(pe) != g.shape(ctx.features) {
                bail!(Shape, "depth PE {:?} vs features {:?}", g.shape(pe), g.shape(ctx.features));
            }
            g.add(ctx.features, pe)
        }
        None => ctx.features,
    };
    let h = norm.forward(g, p, x);
    let a = attn.forward(g, p, h, keys, ctx.features, ctx.mask)?;
    Ok(g.add(x, a))
}

/// Output of the depth branch for one frame.
pub struct DepthOutput {
    /// `[N_tokens, K + 1]` bin logits.
    pub logits: Var,
    /// Expected depth per token (detached).
    pub expected: Vec<f64>,
    /// Refined depth features `F_D`.
    pub features: Var,
    /// `PE_d` per token, when depth PE is enabled.
    pub pe: Option<Var>,
}

/// Dense depth extractor, bin classifier, depth encoder and depth PE table.
#[derive(Debug, Clone)]
pub struct DepthBranch {
    pub extractor: Mlp,
    pub head: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub pe: DepthPeTable,
    pub bins: DepthBins,
    pub use_pe: bool,
}

impl DepthBranch {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        encoder_layers: usize,
        bins: DepthBins,
        pe_entries: usize,
        use_pe: bool,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let extractor = Mlp::new(store, &format!("{name}.extractor"), &[dim, dim, dim], rng);
        let head = Linear::new(store, &format!("{name}.head"), dim, bins.num_classes(), rng);
        let encoder = (0..encoder_layers)
            .map(|l| EncoderLayer::new(store, &format!("{name}.encoder.{l}"), dim, heads, 2 * dim, rng))
            .collect();
        let pe = DepthPeTable::new(store, &format!("{name}.pe"), pe_entries, dim, bins.d_min, bins.d_max, rng)?;
        Ok(Self { extractor, head, encoder, pe, bins, use_pe })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, f_avg: Var) -> Result<DepthOutput> {
        let h = self.extractor.forward(g, p, f_avg)?;
        let dense = g.relu(h);
        let logits = self.head.forward(g, p, dense)?;
        let probs = g.softmax_rows(logits, None);
        let pv = g.value(probs);
        let expected: Vec<f64> = (0..pv.rows())
            .map(|i| pv.row(i).iter().zip(&self.bins.values).map(|(a, b)| a * b).sum())
            .collect();
        let mut features = dense;
        for layer in &self.encoder {
            features = layer.forward(g, p, features, None)?;
        }
        let pe = if self.use_pe { Some(self.pe.forward(g, p, &expected)?) } else { None };
        Ok(DepthOutput { logits, expected, features, pe })
    }
}
