use crate::diffcore::{Bound, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::error::{bail, Result};
use crate::geometry::Box2D;
use crate::rng::SimRng;
use crate::simkit::{Detection, Scenario, ScenarioConfig, ToyEncoder};
use crate::spatial::{box_region_mask, foreground_mask, lid_bins, pyramid_average, DepthBins, DepthBranch, DepthContext, FusionBlock, DEFAULT_PE_ENTRIES};
use crate::temporal::TemporalAdapter;

use super::config::RunConfig;

/// Input geometry the model was built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputDims {
    pub appearance_dim: usize,
    pub context_dim: usize,
    pub image_rows: usize,
    pub image_cols: usize,
    pub width: f64,
    pub height: f64,
}

impl InputDims {
    pub fn of(cfg: &ScenarioConfig) -> Self {
        Self {
            appearance_dim: cfg.appearance_dim,
            context_dim: cfg.context_dim,
            image_rows: cfg.image_rows,
            image_cols: cfg.image_cols,
            width: cfg.width,
            height: cfg.height,
        }
    }

    /// Image channels: appearance, occupancy and haze.
    pub fn channels(&self) -> usize {
        self.appearance_dim + 2
    }
}

/// Object-level outputs of one frame.
pub struct FrameOutput {
    /// Object embeddings `[N, dim]`.
    pub embeddings: Var,
    /// Object-vs-clutter logits `[N, 2]`.
    pub cls: Var,
    /// Refined boxes `[N, 4]` in normalized `(x, y, w, h)`.
    pub boxes: Var,
}

/// Toy encoder, vision projection, fusion decoder block with optional depth
/// cross-attention, detection heads, and the optional temporal adapter and
/// consistent-feature projection. All parameters live in `store`.
#[derive(Debug, Clone)]
pub struct FdtaModel {
    pub cfg: RunConfig,
    pub dims: InputDims,
    pub store: ParamStore,
    pub encoder: ToyEncoder,
    pub vision: Linear,
    pub fusion: FusionBlock,
    pub depth: Option<DepthBranch>,
    pub cls_head: Linear,
    pub box_head: Linear,
    pub ta: Option<TemporalAdapter>,
    pub phi: Option<Mlp>,
    /// `[1, 1]` scale on cosine identity logits.
    pub id_scale: ParamId,
    /// `[1, 1]` new-object logit.
    pub new_logit: ParamId,
}

impl FdtaModel {
    /// Builds a freshly initialized model. Every component draws from its
    /// own seed-derived stream, so switching one adapter off leaves the
    /// initialization of the others unchanged.
    pub fn new(cfg: &RunConfig, dims: InputDims) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let rng = |tag: u64| SimRng::derive(cfg.seed, 0x5EED_0000 + tag);
        let mut store = ParamStore::new();
        let encoder = ToyEncoder::new(&mut store, "encoder", dims.appearance_dim, dims.context_dim, d, &mut rng(1));
        let vision = Linear::new(&mut store, "vision", dims.channels(), d, &mut rng(2));
        let fusion = FusionBlock::new(&mut store, "fusion", d, cfg.heads, cfg.spatial, &mut rng(3));
        let depth = if cfg.spatial {
            let bins = lid_bins(cfg.depth_bins, 0.0, cfg.depth_max)?;
            Some(DepthBranch::new(&mut store, "depth", d, cfg.heads, cfg.depth_encoder_layers, bins, DEFAULT_PE_ENTRIES, cfg.depth_pe, &mut rng(4))?)
        } else {
            None
        };
        let mut r = rng(5);
        let cls_head = Linear::new(&mut store, "cls_head", d, 2, &mut r);
        let box_head = Linear::zeros(&mut store, "box_head", d, 4);
        let ta = cfg.temporal.then(|| TemporalAdapter::new(&mut store, "ta", d, cfg.heads, cfg.ta_layers, cfg.missing, &mut rng(6)));
        let phi = (cfg.identity && cfg.cfe).then(|| Mlp::new(&mut store, "phi", &[d, d, d, d], &mut rng(7)));
        let id_scale = store.add("id_scale", Tensor::new(vec![1, 1], vec![cfg.id_scale])?);
        let new_logit = store.add("new_logit", Tensor::new(vec![1, 1], vec![0.0])?);
        Ok(Self { cfg: cfg.clone(), dims, store, encoder, vision, fusion, depth, cls_head, box_head, ta, phi, id_scale, new_logit })
    }

    pub fn bins(&self) -> Option<&DepthBins> {
        self.depth.as_ref().map(|d| &d.bins)
    }

    pub fn check_scenario(&self, cfg: &ScenarioConfig) -> Result<()> {
        let got = InputDims::of(cfg);
        if got != self.dims {
            bail!(Shape, "scenario inputs {got:?} do not match the model's {:?}", self.dims);
        }
        Ok(())
    }

    fn normalized(&self, b: &Box2D) -> [f64; 4] {
        [b.x / self.dims.width, b.y / self.dims.height, b.w / self.dims.width, b.h / self.dims.height]
    }

    /// Visual tokens `[cells, dim]` from a pyramid-averaged image.
    pub fn vision_tokens(&self, g: &mut Graph, p: &Bound, image: &Tensor) -> Result<Var> {
        let x = g.constant(image.clone());
        self.vision.forward(g, p, x)
    }

    /// Depth-branch logits `[cells, K + 1]` plus the depth context for
    /// fusion; `None` with the spatial adapter off.
    pub fn depth_pass(&self, g: &mut Graph, p: &Bound, tokens: Var) -> Result<Option<(Var, Var, Option<Var>)>> {
        match &self.depth {
            None => Ok(None),
            Some(branch) => {
                let out = branch.forward(g, p, tokens)?;
                Ok(Some((out.logits, out.features, out.pe)))
            }
        }
    }

    /// Embeds the detections of one frame. `image` is the pyramid average of
    /// the frame's feature image; `depth` is the output of [`depth_pass`].
    ///
    /// [`depth_pass`]: Self::depth_pass
    pub fn forward_objects(
        &self,
        g: &mut Graph,
        p: &Bound,
        dets: &[&Detection],
        tokens: Var,
        depth: Option<&(Var, Var, Option<Var>)>,
    ) -> Result<FrameOutput> {
        if dets.is_empty() {
            bail!(InvalidArgument, "no detections to embed");
        }
        let dm = &self.dims;
        let x = g.constant(self.encoder.feature_matrix(dets, dm.width, dm.height)?);
        let x = self.encoder.forward(g, p, x)?;
        let boxes: Vec<Box2D> = dets.iter().map(|d| d.bbox).collect();
        let mask = box_region_mask(&boxes, dm.image_rows, dm.image_cols, dm.width, dm.height)?;
        let ctx = depth.map(|(_, features, pe)| DepthContext { features: *features, pe: *pe, mask: Some(&mask) });
        let e = self.fusion.forward(g, p, x, tokens, Some(&mask), ctx.as_ref())?;
        let cls = self.cls_head.forward(g, p, e)?;

        let n = dets.len();
        let b: Vec<f64> = boxes.iter().flat_map(|b| self.normalized(b)).collect();
        let b = g.constant(Tensor::new(vec![n, 4], b)?);
        let delta = self.box_head.forward(g, p, e)?;
        let (bxy, bwh) = (g.slice_cols(b, 0, 2), g.slice_cols(b, 2, 4));
        let (dxy, dwh) = (g.slice_cols(delta, 0, 2), g.slice_cols(delta, 2, 4));
        let shift = g.mul(dxy, bwh);
        let xy = g.add(bxy, shift);
        let grow = g.exp(dwh);
        let wh = g.mul(bwh, grow);
        let boxes = g.concat_cols(&[xy, wh]);
        Ok(FrameOutput { embeddings: e, cls, boxes })
    }

    /// Normalized box target for a ground-truth box.
    pub fn box_target(&self, b: &Box2D) -> Box2D {
        let [x, y, w, h] = self.normalized(b);
        Box2D { x, y, w, h }
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

/// Per-frame model inputs derived from a scenario.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    /// Pyramid-averaged feature image `[cells, channels]`.
    pub image: Tensor,
    /// Depth-bin target and foreground flag per image cell (spatial adapter
    /// only).
    pub depth: Option<(Vec<usize>, Vec<bool>)>,
}

/// Pyramid inputs and, when `bins` is given, depth supervision sampled at
/// the image-cell centers.
pub fn prepare_frames(sc: &Scenario, bins: Option<&DepthBins>) -> Result<Vec<PreparedFrame>> {
    let cfg = &sc.cfg;
    if sc.images.len() != cfg.n_frames {
        bail!(InvalidArgument, "scenario has {} images for {} frames", sc.images.len(), cfg.n_frames);
    }
    if bins.is_some() && sc.depth.len() != cfg.n_frames {
        bail!(InvalidArgument, "scenario has {} depth grids for {} frames", sc.depth.len(), cfg.n_frames);
    }
    let (rows, cols) = (cfg.image_rows, cfg.image_cols);
    (0..cfg.n_frames)
        .map(|t| {
            let f8 = &sc.images[t];
            let f16 = f8.pool2()?;
            let f32 = f16.pool2()?;
            let image = pyramid_average(f8, &f16, &f32)?.data;
            let depth = match bins {
                None => None,
                Some(bins) => {
                    let grid = &sc.depth[t];
                    let mut targets = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gr = ((r as f64 + 0.5) / rows as f64 * grid.rows as f64) as usize;
                            let gc = ((c as f64 + 0.5) / cols as f64 * grid.cols as f64) as usize;
                            targets.push(bins.discretize(grid.at(gr.min(grid.rows - 1), gc.min(grid.cols - 1)) as f64)?);
                        }
                    }
                    let boxes: Vec<Box2D> = sc.gt[t].iter().map(|o| o.bbox).collect();
                    Some((targets, foreground_mask(rows, cols, cfg.width, cfg.height, &boxes)))
                }
            };
            Ok(PreparedFrame { image, depth })
        })
        .collect()
}
