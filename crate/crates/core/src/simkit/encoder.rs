use crate::diffcore::{Bound, Graph, Mlp, ParamStore, Tensor, Var};
use crate::error::{bail, Result};
use crate::rng::SimRng;

use super::scenario::Detection;

pub const BOX_FEATURES: usize = 4;

/// Stand-in for a detector's per-object features: an MLP over the
/// normalized box, the observed appearance code and the pose channel.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub mlp: Mlp,
    pub appearance_dim: usize,
    pub context_dim: usize,
}

impl ToyEncoder {
    pub fn new(store: &mut ParamStore, name: &str, appearance_dim: usize, context_dim: usize, dim: usize, rng: &mut SimRng) -> Self {
        let in_dim = BOX_FEATURES + appearance_dim + context_dim;
        Self { mlp: Mlp::new(store, name, &[in_dim, dim, dim], rng), appearance_dim, context_dim }
    }

    /// Every layer is a zero-padded identity with zero bias.
    pub fn identity_like(store: &mut ParamStore, name: &str, appearance_dim: usize, context_dim: usize, dim: usize) -> Result<Self> {
        let in_dim = BOX_FEATURES + appearance_dim + context_dim;
        if in_dim > dim {
            bail!(Shape, "identity-like encoder needs dim ≥ {in_dim}, got {dim}");
        }
        let mut rng = SimRng::new(0);
        let enc = Self::new(store, name, appearance_dim, context_dim, dim, &mut rng);
        for layer in &enc.mlp.layers {
            let mut w = Tensor::zeros(&[layer.in_dim, layer.out_dim]);
            for i in 0..layer.in_dim.min(layer.out_dim) {
                w.data_mut()[i * layer.out_dim + i] = 1.0;
            }
            store.set(layer.weight, w);
            store.set(layer.bias, Tensor::zeros(&[layer.out_dim]));
        }
        Ok(enc)
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// `[cx/W, cy/H, w/W, h/H, appearance.., context..]`.
    pub fn features(&self, det: &Detection, width: f64, height: f64) -> Result<Vec<f64>> {
        if det.appearance.len() != self.appearance_dim || det.context.len() != self.context_dim {
            bail!(Shape, "observation dims {}+{} do not match encoder {}+{}", det.appearance.len(), det.context.len(), self.appearance_dim, self.context_dim);
        }
        let (cx, cy) = det.bbox.center();
        let mut v = vec![cx / width, cy / height, det.bbox.w / width, det.bbox.h / height];
        v.extend_from_slice(&det.appearance);
        v.extend_from_slice(&det.context);
        Ok(v)
    }

    pub fn feature_matrix(&self, dets: &[&Detection], width: f64, height: f64) -> Result<Tensor> {
        let mut data = Vec::with_capacity(dets.len() * self.in_dim());
        for d in dets {
            data.extend(self.features(d, width, height)?);
        }
        Tensor::new(vec![dets.len(), self.in_dim()], data)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.mlp.forward(g, p, x)
    }
}

/// Embeds detections with the encoder's current parameters.
pub fn toy_encoder(enc: &ToyEncoder, store: &ParamStore, dets: &[&Detection], width: f64, height: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let x = g.constant(enc.feature_matrix(dets, width, height)?);
    let y = enc.forward(&mut g, &p, x)?;
    Ok(g.value(y).clone())
}
