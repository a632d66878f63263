//! Trajectory windows, the causal-plus-missing attention mask and the
//! masked transformer encoder that refines each identity's history.

use std::collections::VecDeque;

use crate::diffcore::{sinusoidal_table, AttentionMask, Bound, EncoderLayer, Graph, LayerNorm, Linear, ParamId, ParamStore, Tensor, Var};
use crate::error::{bail, Result};
use crate::rng::SimRng;

/// How absent history slots are represented and masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingMode {
    /// Learned `[empty]` token, causal mask only.
    Off,
    /// Zero vector in absent slots, causal mask only.
    ZeroVector,
    /// Learned `[empty]` token and the dual causal + missing mask.
    Mask,
}

impl std::str::FromStr for MissingMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "zero" | "zero-vector" => Ok(Self::ZeroVector),
            "mask" => Ok(Self::Mask),
            _ => Err(crate::Error::Config(format!("unknown missing mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for MissingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Off => "off",
            Self::ZeroVector => "zero-vector",
            Self::Mask => "mask",
        })
    }
}

/// `M[j,k] = 1` when `k > j` or frame `k` is absent, with the diagonal open.
pub fn build_dual_mask(presence: &[bool]) -> AttentionMask {
    let t = presence.len();
    let blocked = (0..t * t)
        .map(|i| {
            let (j, k) = (i / t, i % t);
            j != k && (k > j || !presence[k])
        })
        .collect();
    AttentionMask::new(t, blocked).expect("diagonal is open by construction")
}

pub fn causal_mask(t: usize) -> AttentionMask {
    build_dual_mask(&vec![true; t])
}

/// The last `capacity` slots of one identity's history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    pub id: u32,
    pub capacity: usize,
    slots: VecDeque<Option<Vec<f64>>>,
    frames: VecDeque<u32>,
}

impl TrajectoryWindow {
    pub fn new(id: u32, capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self { id, capacity, slots: VecDeque::new(), frames: VecDeque::new() }
    }

    /// Appends a slot (`None` = not detected), dropping the oldest when full.
    pub fn push(&mut self, frame: u32, embedding: Option<Vec<f64>>) {
        if self.slots.len() == self.capacity {
            self.slots.pop_front();
            self.frames.pop_front();
        }
        self.slots.push_back(embedding);
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn presence(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn frames(&self) -> Vec<u32> {
        self.frames.iter().copied().collect()
    }

    pub fn slot(&self, i: usize) -> Option<&[f64]> {
        self.slots[i].as_deref()
    }

    /// Most recent present embedding.
    pub fn latest_present(&self) -> Option<&[f64]> {
        self.slots.iter().rev().find_map(|s| s.as_deref())
    }

    /// `[len, dim]` matrix with zeros in absent slots.
    pub fn raw_matrix(&self, dim: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * dim);
        for s in &self.slots {
            match s {
                Some(e) => data.extend_from_slice(e),
                None => data.extend(std::iter::repeat_n(0.0, dim)),
            }
        }
        Tensor::new(vec![self.len(), dim], data).expect("window embeddings share a dim")
    }
}

/// L-layer masked transformer encoder over a trajectory. The encoder output
/// goes through a zero-initialized projection and is added back to the slot
/// content, so an untrained adapter is the identity on present slots.
#[derive(Debug, Clone)]
pub struct TemporalAdapter {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
    pub output: Linear,
    pub empty: ParamId,
    pub dim: usize,
    pub mode: MissingMode,
}

impl TemporalAdapter {
    pub const DEFAULT_LAYERS: usize = 6;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, layers: usize, mode: MissingMode, rng: &mut SimRng) -> Self {
        Self {
            layers: (0..layers).map(|l| EncoderLayer::new(store, &format!("{name}.layer.{l}"), dim, heads, 2 * dim, rng)).collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            output: Linear::zeros(store, &format!("{name}.out"), dim, dim),
            empty: store.add_normal(format!("{name}.empty"), &[1, dim], 0.1, rng),
            dim,
            mode,
        }
    }

    pub fn mask(&self, presence: &[bool]) -> AttentionMask {
        match self.mode {
            MissingMode::Mask => build_dual_mask(presence),
            MissingMode::Off | MissingMode::ZeroVector => causal_mask(presence.len()),
        }
    }

    /// Replaces absent rows of `raw` by the `[empty]` token (or zeros).
    pub fn fill_absent(&self, g: &mut Graph, p: &Bound, raw: Var, presence: &[bool]) -> Var {
        let t = presence.len();
        let keep = g.constant(Tensor::vector(presence.iter().map(|&b| b as u8 as f64).collect()));
        let kept = g.mul_col(raw, keep);
        if self.mode == MissingMode::ZeroVector || presence.iter().all(|&b| b) {
            return kept;
        }
        let absent = g.constant(Tensor::new(vec![t, 1], presence.iter().map(|&b| (!b) as u8 as f64).collect()).unwrap());
        let fill = g.matmul(absent, p.var(self.empty));
        g.add(kept, fill)
    }

    /// Encodes prepared slot tokens `[T, dim]` (absent slots already filled).
    pub fn encode_tokens(&self, g: &mut Graph, p: &Bound, tokens: Var, presence: &[bool]) -> Result<Var> {
        let s = g.shape(tokens).to_vec();
        if s.len() != 2 || s[1] != self.dim || s[0] != presence.len() {
            bail!(Shape, "trajectory tokens {s:?} for dim {} and {} slots", self.dim, presence.len());
        }
        if presence.is_empty() {
            bail!(InvalidArgument, "empty trajectory");
        }
        let pe = g.constant(sinusoidal_table(presence.len(), self.dim)?);
        let mut h = g.add(tokens, pe);
        let mask = self.mask(presence);
        for layer in &self.layers {
            h = layer.forward(g, p, h, Some(&mask))?;
        }
        let h = self.norm.forward(g, p, h);
        let delta = self.output.forward(g, p, h)?;
        Ok(g.add(tokens, delta))
    }

    /// Refines raw slot embeddings `[T, dim]` under this adapter's missing mode.
    pub fn encode(&self, g: &mut Graph, p: &Bound, raw: Var, presence: &[bool]) -> Result<Var> {
        let tokens = self.fill_absent(g, p, raw, presence);
        self.encode_tokens(g, p, tokens, presence)
    }

    /// Inference helper: refined trajectory of a stored window.
    pub fn encode_window(&self, store: &ParamStore, window: &TrajectoryWindow) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let raw = g.constant(window.raw_matrix(self.dim));
        let out = self.encode(&mut g, &p, raw, &window.presence())?;
        Ok(g.value(out).clone())
    }
}
