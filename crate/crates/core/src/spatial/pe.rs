use crate::diffcore::{Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{bail, Result};
use crate::rng::SimRng;

/// Learnable table of `N_pe` depth embeddings spread linearly over
/// `[d_min, d_max]`, read by linear interpolation between neighboring rows.
#[derive(Debug, Clone)]
pub struct DepthPeTable {
    pub table: ParamId,
    pub entries: usize,
    pub dim: usize,
    pub d_min: f64,
    pub d_max: f64,
}

pub const DEFAULT_PE_ENTRIES: usize = 64;

impl DepthPeTable {
    pub fn new(store: &mut ParamStore, name: &str, entries: usize, dim: usize, d_min: f64, d_max: f64, rng: &mut SimRng) -> Result<Self> {
        if entries < 2 {
            bail!(InvalidArgument, "depth PE table needs at least 2 entries, got {entries}");
        }
        if d_max <= d_min {
            bail!(InvalidArgument, "invalid depth range [{d_min}, {d_max}]");
        }
        let table = store.add_normal(format!("{name}.table"), &[entries, dim], 0.1, rng);
        Ok(Self { table, entries, dim, d_min, d_max })
    }

    /// Continuous table coordinate `u ∈ [0, N_pe − 1]`.
    pub fn coordinate(&self, depth: f64) -> f64 {
        let u = (depth - self.d_min) / (self.d_max - self.d_min) * (self.entries - 1) as f64;
        u.clamp(0.0, (self.entries - 1) as f64)
    }

    /// `(lower row, upper row, δ)` for a depth value.
    pub fn neighbors(&self, depth: f64) -> Result<(usize, usize, f64)> {
        if !depth.is_finite() {
            bail!(NonFinite, "depth {depth}");
        }
        let u = self.coordinate(depth);
        let lo = u.floor();
        Ok((lo as usize, u.ceil() as usize, u - lo))
    }

    /// `[n, N_pe]` interpolation matrix; `W · PE` gives one embedding per depth.
    pub fn weights(&self, depths: &[f64]) -> Result<Tensor> {
        let mut w = vec![0.0; depths.len() * self.entries];
        for (i, &d) in depths.iter().enumerate() {
            let (lo, hi, delta) = self.neighbors(d)?;
            w[i * self.entries + lo] += 1.0 - delta;
            w[i * self.entries + hi] += delta;
        }
        Tensor::new(vec![depths.len(), self.entries], w)
    }

    /// `PE_d = (1 − δ)·PE[⌊u⌋] + δ·PE[⌈u⌉]` for each depth, as an `[n, dim]`
    /// node. Depths act as constants: gradients reach the table only.
    pub fn forward(&self, g: &mut Graph, p: &Bound, depths: &[f64]) -> Result<Var> {
        let w = g.constant(self.weights(depths)?);
        Ok(g.matmul(w, p.var(self.table)))
    }
}

/// Interpolated embedding for one depth against a plain table `[N_pe, dim]`.
pub fn depth_pe(depth: f64, table: &Tensor, d_min: f64, d_max: f64) -> Result<Vec<f64>> {
    if table.shape().len() != 2 || table.rows() == 0 {
        bail!(InvalidArgument, "depth PE table is empty");
    }
    let n = table.rows();
    if !depth.is_finite() {
        bail!(NonFinite, "depth {depth}");
    }
    let u = if n == 1 { 0.0 } else { ((depth - d_min) / (d_max - d_min) * (n - 1) as f64).clamp(0.0, (n - 1) as f64) };
    let (lo, hi) = (u.floor() as usize, u.ceil() as usize);
    let delta = u - u.floor();
    Ok(table.row(lo).iter().zip(table.row(hi)).map(|(a, b)| (1.0 - delta) * a + delta * b).collect())
}
