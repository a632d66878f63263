use crate::error::{bail, Result};

/// Linear-increasing depth bins: `K` foreground values `b_0..b_{K-1}` whose
/// spacing grows with depth, plus a background value `b_K = d_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBins {
    pub k: usize,
    pub d_min: f64,
    pub d_max: f64,
    pub bin_size: f64,
    /// `K + 1` bin depth values.
    pub values: Vec<f64>,
}

pub const DEFAULT_D_MIN: f64 = 1e-3;
pub const DEFAULT_D_MAX: f64 = 256.0;

pub fn lid_bins(k: usize, d_min: f64, d_max: f64) -> Result<DepthBins> {
    if k == 0 {
        bail!(InvalidArgument, "LID needs at least one bin");
    }
    if !(d_min.is_finite() && d_max.is_finite()) || d_max <= d_min {
        bail!(InvalidArgument, "invalid depth range [{d_min}, {d_max}]");
    }
    let kf = k as f64;
    let bin_size = 2.0 * (d_max - d_min) / (kf * (1.0 + kf));
    let mut values: Vec<f64> = (0..k)
        .map(|i| {
            let c = i as f64 + 0.5;
            c * c * bin_size / 2.0 - bin_size / 8.0 + d_min
        })
        .collect();
    values.push(d_max);
    Ok(DepthBins { k, d_min, d_max, bin_size, values })
}

impl DepthBins {
    pub fn num_classes(&self) -> usize {
        self.k + 1
    }

    /// Nearest bin value; out-of-range depths clamp to the end bins and
    /// ties go to the lower index.
    pub fn discretize(&self, depth: f64) -> Result<usize> {
        if depth.is_nan() {
            bail!(InvalidArgument, "NaN depth");
        }
        let v = &self.values;
        if depth <= v[0] {
            return Ok(0);
        }
        if depth >= v[self.k] {
            return Ok(self.k);
        }
        // first index with value > depth; the answer is it or its predecessor
        let hi = v.partition_point(|&b| b <= depth);
        let lo = hi - 1;
        Ok(if depth - v[lo] <= v[hi] - depth { lo } else { hi })
    }

    /// `Σ_i p_i b_i` for one distribution over the `K + 1` bins.
    pub fn expectation(&self, probs: &[f64]) -> Result<f64> {
        if probs.len() != self.num_classes() {
            bail!(Shape, "{} probabilities for {} bins", probs.len(), self.num_classes());
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            bail!(InvalidArgument, "probabilities must be finite and nonnegative");
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            bail!(InvalidArgument, "probabilities sum to {s}");
        }
        let d: f64 = probs.iter().zip(&self.values).map(|(p, b)| p * b).sum();
        // guard against rounding just outside the hull
        Ok(d.clamp(self.values[0], self.values[self.k]))
    }
}

pub fn discretize_depth(depth: f64, bins: &DepthBins) -> Result<usize> {
    bins.discretize(depth)
}

/// Expected depth per pixel from a flat `[n, K + 1]` probability array.
pub fn depth_expectation(probs: &[f64], bins: &DepthBins) -> Result<Vec<f64>> {
    let c = bins.num_classes();
    if !probs.len().is_multiple_of(c) {
        bail!(Shape, "probability array of length {} is not a multiple of {c}", probs.len());
    }
    probs.chunks(c).map(|p| bins.expectation(p)).collect()
}
