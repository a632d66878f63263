use crate::error::{bail, Result};

pub const BIN_WIDTH: f64 = 0.05;
pub const NUM_BINS: usize = 40;

/// Fixed-width histogram of cosine similarities over `[−1, 1]`; the top bin
/// is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistogram {
    pub counts: [u64; NUM_BINS],
    /// The pooled values, in frame order.
    pub values: Vec<f64>,
}

impl Default for SimilarityHistogram {
    fn default() -> Self {
        Self { counts: [0; NUM_BINS], values: Vec::new() }
    }
}

impl SimilarityHistogram {
    /// Pools another histogram's values into this one.
    pub fn merge(&mut self, other: &SimilarityHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.values.extend_from_slice(&other.values);
    }

    pub fn bin_of(v: f64) -> usize {
        (((v + 1.0) * 20.0).floor().max(0.0) as usize).min(NUM_BINS - 1)
    }

    pub fn bin_range(bin: usize) -> (f64, f64) {
        (-1.0 + bin as f64 * BIN_WIDTH, -1.0 + (bin + 1) as f64 * BIN_WIDTH)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Share of pooled values strictly above `threshold` (0 when empty).
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&v| v > threshold).count() as f64 / self.values.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = Self::bin_range(b);
            s.push_str(&format!("{lo:.2},{hi:.2},{c}\n"));
        }
        s
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric cosine matrix with an exact unit diagonal.
pub fn similarity_matrix(embeddings: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if embeddings.is_empty() {
        bail!(InvalidArgument, "no embeddings");
    }
    let norms: Vec<f64> = embeddings.iter().map(|e| norm(e)).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
        bail!(InvalidArgument, "embedding {i} has zero or non-finite norm");
    }
    let n = embeddings.len();
    let mut m = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let c: f64 = embeddings[i].iter().zip(&embeddings[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j]);
            let c = c.clamp(-1.0, 1.0);
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    Ok(m)
}

/// Per frame, keeps the `k` largest pairwise cosines between distinct
/// objects and pools them; frames with fewer than two objects are skipped.
pub fn top_k_similarity_distribution(frames: &[Vec<Vec<f64>>], k: usize) -> Result<SimilarityHistogram> {
    let mut h = SimilarityHistogram { counts: [0; NUM_BINS], values: Vec::new() };
    for f in frames.iter().filter(|f| f.len() >= 2) {
        let m = similarity_matrix(f)?;
        let mut pairs: Vec<f64> = (0..f.len()).flat_map(|i| ((i + 1)..f.len()).map(move |j| (i, j))).map(|(i, j)| m[i][j]).collect();
        pairs.sort_by(|a, b| b.total_cmp(a));
        for &v in pairs.iter().take(k) {
            h.counts[SimilarityHistogram::bin_of(v)] += 1;
            h.values.push(v);
        }
    }
    Ok(h)
}
