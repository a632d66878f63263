//! Minimum-cost assignment (Kuhn–Munkres with potentials, O(n³)).
//!
//! Rectangular inputs are padded to square with [`PAD_COST`]; pairs that
//! land on padding are dropped, so the result always has `min(R, C)` pairs.

use crate::error::{bail, Result};

/// Cost of padded cells. Real costs must stay strictly below it in magnitude.
pub const PAD_COST: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

impl Assignment {
    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == row).map(|p| p.1)
    }
}

/// Solves `min Σ cost[r][c]` over maximum matchings of an `R×C` matrix.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Ok(Assignment { pairs: Vec::new(), cost: 0.0 });
    }
    if cost.iter().any(|r| r.len() != cols) {
        bail!(Shape, "ragged cost matrix");
    }
    for &c in cost.iter().flatten() {
        if !c.is_finite() {
            bail!(NonFinite, "cost {c}");
        }
        assert!(c.abs() < PAD_COST, "cost {c} reaches the padding sentinel");
    }
    if rows > cols {
        // Pad rows only: padded rows are processed last and never reroute
        // real rows, which keeps potentials free of the sentinel magnitude.
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let a = hungarian(&t)?;
        let mut pairs: Vec<(usize, usize)> = a.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(Assignment { pairs, cost: a.cost });
    }
    let n = rows.max(cols);
    let at = |i: usize, j: usize| if i < rows && j < cols { cost[i][j] } else { PAD_COST };

    // 1-indexed potentials/matching, column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(r, c)| r < rows && c < cols)
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, cost: total })
}
