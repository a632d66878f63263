use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{bail, Result};

/// One feature level: `[rows * cols, channels]`, row-major over pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub data: Tensor,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, data: Tensor) -> Result<Self> {
        if data.shape().len() != 2 || data.rows() != rows * cols {
            bail!(Shape, "grid {rows}x{cols} with data {:?}", data.shape());
        }
        Ok(Self { rows, cols, data })
    }

    pub fn channels(&self) -> usize {
        self.data.cols()
    }

    /// 2×2 mean pooling (rows and cols must be even).
    pub fn pool2(&self) -> Result<Self> {
        if !self.rows.is_multiple_of(2) || !self.cols.is_multiple_of(2) {
            bail!(Shape, "cannot pool a {}x{} grid", self.rows, self.cols);
        }
        let (r2, c2, ch) = (self.rows / 2, self.cols / 2, self.channels());
        let mut out = vec![0.0; r2 * c2 * ch];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let dst = ((r / 2) * c2 + c / 2) * ch;
                for (o, v) in out[dst..dst + ch].iter_mut().zip(self.data.row(r * self.cols + c)) {
                    *o += 0.25 * v;
                }
            }
        }
        Self::new(r2, c2, Tensor::new(vec![r2 * c2, ch], out)?)
    }
}

fn axis_weights(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// `[out_r * out_c, in_r * in_c]` bilinear upsampling matrix with half-pixel
/// centers (corners not aligned), edge-clamped.
pub fn bilinear_matrix(in_r: usize, in_c: usize, out_r: usize, out_c: usize) -> Tensor {
    let wr = axis_weights(out_r, in_r);
    let wc = axis_weights(out_c, in_c);
    let mut m = vec![0.0; out_r * out_c * in_r * in_c];
    let n_in = in_r * in_c;
    for (orow, &(r0, r1, lr)) in wr.iter().enumerate() {
        for (ocol, &(c0, c1, lc)) in wc.iter().enumerate() {
            let row = &mut m[(orow * out_c + ocol) * n_in..(orow * out_c + ocol + 1) * n_in];
            row[r0 * in_c + c0] += (1.0 - lr) * (1.0 - lc);
            row[r0 * in_c + c1] += (1.0 - lr) * lc;
            row[r1 * in_c + c0] += lr * (1.0 - lc);
            row[r1 * in_c + c1] += lr * lc;
        }
    }
    Tensor::new(vec![out_r * out_c, n_in], m).expect("bilinear matrix shape")
}

fn check_levels(f8: &FeatureGrid, f16: &FeatureGrid, f32: &FeatureGrid) -> Result<()> {
    let ok = f16.rows * 2 == f8.rows
        && f16.cols * 2 == f8.cols
        && f32.rows * 4 == f8.rows
        && f32.cols * 4 == f8.cols
        && f8.channels() == f16.channels()
        && f8.channels() == f32.channels();
    if !ok {
        bail!(
            Shape,
            "pyramid levels {}x{}x{}, {}x{}x{}, {}x{}x{} are not strides 8/16/32",
            f8.rows, f8.cols, f8.channels(), f16.rows, f16.cols, f16.channels(), f32.rows, f32.cols, f32.channels()
        );
    }
    Ok(())
}

/// `F_avg = (f8 + up(f16) + up(f32)) / 3` at the finest resolution.
pub fn pyramid_average(f8: &FeatureGrid, f16: &FeatureGrid, f32: &FeatureGrid) -> Result<FeatureGrid> {
    check_levels(f8, f16, f32)?;
    let mut g = Graph::new();
    let (a, b, c) = (g.constant(f8.data.clone()), g.constant(f16.data.clone()), g.constant(f32.data.clone()));
    let out = pyramid_average_var(&mut g, (a, f8.rows, f8.cols), (b, f16.rows, f16.cols), (c, f32.rows, f32.cols));
    FeatureGrid::new(f8.rows, f8.cols, g.value(out).clone())
}

/// Graph form over `(node, rows, cols)` levels; dims must already be valid.
pub fn pyramid_average_var(g: &mut Graph, f8: (Var, usize, usize), f16: (Var, usize, usize), f32: (Var, usize, usize)) -> Var {
    let u16 = g.constant(bilinear_matrix(f16.1, f16.2, f8.1, f8.2));
    let u32 = g.constant(bilinear_matrix(f32.1, f32.2, f8.1, f8.2));
    let up16 = g.matmul(u16, f16.0);
    let up32 = g.matmul(u32, f32.0);
    let s = g.add(f8.0, up16);
    let s = g.add(s, up32);
    g.scale(s, 1.0 / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    fn grid(r: usize, c: usize, ch: usize, f: impl Fn(usize) -> f64) -> FeatureGrid {
        FeatureGrid::new(r, c, Tensor::new(vec![r * c, ch], (0..r * c * ch).map(f).collect()).unwrap()).unwrap()
    }

    #[test]
    fn constant_levels_stay_constant() {
        let out = pyramid_average(&grid(8, 8, 3, |_| 2.5), &grid(4, 4, 3, |_| 2.5), &grid(2, 2, 3, |_| 2.5)).unwrap();
        assert!(out.data.data().iter().all(|v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn zero_coarse_levels_give_a_third() {
        let mut rng = SimRng::new(4);
        let vals = rng.normal_vec(4 * 4 * 2);
        let f8 = grid(4, 4, 2, |i| vals[i]);
        let out = pyramid_average(&f8, &grid(2, 2, 2, |_| 0.0), &grid(1, 1, 2, |_| 0.0)).unwrap();
        for (o, v) in out.data.data().iter().zip(&vals) {
            assert!((o - v / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_cell_upsamples_to_constant() {
        let m = bilinear_matrix(1, 1, 2, 2);
        assert_eq!(m.data(), &[1.0, 1.0, 1.0, 1.0]);
        // 4x4 f8 of 0, 2x2 f16 of 0, 1x1 f32 of v => every pixel v/3
        let out = pyramid_average(&grid(4, 4, 1, |_| 0.0), &grid(2, 2, 1, |_| 0.0), &grid(1, 1, 1, |_| 6.0)).unwrap();
        assert!(out.data.data().iter().all(|v| (v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn bilinear_rows_sum_to_one_and_interpolate_linearly() {
        let m = bilinear_matrix(2, 3, 4, 6);
        for r in 0..m.rows() {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        // a 1x2 ramp [0, 1] upsampled to 1x4 with half-pixel centers
        let m = bilinear_matrix(1, 2, 1, 4);
        let ramp: Vec<f64> = (0..4).map(|o| m.row(o)[1]).collect();
        assert_eq!(ramp, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn rejects_bad_strides() {
        assert!(pyramid_average(&grid(8, 8, 1, |_| 0.0), &grid(3, 4, 1, |_| 0.0), &grid(2, 2, 1, |_| 0.0)).is_err());
        assert!(pyramid_average(&grid(8, 8, 1, |_| 0.0), &grid(4, 4, 2, |_| 0.0), &grid(2, 2, 1, |_| 0.0)).is_err());
    }

    #[test]
    fn pooling_averages_blocks() {
        let f = grid(2, 2, 1, |i| i as f64);
        assert_eq!(f.pool2().unwrap().data.data(), &[1.5]);
    }
}
